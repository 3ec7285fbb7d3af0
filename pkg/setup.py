from setuptools import setup, find_packages

setup(
    name="crackscan",
    version="1.0.0",
    packages=find_packages(include=["crackscan", "crackscan.*"]),
    install_requires=[
        "numpy>=1.22",
        "scipy>=1.8",
        "rich>=10.16.2",
        "click>=8.1.3",
        "tqdm>=4.65.0",
        "pydantic>=2.0",
        "Pillow>=9.1",
    ],
    extras_require={
        "viz": ["matplotlib>=3.7.0"],
    },
    entry_points={
        "console_scripts": [
            "crackscan=crackscan.cli:main",
        ],
    },
    python_requires=">=3.9",
    description="Crack pre-localization in 3D CT volumes of concrete with Hessian filters and scan statistics",
    keywords="computed tomography, crack detection, hessian, scan statistics, fdr",
    classifiers=[
        "Development Status :: 4 - Beta",
        "Intended Audience :: Science/Research",
        "License :: OSI Approved :: MIT License",
        "Programming Language :: Python :: 3.9",
    ],
)
