"""
crackscan - crack pre-localization in 3D CT volumes of concrete
"""

__version__ = "1.0.0"
