"""
Shared fixtures for the crackscan tests
"""
import numpy as np
import pytest

from crackscan.config import PipelineConfig
from crackscan.phantom.generator import CrackSpec, PhantomSpec, generate
from crackscan.volume.volume import BinaryVolume, ScalarVolume


@pytest.fixture
def rng():
    """Seeded generator so random inputs are reproducible"""
    return np.random.default_rng(12345)


@pytest.fixture
def small_phantom():
    """32^3 horizontal crack of width 5 through z = 16, with its truth"""
    spec = PhantomSpec(dims=(32, 32, 32), seed=7, crack=CrackSpec(width=5.0))
    return generate(spec)


@pytest.fixture
def homogeneous_volume():
    volume, _ = generate(PhantomSpec(dims=(32, 32, 32), seed=8, crack=None))
    return volume


@pytest.fixture
def cube_mask():
    """12^3 mask holding a solid 4^3 block at x, y, z in [4, 8)"""
    data = np.zeros((12, 12, 12), dtype=np.uint8)
    data[4:8, 4:8, 4:8] = 1
    return BinaryVolume(data)


@pytest.fixture
def ramp_volume():
    """Gray value rising along x, constant along y and z"""
    x = np.linspace(0.0, 1.0, 16)
    data = np.broadcast_to(x[None, None, :], (8, 12, 16)).copy()
    return ScalarVolume(data)


@pytest.fixture
def small_config(tmp_path):
    """Pipeline config sized for fast end-to-end runs"""
    return PipelineConfig.from_dict(
        {
            "input": {"phantom": {"dims": [32, 32, 32], "seed": 3}},
            "filter": {"scales": [1.0]},
            "features": {"g": 4},
            "detect": {
                "u": 2,
                "alphas": [0.5],
                "null_phantom": {"dims": [32, 32, 32], "seed": 4, "crack": None},
            },
            "runtime": {"num_threads": 2, "output_dir": str(tmp_path / "out")},
        }
    )
