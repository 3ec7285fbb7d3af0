"""
Volume containers and raw I/O
"""
from crackscan.volume.volume import (
    BinaryVolume,
    ScalarVolume,
    normalize,
    require_same_dims,
)
from crackscan.volume.io import (
    export_slice,
    load_binary_volume,
    load_raw,
    load_volume,
    save_binary_volume,
    save_raw,
)

__all__ = [
    "BinaryVolume",
    "ScalarVolume",
    "normalize",
    "require_same_dims",
    "export_slice",
    "load_binary_volume",
    "load_raw",
    "load_volume",
    "save_binary_volume",
    "save_raw",
]
