"""
Tests for volume containers and raw I/O
"""
import json

import numpy as np
import pytest

from crackscan.errors import InputError, NumericError, VolumeIOError
from crackscan.volume.io import (
    export_slice,
    load_binary_volume,
    load_raw,
    load_volume,
    overlay_image,
    read_pgm,
    save_binary_volume,
    save_raw,
    sidecar_path,
    slice_image,
    write_pgm,
)
from crackscan.volume.volume import BinaryVolume, ScalarVolume, normalize, require_same_dims


def test_flat_index_is_x_fastest():
    """Test that flat buffers map to (x, y, z) with x varying fastest"""
    values = np.arange(2 * 3 * 4, dtype=np.float32)
    volume = ScalarVolume.from_flat(values, (2, 3, 4))

    assert volume.dims == (2, 3, 4)
    assert volume.data.shape == (4, 3, 2)
    # index = x + nx * (y + ny * z)
    assert volume.at(1, 2, 3) == 1 + 2 * (2 + 3 * 3)
    assert np.array_equal(volume.flat, values)


def test_from_flat_rejects_wrong_length():
    with pytest.raises(InputError):
        ScalarVolume.from_flat(np.zeros(10), (2, 2, 2))


def test_volumes_are_read_only():
    volume = ScalarVolume(np.zeros((2, 2, 2)))
    with pytest.raises(ValueError):
        volume.data[0, 0, 0] = 1.0


def test_binary_volume_rejects_gray_values():
    with pytest.raises(InputError):
        BinaryVolume(np.full((2, 2, 2), 2, dtype=np.uint8))
    with pytest.raises(InputError):
        BinaryVolume(np.full((2, 2, 2), 0.5))


def test_binary_volume_union_and_count():
    a = BinaryVolume.zeros((3, 3, 3))
    data = np.zeros((3, 3, 3), dtype=np.uint8)
    data[1, 1, 1] = 1
    b = BinaryVolume(data)

    union = a.union(b)
    assert union.count() == 1
    assert union.at(1, 1, 1) == 1

    with pytest.raises(InputError):
        a.union(BinaryVolume.zeros((3, 3, 4)))


def test_require_same_dims():
    require_same_dims(BinaryVolume.zeros((2, 3, 4)), ScalarVolume(np.zeros((4, 3, 2))))
    with pytest.raises(InputError):
        require_same_dims(BinaryVolume.zeros((2, 3, 4)), BinaryVolume.zeros((4, 3, 2)))


def test_normalize():
    volume = ScalarVolume(np.array([[[2.0, 4.0], [6.0, 10.0]]]))
    scaled = normalize(volume)
    assert scaled.data.min() == 0.0
    assert scaled.data.max() == 1.0
    assert scaled.at(1, 0, 0) == pytest.approx(0.25)

    constant = normalize(ScalarVolume(np.full((2, 2, 2), 0.3)))
    assert not constant.data.any()


def test_fingerprint_tracks_content():
    a = ScalarVolume(np.zeros((2, 2, 2)))
    b = ScalarVolume(np.zeros((2, 2, 2)))
    c = ScalarVolume(np.ones((2, 2, 2)))
    assert a.fingerprint() == b.fingerprint()
    assert a.fingerprint() != c.fingerprint()


def test_save_and_load_f32(tmp_path, small_phantom):
    """Test that f32 volumes survive a write/read exactly"""
    image, _ = small_phantom
    path = save_raw(image, tmp_path / "image.raw", spacing=[0.1, 0.1, 0.1])

    descriptor = json.loads(sidecar_path(path).read_text())
    assert descriptor["dims"] == [32, 32, 32]
    assert descriptor["format"] == "f32"
    assert descriptor["spacing"] == [0.1, 0.1, 0.1]

    loaded = load_volume(path)
    assert np.array_equal(loaded.data, image.data)


def test_load_raw_u8_scales_to_unit_range(tmp_path):
    path = tmp_path / "gray.raw"
    np.array([0, 51, 255, 102], dtype=np.uint8).tofile(path)

    volume = load_raw(path, (2, 2, 1), "u8")
    assert volume.at(0, 0, 0) == 0.0
    assert volume.at(1, 0, 0) == pytest.approx(0.2)
    assert volume.at(0, 1, 0) == 1.0


def test_load_raw_u16(tmp_path):
    path = tmp_path / "gray16.raw"
    np.array([0, 65535], dtype="<u2").tofile(path)
    volume = load_raw(path, (2, 1, 1), "u16")
    assert volume.flat.tolist() == [0.0, 1.0]


def test_load_raw_size_mismatch(tmp_path):
    path = tmp_path / "short.raw"
    np.zeros(7, dtype=np.uint8).tofile(path)
    with pytest.raises(InputError, match="file size"):
        load_raw(path, (2, 2, 2), "u8")


def test_load_raw_missing_file(tmp_path):
    with pytest.raises(VolumeIOError):
        load_raw(tmp_path / "absent.raw", (2, 2, 2), "u8")


def test_load_raw_rejects_unknown_format(tmp_path):
    path = tmp_path / "x.raw"
    np.zeros(8, dtype=np.uint8).tofile(path)
    with pytest.raises(InputError, match="sample format"):
        load_raw(path, (2, 2, 2), "i64")


def test_load_raw_rejects_nan(tmp_path):
    path = tmp_path / "nan.raw"
    np.array([0.0, np.nan], dtype="<f4").tofile(path)
    with pytest.raises(NumericError):
        load_raw(path, (2, 1, 1), "f32")


def test_binary_volume_file(tmp_path, small_phantom):
    _, truth = small_phantom
    path = save_binary_volume(truth, tmp_path / "truth.raw")
    loaded = load_binary_volume(path)
    assert loaded.dims == truth.dims
    assert np.array_equal(loaded.data, truth.data)


def test_load_binary_volume_rejects_scalar_file(tmp_path, homogeneous_volume):
    path = save_raw(homogeneous_volume, tmp_path / "gray.raw")
    with pytest.raises(InputError, match="u8"):
        load_binary_volume(path)


def test_slice_image_orientation():
    """Test that a z slice keeps rows along y and columns along x"""
    data = np.zeros((3, 4, 5))
    data[1, 2, 3] = 1.0
    volume = ScalarVolume(data)

    plane = slice_image(volume, "z", 1)
    assert plane.shape == (4, 5)
    assert plane[2, 3] == 255
    assert plane.sum() == 255

    assert slice_image(volume, "x", 3).shape == (3, 4)
    with pytest.raises(InputError):
        slice_image(volume, "z", 3)
    with pytest.raises(InputError):
        slice_image(volume, "w", 0)


def test_export_slice_writes_pgm(tmp_path, small_phantom):
    _, truth = small_phantom
    path = export_slice(truth, "x", 5, tmp_path / "slice.pgm")
    pixels = read_pgm(path)
    assert pixels.shape == (32, 32)
    # The horizontal crack covers rows z = 14..18 of an x slice
    assert set(np.unique(pixels[14:19])) == {255}
    assert not pixels[:14].any()


def test_overlay_brightens_masked_pixels(small_phantom):
    image, truth = small_phantom
    plain = slice_image(image, "x", 0)
    overlay = overlay_image(image, truth, "x", 0)
    inside = slice_image(truth, "x", 0) > 0
    assert (overlay[inside] >= plain[inside]).all()
    assert np.array_equal(overlay[~inside], plain[~inside])


def test_ramp_slice_quantization(tmp_path):
    data = np.broadcast_to(np.array([0.0, 0.5, 1.0])[None, None, :], (3, 3, 3)).copy()
    pixels = read_pgm(export_slice(ScalarVolume(data), "z", 1, tmp_path / "ramp.pgm"))
    assert pixels.tolist() == [[0, 128, 255]] * 3

    with pytest.raises(InputError):
        export_slice(ScalarVolume(data), "z", 99, tmp_path / "bad.pgm")


def test_pgm_files_are_plain_p5(tmp_path):
    pixels = np.arange(12, dtype=np.uint8).reshape(3, 4) * 20
    path = write_pgm(pixels, tmp_path / "nested" / "plain.pgm")
    content = path.read_bytes()
    assert content.startswith(b"P5")
    assert content.endswith(pixels.tobytes())
    assert np.array_equal(read_pgm(path), pixels)

    with pytest.raises(InputError):
        write_pgm(np.zeros((2, 2, 2), dtype=np.uint8), tmp_path / "cube.pgm")


def test_read_pgm_errors(tmp_path):
    with pytest.raises(VolumeIOError):
        read_pgm(tmp_path / "missing.pgm")

    garbage = tmp_path / "garbage.pgm"
    garbage.write_bytes(b"not an image")
    with pytest.raises(InputError, match="not a binary PGM"):
        read_pgm(garbage)


def test_full_binary_slice_is_white():
    plane = slice_image(BinaryVolume(np.ones((3, 3, 3), dtype=np.uint8)), "y", 2)
    assert (plane == 255).all()


def test_normalize_is_idempotent(rng):
    once = normalize(ScalarVolume(rng.normal(size=(4, 5, 6))))
    assert np.array_equal(normalize(once).data, once.data)


def test_load_raw_f32_is_clamped(tmp_path):
    path = tmp_path / "wide.raw"
    np.array([-0.5, 0.25, 1.5, 1.0], dtype="<f4").tofile(path)
    assert load_raw(path, (4, 1, 1), "f32").flat.tolist() == [0.0, 0.25, 1.0, 1.0]
