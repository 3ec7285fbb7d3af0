"""
Tests for Hessian-seeded percolation
"""
import numpy as np
import pytest

from crackscan.errors import InputError, ParameterError
from crackscan.filters.hessian import ScaleSet, multiscale_mhe
from crackscan.filters.percolation import (
    STOP_BOUNDARY,
    STOP_EXHAUSTED,
    STOP_STALLED,
    PercolationParams,
    _raise_threshold,
    hessian_percolation,
    percolate,
)
from crackscan.volume.volume import BinaryVolume, ScalarVolume


@pytest.fixture
def plane_volume():
    """9^3 bright volume (0.9) with a dark plane (0.1) at z = 4"""
    data = np.full((9, 9, 9), 0.9)
    data[4] = 0.1
    return ScalarVolume(data)


@pytest.fixture
def plane_patch():
    """Central 3 x 3 patch of the dark plane"""
    data = np.zeros((9, 9, 9), dtype=np.uint8)
    data[4, 3:6, 3:6] = 1
    return BinaryVolume(data)


def test_plane_grows_to_the_window(plane_volume, plane_patch):
    """Test the hand-traced growth of the patch over the in-window plane

    The acceptance ratio is |P & H| / |P|: the share of the grown cluster P that
    was already a candidate in H. Centred at (4, 4, 4) with M = 3, the window
    spans 1..7 on each axis. The dark plane (0.1) is admitted at every
    threshold, the bright material (0.9) never is. After two 26-connected
    sweeps the 3 x 3 seed patch has become the 7 x 7 plane, which touches the
    window shell. So |P| = 49 and |P & H| = 9, and r = 9 / 49 is the largest
    ratio that still accepts.
    """
    params = PercolationParams(epsilon=0.05, M=3, r=9 / 49)
    result = percolate(plane_volume, plane_patch, params)

    expected = np.zeros((9, 9, 9), dtype=np.uint8)
    expected[4, 1:8, 1:8] = 1
    assert np.array_equal(result.mask.data, expected)
    assert result.material.count() == 0

    (cluster,) = result.clusters
    assert cluster.accepted
    assert cluster.centroid == (4, 4, 4)
    assert cluster.seed_count == 9
    assert cluster.size == 49
    assert cluster.hits == 9
    assert cluster.sweeps == 2
    assert cluster.stop_reason == STOP_BOUNDARY
    assert cluster.thresholds == pytest.approx([0.15, 0.2, 0.25], abs=1e-6)


def test_plane_patch_is_rejected_at_half_ratio(plane_volume, plane_patch):
    """Test that r = 0.5 rejects the same cluster and labels the touched voxels material

    The ratio stays 9 / 49 (about 0.18), below 0.5. Nothing is accepted, so the
    mask is empty. The cluster and every voxel it examined at most tau_max
    times become material: the 49-voxel plane and the 49-voxel slabs at
    z = 3 and z = 5, 147 in all.
    """
    params = PercolationParams(epsilon=0.05, M=3, r=0.5)
    result = percolate(plane_volume, plane_patch, params)

    assert result.mask.count() == 0
    assert not result.clusters[0].accepted
    assert result.clusters[0].ratio == pytest.approx(9 / 49)
    # the 7 x 7 plane plus the examined 7 x 7 patches directly above and below
    assert result.material.count() == 147
    assert result.visits.max() == 2
    assert result.visits[3, 4, 4] == 2
    assert result.visits[3, 1, 1] == 1
    assert result.visits[2].sum() == 0


def test_isolated_dark_voxel_is_rejected():
    data = np.full((9, 9, 9), 0.9)
    data[4, 4, 4] = 0.1
    seed = np.zeros((9, 9, 9), dtype=np.uint8)
    seed[4, 4, 4] = 1

    result = percolate(ScalarVolume(data), BinaryVolume(seed), PercolationParams(epsilon=0.05, M=3, r=0.6))
    assert result.mask.count() == 0
    (cluster,) = result.clusters
    assert cluster.size == 7 ** 3
    assert cluster.hits == 1
    assert cluster.stop_reason == STOP_BOUNDARY
    assert not cluster.accepted
    assert hessian_percolation(ScalarVolume(data), BinaryVolume(seed)).count() == 0


def test_negative_epsilon_stalls(plane_volume, plane_patch):
    """Test that the threshold never decreases, so a negative step stalls growth"""
    result = percolate(plane_volume, plane_patch, PercolationParams(epsilon=-0.5, M=3, r=0.6))
    (cluster,) = result.clusters
    assert cluster.stop_reason == STOP_STALLED
    assert cluster.size == 9
    assert cluster.accepted
    assert np.array_equal(result.mask.data, plane_patch.data)


def test_window_outside_the_volume_is_exhausted():
    data = np.full((3, 3, 3), 0.1)
    seed = np.zeros((3, 3, 3), dtype=np.uint8)
    seed[1, 1, 1] = 1
    result = percolate(ScalarVolume(data), BinaryVolume(seed), PercolationParams(epsilon=0.05, M=3))
    (cluster,) = result.clusters
    assert cluster.stop_reason == STOP_EXHAUSTED
    assert cluster.size == 27


def test_raise_threshold_is_monotone():
    assert _raise_threshold(0.2, 0.1, 0.05) == pytest.approx(0.25)
    assert _raise_threshold(0.2, 0.4, 0.05) == pytest.approx(0.45)
    assert _raise_threshold(0.2, 0.4, -0.5) == 0.2


def test_empty_candidates():
    image = ScalarVolume(np.full((5, 5, 5), 0.5))
    result = percolate(image, BinaryVolume.zeros((5, 5, 5)))
    assert result.mask.count() == 0
    assert result.clusters == []


def test_dims_must_match():
    with pytest.raises(InputError):
        percolate(ScalarVolume(np.zeros((4, 4, 4))), BinaryVolume.zeros((5, 4, 4)))


@pytest.mark.parametrize(
    "kwargs",
    [{"M": 0}, {"M": 1.5}, {"r": 0.0}, {"r": 1.5}, {"tau_max": 0}, {"connectivity": 18}],
)
def test_params_validation(kwargs):
    with pytest.raises(ParameterError):
        PercolationParams(**kwargs)


def test_phantom_run_is_thread_independent(small_phantom):
    """Test invariants and determinism on an MHE-seeded phantom"""
    image, _ = small_phantom
    candidates = multiscale_mhe(image, ScaleSet.of([1.0]))
    params = PercolationParams()

    serial = percolate(image, candidates, params, num_threads=1)
    threaded = percolate(image, candidates, params, num_threads=4)

    assert np.array_equal(serial.mask.data, threaded.mask.data)
    assert np.array_equal(serial.material.data, threaded.material.data)
    assert np.array_equal(serial.visits, threaded.visits)
    assert not (serial.mask.mask & serial.material.mask).any()
    for cluster in serial.clusters:
        assert all(b >= a for a, b in zip(cluster.thresholds, cluster.thresholds[1:]))
        assert cluster.accepted == (cluster.ratio >= params.r)
        assert cluster.hits <= cluster.seed_count
