import numpy as np
import pytest
from scipy import ndimage

from dynaflow.errors import ConfigurationError, DimensionError, EmptyInputError
from dynaflow.flowcore import FlowField, GrayFrame
from dynaflow.tvl1 import Tvl1Params, _level_shapes, centered_gradient, compute_flow, sequence_flow, tvl1_energy


def texture(n=64, seed=0, sigma=1.0):
    rng = np.random.default_rng(seed)
    img = ndimage.gaussian_filter(rng.uniform(0, 255, (n, n)), sigma)
    img = (img - img.min()) / (img.max() - img.min()) * 255
    return GrayFrame(np.round(img).astype(np.uint8))


def shifted(frame, dx=0, dy=0):
    return GrayFrame(np.roll(frame.values, (dy, dx), axis=(0, 1)))


def interior(a, m=8):
    return a[m:-m, m:-m]


def test_identical_frames(kernel_flavour):
    f = texture(48, seed=1)
    flow = compute_flow(f, f)
    assert max(np.abs(flow.u).max(), np.abs(flow.v).max()) < 0.05


def test_flat_pair_is_zero():
    a = GrayFrame(np.full((16, 16), 90, np.uint8))
    b = GrayFrame(np.full((16, 16), 120, np.uint8))
    flow = compute_flow(a, b)
    assert np.abs(flow.u).max() < 1e-6 and np.abs(flow.v).max() < 1e-6


@pytest.mark.parametrize("dx,dy", [(2, 0), (0, 2), (-2, 1)])
def test_integer_shift(kernel_flavour, dx, dy):
    f = texture(64, seed=2)
    flow = compute_flow(f, shifted(f, dx, dy))
    assert abs(np.median(interior(flow.u)) - dx) < 0.3
    assert abs(np.median(interior(flow.v)) - dy) < 0.3


def test_flow_convention_on_a_moving_square():
    a = np.full((32, 32), 40, np.uint8)
    a[10:18, 10:18] = 220
    b = np.roll(a, 1, axis=1)
    flow = compute_flow(GrayFrame(a), GrayFrame(b))
    # the square moves right, so its pixels report u > 0
    assert np.median(flow.u[11:17, 11:17]) > 0.5


def test_sequence_counts_and_consistency():
    f = texture(32, seed=3)
    frames = [shifted(f, k) for k in range(11)]
    seq = sequence_flow(frames)
    assert len(seq) == 10
    medians = [np.median(interior(fl.u, 6)) for fl in seq]
    assert max(medians) - min(medians) < 0.1
    assert abs(np.mean(medians) - 1.0) < 0.15
    with pytest.raises(EmptyInputError):
        sequence_flow(frames[:1])
    assert len(sequence_flow([f, f])) == 1


def test_energy_not_worse_than_zero_flow():
    for seed in range(3):
        f = texture(48, seed=seed)
        g = shifted(f, 1, -1)
        flow = compute_flow(f, g)
        assert tvl1_energy(f, g, flow) <= tvl1_energy(f, g, FlowField.zeros(48, 48))


def test_deterministic():
    f = texture(40, seed=4)
    g = shifted(f, 1)
    a, b = compute_flow(f, g), compute_flow(f, g)
    assert a.u.tobytes() == b.u.tobytes() and a.v.tobytes() == b.v.tobytes()


def test_kernel_flavours_agree():
    from dynaflow import _kernels

    f = texture(32, seed=5)
    g = shifted(f, 2, 1)
    saved = _kernels.USE_NUMBA
    try:
        _kernels.USE_NUMBA = True
        a = compute_flow(f, g)
        _kernels.USE_NUMBA = False
        b = compute_flow(f, g)
    finally:
        _kernels.USE_NUMBA = saved
    np.testing.assert_allclose(a.u, b.u, atol=1e-5)
    np.testing.assert_allclose(a.v, b.v, atol=1e-5)


def test_single_level_tiny_image():
    f = texture(8, seed=6)
    flow = compute_flow(f, f, Tvl1Params(pyramid_levels=1))
    assert flow.shape == (8, 8)


def test_pyramid_truncates_at_min_side():
    shapes = _level_shapes((20, 64), Tvl1Params(pyramid_levels=5))
    assert shapes == [(20, 64), (10, 32)]


def test_errors():
    with pytest.raises(DimensionError):
        compute_flow(texture(16), texture(20))
    with pytest.raises(ConfigurationError):
        compute_flow(GrayFrame(np.zeros((7, 30), np.uint8)), GrayFrame(np.zeros((7, 30), np.uint8)))


@pytest.mark.parametrize("bad", [dict(tau=0), dict(lambda_=-1), dict(theta=0), dict(pyramid_scale=1.0),
                                 dict(pyramid_scale=0.0), dict(pyramid_levels=0), dict(warps_per_level=0),
                                 dict(inner_iterations=0), dict(convergence_eps=0), dict(pyramid_levels=2.5)])
def test_param_validation(bad):
    with pytest.raises(ConfigurationError):
        Tvl1Params(**bad)


def test_centered_gradient_replicates_borders():
    img = np.array([[0.0, 1.0, 4.0]])
    gx, gy = centered_gradient(img)
    np.testing.assert_array_equal(gx, [[0.5, 2.0, 1.5]])
    assert not gy.any()
