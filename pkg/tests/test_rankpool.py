import time

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from dynaflow.errors import ConfigurationError, DimensionError, EmptyInputError
from dynaflow.flowcore import GrayFrame, RgbFrame
from dynaflow.preprocess import QuantizedFlowFrame
from dynaflow.rankpool import (DynamicFlowImage, DynamicImage, SolverConfig, approximate_coefficients,
                               approximate_pool, build_problem, flow_color, normalize_plane, pool_flow, pool_rgb,
                               rank_pool, render, smooth, solve, solve_with_info)

from oracles import objective, pair_diffs, slsqp_oracle, subgradient_oracle


def scalar_frames(values):
    return [np.array([float(v)]) for v in values]


# -- smoothing --------------------------------------------------------------------

def test_smooth_examples():
    assert [float(f[0]) for f in smooth(scalar_frames([2, 4]))] == [2.0, 3.0]
    assert [float(f[0]) for f in smooth(scalar_frames([1, 2, 6]))] == [1.0, 1.5, 3.0]


@given(st.floats(-1e6, 1e6), st.integers(1, 40))
def test_constant_sequence_is_fixed(k, n):
    out = smooth([np.full((2, 3), k)] * n)
    assert all((f == k).all() for f in out)


@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 12), st.integers(1, 5)), elements=st.floats(-1e3, 1e3)),
       hnp.arrays(np.float64, st.tuples(st.integers(1, 12), st.integers(1, 5)), elements=st.floats(-1e3, 1e3)),
       st.floats(-10, 10), st.floats(-10, 10))
def test_smooth_is_linear(x, y, a, b):
    y = np.resize(y, x.shape)
    lhs = smooth(list(a * x + b * y))
    sx, sy = smooth(list(x)), smooth(list(y))
    scale = 1.0 + np.abs(a * x).max() + np.abs(b * y).max()
    for l, p, q in zip(lhs, sx, sy):
        assert np.abs(l - (a * p + b * q)).max() <= 1e-12 * scale


def test_smooth_errors():
    with pytest.raises(EmptyInputError):
        smooth([])
    with pytest.raises(DimensionError):
        smooth([np.zeros(2), np.zeros(3)])


# -- problem construction -----------------------------------------------------------

def test_pairs_and_counts():
    p = build_problem(smooth(scalar_frames([1, 2, 3])), 1.0)
    i, j = p.pairs
    assert list(zip(i.tolist(), j.tolist())) == [(0, 1), (0, 2), (1, 2)]
    assert p.n_pairs == 3 and p.diffs.shape == (3, 1)
    assert build_problem([np.zeros(4)] * 25).n_pairs == 300
    assert build_problem([np.zeros(4)]).n_pairs == 0


def test_constant_sequence_has_zero_diffs():
    p = build_problem([np.full(5, 7.0)] * 4)
    assert not p.diffs.any()


def test_diffs_match_definition(rng):
    X = rng.normal(size=(6, 4))
    np.testing.assert_allclose(build_problem(list(X)).diffs, pair_diffs(X), atol=1e-14)


def test_multichannel_frames_flatten_channels_first():
    frames = [np.arange(8.0).reshape(2, 2, 2) + t for t in range(3)]
    p = build_problem(frames)
    assert p.shape == (2, 2, 2) and p.dim == 8


def test_build_errors():
    with pytest.raises(EmptyInputError):
        build_problem([])
    with pytest.raises(ConfigurationError):
        build_problem([np.zeros(2)] * 2, C=0.0)
    with pytest.raises(DimensionError):
        build_problem([np.zeros(2), np.zeros((2, 1))])


# -- solver -----------------------------------------------------------------------

@pytest.mark.parametrize("method", ["auto", "dcd", "ipm"])
def test_single_pair_analytic(kernel_flavour, method):
    r = solve_with_info(build_problem(scalar_frames([0, 2]), C=10.0), SolverConfig(method=method))
    assert abs(r.coef[0] - 0.5) <= 1e-6
    assert abs(r.objective - 0.25) <= 1e-6
    assert r.converged


def test_single_pair_soft_margin():
    # C*d/2 < 1/d: F = C*d/2 and J = F^2 + C(1 - F d)
    d, C = 0.5, 0.4
    r = solve_with_info(build_problem(scalar_frames([0, d]), C=C))
    F = C * d / 2
    assert abs(r.coef[0] - F) <= 1e-9
    assert abs(r.objective - (F * F + C * (1 - F * d))) <= 1e-9


def test_zero_pairs_and_constant_sequence():
    assert not solve(build_problem([np.ones(3)])).any()
    r = solve_with_info(build_problem([np.full(4, 3.0)] * 6, C=2.0))
    assert not r.coef.any()
    assert r.objective == pytest.approx(2.0 * 15)


@pytest.mark.parametrize("seed", range(6))
def test_matches_slsqp(seed):
    rng = np.random.default_rng(seed)
    T, d = int(rng.integers(2, 7)), int(rng.integers(1, 6))
    C = float(10 ** rng.uniform(-1, 2))
    X = smooth(list(rng.normal(size=(T, d)) * 3))
    J = solve_with_info(build_problem(X, C)).objective
    _, J_ref = slsqp_oracle(pair_diffs(X), C)
    assert J <= J_ref + 1e-7 * max(1.0, J_ref)


def test_oracle_equivalence_small(kernel_flavour):
    rng = np.random.default_rng(99)
    for _ in range(10):
        T, d = int(rng.integers(2, 5)), int(rng.integers(1, 9))
        X = smooth(list(rng.normal(size=(T, d))))
        C = float(10 ** rng.uniform(-1, 1.5))
        J = objective(solve(build_problem(X, C)), pair_diffs(X), C)
        _, J_ref = subgradient_oracle(pair_diffs(X), C, steps=200_000)
        assert J <= J_ref + 1e-4


@pytest.mark.parametrize("C", [0.01, 1.0, 100.0])
def test_methods_agree(C):
    rng = np.random.default_rng(4)
    X = smooth(list(np.cumsum(rng.normal(size=(20, 30)), axis=0)))
    p = build_problem(X, C)
    results = [solve_with_info(p, SolverConfig(method=m)) for m in ("auto", "dcd", "ipm")]
    Js = [r.objective for r in results]
    assert max(Js) - min(Js) <= 1e-7 * max(Js)


def test_ill_conditioned_window_certifies():
    # late smoothed frames of a slowly varying clip are nearly collinear
    rng = np.random.default_rng(8)
    base = rng.uniform(0, 255, 3 * 16 * 16)
    frames = [np.clip(base + t * rng.normal(0, 2, base.size), 0, 255).round() for t in range(30)]
    r = solve_with_info(build_problem(smooth(frames), 1.0))
    assert r.converged
    assert r.gap <= 1e-8 * r.objective


def test_kernel_flavours_agree():
    from dynaflow import _kernels

    rng = np.random.default_rng(2)
    p = build_problem(smooth(list(rng.normal(size=(12, 20)))), 3.0)
    cfg = SolverConfig(method="dcd", max_epochs=50)
    saved = _kernels.USE_NUMBA
    try:
        _kernels.USE_NUMBA = True
        a = solve(p, cfg)
        _kernels.USE_NUMBA = False
        b = solve(p, cfg)
    finally:
        _kernels.USE_NUMBA = saved
    np.testing.assert_array_equal(a, b)


def test_seeded_determinism():
    rng = np.random.default_rng(5)
    p = build_problem(smooth(list(rng.normal(size=(15, 10)))), 1.0)
    cfg = SolverConfig(seed=7)
    np.testing.assert_array_equal(solve(p, cfg), solve(p, cfg))


def test_nonconvergence_reports_flag(caplog):
    rng = np.random.default_rng(6)
    p = build_problem(smooth(list(rng.normal(size=(20, 10)))), 100.0)
    r = solve_with_info(p, SolverConfig(method="dcd", max_epochs=1, tolerance=1e-15))
    assert not r.converged and r.epochs == 1
    assert np.isfinite(r.coef).all()
    assert "certify" in caplog.text


def test_solver_config_validation():
    for bad in (dict(max_epochs=0), dict(tolerance=0.0), dict(method="newton"), dict(dcd_budget=0),
                dict(max_epochs=1.5)):
        with pytest.raises(ConfigurationError):
            SolverConfig(**bad)


@pytest.mark.parametrize("seed", range(5))
def test_reversal_negates(seed):
    rng = np.random.default_rng(seed)
    X = smooth(list(rng.normal(size=(int(rng.integers(2, 15)), 12))))
    F = solve(build_problem(X, 1.0))
    G = solve(build_problem(X[::-1], 1.0))
    assert np.abs(F + G).max() <= 1e-6


def test_translation_invariance_is_bitwise():
    rng = np.random.default_rng(11)
    X = [rng.integers(0, 256, 24).astype(np.float64) for _ in range(9)]
    offset = rng.integers(-1000, 1000, 24).astype(np.float64)
    F = solve(build_problem(X, 1.0))
    G = solve(build_problem([x + offset for x in X], 1.0))
    assert F.tobytes() == G.tobytes()


def test_orders_monotone_sequences():
    rng = np.random.default_rng(3)
    for _ in range(5):
        inc = rng.exponential(1.0, size=(12, 40)) * (rng.random((12, 40)) < 0.3)
        inc[:, 0] += 0.1
        X = smooth(list(np.cumsum(inc, axis=0)))
        F = solve(build_problem(X, 100.0))
        s = np.array([x @ F for x in X])
        i, j = np.triu_indices(len(X), 1)
        assert np.mean(s[j] > s[i]) >= 0.95


# -- pooling wrappers ----------------------------------------------------------------

def qframe(u, v):
    return QuantizedFlowFrame(GrayFrame(np.asarray(u, np.uint8)), GrayFrame(np.asarray(v, np.uint8)))


def test_pool_flow_identical_frames_is_zero():
    q = qframe(np.full((4, 4), 140), np.full((4, 4), 100))
    img = pool_flow([q] * 10)
    assert not img.Fu.any() and not img.Fv.any()


def test_pool_flow_single_moving_pixel_dominates():
    frames = []
    for t in range(25):
        u = np.full((8, 8), 128, np.uint8)
        u[3, 5] = 100 + 4 * t
        frames.append(qframe(u, np.full((8, 8), 128)))
    img = pool_flow(frames)
    mag = np.abs(img.planes).reshape(-1)
    k = np.ravel_multi_index((0, 3, 5), img.planes.shape)
    assert mag[k] > 0
    assert (np.delete(mag, k) < mag[k]).all()


def test_pool_flow_errors():
    with pytest.raises(EmptyInputError):
        pool_flow([])


def test_pool_rgb_background_ramp_contaminates():
    frames = []
    for t in range(12):
        img = np.full((10, 10, 3), 5 * t, np.uint8)
        img[3:7, 3:7] = 200
        frames.append(RgbFrame(img))
    out = pool_rgb(frames)
    assert isinstance(out, DynamicImage) and out.planes.shape == (3, 10, 10)
    square = out.planes[:, 3:7, 3:7]
    background = out.planes.copy()
    background[:, 3:7, 3:7] = np.nan
    assert np.abs(square).max() == 0.0
    assert np.nanmin(np.abs(background)) > 0.0


def test_pool_rgb_identical_frames_is_zero():
    f = RgbFrame(np.full((3, 3, 3), 50, np.uint8))
    assert not pool_rgb([f] * 5).planes.any()


def test_pool_rgb_reversing_a_ramp_negates():
    # smoothing commutes with reversal only for affine-in-time clips
    rng = np.random.default_rng(1)
    a = rng.integers(0, 100, (6, 6, 3))
    b = rng.integers(-5, 6, (6, 6, 3))
    frames = [RgbFrame((a + 60 + t * b).astype(np.uint8)) for t in range(9)]
    F = pool_rgb(frames).planes
    G = pool_rgb(frames[::-1]).planes
    assert np.abs(F + G).max() <= 1e-6 * max(1.0, np.abs(F).max())


def test_rank_pool_keeps_shape():
    X = [np.full((2, 3, 4), t, dtype=np.float64) for t in range(5)]
    assert rank_pool(X).shape == (2, 3, 4)


def test_pool_timing_224(tmp_path):
    rng = np.random.default_rng(0)
    base = rng.integers(100, 156, (2, 224, 224))
    frames = [qframe(*np.clip(base + rng.integers(-3, 4, base.shape) * (t % 3), 0, 255)) for t in range(25)]
    pool_flow(frames[:3])  # warm the compiled kernels
    t0 = time.perf_counter()
    img = pool_flow(frames)
    assert time.perf_counter() - t0 <= 2.0
    assert img.Fu.shape == (224, 224)


def test_output_types_validate():
    with pytest.raises(DimensionError):
        DynamicFlowImage(np.zeros((2, 2)), np.zeros((2, 3)))
    with pytest.raises(ValueError):
        DynamicFlowImage(np.full((1, 1), np.nan), np.zeros((1, 1)))
    with pytest.raises(DimensionError):
        DynamicImage(np.zeros((2, 4, 4)))


# -- approximation -------------------------------------------------------------------

def test_approximate_coefficients_examples():
    assert approximate_coefficients(1).tolist() == [0.0]
    assert approximate_coefficients(2).tolist() == [-0.5, 0.5]
    assert not approximate_pool([np.ones(3)]).any()


@pytest.mark.parametrize("T", [1, 2, 3, 10, 57, 100])
def test_approximate_coefficients_sum_to_zero(T):
    assert abs(approximate_coefficients(T).sum()) <= 1e-12


def test_approximate_pool_kills_constants():
    assert np.abs(approximate_pool([np.full(4, 9.0)] * 17)).max() <= 1e-9


def test_approximate_points_the_same_way():
    rng = np.random.default_rng(0)
    for _ in range(5):
        X = [rng.normal(size=50) * 0.1 + t * rng.normal(size=50) for t in range(10)]
        a, F = approximate_pool(X), rank_pool(X)
        assert a @ F / (np.linalg.norm(a) * np.linalg.norm(F)) > 0.5


def test_approximate_errors():
    with pytest.raises(EmptyInputError):
        approximate_pool([])


# -- rendering ------------------------------------------------------------------------

def test_render_examples():
    r = render(DynamicFlowImage(np.zeros((3, 3)), np.zeros((3, 3))))
    assert (r.u == 128).all() and (r.v == 128).all()
    assert not r.color.any()
    plane = np.array([[-1.0, 0.0, 3.0]])
    assert normalize_plane(plane).tolist() == [[0, 64, 255]]


def test_render_dynamic_image_is_hwc():
    out = render(DynamicImage(np.stack([np.eye(3), -np.eye(3), np.zeros((3, 3))])))
    assert out.shape == (3, 3, 3) and out.dtype == np.uint8
    assert (out[..., 2] == 128).all()


def test_flow_color_hue_follows_direction():
    Fu = np.array([[1.0, 0.0, -1.0]])
    Fv = np.array([[0.0, 1.0, 0.0]])
    c = flow_color(Fu, Fv).astype(int)
    assert c[0, 0].tolist() == [255, 0, 0]  # hue 0
    assert c[0, 2, 2] > c[0, 2, 0] and c[0, 2, 1] > c[0, 2, 0]  # hue 1/2: cyan


def test_render_deterministic_and_rejects_other_types():
    img = DynamicFlowImage(np.arange(6.0).reshape(2, 3), -np.arange(6.0).reshape(2, 3))
    a, b = render(img), render(img)
    for x, y in zip(a, b):
        assert x.tobytes() == y.tobytes()
    with pytest.raises(TypeError):
        render(np.zeros((2, 2)))
