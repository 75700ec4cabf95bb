"""Dense TV-L1 optical flow (duality-based, coarse-to-fine with warping).

The flow maps ``prev`` onto ``next``: ``next(x + u, y + v) ~= prev(x, y)``.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Sequence

import numpy as np
from scipy import ndimage

from . import _kernels
from .errors import ConfigurationError, DimensionError, EmptyInputError
from .flowcore import FlowField, FlowSequence, GrayFrame

MIN_SIDE = 8


@dataclass(frozen=True)
class Tvl1Params:
    tau: float = 0.25
    lambda_: float = 0.15
    theta: float = 0.3
    pyramid_levels: int = 5
    pyramid_scale: float = 0.5
    warps_per_level: int = 5
    inner_iterations: int = 300
    convergence_eps: float = 0.01

    def __post_init__(self):
        for name in ("tau", "lambda_", "theta", "convergence_eps"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be > 0, got {getattr(self, name)}")
        if not 0 < self.pyramid_scale < 1:
            raise ConfigurationError(f"pyramid_scale must lie in (0, 1), got {self.pyramid_scale}")
        for name in ("pyramid_levels", "warps_per_level", "inner_iterations"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ConfigurationError(f"{name} must be a positive integer, got {v}")

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


def _as_float(frame) -> np.ndarray:
    a = frame.values if isinstance(frame, GrayFrame) else np.asarray(frame)
    return np.asarray(a, dtype=np.float64)


def centered_gradient(img: np.ndarray):
    """Central differences, borders replicated."""
    p = np.pad(img, 1, mode="edge")
    gx = 0.5 * (p[1:-1, 2:] - p[1:-1, :-2])
    gy = 0.5 * (p[2:, 1:-1] - p[:-2, 1:-1])
    return gx, gy


def _warp(img: np.ndarray, u1: np.ndarray, u2: np.ndarray) -> np.ndarray:
    """Bilinear sample of ``img`` at ``(x + u1, y + u2)``, borders replicated."""
    ny, nx = img.shape
    yy, xx = np.mgrid[0:ny, 0:nx].astype(np.float64)
    return ndimage.map_coordinates(img, [yy + u2, xx + u1], order=1, mode="nearest")


def _resample(img: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Bilinear resampling onto ``shape`` with pixel centres aligned to the corners grid."""
    ny, nx = img.shape
    my, mx = shape
    ys = np.arange(my, dtype=np.float64) * (ny / my)
    xs = np.arange(mx, dtype=np.float64) * (nx / mx)
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return ndimage.map_coordinates(img, [yy, xx], order=1, mode="nearest")


def _level_shapes(shape, params: Tvl1Params):
    shapes = [shape]
    for _ in range(1, params.pyramid_levels):
        ny, nx = shapes[-1]
        nxt = (int(ny * params.pyramid_scale + 0.5), int(nx * params.pyramid_scale + 0.5))
        if min(nxt) < MIN_SIDE:
            break
        shapes.append(nxt)
    return shapes


def _pyramid(img: np.ndarray, shapes, scale: float):
    sigma = 0.6 * np.sqrt(1.0 / (scale * scale) - 1.0)
    levels = [img]
    for shp in shapes[1:]:
        smoothed = ndimage.gaussian_filter(levels[-1], sigma, mode="nearest")
        levels.append(_resample(smoothed, shp))
    return levels


def _solve_level(I0, I1, u1, u2, params: Tvl1Params):
    I1x, I1y = centered_gradient(I1)
    p11 = np.zeros_like(I0)
    p12 = np.zeros_like(I0)
    p21 = np.zeros_like(I0)
    p22 = np.zeros_like(I0)
    lt = params.lambda_ * params.theta
    taut = params.tau / params.theta
    eps2 = params.convergence_eps * params.convergence_eps
    for _ in range(params.warps_per_level):
        I1w = _warp(I1, u1, u2)
        I1wx = _warp(I1x, u1, u2)
        I1wy = _warp(I1y, u1, u2)
        grad = I1wx * I1wx + I1wy * I1wy
        rho_c = I1w - I1wx * u1 - I1wy * u2 - I0
        _kernels.tvl1_inner(I1wx, I1wy, grad, rho_c, u1, u2, p11, p12, p21, p22,
                            lt, params.theta, taut, params.inner_iterations, eps2)
    return u1, u2


def compute_flow(prev: GrayFrame, next: GrayFrame, params: Tvl1Params | None = None) -> FlowField:
    params = params or Tvl1Params()
    I0, I1 = _as_float(prev), _as_float(next)
    if I0.shape != I1.shape:
        raise DimensionError(f"frame shapes differ: {I0.shape} vs {I1.shape}")
    if min(I0.shape) < MIN_SIDE:
        raise ConfigurationError(f"frames must be at least {MIN_SIDE}x{MIN_SIDE}, got {I0.shape[1]}x{I0.shape[0]}")

    shapes = _level_shapes(I0.shape, params)
    pyr0 = _pyramid(I0, shapes, params.pyramid_scale)
    pyr1 = _pyramid(I1, shapes, params.pyramid_scale)

    u1 = np.zeros(shapes[-1])
    u2 = np.zeros(shapes[-1])
    for level in range(len(shapes) - 1, -1, -1):
        if u1.shape != shapes[level]:
            sy = shapes[level][0] / u1.shape[0]
            sx = shapes[level][1] / u1.shape[1]
            u1 = _resample(u1, shapes[level]) * sx
            u2 = _resample(u2, shapes[level]) * sy
        u1, u2 = _solve_level(pyr0[level], pyr1[level], np.ascontiguousarray(u1), np.ascontiguousarray(u2), params)
    return FlowField(u1, u2)


def sequence_flow(frames: Sequence[GrayFrame], params: Tvl1Params | None = None) -> FlowSequence:
    frames = list(frames)
    if len(frames) < 2:
        raise EmptyInputError(f"need at least 2 frames for flow, got {len(frames)}")
    return FlowSequence(tuple(compute_flow(a, b, params) for a, b in zip(frames[:-1], frames[1:])))


def tvl1_energy(prev: GrayFrame, next: GrayFrame, flow: FlowField, lambda_: float = 0.15) -> float:
    """Discrete TV-L1 energy: total variation of both channels plus weighted L1 residual."""
    I0, I1 = _as_float(prev), _as_float(next)
    u1 = flow.u.astype(np.float64)
    u2 = flow.v.astype(np.float64)
    tv = 0.0
    for comp in (u1, u2):
        gx, gy = _kernels._forward_gradient(comp)
        tv += float(np.sum(np.sqrt(gx * gx + gy * gy)))
    residual = _warp(I1, u1, u2) - I0
    return tv + lambda_ * float(np.sum(np.abs(residual)))
