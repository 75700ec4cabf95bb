"""Flow conditioning: median removal, vector thresholding, 8-bit quantization."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import ConfigurationError, ContractViolationError, DimensionError, EmptyInputError
from .flowcore import FlowField, GrayFrame

DEFAULT_BOUND = 20.0


@dataclass(frozen=True)
class QuantizedFlowFrame:
    u_gray: GrayFrame
    v_gray: GrayFrame

    def __post_init__(self):
        if self.u_gray.shape != self.v_gray.shape:
            raise DimensionError(f"u/v planes differ: {self.u_gray.shape} vs {self.v_gray.shape}")

    @property
    def shape(self):
        return self.u_gray.shape

    def as_float(self) -> np.ndarray:
        """``(2, h, w)`` float64 copy of the gray levels."""
        return np.stack([self.u_gray.values, self.v_gray.values]).astype(np.float64)


def _check_bound(bound):
    if not bound > 0:
        raise ConfigurationError(f"clip bound must be > 0, got {bound}")


def subtract_median(field: FlowField) -> FlowField:
    """Remove the per-channel scalar median (cheap global camera-motion compensation)."""
    u = field.u.astype(np.float64)
    v = field.v.astype(np.float64)
    return FlowField(u - np.median(u), v - np.median(v))


def threshold_flow(field: FlowField, bound: float = DEFAULT_BOUND) -> FlowField:
    """Zero the whole vector wherever either component leaves ``[-bound, bound]``."""
    _check_bound(bound)
    # compare in float64: a float32 comparison would round the bound too and
    # let through samples that quantization then rejects
    u = field.u.astype(np.float64)
    v = field.v.astype(np.float64)
    out = (np.abs(u) > bound) | (np.abs(v) > bound)
    return FlowField(np.where(out, 0.0, u), np.where(out, 0.0, v))


def round_half_away(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def _quantize_plane(x: np.ndarray, bound: float, name: str) -> np.ndarray:
    x = x.astype(np.float64)
    bad = np.abs(x) > bound
    if bad.any():
        r, c = (int(i) for i in np.argwhere(bad)[0])
        raise ContractViolationError(
            f"{name}[{r}, {c}] = {x[r, c]!r} outside [-{bound}, {bound}]; threshold before quantizing"
        )
    q = round_half_away((x + bound) / (2.0 * bound) * 255.0)
    return q.astype(np.uint8)


def quantize_flow(field: FlowField, bound: float = DEFAULT_BOUND) -> QuantizedFlowFrame:
    """Affine map ``[-bound, bound] -> [0, 255]``; zero flow lands on 128."""
    _check_bound(bound)
    return QuantizedFlowFrame(
        GrayFrame(_quantize_plane(field.u, bound, "u")),
        GrayFrame(_quantize_plane(field.v, bound, "v")),
    )


def dequantize(q: np.ndarray, bound: float = DEFAULT_BOUND) -> np.ndarray:
    return np.asarray(q, dtype=np.float64) / 255.0 * 2.0 * bound - bound


def condition_frame(field: FlowField, bound: float = DEFAULT_BOUND) -> QuantizedFlowFrame:
    return quantize_flow(threshold_flow(subtract_median(field), bound), bound)


def condition_sequence(seq: Iterable[FlowField], bound: float = DEFAULT_BOUND) -> list[QuantizedFlowFrame]:
    _check_bound(bound)
    out = [condition_frame(f, bound) for f in seq]
    if not out:
        raise EmptyInputError("nothing to condition")
    return out
