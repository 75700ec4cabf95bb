"""Sliding windows over a clip, per-window pooling, manifests, feature assembly."""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, DimensionError, EmptyInputError, FormatError, WindowError
from .flowcore import FlowSequence, RgbFrame
from .preprocess import DEFAULT_BOUND, condition_sequence
from .rankpool import DEFAULT_C, DynamicFlowImage, DynamicImage, SolverConfig, pool_flow, pool_rgb

MANIFEST_FIELDS = ("clip_id", "label", "start", "end", "path", "n_frames")


@dataclass(frozen=True)
class WindowSpec:
    window: int = 25
    stride: int = 5

    def __post_init__(self):
        for name in ("window", "stride"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ConfigurationError(f"{name} must be a positive integer, got {v}")


@dataclass
class ClipManifest:
    clip_id: str
    label: str
    n_frames: int
    windows: list = field(default_factory=list)  # (start, end_exclusive, path)

    def __post_init__(self):
        starts = [w[0] for w in self.windows]
        if len(set(starts)) != len(starts):
            raise FormatError(f"{self.clip_id}: duplicate window starts")
        for s, e, _ in self.windows:
            if not 0 <= s < e <= self.n_frames:
                raise FormatError(f"{self.clip_id}: window [{s}, {e}) outside [0, {self.n_frames}]")

    def records(self) -> list[dict]:
        return [
            {"clip_id": self.clip_id, "label": self.label, "start": s, "end": e, "path": p, "n_frames": self.n_frames}
            for s, e, p in self.windows
        ]

    def to_lines(self) -> list[str]:
        return [json.dumps(r, separators=(",", ":")) for r in self.records()]


def manifest_text(manifests: Iterable[ClipManifest]) -> str:
    return "".join(line + "\n" for m in manifests for line in m.to_lines())


def parse_manifest(text: str) -> list[ClipManifest]:
    """Inverse of :func:`manifest_text`; clips keep their first-seen order."""
    clips: dict[str, ClipManifest] = {}
    for n, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            key = [rec[k] for k in MANIFEST_FIELDS]
        except (ValueError, KeyError) as exc:
            raise FormatError(f"manifest line {n}: {exc}") from exc
        clip_id, label, start, end, path, n_frames = key
        m = clips.get(clip_id)
        if m is None:
            m = clips[clip_id] = ClipManifest(clip_id, label, int(n_frames), [])
        elif m.label != label or m.n_frames != n_frames:
            raise FormatError(f"manifest line {n}: inconsistent label/n_frames for {clip_id}")
        m.windows.append((int(start), int(end), path))
    out = list(clips.values())
    for m in out:
        m.__post_init__()
    return out


def make_windows(n: int, spec: WindowSpec | None = None) -> list[tuple[int, int]]:
    """Full windows ``[k*s, k*s + w)``; a clip shorter than ``w`` yields one window over all of it."""
    spec = spec or WindowSpec()
    if n < 1:
        raise EmptyInputError("clip has no frames")
    if n < spec.window:
        return [(0, n)]
    return [(k * spec.stride, k * spec.stride + spec.window) for k in range((n - spec.window) // spec.stride + 1)]


def expansion_factor(n: int, spec: WindowSpec | None = None) -> int:
    """Number of windows a clip contributes (tends to n/s for long clips)."""
    return len(make_windows(n, spec))


def window_name(clip_id: str, start: int, ext: str = "npy") -> str:
    return f"{clip_id}_w{start}.{ext}"


def _map_windows(fn: Callable, windows, workers: int):
    def guarded(item):
        k, w = item
        try:
            return fn(w)
        except Exception as exc:
            raise WindowError(k, exc) from exc

    items = list(enumerate(windows))
    if workers <= 1 or len(items) <= 1:
        return [guarded(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(guarded, items))


def run_clip(flow: FlowSequence, spec: WindowSpec | None = None, bound: float = DEFAULT_BOUND,
             C: float = DEFAULT_C, cfg: SolverConfig | None = None, *, clip_id: str = "clip",
             label: str = "", ext: str = "npy", workers: int = 1):
    """Condition and pool every window of a flow clip.

    Returns ``(images, manifest)`` with images in window order.
    """
    spec = spec or WindowSpec()
    if len(flow) < 1:
        raise EmptyInputError("empty flow clip")
    windows = make_windows(len(flow), spec)
    frames = list(flow)

    def one(w):
        s, e = w
        return pool_flow(condition_sequence(frames[s:e], bound), C, cfg)

    images: list[DynamicFlowImage] = _map_windows(one, windows, workers)
    manifest = ClipManifest(clip_id, label, len(flow), [(s, e, window_name(clip_id, s, ext)) for s, e in windows])
    return images, manifest


def run_clip_rgb(frames: Sequence[RgbFrame], spec: WindowSpec | None = None, C: float = DEFAULT_C,
                 cfg: SolverConfig | None = None, *, clip_id: str = "clip", label: str = "",
                 ext: str = "npy", workers: int = 1):
    """Dynamic-image baseline over the same windows, indexed by RGB frame."""
    spec = spec or WindowSpec()
    frames = list(frames)
    windows = make_windows(len(frames), spec)
    images: list[DynamicImage] = _map_windows(lambda w: pool_rgb(frames[w[0]:w[1]], C, cfg), windows, workers)
    manifest = ClipManifest(clip_id, label, len(frames), [(s, e, window_name(clip_id, s, ext)) for s, e in windows])
    return images, manifest


def assemble_feature(parts: Sequence[np.ndarray], l2_normalize: bool = False) -> np.ndarray:
    """Concatenate flattened parts in order, optionally L2-normalising each first."""
    if not len(parts):
        raise DimensionError("no feature parts")
    out = []
    for k, p in enumerate(parts):
        p = np.asarray(p, dtype=np.float64).reshape(-1)
        if p.size == 0:
            raise DimensionError(f"feature part {k} is empty")
        if l2_normalize:
            norm = np.linalg.norm(p)
            if norm > 0:
                p = p / norm
        out.append(p)
    return np.concatenate(out)
