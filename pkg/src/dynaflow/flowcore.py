"""Flow and frame containers plus bit-exact ``.flo`` and raster I/O."""

from __future__ import annotations

import logging
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .errors import DimensionError, EmptyInputError, FormatError, LengthError

log = logging.getLogger(__name__)

FLO_MAGIC = np.float32(202021.25)
_FLO_TAG = FLO_MAGIC.tobytes()  # b"PIEH" little-endian
RASTER_SUFFIXES = (".png", ".pgm", ".ppm", ".pnm", ".bmp", ".tif", ".tiff")


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class FlowField:
    """Dense flow between two frames, pixels/frame.

    A point at ``(x, y)`` in the earlier frame appears at ``(x + u, y + v)``
    in the later one. Planes are ``(height, width)`` float32.
    Non-finite samples are replaced by 0 on construction.
    """

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = np.array(self.u, dtype=np.float32)
        v = np.array(self.v, dtype=np.float32)
        if u.ndim != 2 or u.shape != v.shape:
            raise DimensionError(f"u and v must be equal 2-D planes, got {u.shape} and {v.shape}")
        if u.shape[0] < 1 or u.shape[1] < 1:
            raise DimensionError(f"flow dimensions must be positive, got {u.shape[1]}x{u.shape[0]}")
        bad_u, bad_v = ~np.isfinite(u), ~np.isfinite(v)
        n_bad = int(np.count_nonzero(bad_u) + np.count_nonzero(bad_v))
        if n_bad:
            log.warning("replaced %d non-finite flow samples with 0", n_bad)
            u[bad_u] = 0.0
            v[bad_v] = 0.0
        object.__setattr__(self, "u", _frozen(u))
        object.__setattr__(self, "v", _frozen(v))

    @property
    def height(self) -> int:
        return self.u.shape[0]

    @property
    def width(self) -> int:
        return self.u.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.u.shape

    @classmethod
    def zeros(cls, height: int, width: int) -> "FlowField":
        return cls(np.zeros((height, width), np.float32), np.zeros((height, width), np.float32))

    def stacked(self) -> np.ndarray:
        """``(2, height, width)`` copy with u first."""
        return np.stack([self.u, self.v])


@dataclass(frozen=True)
class FlowSequence:
    frames: tuple

    def __post_init__(self):
        frames = tuple(self.frames)
        if not frames:
            raise EmptyInputError("flow sequence needs at least one frame")
        shape = frames[0].shape
        for i, f in enumerate(frames):
            if f.shape != shape:
                raise DimensionError(f"frame {i} has shape {f.shape}, expected {shape}")
        object.__setattr__(self, "frames", frames)

    def __len__(self):
        return len(self.frames)

    def __getitem__(self, item):
        if isinstance(item, slice):
            return FlowSequence(self.frames[item])
        return self.frames[item]

    def __iter__(self):
        return iter(self.frames)

    @property
    def shape(self) -> tuple[int, int]:
        return self.frames[0].shape


@dataclass(frozen=True)
class GrayFrame:
    values: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.values)
        if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
            raise DimensionError(f"gray frame must be a non-empty 2-D plane, got shape {a.shape}")
        if a.dtype != np.uint8:
            if np.issubdtype(a.dtype, np.integer) and a.size and (a.min() < 0 or a.max() > 255):
                raise FormatError("gray frame values must fit in 8 bits")
            a = a.astype(np.uint8)
        object.__setattr__(self, "values", _frozen(np.array(a, copy=True)))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class RgbFrame:
    """Three 8-bit planes stored as ``(height, width, 3)``."""

    values: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.values)
        if a.ndim != 3 or a.shape[2] != 3 or a.shape[0] < 1 or a.shape[1] < 1:
            raise DimensionError(f"rgb frame must be (height, width, 3), got shape {a.shape}")
        object.__setattr__(self, "values", _frozen(np.array(a, dtype=np.uint8, copy=True)))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape[:2]

    @classmethod
    def from_gray(cls, frame: GrayFrame) -> "RgbFrame":
        return cls(np.repeat(frame.values[:, :, None], 3, axis=2))


def luma(rgb: np.ndarray) -> np.ndarray:
    """ITU-R 601 luma of an 8-bit ``(..., 3)`` array, rounded half away from zero."""
    rgb = np.asarray(rgb, dtype=np.int64)
    # integer weights keep ties exact: (299 R + 587 G + 114 B) / 1000
    acc = 299 * rgb[..., 0] + 587 * rgb[..., 1] + 114 * rgb[..., 2]
    return ((acc + 500) // 1000).astype(np.uint8)


# -- .flo -------------------------------------------------------------------

def read_flo(path) -> FlowField:
    data = Path(path).read_bytes()
    if len(data) < 12:
        if len(data) >= 4 and data[:4] != _FLO_TAG:
            raise FormatError(f"{path}: bad .flo magic tag")
        raise LengthError(f"{path}: header truncated ({len(data)} bytes)")
    if data[:4] != _FLO_TAG:
        tag = np.frombuffer(data[:4], "<f4")[0]
        raise FormatError(f"{path}: bad .flo magic tag (reads as {tag!r})")
    width, height = (int(x) for x in np.frombuffer(data[4:12], "<i4"))
    if width < 1 or height < 1:
        raise DimensionError(f"{path}: nonpositive dimensions {width}x{height}")
    expected = 12 + 8 * width * height
    if len(data) != expected:
        raise LengthError(f"{path}: expected {expected} bytes for {width}x{height}, got {len(data)}")
    uv = np.frombuffer(data, "<f4", offset=12).reshape(height, width, 2)
    return FlowField(uv[..., 0], uv[..., 1])


def flo_bytes(field: FlowField) -> bytes:
    if field.width < 1 or field.height < 1:
        raise DimensionError("cannot encode an empty flow field")
    header = _FLO_TAG + np.array([field.width, field.height], "<i4").tobytes()
    uv = np.empty((field.height, field.width, 2), "<f4")
    uv[..., 0] = field.u
    uv[..., 1] = field.v
    return header + uv.tobytes()


def atomic_write_bytes(path, payload: bytes) -> None:
    """Write through a unique temp name in the target directory, then rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_flo(field: FlowField, path) -> None:
    atomic_write_bytes(path, flo_bytes(field))


# -- rasters ------------------------------------------------------------------

def _raster_files(directory) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise EmptyInputError(f"{d} is not a directory")
    files = sorted((p for p in d.iterdir() if p.suffix.lower() in RASTER_SUFFIXES), key=lambda p: p.name)
    if not files:
        raise EmptyInputError(f"no raster images in {d}")
    return files


def _read_raster(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode in ("L", "RGB"):
            return np.asarray(im)
        if im.mode in ("LA", "RGBA", "P", "PA", "1"):
            return np.asarray(im.convert("RGB" if im.mode != "1" else "L"))
        raise FormatError(f"{path}: unsupported raster mode {im.mode!r}, need 8-bit gray or RGB")


def _check_same_shape(frames, paths):
    shape = frames[0].shape
    for f, p in zip(frames, paths):
        if f.shape != shape:
            raise DimensionError(f"{p.name} is {f.width}x{f.height}, expected {shape[1]}x{shape[0]}")


def load_gray_sequence(directory) -> list[GrayFrame]:
    """Frames in lexicographic filename order; colour input is converted to luma."""
    paths = _raster_files(directory)
    frames = []
    for p in paths:
        a = _read_raster(p)
        frames.append(GrayFrame(a if a.ndim == 2 else luma(a)))
    _check_same_shape(frames, paths)
    return frames


def load_rgb_sequence(directory) -> list[RgbFrame]:
    paths = _raster_files(directory)
    frames = []
    for p in paths:
        a = _read_raster(p)
        frames.append(RgbFrame(np.repeat(a[:, :, None], 3, axis=2) if a.ndim == 2 else a))
    _check_same_shape(frames, paths)
    return frames


def png_bytes(values: np.ndarray) -> bytes:
    import io

    a = np.asarray(values, dtype=np.uint8)
    buf = io.BytesIO()
    Image.fromarray(a, mode="L" if a.ndim == 2 else "RGB").save(buf, format="PNG")
    return buf.getvalue()


def write_png(values: np.ndarray, path) -> None:
    """8-bit lossless output; 2-D arrays are gray, ``(h, w, 3)`` are RGB."""
    atomic_write_bytes(path, png_bytes(values))


def save_frames(frames: Sequence[GrayFrame | RgbFrame], directory, prefix: str = "frame") -> list[Path]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    out = []
    for i, f in enumerate(frames):
        p = d / f"{prefix}_{i:05d}.png"
        write_png(f.values, p)
        out.append(p)
    return out
