"""Synthetic moving-square clips and a small DF-vs-DI classification experiment.

Each clip shows a square translating in one of four directions over a flat
background whose brightness drifts over time. In the default regime the drift
is strong enough to carry the background past the square's level, so the
intensity ordering of the clip is dominated by lighting rather than motion.
Pooling the flow ignores the drift; pooling the intensities does not.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import ConfigurationError
from .flowcore import FlowField, FlowSequence, GrayFrame, RgbFrame
from .preprocess import DEFAULT_BOUND, condition_sequence, round_half_away
from .rankpool import DEFAULT_C, SolverConfig, pool_flow, pool_rgb
from .tvl1 import Tvl1Params, sequence_flow

log = logging.getLogger(__name__)

CLASSES = ("up", "down", "left", "right")
_DIRECTIONS = {"up": (0.0, -1.0), "down": (0.0, 1.0), "left": (-1.0, 0.0), "right": (1.0, 0.0)}


@dataclass(frozen=True)
class SyntheticClipConfig:
    size: int = 32
    n_frames: int = 30
    motion_class: str = "right"
    square_side: int = 8
    speed: float = 0.5
    background_ramp: float = 0.0
    noise_sigma: float = 0.0
    seed: int = 0
    start: tuple | None = None  # (x0, y0) of the square's top-left corner in frame 0
    background_level: float = 60.0
    square_level: float = 200.0

    def __post_init__(self):
        if self.motion_class not in _DIRECTIONS:
            raise ConfigurationError(f"motion_class must be one of {CLASSES}, got {self.motion_class!r}")
        for name in ("size", "n_frames", "square_side"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ConfigurationError(f"{name} must be a positive integer, got {v}")
        if self.speed < 0 or self.noise_sigma < 0:
            raise ConfigurationError("speed and noise_sigma must be nonnegative")
        x0, y0 = self.origin()
        dx, dy = self.velocity()
        span = (self.n_frames - 1)
        for a, d in ((x0, dx), (y0, dy)):
            lo, hi = min(a, a + d * span), max(a, a + d * span)
            if lo < 0 or hi + self.square_side > self.size:
                raise ConfigurationError("square leaves the frame during the clip")

    def velocity(self) -> tuple[float, float]:
        ux, uy = _DIRECTIONS[self.motion_class]
        return ux * self.speed, uy * self.speed

    def origin(self) -> tuple[float, float]:
        if self.start is not None:
            return float(self.start[0]), float(self.start[1])
        dx, dy = self.velocity()
        span = self.n_frames - 1
        # centre the whole trajectory
        x0 = (self.size - self.square_side - dx * span) / 2.0
        y0 = (self.size - self.square_side - dy * span) / 2.0
        return float(np.floor(x0)), float(np.floor(y0))


def _coverage(n: int, lo: float, side: int) -> np.ndarray:
    """Fraction of each unit cell ``[c, c+1)`` covered by ``[lo, lo + side)``."""
    c = np.arange(n, dtype=np.float64)
    return np.clip(np.minimum(c + 1, lo + side) - np.maximum(c, lo), 0.0, 1.0)


def generate_clip(cfg: SyntheticClipConfig):
    """Frames plus the ground-truth flow between consecutive frames."""
    rng = np.random.default_rng(cfg.seed)
    x0, y0 = cfg.origin()
    dx, dy = cfg.velocity()
    frames, flows = [], []
    for t in range(cfg.n_frames):
        cov = np.outer(_coverage(cfg.size, y0 + dy * t, cfg.square_side),
                       _coverage(cfg.size, x0 + dx * t, cfg.square_side))
        bg = cfg.background_level + cfg.background_ramp * t
        img = bg + (cfg.square_level - bg) * cov
        if cfg.noise_sigma > 0:
            img = img + rng.normal(0.0, cfg.noise_sigma, img.shape)
        frames.append(GrayFrame(np.clip(round_half_away(img), 0, 255).astype(np.uint8)))
        if t + 1 < cfg.n_frames:
            inside = cov >= 0.5
            flows.append(FlowField(np.where(inside, dx, 0.0), np.where(inside, dy, 0.0)))
    return frames, FlowSequence(tuple(flows))


@dataclass(frozen=True)
class FeatureParams:
    bound: float = DEFAULT_BOUND
    C: float = DEFAULT_C
    solver: SolverConfig = field(default_factory=SolverConfig)
    tvl1: Tvl1Params = field(default_factory=Tvl1Params)


def featurize(frames: Sequence[GrayFrame], mode: str = "df", use_true_flow: bool = False,
              true_flow: FlowSequence | None = None, params: FeatureParams | None = None) -> np.ndarray:
    """Pool a whole clip into one flattened vector, from flow (``df``) or intensities (``di``)."""
    params = params or FeatureParams()
    mode = mode.lower()
    if mode == "df":
        if use_true_flow:
            if true_flow is None:
                raise ConfigurationError("use_true_flow needs the ground-truth flow")
            flow = true_flow
        else:
            flow = sequence_flow(frames, params.tvl1)
        return pool_flow(condition_sequence(flow, params.bound), params.C, params.solver).flatten()
    if mode == "di":
        return pool_rgb([RgbFrame.from_gray(f) for f in frames], params.C, params.solver).flatten()
    raise ConfigurationError(f"mode must be 'df' or 'di', got {mode!r}")


# -- classifier ----------------------------------------------------------------

@dataclass
class ToyDataset:
    features: np.ndarray  # (n, d)
    labels: np.ndarray  # (n,) class indices
    train: np.ndarray  # indices
    test: np.ndarray

    @property
    def items(self):
        return list(zip(self.features, self.labels))


def stratified_split(labels: np.ndarray, train_fraction: float, seed: int):
    rng = np.random.default_rng(seed)
    train, test = [], []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(idx.size)]
        k = int(round(train_fraction * idx.size))
        train.extend(idx[:k])
        test.extend(idx[k:])
    return np.sort(np.array(train, dtype=np.int64)), np.sort(np.array(test, dtype=np.int64))


@dataclass
class LinearOvr:
    """One-vs-rest linear scorer; the last weight column is the bias."""

    weights: np.ndarray
    loss_history: list = field(default_factory=list)

    def scores(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        return X @ self.weights[:, :-1].T + self.weights[:, -1]

    def predict(self, X: np.ndarray) -> np.ndarray:
        # argmax returns the lowest index on ties
        return np.argmax(self.scores(X), axis=1)


def _ovr_loss(W, Xb, Y, lam):
    margins = Y * (Xb @ W.T)
    return float(0.5 * lam * np.sum(W * W) + np.mean(np.sum(np.maximum(0.0, 1.0 - margins), axis=1)))


def train_linear(dataset: ToyDataset, classes: int, C: float = 10.0, epochs: int = 200, seed: int = 0,
                 batch_size: int = 16) -> LinearOvr:
    """Seeded mini-batch subgradient descent on ``k`` one-vs-rest hinge losses.

    Training rows are put in a canonical order first, so the result does not
    depend on how the caller ordered them.
    """
    if classes < 2:
        raise ConfigurationError(f"need at least 2 classes, got {classes}")
    X = np.asarray(dataset.features, dtype=np.float64)[dataset.train]
    y = np.asarray(dataset.labels)[dataset.train]
    if X.shape[0] == 0:
        raise ConfigurationError("empty training split")
    if np.unique(y).size < 2:
        raise ConfigurationError("training split holds a single class")
    order = sorted(range(len(y)), key=lambda i: (int(y[i]), X[i].tobytes()))
    X, y = X[order], y[order]
    n = X.shape[0]
    Xb = np.hstack([X, np.ones((n, 1))])
    Y = np.where(y[:, None] == np.arange(classes)[None, :], 1.0, -1.0)
    lam = 1.0 / (C * n)
    W = np.zeros((classes, Xb.shape[1]))
    rng = np.random.default_rng(seed)
    history = [_ovr_loss(W, Xb, Y, lam)]
    step = 0
    for _ in range(epochs):
        perm = rng.permutation(n)
        for b in range(0, n, batch_size):
            idx = perm[b:b + batch_size]
            step += 1
            eta = 1.0 / np.sqrt(step)
            viol = (Y[idx] * (Xb[idx] @ W.T)) < 1.0
            grad = lam * W - ((viol * Y[idx]).T @ Xb[idx]) / idx.size
            W = W - eta * grad
        history.append(_ovr_loss(W, Xb, Y, lam))
    return LinearOvr(W, history)


# -- experiment ----------------------------------------------------------------

@dataclass(frozen=True)
class ComparisonConfig:
    n_clips_per_class: int = 50
    classes: tuple = CLASSES
    template: SyntheticClipConfig = field(default_factory=lambda: SyntheticClipConfig(square_level=160.0))
    ramp_range: tuple = (2.0, 8.0)
    noise_range: tuple = (0.0, 1.0)
    jitter: int = 2
    train_fraction: float = 0.5
    use_true_flow: bool = False
    features: FeatureParams = field(default_factory=FeatureParams)
    normalize: bool = True
    svm_c: float = 10.0
    epochs: int = 200
    seed: int = 0

    def __post_init__(self):
        if len(self.classes) < 2:
            raise ConfigurationError(f"need at least 2 motion classes, got {len(self.classes)}")
        bad = [c for c in self.classes if c not in _DIRECTIONS]
        if bad:
            raise ConfigurationError(f"unknown motion classes {bad}")
        if self.n_clips_per_class < 2:
            raise ConfigurationError("need at least 2 clips per class")


def easy_config(**overrides) -> ComparisonConfig:
    return replace(ComparisonConfig(ramp_range=(0.0, 0.0), noise_range=(0.0, 0.0)), **overrides)


def clip_configs(cfg: ComparisonConfig) -> list[tuple[SyntheticClipConfig, int]]:
    """Per-clip configs with randomized ramp, noise and start position."""
    rng = np.random.default_rng(cfg.seed)
    out = []
    for k, cls in enumerate(cfg.classes):
        for _ in range(cfg.n_clips_per_class):
            base = replace(cfg.template, motion_class=cls, start=None)
            x0, y0 = base.origin()
            jx, jy = (int(v) for v in rng.integers(-cfg.jitter, cfg.jitter + 1, size=2))
            ramp = float(rng.uniform(*cfg.ramp_range))
            noise = float(rng.uniform(*cfg.noise_range))
            clip_seed = int(rng.integers(0, 2**31 - 1))
            out.append((replace(base, start=(x0 + jx, y0 + jy), background_ramp=ramp,
                                noise_sigma=noise, seed=clip_seed), k))
    return out


def _normalize_rows(X):
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    return X / np.where(norms > 0, norms, 1.0)


def _accuracy_table(pred, truth, classes):
    rows = []
    for k, name in enumerate(classes):
        m = truth == k
        rows.append((name, int(m.sum()), float(np.mean(pred[m] == k)) if m.any() else float("nan")))
    return rows


def run_comparison(cfg: ComparisonConfig | None = None, workers: int = 1) -> dict:
    """Generate, featurize both ways, train, evaluate. Pure function of ``cfg``."""
    cfg = cfg or ComparisonConfig()
    clips = clip_configs(cfg)
    labels = np.array([k for _, k in clips])

    def feats(item):
        clip_cfg, _ = item
        frames, flow = generate_clip(clip_cfg)
        df = featurize(frames, "df", cfg.use_true_flow, flow, cfg.features)
        di = featurize(frames, "di", params=cfg.features)
        return df, di

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            pairs = list(pool.map(feats, clips))
    else:
        pairs = [feats(c) for c in clips]

    train, test = stratified_split(labels, cfg.train_fraction, cfg.seed + 1)
    report = {"classes": list(cfg.classes), "n_train": int(train.size), "n_test": int(test.size)}
    per_class = {}
    for mode, col in (("df", 0), ("di", 1)):
        X = np.stack([p[col] for p in pairs])
        if cfg.normalize:
            X = _normalize_rows(X)
        data = ToyDataset(X, labels, train, test)
        model = train_linear(data, len(cfg.classes), cfg.svm_c, cfg.epochs, cfg.seed + 2)
        pred = model.predict(X[test])
        report[f"accuracy_{mode}"] = float(np.mean(pred == labels[test]))
        report[f"train_accuracy_{mode}"] = float(np.mean(model.predict(X[train]) == labels[train]))
        per_class[mode] = _accuracy_table(pred, labels[test], cfg.classes)
    report["per_class"] = [
        {"class": name, "n_test": n, "accuracy_df": a_df, "accuracy_di": per_class["di"][k][2]}
        for k, (name, n, a_df) in enumerate(per_class["df"])
    ]
    return report


def format_report(report: dict) -> str:
    lines = [f"{'class':<8} {'n_test':>6} {'DF':>7} {'DI':>7}"]
    for row in report["per_class"]:
        lines.append(f"{row['class']:<8} {row['n_test']:>6} {row['accuracy_df']:>7.1%} {row['accuracy_di']:>7.1%}")
    lines.append(f"{'all':<8} {report['n_test']:>6} {report['accuracy_df']:>7.1%} {report['accuracy_di']:>7.1%}")
    return "\n".join(lines)
