"""Rank pooling: summarise an ordered window by the parameters of a linear ranker.

The pooled image ``F`` minimises

    J(F) = ||F||^2 + C * sum_{i<j} max(0, 1 - <F, s_j - s_i>)

over running-average smoothed frames ``s_t``. The solver works on the dual,
one pair at a time, inside the span of the frames (a ``T x T`` Gram matrix),
so the cost per epoch is independent of the image size.

Coordinate descent is fast on well-spread windows but crawls when adjacent
smoothed frames are nearly collinear, which is common late in a window. If it
has not certified the duality gap after ``dcd_budget`` epochs the problem is
handed to a primal-dual interior-point method in the same span.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import NamedTuple, Sequence

import numpy as np

from . import _kernels
from .errors import ConfigurationError, DimensionError, EmptyInputError
from .flowcore import RgbFrame
from .preprocess import QuantizedFlowFrame, round_half_away

log = logging.getLogger(__name__)

DEFAULT_C = 1.0


SOLVER_METHODS = ("auto", "dcd", "ipm")


@dataclass(frozen=True)
class SolverConfig:
    """``method='auto'`` runs coordinate descent for ``dcd_budget`` epochs, then
    falls back to the interior-point solve. ``'dcd'`` runs up to ``max_epochs``."""

    max_epochs: int = 20000
    tolerance: float = 1e-10
    seed: int = 0
    method: str = "auto"
    dcd_budget: int = 100

    def __post_init__(self):
        for name in ("max_epochs", "dcd_budget"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ConfigurationError(f"{name} must be a positive integer, got {v}")
        if not self.tolerance > 0:
            raise ConfigurationError(f"tolerance must be > 0, got {self.tolerance}")
        if self.method not in SOLVER_METHODS:
            raise ConfigurationError(f"method must be one of {SOLVER_METHODS}, got {self.method!r}")


@dataclass(frozen=True)
class DynamicFlowImage:
    Fu: np.ndarray
    Fv: np.ndarray

    def __post_init__(self):
        fu = np.asarray(self.Fu, dtype=np.float64)
        fv = np.asarray(self.Fv, dtype=np.float64)
        if fu.ndim != 2 or fu.shape != fv.shape:
            raise DimensionError(f"Fu/Fv must be equal 2-D planes, got {fu.shape} and {fv.shape}")
        if not (np.isfinite(fu).all() and np.isfinite(fv).all()):
            raise ValueError("dynamic flow image has non-finite values")
        object.__setattr__(self, "Fu", fu)
        object.__setattr__(self, "Fv", fv)

    @property
    def height(self) -> int:
        return self.Fu.shape[0]

    @property
    def width(self) -> int:
        return self.Fu.shape[1]

    @property
    def planes(self) -> np.ndarray:
        return np.stack([self.Fu, self.Fv])

    def flatten(self) -> np.ndarray:
        return self.planes.reshape(-1)


@dataclass(frozen=True)
class DynamicImage:
    """Three pooled planes, ``(3, height, width)``."""

    planes: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.planes, dtype=np.float64)
        if p.ndim != 3 or p.shape[0] != 3:
            raise DimensionError(f"dynamic image needs 3 planes, got shape {p.shape}")
        if not np.isfinite(p).all():
            raise ValueError("dynamic image has non-finite values")
        object.__setattr__(self, "planes", p)

    @property
    def height(self) -> int:
        return self.planes.shape[1]

    @property
    def width(self) -> int:
        return self.planes.shape[2]

    def flatten(self) -> np.ndarray:
        return self.planes.reshape(-1)


@dataclass(frozen=True)
class RankingProblem:
    """Pairwise ranking problem over ``T`` frames of length ``dim``.

    ``frames`` are stored relative to the first frame; the pair differences
    (and therefore the solution) are unaffected by that shift.
    """

    frames: np.ndarray
    C: float
    shape: tuple = ()

    @property
    def T(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]

    @property
    def n_pairs(self) -> int:
        return self.T * (self.T - 1) // 2

    @property
    def pairs(self) -> tuple[np.ndarray, np.ndarray]:
        i, j = np.triu_indices(self.T, k=1)
        return i.astype(np.int64), j.astype(np.int64)

    @property
    def diffs(self) -> np.ndarray:
        """Materialised ``(n_pairs, dim)`` array of ``s_j - s_i``, ``i < j``."""
        i, j = self.pairs
        return self.frames[j] - self.frames[i]

    def objective(self, F: np.ndarray) -> float:
        scores = self.frames @ np.asarray(F, dtype=np.float64)
        i, j = self.pairs
        hinge = np.maximum(0.0, 1.0 - (scores[j] - scores[i]))
        return float(F @ F + self.C * hinge.sum())


class SolveResult(NamedTuple):
    coef: np.ndarray
    objective: float
    gap: float
    epochs: int
    converged: bool


# -- smoothing --------------------------------------------------------------

def smooth(seq: Sequence) -> list[np.ndarray]:
    """Running average: output ``t`` is the mean of inputs ``1..t``."""
    frames = [np.asarray(f, dtype=np.float64) for f in seq]
    if not frames:
        raise EmptyInputError("cannot smooth an empty sequence")
    shape = frames[0].shape
    out = []
    mean = np.zeros(shape)
    for t, f in enumerate(frames, start=1):
        if f.shape != shape:
            raise DimensionError(f"frame {t - 1} has shape {f.shape}, expected {shape}")
        # incremental form keeps constant sequences exactly fixed
        mean = mean + (f - mean) / t if t > 1 else f.copy()
        out.append(mean)
    return out


# -- problem + solver ---------------------------------------------------------

def build_problem(smoothed: Sequence, C: float = DEFAULT_C) -> RankingProblem:
    frames = [np.asarray(f, dtype=np.float64) for f in smoothed]
    if not frames:
        raise EmptyInputError("ranking problem needs at least one frame")
    if not C > 0:
        raise ConfigurationError(f"C must be > 0, got {C}")
    shape = frames[0].shape
    for t, f in enumerate(frames):
        if f.shape != shape:
            raise DimensionError(f"frame {t} has shape {f.shape}, expected {shape}")
    X = np.stack([f.reshape(-1) for f in frames])
    return RankingProblem(X - X[0], float(C), shape)


def _evaluate(gram, beta, alpha, pair_i, pair_j, C):
    scores = gram @ beta
    norm2 = float(beta @ scores)
    margin = scores[pair_j] - scores[pair_i]
    hinge = np.maximum(0.0, 1.0 - margin)
    J = norm2 + C * float(hinge.sum())
    # primal - dual, written with ||F||^2 = sum_k alpha_k margin_k so that every
    # term is >= 0 and nothing cancels
    gap = float(np.sum(C * hinge + 2.0 * alpha * (margin - 1.0)))
    return scores, J, max(gap, 0.0)


def _pair_setup(problem: RankingProblem):
    S = problem.frames
    gram = S @ S.T
    pair_i, pair_j = problem.pairs
    qdiag = gram[pair_i, pair_i] + gram[pair_j, pair_j] - 2.0 * gram[pair_i, pair_j]
    scale = max(float(np.max(np.diag(gram))), 1e-300)
    qdiag[qdiag <= 1e-13 * scale] = 0.0
    return gram, pair_i, pair_j, qdiag


def _beta_from_alpha(alpha, pair_i, pair_j, T):
    beta = np.zeros(T)
    np.add.at(beta, pair_j, alpha)
    np.subtract.at(beta, pair_i, alpha)
    return beta


def _coordinate_descent(gram, pair_i, pair_j, qdiag, C, tol, epochs, seed, alpha=None):
    T, P = gram.shape[0], pair_i.shape[0]
    upper = C / 2.0
    alpha = np.zeros(P) if alpha is None else np.clip(alpha, 0.0, upper)
    # vanishing differences sit at the box bound: constant hinge, no effect on F
    alpha[qdiag == 0.0] = upper
    beta = _beta_from_alpha(alpha, pair_i, pair_j, T)
    scores, J, gap = _evaluate(gram, beta, alpha, pair_i, pair_j, C)
    best = (J, beta.copy(), gap)
    rng = np.random.default_rng(seed)
    converged = bool(gap <= tol * J)
    epoch = 0
    while not converged and epoch < epochs:
        epoch += 1
        _kernels.dcd_epoch(gram, pair_i, pair_j, qdiag, upper, rng.permutation(P), alpha, beta, scores)
        scores, J, gap = _evaluate(gram, beta, alpha, pair_i, pair_j, C)
        if J < best[0]:
            best = (J, beta.copy(), gap)
        converged = bool(gap <= tol * J)
    if converged:
        best = (J, beta, gap)
    return best, epoch, converged


def _step_to_boundary(x, dx):
    neg = dx < 0
    return min(1.0, float(np.min(-x[neg] / dx[neg]))) if neg.any() else 1.0


def _interior_point(gram, pair_i, pair_j, C, tol, max_iter=200):
    """Mehrotra predictor-corrector on the primal
    ``min |z|^2 + C sum t  s.t.  D z + t >= 1, t >= 0`` with ``D = E Y``,
    ``Y Y^T = K``. Each Newton step is a ``T x T`` solve.

    Optimality is judged on the iterate's own residuals: the Gram-space gap
    used by coordinate descent cancels badly once ``K`` spans many decades.
    """
    T, P = gram.shape[0], pair_i.shape[0]
    ev, V = np.linalg.eigh(gram)
    Y = V * np.sqrt(np.maximum(ev, 0.0))
    D = Y[pair_j] - Y[pair_i]

    z = np.zeros(T)
    t = np.ones(P)
    w = np.ones(P)          # slack of D z + t >= 1
    lam = np.full(P, C / 2.0)  # multiplier of that constraint (= 2 alpha)
    mu = C - lam               # multiplier of t >= 0
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        r1 = 2.0 * z - D.T @ lam
        r3 = D @ z + t - 1.0 - w
        comp = float(lam @ w + mu @ t)
        J = float(z @ z) + C * float(t.sum())
        # complementarity bounds J - J* once both residuals vanish; residuals
        # are measured against the size of the terms they are made of
        res1 = float(np.abs(r1).max()) / (1.0 + float((np.abs(D).T @ np.abs(lam)).max()))
        res3 = float(np.abs(r3).max()) / (1.0 + float(np.abs(D @ z).max()))
        if comp <= tol * J and res1 <= 1e-10 and res3 <= 1e-10:
            converged = True
            break
        # past this point the Newton systems only amplify rounding
        if comp <= 1e-6 * tol * J:
            break

        def direction(ra, rb):
            G = t / mu + w / lam
            h = -r3 + rb / mu - ra / lam
            A = 2.0 * np.eye(T) + D.T @ (D / G[:, None])
            dz = np.linalg.solve(A, -r1 + D.T @ (h / G))
            dl = (h - D @ dz) / G
            dt = (t / mu) * dl - rb / mu
            dw = (-ra - w * dl) / lam
            return dz, dt, dw, dl

        def max_step(dt, dw, dl):
            return min(_step_to_boundary(t, dt), _step_to_boundary(w, dw),
                       _step_to_boundary(lam, dl), _step_to_boundary(mu, -dl))

        dz, dt, dw, dl = direction(lam * w, mu * t)
        a = max_step(dt, dw, dl)
        comp_aff = float((lam + a * dl) @ (w + a * dw) + (mu - a * dl) @ (t + a * dt))
        target = (comp_aff / comp) ** 3 * comp / (2 * P)
        dz, dt, dw, dl = direction(lam * w + dl * dw - target, mu * t - dl * dt - target)
        a = 0.99 * max_step(dt, dw, dl)
        z = z + a * dz
        t = t + a * dt
        w = w + a * dw
        lam = lam + a * dl
        # carried separately: C - lam cancels to zero near the upper bound
        mu = mu - a * dl
    return lam / 2.0, it, converged


def solve_with_info(problem: RankingProblem, cfg: SolverConfig | None = None) -> SolveResult:
    cfg = cfg or SolverConfig()
    S = problem.frames
    if problem.n_pairs == 0:
        return SolveResult(np.zeros(problem.dim), 0.0, 0.0, 0, True)

    gram, pair_i, pair_j, qdiag = _pair_setup(problem)
    C = problem.C
    epochs = 0
    converged = False
    best = None
    if cfg.method != "ipm":
        budget = cfg.max_epochs if cfg.method == "dcd" else min(cfg.dcd_budget, cfg.max_epochs)
        best, epochs, converged = _coordinate_descent(gram, pair_i, pair_j, qdiag, C, cfg.tolerance, budget, cfg.seed)
    if not converged and cfg.method != "dcd":
        alpha, _, ipm_ok = _interior_point(gram, pair_i, pair_j, C, cfg.tolerance)
        # a short warm-started polish tightens the Gram-space certificate
        found, more, polished = _coordinate_descent(gram, pair_i, pair_j, qdiag, C, cfg.tolerance,
                                                    cfg.dcd_budget, cfg.seed, alpha)
        epochs += more
        converged = ipm_ok or polished
        if best is None or found[0] <= best[0] or polished:
            best = found
    J, beta, gap = best
    if not converged:
        log.warning("rank pooling did not certify optimality (gap %.3g, J %.6g)", gap, J)
    return SolveResult(S.T @ beta, J, gap, epochs, converged)


def solve(problem: RankingProblem, cfg: SolverConfig | None = None) -> np.ndarray:
    """Flattened minimiser ``F`` of the pairwise hinge objective."""
    return solve_with_info(problem, cfg).coef


def rank_pool(frames: Sequence, C: float = DEFAULT_C, cfg: SolverConfig | None = None) -> np.ndarray:
    """smooth -> build_problem -> solve, reshaped to the frame shape."""
    problem = build_problem(smooth(frames), C)
    return solve(problem, cfg).reshape(problem.shape)


def pool_flow(conditioned: Sequence[QuantizedFlowFrame], C: float = DEFAULT_C,
              cfg: SolverConfig | None = None) -> DynamicFlowImage:
    conditioned = list(conditioned)
    if not conditioned:
        raise EmptyInputError("pool_flow needs a nonempty window")
    F = rank_pool([q.as_float() for q in conditioned], C, cfg)
    return DynamicFlowImage(F[0], F[1])


def pool_rgb(frames: Sequence[RgbFrame], C: float = DEFAULT_C, cfg: SolverConfig | None = None) -> DynamicImage:
    frames = list(frames)
    if not frames:
        raise EmptyInputError("pool_rgb needs a nonempty window")
    planes = [np.moveaxis(f.values, 2, 0).astype(np.float64) for f in frames]
    return DynamicImage(rank_pool(planes, C, cfg))


# -- closed-form approximation ------------------------------------------------

@lru_cache(maxsize=64)
def _approximate_coefficients(T: int) -> tuple:
    # exact rationals: the float formula subtracts nearly equal harmonic sums
    # and loses the zero-sum property at around 1e-11
    H = [Fraction(0)]
    for i in range(1, T + 1):
        H.append(H[-1] + Fraction(1, i))
    return tuple(float(2 * (T - t + 1) - (T + 1) * (H[T] - H[t - 1])) for t in range(1, T + 1))


def approximate_coefficients(T: int) -> np.ndarray:
    """Weights ``2(T - t + 1) - (T + 1)(H_T - H_{t-1})`` for ``t = 1..T``, correctly rounded."""
    if T < 1:
        raise EmptyInputError("need at least one frame")
    return np.array(_approximate_coefficients(int(T)))


def approximate_pool(frames: Sequence) -> np.ndarray:
    """Weighted sum of the raw frames; smoothing is folded into the weights."""
    X = np.stack([np.asarray(f, dtype=np.float64).reshape(-1) for f in frames]) if len(frames) else None
    if X is None:
        raise EmptyInputError("need at least one frame")
    return approximate_coefficients(X.shape[0]) @ X


# -- visualisation -------------------------------------------------------------

class RenderedFlow(NamedTuple):
    u: np.ndarray
    v: np.ndarray
    color: np.ndarray


def normalize_plane(plane: np.ndarray) -> np.ndarray:
    """Min-max to ``[0, 255]``; a constant plane renders as 128."""
    p = np.asarray(plane, dtype=np.float64)
    lo, hi = float(p.min()), float(p.max())
    if hi == lo:
        return np.full(p.shape, 128, np.uint8)
    return round_half_away((p - lo) / (hi - lo) * 255.0).astype(np.uint8)


def flow_color(Fu: np.ndarray, Fv: np.ndarray) -> np.ndarray:
    """Direction as hue, magnitude (relative to the max) as value."""
    from matplotlib.colors import hsv_to_rgb

    mag = np.hypot(Fu, Fv)
    peak = float(mag.max())
    hsv = np.empty(Fu.shape + (3,))
    hsv[..., 0] = np.mod(np.arctan2(Fv, Fu) / (2 * np.pi), 1.0)
    hsv[..., 1] = 1.0
    hsv[..., 2] = mag / peak if peak > 0 else 0.0
    return round_half_away(hsv_to_rgb(hsv) * 255.0).astype(np.uint8)


def render(img: DynamicFlowImage | DynamicImage):
    if isinstance(img, DynamicFlowImage):
        return RenderedFlow(normalize_plane(img.Fu), normalize_plane(img.Fv), flow_color(img.Fu, img.Fv))
    if isinstance(img, DynamicImage):
        return np.stack([normalize_plane(p) for p in img.planes], axis=-1)
    raise TypeError(f"cannot render {type(img).__name__}")
