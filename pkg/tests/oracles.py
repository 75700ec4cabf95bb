"""Reference solvers that share no code with the package."""

import numba
import numpy as np
from scipy.optimize import minimize


def objective(F, diffs, C):
    F = np.asarray(F, dtype=np.float64)
    if diffs.shape[0] == 0:
        return float(F @ F)
    return float(F @ F + C * np.maximum(0.0, 1.0 - diffs @ F).sum())


def pair_diffs(smoothed):
    X = np.asarray(smoothed, dtype=np.float64).reshape(len(smoothed), -1)
    T = X.shape[0]
    return np.array([X[j] - X[i] for i in range(T) for j in range(i + 1, T)]).reshape(-1, X.shape[1])


@numba.njit(cache=True)
def _subgradient(diffs, C, steps):
    P, d = diffs.shape
    F = np.zeros(d)
    best = np.zeros(d)
    best_J = np.inf
    g = np.empty(d)
    for k in range(steps):
        J = 0.0
        for a in range(d):
            J += F[a] * F[a]
            g[a] = 2.0 * F[a]
        for p in range(P):
            m = 0.0
            for a in range(d):
                m += diffs[p, a] * F[a]
            if m < 1.0:
                J += C * (1.0 - m)
                for a in range(d):
                    g[a] -= C * diffs[p, a]
        if J < best_J:
            best_J = J
            best[:] = F
        eta = 1.0 / (2.0 * (k + 1))
        for a in range(d):
            F[a] -= eta * g[a]
    return best, best_J


def subgradient_oracle(diffs, C, steps=1_000_000):
    """Best iterate of plain subgradient descent with step 1/(2(k+1))."""
    F, _ = _subgradient(np.ascontiguousarray(diffs, dtype=np.float64), float(C), int(steps))
    return F, objective(F, diffs, C)


def slsqp_oracle(diffs, C):
    """Slack form ``min |F|^2 + C sum xi`` s.t. ``xi >= 0, xi >= 1 - <F, x>``."""
    P, d = diffs.shape
    if P == 0:
        return np.zeros(d), 0.0

    def fun(z):
        return z[:d] @ z[:d] + C * z[d:].sum()

    def jac(z):
        return np.concatenate([2.0 * z[:d], np.full(P, C)])

    A = np.hstack([diffs, np.eye(P)])
    cons = [{"type": "ineq", "fun": lambda z: A @ z - 1.0, "jac": lambda z: A},
            {"type": "ineq", "fun": lambda z: z[d:], "jac": lambda z: np.hstack([np.zeros((P, d)), np.eye(P)])}]
    z0 = np.concatenate([np.zeros(d), np.ones(P)])
    res = minimize(fun, z0, jac=jac, constraints=cons, method="SLSQP", options={"ftol": 1e-14, "maxiter": 1000})
    F = res.x[:d]
    return F, objective(F, diffs, C)
