"""Hot inner loops, each in a numba and a pure-numpy flavour.

The numba versions are compiled on first use. Set ``DYNAFLOW_DISABLE_NUMBA=1``
(or run without numba installed) to route every caller through the numpy
versions. Both flavours are always importable so they can be compared.
"""

import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

NUMBA_AVAILABLE = numba is not None
USE_NUMBA = NUMBA_AVAILABLE and os.environ.get("DYNAFLOW_DISABLE_NUMBA", "").strip().lower() in ("", "0", "false", "no")

GRAD_IS_ZERO = 1e-10


def _jit(fn):
    if not NUMBA_AVAILABLE:
        return fn
    return numba.njit(cache=True, nogil=True)(fn)


# -- ranking-SVM dual coordinate descent ---------------------------------------
#
# One epoch over the pair list in the order given. Everything lives in the
# T-dimensional span of the (centred) frames: the primal vector is F = S^T beta,
# ``scores`` caches K @ beta, and pair k = (i, j) has difference x_k = s_j - s_i.

def _dcd_epoch_loops(gram, pair_i, pair_j, qdiag, upper, order, alpha, beta, scores):
    T = gram.shape[0]
    for idx in range(order.shape[0]):
        k = order[idx]
        q = qdiag[k]
        if q <= 0.0:
            continue
        i = pair_i[k]
        j = pair_j[k]
        g = scores[j] - scores[i] - 1.0
        a_old = alpha[k]
        a_new = a_old - g / q
        if a_new < 0.0:
            a_new = 0.0
        elif a_new > upper:
            a_new = upper
        d = a_new - a_old
        if d != 0.0:
            alpha[k] = a_new
            beta[j] += d
            beta[i] -= d
            for t in range(T):
                scores[t] += d * (gram[t, j] - gram[t, i])


def _dcd_epoch_numpy(gram, pair_i, pair_j, qdiag, upper, order, alpha, beta, scores):
    # sequential by nature; numpy only carries the O(T) score update
    for k in order:
        q = qdiag[k]
        if q <= 0.0:
            continue
        i = pair_i[k]
        j = pair_j[k]
        g = scores[j] - scores[i] - 1.0
        a_old = alpha[k]
        a_new = min(max(a_old - g / q, 0.0), upper)
        d = a_new - a_old
        if d != 0.0:
            alpha[k] = a_new
            beta[j] += d
            beta[i] -= d
            scores += d * (gram[:, j] - gram[:, i])


dcd_epoch_numba = _jit(_dcd_epoch_loops)


# -- TV-L1 inner iterations -----------------------------------------------------
#
# Arrays are (rows, cols). u1/u2 (flow) and p11, p12, p21, p22 (dual fields)
# are updated in place. Returns (iterations run, last mean squared update).

def _tvl1_inner_loops(I1wx, I1wy, grad, rho_c, u1, u2, p11, p12, p21, p22,
                      lt, theta, taut, max_iter, eps2):
    ny, nx = u1.shape
    v1 = np.empty_like(u1)
    v2 = np.empty_like(u2)
    size = ny * nx
    err = np.inf
    n = 0
    while n < max_iter:
        n += 1
        # thresholding against the linearised residual
        for r in range(ny):
            for c in range(nx):
                gx = I1wx[r, c]
                gy = I1wy[r, c]
                g2 = grad[r, c]
                rho = rho_c[r, c] + gx * u1[r, c] + gy * u2[r, c]
                if rho < -lt * g2:
                    d1 = lt * gx
                    d2 = lt * gy
                elif rho > lt * g2:
                    d1 = -lt * gx
                    d2 = -lt * gy
                elif g2 < GRAD_IS_ZERO:
                    d1 = 0.0
                    d2 = 0.0
                else:
                    fi = -rho / g2
                    d1 = fi * gx
                    d2 = fi * gy
                v1[r, c] = u1[r, c] + d1
                v2[r, c] = u2[r, c] + d2
        # u = v + theta * div(p), divergence by backward differences
        acc = 0.0
        for r in range(ny):
            for c in range(nx):
                div1 = p11[r, c]
                div2 = p21[r, c]
                if c > 0:
                    div1 = div1 - p11[r, c - 1]
                    div2 = div2 - p21[r, c - 1]
                div1 = div1 + p12[r, c]
                div2 = div2 + p22[r, c]
                if r > 0:
                    div1 = div1 - p12[r - 1, c]
                    div2 = div2 - p22[r - 1, c]
                n1 = v1[r, c] + theta * div1
                n2 = v2[r, c] + theta * div2
                e1 = n1 - u1[r, c]
                e2 = n2 - u2[r, c]
                acc += e1 * e1 + e2 * e2
                u1[r, c] = n1
                u2[r, c] = n2
        err = acc / size
        # dual ascent with forward differences (zero on the far border)
        for r in range(ny):
            for c in range(nx):
                u1x = u1[r, c + 1] - u1[r, c] if c + 1 < nx else 0.0
                u2x = u2[r, c + 1] - u2[r, c] if c + 1 < nx else 0.0
                u1y = u1[r + 1, c] - u1[r, c] if r + 1 < ny else 0.0
                u2y = u2[r + 1, c] - u2[r, c] if r + 1 < ny else 0.0
                ng1 = 1.0 + taut * np.sqrt(u1x * u1x + u1y * u1y)
                ng2 = 1.0 + taut * np.sqrt(u2x * u2x + u2y * u2y)
                p11[r, c] = (p11[r, c] + taut * u1x) / ng1
                p12[r, c] = (p12[r, c] + taut * u1y) / ng1
                p21[r, c] = (p21[r, c] + taut * u2x) / ng2
                p22[r, c] = (p22[r, c] + taut * u2y) / ng2
        if err <= eps2:
            break
    return n, err


def _divergence(px, py):
    d = px.copy()
    d[:, 1:] -= px[:, :-1]
    d += py
    d[1:, :] -= py[:-1, :]
    return d


def _forward_gradient(u):
    gx = np.zeros_like(u)
    gy = np.zeros_like(u)
    gx[:, :-1] = u[:, 1:] - u[:, :-1]
    gy[:-1, :] = u[1:, :] - u[:-1, :]
    return gx, gy


def _tvl1_inner_numpy(I1wx, I1wy, grad, rho_c, u1, u2, p11, p12, p21, p22,
                      lt, theta, taut, max_iter, eps2):
    size = u1.size
    lo = -lt * grad
    hi = lt * grad
    flat = grad < GRAD_IS_ZERO
    safe_grad = np.where(flat, 1.0, grad)
    err = np.inf
    n = 0
    while n < max_iter:
        n += 1
        rho = rho_c + I1wx * u1 + I1wy * u2
        fi = np.where(rho < lo, lt, np.where(rho > hi, -lt, np.where(flat, 0.0, -rho / safe_grad)))
        v1 = u1 + fi * I1wx
        v2 = u2 + fi * I1wy
        n1 = v1 + theta * _divergence(p11, p12)
        n2 = v2 + theta * _divergence(p21, p22)
        err = float(np.sum((n1 - u1) ** 2 + (n2 - u2) ** 2)) / size
        u1[...] = n1
        u2[...] = n2
        u1x, u1y = _forward_gradient(u1)
        u2x, u2y = _forward_gradient(u2)
        ng1 = 1.0 + taut * np.sqrt(u1x * u1x + u1y * u1y)
        ng2 = 1.0 + taut * np.sqrt(u2x * u2x + u2y * u2y)
        p11[...] = (p11 + taut * u1x) / ng1
        p12[...] = (p12 + taut * u1y) / ng1
        p21[...] = (p21 + taut * u2x) / ng2
        p22[...] = (p22 + taut * u2y) / ng2
        if err <= eps2:
            break
    return n, err


tvl1_inner_numba = _jit(_tvl1_inner_loops)


def dcd_epoch(*args):
    return (dcd_epoch_numba if USE_NUMBA else _dcd_epoch_numpy)(*args)


def tvl1_inner(*args):
    return (tvl1_inner_numba if USE_NUMBA else _tvl1_inner_numpy)(*args)


dcd_epoch_numpy = _dcd_epoch_numpy
tvl1_inner_numpy = _tvl1_inner_numpy
