"""Hot loops, each in two versions: an explicit-loop kernel compiled with numba
and a vectorized numpy implementation.

The module-level names without a suffix point at the active backend (see
:mod:`whcpd._accel`). Both versions are always importable so that tests and
``benchmarks/bench_kernels.py`` can compare them directly.

All tensors are passed flat, in column-major order.
"""
import numpy as np

from ._accel import USE_NUMBA, njit
from .multilinear import full_indices, khatri_rao_power

CONVERGED = 0
MAX_ITERS = 1
SINGULAR_H = 2
PINV = 3
DIVERGENCE = 4

STATUS_REASONS = {
    SINGULAR_H: "singular_h",
    PINV: "pinv",
    DIVERGENCE: "divergence",
}


# -- Volterra kernel synthesis -------------------------------------------------

@njit
def volterra_kernel_jit(w, h, g_p, p):
    L_w = w.shape[0]
    R = h.shape[0]
    M = L_w + R - 1
    n = M**p
    out = np.zeros(n)
    idx = np.zeros(p, dtype=np.int64)
    for flat in range(n):
        rem = flat
        lo = M
        hi = 0
        for q in range(p):
            idx[q] = rem % M
            rem //= M
            lo = min(lo, idx[q])
            hi = max(hi, idx[q])
        l0 = max(0, hi - L_w + 1)
        l1 = min(R - 1, lo)
        acc = 0.0
        for l in range(l0, l1 + 1):
            term = h[l]
            for q in range(p):
                term *= w[idx[q] - l]
            acc += term
        out[flat] = g_p * acc
    return out


def volterra_kernel_np(w, h, g_p, p):
    w = np.asarray(w, dtype=float)
    h = np.asarray(h, dtype=float)
    L_w, R = w.size, h.size
    M = L_w + R - 1
    idx = full_indices(M, p)
    out = np.zeros(M**p)
    for l in range(R):
        lag = idx - l
        valid = np.all((lag >= 0) & (lag < L_w), axis=1)
        taps = w[np.clip(lag, 0, L_w - 1)]
        out += np.where(valid, h[l] * taps.prod(axis=1), 0.0)
    return g_p * out


# -- Volterra series response ---------------------------------------------------

@njit
def volterra_response_jit(u, kflat, M, p):
    N = u.shape[0]
    y = np.zeros(N)
    n_ent = M**p
    for n in range(N):
        acc = 0.0
        for flat in range(n_ent):
            k = kflat[flat]
            if k == 0.0:
                continue
            rem = flat
            term = k
            for q in range(p):
                m = rem % M
                rem //= M
                if n - m < 0:
                    term = 0.0
                    break
                term *= u[n - m]
            acc += term
        y[n] = acc
    return y


def _lag_matrix(u, M):
    N = u.size
    U = np.zeros((N, M))
    for m in range(M):
        U[m:, m] = u[: N - m]
    return U


def volterra_response_np(u, kflat, M, p):
    u = np.asarray(u, dtype=float)
    K = np.asarray(kflat, dtype=float).reshape((M,) * p, order="F")
    U = _lag_matrix(u, M)
    operands = [K, list(range(1, p + 1))]
    for q in range(1, p + 1):
        operands += [U, [0, q]]
    return np.einsum(*operands, [0], optimize=True)


# -- Wiener-Hammerstein response ------------------------------------------------

@njit
def wh_response_jit(u, w, h, g):
    N = u.shape[0]
    L_w = w.shape[0]
    R = h.shape[0]
    P = g.shape[0]
    y = np.zeros(N)
    for n in range(N):
        acc = 0.0
        for r in range(R):
            x = 0.0
            for m in range(r, L_w + r):
                if n - m >= 0:
                    x += w[m - r] * u[n - m]
            gx = 0.0
            xp = 1.0
            for k in range(P):
                xp *= x
                gx += g[k] * xp
            acc += h[r] * gx
        y[n] = acc
    return y


def wh_response_np(u, w, h, g):
    u = np.asarray(u, dtype=float)
    N = u.size
    x = np.convolve(u, w)[:N]
    # g holds g_1..g_P; no constant term
    z = np.polynomial.polynomial.polyval(x, np.r_[0.0, g])
    return np.convolve(z, h)[:N]


# -- CALS sweeps ------------------------------------------------------------

@njit
def _banded_jit(w, R):
    L_w = w.shape[0]
    C = np.zeros((L_w + R - 1, R))
    for r in range(R):
        for i in range(L_w):
            C[i + r, r] = w[i]
    return C


@njit
def _kr_power_jit(C, p):
    M, R = C.shape
    out = C.copy()
    for _ in range(p - 1):
        rows = out.shape[0]
        nxt = np.empty((rows * M, R))
        for i in range(rows):
            for j in range(M):
                for r in range(R):
                    nxt[i * M + j, r] = out[i, r] * C[j, r]
        out = nxt
    return out


@njit
def _pinv_jit(A):
    U, s, Vt = np.linalg.svd(np.ascontiguousarray(A), full_matrices=False)
    tol = max(A.shape[0], A.shape[1]) * 2.220446049250313e-16 * s[0]
    if not s[-1] > tol:
        return np.zeros((A.shape[1], A.shape[0])), False
    return (Vt.T / s) @ U.T, True


@njit
def cals_loop_jit(Y_flat, y_vec, w, h, p, max_iters, rel_tol, h_guard, j_floor):
    R = h.shape[0]
    L_w = w.shape[0]
    w = w.copy()
    h = h.copy()
    J = np.nan
    J_prev = -1.0
    for k in range(1, max_iters + 1):
        hmax = np.max(np.abs(h))
        if not hmax > 0.0 or np.any(np.abs(h) < h_guard * hmax):
            return w, h, J, k, SINGULAR_H
        C = _banded_jit(w, R)
        W = _kr_power_jit(C, p - 1)
        Wt_pinv, ok = _pinv_jit(W.T)
        if not ok:
            return w, h, J, k, PINV
        Ct = (Y_flat @ Wt_pinv) / h
        v = np.zeros(L_w)
        for l in range(L_w):
            for r in range(R):
                v[l] += Ct[l + r, r]
        v /= R
        if not np.all(np.isfinite(v)) or v[0] == 0.0:
            return w, h, J, k, DIVERGENCE
        w = v / v[0]
        K = _kr_power_jit(_banded_jit(w, R), p)
        K_pinv, ok = _pinv_jit(K)
        if not ok:
            return w, h, J, k, PINV
        h = K_pinv @ y_vec
        resid = y_vec - K @ h
        J = resid @ resid
        if not np.isfinite(J):
            return w, h, J, k, DIVERGENCE
        if J <= j_floor:
            return w, h, J, k, CONVERGED
        if J_prev >= 0.0 and abs(J - J_prev) < rel_tol * J_prev:
            return w, h, J, k, CONVERGED
        J_prev = J
    return w, h, J, max_iters, MAX_ITERS


def _banded_np(w, R):
    L_w = w.size
    C = np.zeros((L_w + R - 1, R))
    for r in range(R):
        C[r : r + L_w, r] = w
    return C


def _pinv_np(A):
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    if not s[-1] > max(A.shape) * np.finfo(float).eps * s[0]:
        return None
    return (Vt.T / s) @ U.T


def cals_loop_np(Y_flat, y_vec, w, h, p, max_iters, rel_tol, h_guard, j_floor):
    R = h.size
    L_w = w.size
    w = w.copy()
    h = h.copy()
    J = np.nan
    J_prev = -1.0
    rows = np.arange(L_w)[:, None] + np.arange(R)[None, :]
    cols = np.broadcast_to(np.arange(R), rows.shape)
    with np.errstate(all="ignore"):
        for k in range(1, max_iters + 1):
            hmax = np.max(np.abs(h))
            if not hmax > 0.0 or np.any(np.abs(h) < h_guard * hmax):
                return w, h, J, k, SINGULAR_H
            W = khatri_rao_power(_banded_np(w, R), p - 1)
            Wt_pinv = _pinv_np(W.T)
            if Wt_pinv is None:
                return w, h, J, k, PINV
            Ct = (Y_flat @ Wt_pinv) / h
            v = Ct[rows, cols].sum(axis=1) / R
            if not np.all(np.isfinite(v)) or v[0] == 0.0:
                return w, h, J, k, DIVERGENCE
            w = v / v[0]
            K = khatri_rao_power(_banded_np(w, R), p)
            K_pinv = _pinv_np(K)
            if K_pinv is None:
                return w, h, J, k, PINV
            h = K_pinv @ y_vec
            resid = y_vec - K @ h
            J = resid @ resid
            if not np.isfinite(J):
                return w, h, J, k, DIVERGENCE
            if J <= j_floor:
                return w, h, J, k, CONVERGED
            if J_prev >= 0.0 and abs(J - J_prev) < rel_tol * J_prev:
                return w, h, J, k, CONVERGED
            J_prev = J
    return w, h, J, max_iters, MAX_ITERS


if USE_NUMBA:
    volterra_kernel = volterra_kernel_jit
    volterra_response = volterra_response_jit
    wh_response = wh_response_jit
    cals_loop = cals_loop_jit
else:
    volterra_kernel = volterra_kernel_np
    volterra_response = volterra_response_np
    wh_response = wh_response_np
    cals_loop = cals_loop_np
