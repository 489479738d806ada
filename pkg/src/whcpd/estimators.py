"""Estimators of the canonical WH parameters from a noisy symmetric kernel tensor.

* :func:`cals_iterate` / :func:`n_cals` -- alternating least squares with the
  banded Toeplitz constraint, single start or best of several random starts.
* :func:`cptoep` -- non-iterative estimate from an SVD and a homogeneous
  linear system in the shift-basis coefficients.
* :func:`quasi_newton_refine` -- local least-squares refinement with L-BFGS-B.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from . import _kernels
from .crb import _jacobian_rows
from .multilinear import (
    DimensionError,
    cpd_reconstruct,
    flat_unfold,
    full_indices,
    khatri_rao,
    khatri_rao_power,
    square_unfold,
    tensor_dims,
    vec,
)
from .whmodel import WhParams, banded_factor, basis_matrices

METHODS = ("n_cals", "cptoep", "cptoep_cals", "cptoep_qn")

# residual energy below this fraction of |Y|^2 is rounding noise
J_FLOOR = 1e-24


@dataclass(frozen=True)
class CalsOptions:
    max_iters: int = 2000
    rel_tol: float = 1e-10
    h_zero_guard: float = 1e-12

    def __post_init__(self):
        if int(self.max_iters) < 1:
            raise ValueError("max_iters must be at least 1")
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be positive")
        if not self.h_zero_guard >= 0:
            raise ValueError("h_zero_guard must be nonnegative")


@dataclass
class EstimateResult:
    """Estimated ``eta = [w[1:], h]`` with diagnostics.

    ``status`` is ``"converged"``, ``"max_iters"`` or ``"failed"``; for
    failures ``reason`` names the cause (``"singular_h"``, ``"pinv"``,
    ``"divergence"``, ``"rank_deficient"``, ``"first_entry_zero"``,
    ``"nullspace_not_unique"``, ``"nonfinite"``, ``"all_starts_failed"``).
    """

    eta_hat: np.ndarray
    objective: float
    iterations: int
    status: str
    reason: str | None = None
    L_w: int | None = None
    message: str = ""

    @property
    def failed(self):
        return self.status == "failed"

    @property
    def w_hat(self):
        return np.r_[1.0, self.eta_hat[: self.L_w - 1]]

    @property
    def h_hat(self):
        return self.eta_hat[self.L_w - 1 :]

    def to_dict(self):
        return {
            "eta_hat": [float(v) for v in self.eta_hat],
            "objective": float(self.objective),
            "iterations": int(self.iterations),
            "status": self.status,
            "reason": self.reason,
            "message": self.message,
        }


def _failed(reason, L_w, R, iterations=0, message=""):
    return EstimateResult(
        np.full(L_w - 1 + R, np.nan), np.inf, iterations, "failed", reason, L_w, message
    )


def _shape(Y, L_w, R, min_order=2):
    M, p = tensor_dims(Y)
    if M != L_w + R - 1:
        raise DimensionError(f"tensor dimension {M} != L_w + R - 1 = {L_w + R - 1}")
    if p < min_order:
        raise DimensionError(f"order p={p} is below the minimum {min_order}")
    return M, p


def objective_jy(Y, params):
    """Squared Frobenius reconstruction error over all ``M**p`` entries."""
    Y = np.asarray(Y, dtype=float)
    X = cpd_reconstruct(banded_factor(params.w, params.R), params.h, params.g_p, params.p)
    if X.shape != Y.shape:
        raise DimensionError(f"model shape {X.shape} != data shape {Y.shape}")
    r = vec(Y) - vec(X)
    return float(r @ r)


def ls_weights(Y, w):
    """Least-squares ``h`` for fixed ``w``: the CALS output-filter update."""
    M, p = tensor_dims(Y)
    K = khatri_rao_power(banded_factor(w, M - len(w) + 1), p)
    return np.linalg.lstsq(K, vec(Y), rcond=None)[0]


def cals_iterate(Y, w_init, h_init, opts=None):
    """Alternating least squares under the banded Toeplitz constraint.

    Each sweep (i) solves the flat unfolding for the unstructured factor,
    removes ``diag(h)`` and projects on the shift basis, (ii) rescales so
    that ``w[0] = 1``, (iii) solves for ``h`` by linear least squares. Stops
    when the relative change of the reconstruction error drops below
    ``opts.rel_tol`` or after ``opts.max_iters`` sweeps.
    """
    opts = opts or CalsOptions()
    w0 = np.array(w_init, dtype=float).ravel()
    h0 = np.array(h_init, dtype=float).ravel()
    L_w, R = w0.size, h0.size
    _, p = _shape(Y, L_w, R)
    hmax = np.max(np.abs(h0))
    if not hmax > 0 or np.any(np.abs(h0) < opts.h_zero_guard * hmax):
        raise ValueError(f"h_init has an entry below the zero guard: {h0}")
    if w0[0] == 0:
        raise ValueError("w_init[0] must be nonzero")
    Y = np.asarray(Y, dtype=float)
    y_vec = np.ascontiguousarray(vec(Y))
    Y_flat = np.ascontiguousarray(flat_unfold(Y))
    w, h, J, k, code = _kernels.cals_loop(
        Y_flat, y_vec, w0, h0, p, int(opts.max_iters), float(opts.rel_tol),
        float(opts.h_zero_guard), J_FLOOR * float(y_vec @ y_vec),
    )
    eta = np.r_[w[1:], h]
    if code == _kernels.CONVERGED:
        return EstimateResult(eta, float(J), int(k), "converged", None, L_w)
    if code == _kernels.MAX_ITERS:
        return EstimateResult(eta, float(J), int(k), "max_iters", None, L_w)
    reason = _kernels.STATUS_REASONS[code]
    J = float(J) if np.isfinite(J) else np.inf
    return EstimateResult(eta, J, int(k), "failed", reason, L_w)


def random_init(rng, L_w, R, h_min=0.1):
    """Random start: ``w = [1, N(0,1)...]`` and ``h`` redrawn until all ``|h_r| >= h_min``."""
    w = np.r_[1.0, rng.standard_normal(L_w - 1)]
    while True:
        h = rng.standard_normal(R)
        if np.all(np.abs(h) >= h_min):
            return w, h


def n_cals(Y, n_starts, rng_seed, L_w, R, opts=None):
    """Best of ``n_starts`` randomly initialized CALS runs (lowest final objective).

    Start ``i`` draws its initialization from ``SeedSequence(rng_seed).spawn``'s
    ``i``-th child; ties go to the lower start index.
    """
    if n_starts < 1:
        raise ValueError("n_starts must be at least 1")
    _shape(Y, L_w, R)
    seq = rng_seed if isinstance(rng_seed, np.random.SeedSequence) else np.random.SeedSequence(rng_seed)
    best = None
    iters = 0
    for child in seq.spawn(n_starts):
        w, h = random_init(np.random.default_rng(child), L_w, R)
        res = cals_iterate(Y, w, h, opts)
        iters += res.iterations
        if res.failed:
            continue
        if best is None or res.objective < best.objective:
            best = res
    if best is None:
        return _failed("all_starts_failed", L_w, R, iters)
    best.message = f"best of {n_starts} starts, {iters} sweeps in total"
    return best


def _shift_pair_basis(L_w, R):
    """Columns ``vec(E_i ⊙ E_j)`` for ``i, j`` in row-major order."""
    M = L_w + R - 1
    Es, _ = basis_matrices(M, R, L_w)
    cols = [vec(khatri_rao(Es[i], Es[j])) for i in range(L_w) for j in range(L_w)]
    return np.stack(cols, axis=1)


def cptoep(Y, L_w, R):
    """Non-iterative structured CPD estimate.

    1. Rank-``R`` SVD of the ``M**2 x M**(p-2)`` unfolding, keeping ``U``.
    2. Unit-norm least-squares solution of ``U N = sum_ij Z_ij (E_i ⊙ E_j)``
       (smallest right singular vector of the stacked system).
    3. Best rank-1 approximation ``Z ~ c1 c2^T``; each vector is scaled to a
       unit first entry and the two are averaged into ``w``.
    4. ``h`` by least squares, as in the CALS update.
    """
    M, p = _shape(Y, L_w, R, min_order=3)
    if M * M * R < L_w**2 + R**2 - 1:
        raise DimensionError(
            f"underdetermined system: {M * M * R} equations, {L_w**2 + R**2 - 1} unknowns"
        )
    Y = np.asarray(Y, dtype=float)
    Yt = square_unfold(Y)
    U, s, _ = np.linalg.svd(Yt, full_matrices=False)
    if s.size < R or not s[R - 1] >= 1e-12 * s[0]:
        return _failed("rank_deficient", L_w, R)
    U = U[:, :R]
    A = np.hstack([np.kron(np.eye(R), U), -_shift_pair_basis(L_w, R)])
    # full SVD: with one equation fewer than unknowns the null vector is not in the economy basis
    _, sa, Vt = np.linalg.svd(A, full_matrices=True)
    sa = np.r_[sa, np.zeros(A.shape[1] - sa.size)]
    if sa[-2] <= 1e-12 * sa[0]:
        return _failed("nullspace_not_unique", L_w, R)
    Z = Vt[-1, R * R :].reshape(L_w, L_w)
    uz, _, vzt = np.linalg.svd(Z)
    c1, c2 = uz[:, 0], vzt[0]
    for c in (c1, c2):
        if abs(c[0]) < 1e-12 * np.max(np.abs(c)):
            return _failed("first_entry_zero", L_w, R)
    w = 0.5 * (c1 / c1[0] + c2 / c2[0])
    h = ls_weights(Y, w)
    eta = np.r_[w[1:], h]
    J = objective_jy(Y, WhParams(w, h, 1.0, p))
    return EstimateResult(eta, J, 0, "converged", None, L_w)


def ls_objective_and_gradient(eta, y_vec, L_w, p, idx):
    """``F = |y - x(eta)|^2`` over the full tensor and its gradient ``-2 J^T r``."""
    params = WhParams.from_eta(eta, L_w, p)
    J_w, J_h = _jacobian_rows(params, idx)
    r = y_vec - J_h @ params.h          # the model is linear in h
    grad = -2.0 * np.concatenate([J_w.T @ r, J_h.T @ r])
    return float(r @ r), grad


def quasi_newton_refine(Y, eta_init, L_w, max_iters=2000, tol=1e-10):
    """Minimize the full-tensor least-squares criterion from ``eta_init`` with L-BFGS-B."""
    eta0 = np.asarray(eta_init, dtype=float).ravel()
    R = eta0.size - (L_w - 1)
    M, p = _shape(Y, L_w, R)
    if not np.all(np.isfinite(eta0)):
        raise ValueError("eta_init must be finite")
    y_vec = vec(np.asarray(Y, dtype=float))
    idx = full_indices(M, p)

    def fun(eta):
        F, g = ls_objective_and_gradient(eta, y_vec, L_w, p, idx)
        if not (np.isfinite(F) and np.all(np.isfinite(g))):
            raise FloatingPointError
        return F, g

    F0, _ = ls_objective_and_gradient(eta0, y_vec, L_w, p, idx)
    try:
        res = minimize(
            fun, eta0, jac=True, method="L-BFGS-B",
            options={"maxiter": max_iters, "ftol": tol, "gtol": tol},
        )
    except FloatingPointError:
        return _failed("nonfinite", L_w, R)
    eta, F = res.x, float(res.fun)
    if not np.isfinite(F):
        return _failed("nonfinite", L_w, R, res.nit)
    if F > F0:
        eta, F = eta0, F0
    status = "max_iters" if res.nit >= max_iters else "converged"
    return EstimateResult(eta, F, int(res.nit), status, None, L_w, str(res.message))


def estimate(Y, method, L_w, R, seed=0, opts=None, n_starts=10):
    """Run one of :data:`METHODS` on the data tensor ``Y``."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    opts = opts or CalsOptions()
    if method == "n_cals":
        return n_cals(Y, n_starts, seed, L_w, R, opts)
    first = cptoep(Y, L_w, R)
    if method == "cptoep" or first.failed:
        return first
    if method == "cptoep_cals":
        try:
            res = cals_iterate(Y, first.w_hat, first.h_hat, opts)
        except ValueError:
            return _failed("singular_h", L_w, R)
        return res
    return quasi_newton_refine(Y, first.eta_hat, L_w, opts.max_iters, opts.rel_tol)
