"""Cramér-Rao bound for the canonical WH parameters ``eta = [w[1:], h]``.

The non-redundant kernel entries are observed in white Gaussian noise of
variance ``sigma2``, so the bound is ``sigma2 * inv(J.T @ J)`` with ``J`` the
Jacobian of the model vector on the multiset domain.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .multilinear import DimensionError, full_indices, multiset_domain
from .whmodel import build_factor

COND_LIMIT = 1e12


class SingularFIMError(np.linalg.LinAlgError):
    """The Fisher information matrix is numerically singular."""


class RankDeficiencyError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class JacobianPair:
    J_w: np.ndarray
    J_h: np.ndarray

    @property
    def J(self):
        return np.hstack([self.J_w, self.J_h])


@dataclass(frozen=True)
class CrbReport:
    B: np.ndarray
    per_param: np.ndarray
    trace: float
    trace_db: float
    sigma2: float


def _jacobian_rows(params, idx):
    """Jacobian rows of the model at the index tuples ``idx`` (shape ``(n, p)``).

    Columns follow ``eta``: ``L_w - 1`` columns for ``w[1:]`` then ``R`` for ``h``.
    """
    L_w, R, p = params.L_w, params.R, params.p
    C = build_factor(params)
    G = C[idx]                                   # (n, p, R)
    J_h = params.g_p * np.prod(G, axis=1)
    J_w = np.zeros((idx.shape[0], L_w - 1))
    if L_w > 1:
        shifts = np.arange(R)
        for q in range(p):
            others = np.prod(np.delete(G, q, axis=1), axis=1) * params.h   # (n, R)
            lag = idx[:, q, None] - shifts[None, :]                         # tap index hit by mode q
            for l in range(1, L_w):
                J_w[:, l - 1] += np.sum(np.where(lag == l, others, 0.0), axis=1)
        J_w *= params.g_p
    return J_w, J_h


def jacobian_w(params, D):
    params.require_canonical()
    D.check(params.M, params.p)
    return _jacobian_rows(params, D.indices)[0]


def jacobian_h(params, D):
    params.require_canonical()
    D.check(params.M, params.p)
    return _jacobian_rows(params, D.indices)[1]


def jacobian_pair(params, D=None):
    params.require_canonical()
    if D is None:
        D = multiset_domain(params.M, params.p)
    D.check(params.M, params.p)
    return JacobianPair(*_jacobian_rows(params, D.indices))


def jacobian_full(params):
    """Jacobian of the full column-major vectorization, ``M**p`` rows."""
    params.require_canonical()
    J_w, J_h = _jacobian_rows(params, full_indices(params.M, params.p))
    return np.hstack([J_w, J_h])


def orth_complement_projector(B, rtol=1e-12):
    """``I - B B^+`` with the range of ``B`` taken from its economy SVD."""
    n = B.shape[0]
    if B.shape[1] == 0:
        return np.eye(n)
    U, s, _ = np.linalg.svd(B, full_matrices=False)
    U = U[:, s > rtol * s[0]] if s.size and s[0] > 0 else U[:, :0]
    return np.eye(n) - U @ U.T


def oblique_projection(A, B):
    """Oblique projector with range ``<A>`` and null space containing ``<B>``.

    ``E = A (A^T P A)^{-1} A^T P`` with ``P = I - B B^+``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    if A.shape[1] == 0:
        return np.zeros((A.shape[0], A.shape[0]))
    AB = np.hstack([A, B])
    if np.linalg.matrix_rank(AB) < AB.shape[1]:
        raise RankDeficiencyError(f"[A B] of shape {AB.shape} is not full column rank")
    P = orth_complement_projector(B)
    PA = P @ A
    return A @ np.linalg.solve(A.T @ PA, PA.T)


def _denominator(g, G, H, form):
    a = oblique_projection(G, H) @ g
    b = oblique_projection(H, G) @ g
    if form == "literal":
        return g @ g - a @ a - b @ b
    # a + b is the orthogonal projection of g onto <[G H]>
    s = a + b
    return g @ g - s @ s


def crb_per_param(J_pair, sigma2, form="projector-sum"):
    """Per-parameter bounds through oblique projections.

    For a column ``g`` of one block, ``G`` the rest of that block and ``H``
    the other block, the bound is ``sigma2 / (|g|^2 - |E_GH g + E_HG g|^2)``.

    ``form="literal"`` instead subtracts ``|E_GH g|^2`` and ``|E_HG g|^2``
    separately, which drops their cross term; it is kept for comparison and
    raises when a denominator is not positive.
    """
    if form not in ("projector-sum", "literal"):
        raise ValueError(f"unknown form {form!r}")
    J_w, J_h = J_pair.J_w, J_pair.J_h
    out = []
    for own, other in ((J_w, J_h), (J_h, J_w)):
        for k in range(own.shape[1]):
            g = own[:, k]
            G = np.delete(own, k, axis=1)
            den = _denominator(g, G, other, form)
            if not den > 0.0:
                raise RankDeficiencyError(
                    f"non-positive denominator {den:.3e} for parameter {len(out)} ({form} form)"
                )
            out.append(sigma2 / den)
    return np.array(out)


def crb_matrix(params, sigma2, D=None):
    """Full bound ``sigma2 * inv(J^T J)`` plus per-parameter values and trace."""
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    pair = jacobian_pair(params, D)
    J = pair.J
    if J.shape[1] == 0:
        raise DimensionError("no free parameters")
    fim = J.T @ J
    evals, evecs = np.linalg.eigh(fim)
    if not evals[0] > 0 or evals[-1] / evals[0] > COND_LIMIT:
        raise SingularFIMError(
            f"J^T J is singular or ill-conditioned (eigenvalues {evals[0]:.3e} .. {evals[-1]:.3e}) "
            f"at w={params.w.tolist()}, h={params.h.tolist()}, p={params.p}"
        )
    B = sigma2 * (evecs / evals) @ evecs.T
    B = 0.5 * (B + B.T)
    per_param = crb_per_param(pair, sigma2)
    trace = float(np.sum(per_param))
    return CrbReport(B, per_param, trace, float(10.0 * np.log10(trace)), float(sigma2))


def sigma2_from_db(snr_db):
    """Noise variance for a grid value ``1/sigma^2`` given in dB."""
    return 10.0 ** (-np.asarray(snr_db, dtype=float) / 10.0)
