"""Wiener-Hammerstein model: parameters, simulation, Volterra kernels and the
banded Toeplitz factor of their symmetric CPD.

Filter taps are 0-based (``w[0] .. w[L_w-1]``, ``h[0] .. h[R-1]``); tensor
entry ``X[m_1, ..., m_p]`` holds the kernel value ``k(m_1, ..., m_p)`` at
those lags.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .multilinear import DimensionError, check_size, multiset_domain, unvec


class DegenerateModelError(ValueError):
    """The leading input-filter tap is zero, so the model cannot be normalized."""


class NonCanonicalError(ValueError):
    """Parameters are not normalized to ``w[0] = g_p = 1``."""


@dataclass(frozen=True)
class WhParams:
    """Linear blocks and leading polynomial coefficient of a WH model.

    Parameters
    ----------
    w : ndarray (L_w,)
        Input filter taps; ``w[0]`` must be nonzero.
    h : ndarray (R,)
        Output filter taps.
    g_p : float
        Coefficient of ``x**p`` in the static nonlinearity.
    p : int
        Order of the Volterra kernel being decomposed.
    """

    w: np.ndarray
    h: np.ndarray
    g_p: float = 1.0
    p: int = 3

    def __post_init__(self):
        w = np.array(self.w, dtype=float).ravel()
        h = np.array(self.h, dtype=float).ravel()
        if w.size < 1 or h.size < 1:
            raise ValueError("w and h need at least one tap each")
        if int(self.p) < 1:
            raise ValueError("p must be a positive integer")
        if w[0] == 0.0:
            raise DegenerateModelError("w[0] must be nonzero")
        w.setflags(write=False)
        h.setflags(write=False)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "g_p", float(self.g_p))
        object.__setattr__(self, "p", int(self.p))

    @property
    def L_w(self):
        return self.w.size

    @property
    def R(self):
        return self.h.size

    @property
    def M(self):
        return self.L_w + self.R - 1

    @property
    def is_canonical(self):
        return self.w[0] == 1.0 and self.g_p == 1.0

    @property
    def eta(self):
        """Free parameters ``[w[1:], h]`` of the canonical model."""
        return np.concatenate([self.w[1:], self.h])

    @classmethod
    def from_eta(cls, eta, L_w, p):
        eta = np.asarray(eta, dtype=float).ravel()
        if eta.size <= L_w - 1:
            raise DimensionError(f"eta of length {eta.size} leaves no output taps for L_w={L_w}")
        return cls(np.r_[1.0, eta[: L_w - 1]], eta[L_w - 1 :], 1.0, p)

    def require_canonical(self):
        if not self.is_canonical:
            raise NonCanonicalError(
                f"expected w[0] = g_p = 1, got w[0] = {self.w[0]!r}, g_p = {self.g_p!r}"
            )
        return self


def canonicalize(w, h, g_p=1.0, p=3):
    """Rescale so that ``w[0] = g_p = 1`` without changing the order-``p`` kernel."""
    w = np.asarray(w, dtype=float).ravel()
    h = np.asarray(h, dtype=float).ravel()
    if w.size == 0 or w[0] == 0.0:
        raise DegenerateModelError("w[0] must be nonzero")
    w0 = w[0]
    return WhParams(w / w0, h * g_p * w0**p, 1.0, p)


def simulate_wh(u, params, g=None):
    """Output of the WH cascade for input ``u`` with zero initial conditions.

    ``g`` lists the polynomial coefficients ``g_1 .. g_P``. When omitted the
    nonlinearity is the monomial ``g_p * x**p`` taken from ``params``.
    """
    u = np.ascontiguousarray(u, dtype=float).ravel()
    if g is None:
        g = np.zeros(params.p)
        g[-1] = params.g_p
    g = np.ascontiguousarray(g, dtype=float).ravel()
    return _kernels.wh_response(u, np.ascontiguousarray(params.w), np.ascontiguousarray(params.h), g)


def simulate_volterra(u, kernels):
    """Output of a truncated Volterra series, one symmetric kernel per order.

    Each kernel's order is its number of axes; all must share the memory ``M``.
    """
    u = np.ascontiguousarray(u, dtype=float).ravel()
    y = np.zeros(u.size)
    dims = {np.shape(k)[0] for k in kernels}
    if len(dims) > 1:
        raise DimensionError(f"kernels disagree on memory length: {sorted(dims)}")
    for k in kernels:
        k = np.asarray(k, dtype=float)
        M, p = k.shape[0], k.ndim
        y += _kernels.volterra_response(u, np.ascontiguousarray(k.ravel(order="F")), M, p)
    return y


def volterra_kernel(params):
    """Symmetric order-``p`` Volterra kernel of the WH model as an ``(M,)*p`` tensor.

    Every orbit takes the value computed at its sorted index, so the result is
    symmetric bit for bit.
    """
    check_size(params.M, params.p)
    flat = _kernels.volterra_kernel(
        np.ascontiguousarray(params.w), np.ascontiguousarray(params.h), params.g_p, params.p
    )
    D = multiset_domain(params.M, params.p)
    return unvec(flat[D.positions[D.orbit]], params.M, params.p)


def banded_factor(w, R):
    """``M x R`` banded Toeplitz matrix whose column ``r`` is ``w`` shifted down by ``r``."""
    w = np.asarray(w, dtype=float).ravel()
    L_w = w.size
    C = np.zeros((L_w + R - 1, R))
    for r in range(R):
        C[r : r + L_w, r] = w
    return C


def build_factor(params):
    return banded_factor(params.w, params.R)


def basis_matrices(M, R, L_w):
    """Shift basis of the banded Toeplitz factors.

    Returns ``(Es, E)`` where ``Es[l]`` is the ``M x R`` matrix with ones on
    the ``l``-th subdiagonal band and ``E[:, l] = vec(Es[l])``, so that
    ``vec(C) = E @ w`` and ``E.T @ E = R * I``.
    """
    if M != L_w + R - 1:
        raise DimensionError(f"M={M} is inconsistent with L_w={L_w}, R={R}")
    Es = [np.eye(M, R, k=-l) for l in range(L_w)]
    E = np.stack([El.ravel(order="F") for El in Es], axis=1)
    return Es, E


def model_vec(params, D):
    """Non-redundant entries of the model tensor on the domain ``D``."""
    D.check(params.M, params.p)
    C = build_factor(params)
    return params.g_p * (np.prod(C[D.indices], axis=1) @ params.h)


@dataclass(frozen=True)
class Identifiability:
    verdict: str
    explanation: str

    @property
    def ok(self):
        return self.verdict != "not_guaranteed"


def check_identifiability(params):
    """Uniqueness of the structured CPD for the given support of ``h``.

    The banded factor has full column rank ``R`` whenever ``w != 0``. With
    all output taps nonzero and ``R >= 2``, Kruskal's condition holds for
    every ``p >= 3``. With some taps zero, the scaled factor has k-rank 0 and
    Kruskal's condition ``(p-1) R >= 2R + p - 1`` only holds for ``p = 4,
    R >= 3`` and ``p >= 5, R >= 2``.
    """
    p, R = params.p, params.R
    nnz = int(np.count_nonzero(params.h))
    if p <= 2:
        return Identifiability(
            "not_guaranteed",
            f"order p={p}: the decomposition is not unique for p < 3",
        )
    if nnz == 0:
        return Identifiability("not_guaranteed", "h is identically zero")
    if nnz == R:
        if R >= 2:
            return Identifiability("unique", f"Kruskal's condition holds (R={R}, all h nonzero)")
        return Identifiability(
            "unique_given_condition",
            "rank-one kernel: unique once w[0] = g_p = 1 fixes the scale, provided h[0] != 0",
        )
    if (p == 4 and R >= 3) or (p >= 5 and R >= 2):
        return Identifiability(
            "unique",
            f"Kruskal's condition holds with {R - nnz} zero tap(s) in h (p={p}, R={R})",
        )
    return Identifiability(
        "not_guaranteed",
        f"{R - nnz} zero tap(s) in h: Kruskal's condition fails for p={p}, R={R}",
    )
