"""Dense multilinear algebra for symmetric tensors.

Conventions
-----------
A tensor of order ``p`` and dimension ``M`` is an ndarray of shape
``(M,) * p``. Its vectorization is column-major (first index fastest)::

    vec(X)[m_1 + m_2*M + ... + m_p*M**(p-1)] = X[m_1, ..., m_p]

so ``vec(X) == X.ravel(order="F")``. Under this convention ``np.kron``
matches the Kronecker product used in the identities
``vec(A diag(b) D) = (D.T ⊙ A) b`` and ``vec(a ⊗ b) = b ⊠ a``.

Indices are 0-based in arrays. :class:`MultisetDomain` also reports its
tuples 1-based through :meth:`MultisetDomain.as_tuples`.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import reduce
from math import comb, factorial

import numpy as np

MAX_ENTRIES = 10**7


class DimensionError(ValueError):
    """Raised when array shapes are inconsistent with each other."""


def check_size(M, p):
    if M**p > MAX_ENTRIES:
        raise DimensionError(f"M**p = {M}**{p} exceeds the dense size guard of {MAX_ENTRIES}")


def vec(X):
    """Column-major vectorization."""
    return np.asarray(X).ravel(order="F")


def unvec(v, M, p):
    """Inverse of :func:`vec` for a tensor of order ``p`` and dimension ``M``."""
    v = np.asarray(v, dtype=float)
    if v.size != M**p:
        raise DimensionError(f"expected {M**p} entries, got {v.size}")
    return v.reshape((M,) * p, order="F")


def tensor_dims(X):
    """Return ``(M, p)`` of a cubical array, raising if it is not cubical."""
    X = np.asarray(X)
    if X.ndim == 0 or len(set(X.shape)) != 1:
        raise DimensionError(f"not a cubical tensor: shape {X.shape}")
    return X.shape[0], X.ndim


def symmetrize(X):
    """Average of ``X`` over all permutations of its indices."""
    X = np.asarray(X, dtype=float)
    perms = list(itertools.permutations(range(X.ndim)))
    return sum(np.transpose(X, perm) for perm in perms) / len(perms)


def is_symmetric(X, atol=0.0):
    X = np.asarray(X)
    return all(
        np.allclose(X, np.transpose(X, perm), rtol=0.0, atol=atol)
        for perm in itertools.permutations(range(X.ndim))
    )


def kron_vec_power(a, p):
    """``a ⊠ a ⊠ ... ⊠ a`` with ``p`` factors; ``p = 0`` gives ``[1.0]``."""
    a = np.asarray(a, dtype=float).ravel()
    if p < 0:
        raise ValueError("p must be nonnegative")
    return reduce(np.kron, [a] * p, np.ones(1))


def khatri_rao(A, B):
    """Columnwise Kronecker product: column ``r`` is ``kron(A[:, r], B[:, r])``."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.ndim != 2 or B.ndim != 2 or A.shape[1] != B.shape[1]:
        raise DimensionError(f"column mismatch in Khatri-Rao product: {A.shape} vs {B.shape}")
    return (A[:, None, :] * B[None, :, :]).reshape(-1, A.shape[1])


def khatri_rao_power(C, p):
    """``C ⊙ C ⊙ ... ⊙ C`` with ``p >= 1`` factors."""
    C = np.asarray(C, dtype=float)
    if p < 1:
        raise ValueError("p must be at least 1")
    out = C
    for _ in range(p - 1):
        out = khatri_rao(out, C)
    return out


@dataclass(frozen=True)
class MultisetDomain:
    """Nondecreasing index tuples ``m_1 <= ... <= m_p`` in lexicographic order.

    ``indices`` is an ``(I, p)`` integer array of 0-based indices with
    ``I = binom(M + p - 1, p)``. ``positions`` holds the column-major flat
    offset of each tuple in ``vec(X)`` (the rows of the selection operator),
    and ``orbit`` maps every flat offset of the full tensor to the row of
    its sorted tuple.
    """

    dim: int
    order: int
    indices: np.ndarray = field(repr=False)
    positions: np.ndarray = field(repr=False)
    orbit: np.ndarray = field(repr=False)

    @property
    def size(self):
        return self.indices.shape[0]

    def as_tuples(self):
        """1-based index tuples, in domain order."""
        return [tuple(int(m) + 1 for m in row) for row in self.indices]

    def multiplicities(self):
        """Number of distinct permutations of each tuple (its orbit size)."""
        out = np.empty(self.size, dtype=np.int64)
        for k, row in enumerate(self.indices):
            _, counts = np.unique(row, return_counts=True)
            n = factorial(self.order)
            for c in counts:
                n //= factorial(int(c))
            out[k] = n
        return out

    def check(self, M, p):
        if (M, p) != (self.dim, self.order):
            raise DimensionError(
                f"domain is for M={self.dim}, p={self.order}; got M={M}, p={p}"
            )


def full_indices(M, p):
    """All index tuples of an ``(M,)*p`` tensor as an ``(M**p, p)`` array, column-major order."""
    check_size(M, p)
    grids = np.indices((M,) * p).reshape(p, -1, order="F")
    return np.ascontiguousarray(grids.T)


def multiset_domain(M, p):
    if M < 1 or p < 1:
        raise ValueError("M and p must be positive")
    check_size(M, p)
    indices = np.array(
        list(itertools.combinations_with_replacement(range(M), p)), dtype=np.int64
    ).reshape(-1, p)
    assert indices.shape[0] == comb(M + p - 1, p)
    strides = M ** np.arange(p, dtype=np.int64)
    positions = indices @ strides
    # lexicographic order is increasing in this big-endian key
    lex = M ** np.arange(p - 1, -1, -1, dtype=np.int64)
    keys = indices @ lex
    full_sorted = np.sort(full_indices(M, p), axis=1)
    orbit = np.searchsorted(keys, full_sorted @ lex)
    return MultisetDomain(M, p, indices, positions, orbit)


def select_nonredundant(X, D):
    """Gather the entries of ``X`` on the domain ``D`` (the action of the selection operator)."""
    X = np.asarray(X, dtype=float)
    D.check(*tensor_dims(X))
    return vec(X)[D.positions]


def scatter_symmetric(v, D):
    """Symmetric tensor whose value on every permutation of ``D.indices[k]`` is ``v[k]``."""
    v = np.asarray(v, dtype=float).ravel()
    if v.size != D.size:
        raise DimensionError(f"expected {D.size} values, got {v.size}")
    return unvec(v[D.orbit], D.dim, D.order)


def flat_unfold(X):
    """``M x M**(p-1)`` unfolding with the trailing indices in column-major order."""
    M, p = tensor_dims(X)
    if p < 2:
        raise DimensionError("flat unfolding needs order p >= 2")
    return np.asarray(X, dtype=float).reshape(M, -1, order="F")


def square_unfold(X):
    """``M**2 x M**(p-2)`` unfolding; row ``m_1 + M*m_2``."""
    M, p = tensor_dims(X)
    if p < 3:
        raise DimensionError("square unfolding needs order p >= 3")
    return np.asarray(X, dtype=float).reshape(M * M, -1, order="F")


def cpd_reconstruct(C, h, g_p, p):
    """Symmetric CPD ``g_p * sum_r h[r] * C[:, r]^{⊗p}``."""
    C = np.asarray(C, dtype=float)
    h = np.asarray(h, dtype=float).ravel()
    if C.ndim != 2 or C.shape[1] != h.size:
        raise DimensionError(f"factor {C.shape} does not match {h.size} weights")
    if p < 1:
        raise ValueError("p must be at least 1")
    M = C.shape[0]
    check_size(M, p)
    return unvec(g_p * (khatri_rao_power(C, p) @ h), M, p)
