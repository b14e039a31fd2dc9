"""Kronecker products, multi-index linearization and dense rank-one tensors.

Everything here is dense and meant as a reference path: the fast filters in
:mod:`smlfilter.sml_model` never build an ``M**K`` object.  Multi-indices are
linearized row-major, which is the order produced by nested ``np.kron``.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ._validation import as_factor_array, as_vector

#: Largest dense object (number of entries) the oracles will allocate.
MAX_DENSE_SIZE = 10**6


class DenseSizeError(ValueError):
    """Raised when a dense ``M**K`` object would exceed the size cap."""


def check_dense_size(M: int, K: int, cap: int | None = None) -> int:
    cap = MAX_DENSE_SIZE if cap is None else cap
    size = M**K
    if size > cap:
        raise DenseSizeError(
            f"dense tensor of size M**K = {M}**{K} = {size} exceeds cap {cap}"
        )
    return size


def kron(a, b) -> np.ndarray:
    """Kronecker product of two 1-D vectors; entry ``p*len(b) + q`` is ``a[p]*b[q]``."""
    a = as_vector(a, "a")
    b = as_vector(b, "b")
    return np.kron(a, b)


def kron_power(u, K: int) -> np.ndarray:
    """Return ``u ⊗ u ⊗ ... ⊗ u`` (``K`` factors) as a flat vector of length ``M**K``."""
    u = as_vector(u, "u")
    K = int(K)
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    check_dense_size(u.size, K)
    out = u
    for _ in range(K - 1):
        out = np.kron(out, u)
    return out


def flat_index(mi: Sequence[int], M: int) -> int:
    """Row-major position of the multi-index ``mi`` in a tensor with all sides ``M``."""
    M = int(M)
    flat = 0
    for j in mi:
        j = int(j)
        if not 0 <= j < M:
            raise IndexError(f"index component {j} out of range [0, {M})")
        flat = flat * M + j
    return flat


def unflat_index(p: int, M: int, K: int) -> tuple[int, ...]:
    """Inverse of :func:`flat_index`."""
    if not 0 <= p < M**K:
        raise IndexError(f"flat index {p} out of range [0, {M**K})")
    out = []
    for _ in range(K):
        p, r = divmod(p, M)
        out.append(r)
    return tuple(reversed(out))


def simple_tensor(W) -> np.ndarray:
    """Flattened ``w_1 ⊗ ... ⊗ w_K``; entry ``(i_1..i_K)`` is ``prod_s w_s[i_s]``."""
    F = as_factor_array(W)
    K, M = F.shape
    check_dense_size(M, K)
    out = F[0]
    for s in range(1, K):
        out = np.kron(out, F[s])
    return out


def contract(uK, wK) -> float:
    """Full contraction ``sum_p uK[p] * wK[p]``."""
    uK = as_vector(uK, "uK")
    wK = as_vector(wK, "wK")
    if uK.size != wK.size:
        raise ValueError(f"length mismatch: {uK.size} != {wK.size}")
    return float(uK @ wK)


def partial_simple_tensor(W, s: int) -> np.ndarray:
    """``w_1 ⊗ ... ⊗ I_M ⊗ ... ⊗ w_K`` with the identity in slot ``s`` (1-based).

    The result has shape ``(M**K, M)``; column ``c`` is :func:`simple_tensor`
    with ``w_s`` replaced by the unit vector ``e_c``.
    """
    F = as_factor_array(W)
    K, M = F.shape
    s = int(s)
    if not 1 <= s <= K:
        raise ValueError(f"slot s must be in [1, {K}], got {s}")
    check_dense_size(M, K)
    out = np.ones((1, 1))
    for t in range(K):
        block = np.eye(M) if t == s - 1 else F[t][:, None]
        out = np.kron(out, block)
    return out
