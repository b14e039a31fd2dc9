"""Mean-square-error surface of the product-of-FIR filter.

For real data and ``w = w_1 ⊗ ... ⊗ w_K`` the cost is::

    mse(W) = R_d - 2 * R_uKd @ w + w @ R_uK @ w

where ``R_uK = E[u^{⊗K}ᵀ u^{⊗K}]``, ``R_uKd = E[d u^{⊗K}]`` and ``R_d = E[d²]``.
It is quadratic in the Kronecker vector ``w`` but of degree ``2K`` in the
individual branches.  :func:`grad` returns the ordinary real gradient
(directional derivative convention), which is twice the conjugate-dropping
complex gradient often quoted for this form.

All of this is dense ``M**K`` algebra and serves as the analysis/oracle path.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._validation import as_factor_array, as_vector
from .tensor_kron import check_dense_size, partial_simple_tensor, simple_tensor


@dataclass(frozen=True, eq=False)
class MomentSet:
    """Second-order statistics of ``(u^{⊗K}, d)`` that define the MSE surface."""

    R_uK: np.ndarray
    R_uKd: np.ndarray
    R_d: float
    M: int
    K: int
    sample_count: int = 0

    def __post_init__(self):
        n = self.M**self.K
        if self.R_uK.shape != (n, n):
            raise ValueError(f"R_uK must have shape {(n, n)}, got {self.R_uK.shape}")
        if self.R_uKd.shape != (n,):
            raise ValueError(f"R_uKd must have shape {(n,)}, got {self.R_uKd.shape}")
        if self.R_d < 0:
            raise ValueError(f"R_d must be nonnegative, got {self.R_d}")

    def min_eigenvalue_ratio(self) -> float:
        """Smallest over largest eigenvalue of ``R_uK`` (0 for the zero matrix)."""
        ev = np.linalg.eigvalsh(self.R_uK)
        top = ev[-1]
        return 0.0 if top == 0 else float(ev[0] / top)


@dataclass(frozen=True, eq=False)
class Plant:
    """Ground-truth product-of-FIR system plus white measurement noise of variance ``noise_var``."""

    factors: np.ndarray
    noise_var: float = 0.0

    def __post_init__(self):
        F = as_factor_array(self.factors)
        object.__setattr__(self, "factors", F)
        nv = float(self.noise_var)
        if not np.isfinite(nv) or nv < 0:
            raise ValueError(f"noise_var must be finite and >= 0, got {self.noise_var}")
        object.__setattr__(self, "noise_var", nv)

    @property
    def K(self) -> int:
        return self.factors.shape[0]

    @property
    def M(self) -> int:
        return self.factors.shape[1]


def estimate_moments(regressors, desired, K: int, chunk_size: int = 4096) -> MomentSet:
    """Sample-average estimate of ``R_uK``, ``R_uKd`` and ``R_d``.

    ``regressors`` is an ``(N, M)`` array (one delay-line row per sample).
    Accumulation runs over chunks, so ``N`` is not limited by memory.
    """
    U = np.asarray(regressors, dtype=float)
    if U.ndim == 1:
        U = U[None, :]
    d = np.asarray(desired, dtype=float).reshape(-1)
    if U.shape[0] == 0 or d.size == 0:
        raise ValueError("need at least one (regressor, desired) sample")
    if U.shape[0] != d.size:
        raise ValueError(f"got {U.shape[0]} regressors but {d.size} desired samples")
    N, M = U.shape
    K = int(K)
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    n = check_dense_size(M, K)
    # R_uK alone holds n**2 entries
    check_dense_size(n, 2)

    R = np.zeros((n, n))
    r = np.zeros(n)
    rd = 0.0
    for lo in range(0, N, chunk_size):
        Uc = U[lo : lo + chunk_size]
        dc = d[lo : lo + chunk_size]
        P = Uc
        for _ in range(K - 1):
            P = np.einsum("ni,nj->nij", P, Uc).reshape(Uc.shape[0], -1)
        R += P.T @ P
        r += dc @ P
        rd += float(dc @ dc)
    return MomentSet(R_uK=R / N, R_uKd=r / N, R_d=rd / N, M=M, K=K, sample_count=N)


def _kron_weights(W, mom: MomentSet) -> tuple[np.ndarray, np.ndarray]:
    F = as_factor_array(W, M=mom.M, K=mom.K)
    return F, simple_tensor(F)


def mse(W, mom: MomentSet) -> float:
    """``R_d - 2 R_uKd @ w + w @ R_uK @ w`` at ``w = w_1 ⊗ ... ⊗ w_K``."""
    _, w = _kron_weights(W, mom)
    return float(mom.R_d - 2.0 * (mom.R_uKd @ w) + w @ (mom.R_uK @ w))


def grad(W, mom: MomentSet) -> np.ndarray:
    """Real gradient of :func:`mse` with respect to each branch, shape ``(K, M)``.

    Row ``s`` is ``2 (-R_uKd + wᵀ R_uK) (w_1 ⊗ .. ⊗ I_M ⊗ .. ⊗ w_K)``.
    """
    F, w = _kron_weights(W, mom)
    row = 2.0 * (mom.R_uK @ w - mom.R_uKd)
    return np.vstack([row @ partial_simple_tensor(F, s) for s in range(1, mom.K + 1)])


def normal_residual(W, mom: MomentSet) -> float:
    """Euclidean norm of ``R_uK w - R_uKd``; zero exactly on solutions of the normal equations."""
    _, w = _kron_weights(W, mom)
    return float(np.linalg.norm(mom.R_uK @ w - mom.R_uKd))


def empirical_mse(W, regressors, desired) -> float:
    """Average of ``(d(i) - y(i))²`` computed sample by sample (no moments)."""
    F = as_factor_array(W)
    U = np.asarray(regressors, dtype=float)
    d = as_vector(desired, "desired")
    y = np.prod(U @ F.T, axis=1)
    return float(np.mean((d - y) ** 2))


def save_moments(mom: MomentSet, path) -> None:
    """Write a moment set as plain text.

    Layout: line 1 ``M K sample_count``; line 2 ``R_d``; line 3 the ``M**K``
    entries of ``R_uKd``; then ``M**K`` lines, row ``p`` of ``R_uK`` each
    (row-major multi-index order).  Floats use 17 significant digits.
    """
    fmt = "%.17g"
    lines = [f"{mom.M} {mom.K} {mom.sample_count}", fmt % mom.R_d]
    lines.append(" ".join(fmt % v for v in mom.R_uKd))
    lines.extend(" ".join(fmt % v for v in row) for row in mom.R_uK)
    Path(path).write_text("\n".join(lines) + "\n")


def load_moments(path) -> MomentSet:
    """Read a file written by :func:`save_moments`."""
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if len(lines) < 3:
        raise ValueError(f"{path}: truncated moment file")
    try:
        M, K, count = (int(t) for t in lines[0].split())
    except ValueError as exc:
        raise ValueError(f"{path}: header must be 'M K sample_count'") from exc
    n = M**K
    if len(lines) != 3 + n:
        raise ValueError(f"{path}: expected {3 + n} lines, found {len(lines)}")
    R_d = float(lines[1])
    r = np.array(lines[2].split(), dtype=float)
    R = np.array([ln.split() for ln in lines[3:]], dtype=float)
    return MomentSet(R_uK=R, R_uKd=r, R_d=R_d, M=M, K=K, sample_count=count)
