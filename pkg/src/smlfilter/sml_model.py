"""Product-of-FIR (simple multilinear) filter evaluation in O(KM).

The filter holds ``K`` FIR branches ``w_1..w_K`` of length ``M`` stacked in a
``(K, M)`` array.  For a regressor ``u = [u(i), u(i-1), ..., u(i-M+1)]`` the
output is ``(u @ w_1) * (u @ w_2) * ... * (u @ w_K)``.

Every routine takes an optional :class:`MultCounter` that is charged with the
number of scalar multiplications actually performed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._validation import as_factor_array, as_vector


class MultCounter:
    """Tally of scalar multiplications, charged by the instrumented routines."""

    def __init__(self) -> None:
        self.count = 0

    def add(self, n: int) -> None:
        self.count += int(n)

    def reset(self) -> int:
        n, self.count = self.count, 0
        return n


@dataclass(frozen=True)
class FactorOutputs:
    """Branch outputs ``y_o``, leave-one-out products ``y_loo`` and the output ``y``."""

    y_o: np.ndarray
    y_loo: np.ndarray
    y: float


def _check_pair(u, W) -> tuple[np.ndarray, np.ndarray]:
    u = as_vector(u, "u")
    F = as_factor_array(W)
    if F.shape[1] != u.size:
        raise ValueError(f"regressor length {u.size} != factor length {F.shape[1]}")
    return u, F


def factor_outputs(u, W, counter: MultCounter | None = None) -> np.ndarray:
    """Per-branch FIR outputs ``y_o[s] = u @ w_s``."""
    u, F = _check_pair(u, W)
    if counter is not None:
        counter.add(F.size)
    # row-wise dots keep the K=1 path in the same summation order as plain LMS
    return np.array([w @ u for w in F])


def leave_one_out(y_o, counter: MultCounter | None = None) -> np.ndarray:
    """``y_loo[s] = prod_{t != s} y_o[t]`` by direct products.

    No division is used, so zero branches are handled exactly.  With a single
    branch the empty product gives ``[1.0]``.
    """
    y_o = np.asarray(y_o, dtype=float).reshape(-1)
    K = y_o.size
    if K < 1:
        raise ValueError("need at least one branch output")
    out = np.empty(K)
    mults = 0
    for s in range(K):
        acc = None
        for t in range(K):
            if t == s:
                continue
            if acc is None:
                acc = y_o[t]
            else:
                acc = acc * y_o[t]
                mults += 1
        out[s] = 1.0 if acc is None else acc
    if counter is not None:
        counter.add(mults)
    return out


def evaluate(u, W, counter: MultCounter | None = None) -> FactorOutputs:
    """Branch outputs, leave-one-out products and the full output for one regressor.

    The output is formed as ``y_loo[K-1] * y_o[K-1]``, reusing the last
    leave-one-out product instead of a fresh K-fold product.
    """
    y_o = factor_outputs(u, W, counter)
    y_loo = leave_one_out(y_o, counter)
    y = float(y_loo[-1] * y_o[-1])
    if counter is not None:
        counter.add(1)
    return FactorOutputs(y_o=y_o, y_loo=y_loo, y=y)


def output(u, W, counter: MultCounter | None = None) -> float:
    """Filter output ``prod_s (u @ w_s)``."""
    return evaluate(u, W, counter).y


def delay_line(x, M: int) -> np.ndarray:
    """Regressor matrix of a signal, one row ``[x(i), x(i-1), ..., x(i-M+1)]`` per sample.

    Samples before time 0 are taken as zero.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    M = int(M)
    if M < 1:
        raise ValueError(f"M must be >= 1, got {M}")
    if x.size == 0:
        return np.zeros((0, M))
    padded = np.concatenate([np.zeros(M - 1), x])
    # row i holds padded[i : i + M] reversed
    windows = np.lib.stride_tricks.sliding_window_view(padded, M)
    return np.ascontiguousarray(windows[:, ::-1])
