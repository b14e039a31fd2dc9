"""Online filters: SML-LMS and a reduced-basis Volterra-LMS baseline.

Both keep their weights in a small mutable state object that is advanced one
sample at a time.  Each step records the number of scalar multiplications it
performed in ``mult_count_last``.

SML-LMS step, for branch outputs ``y_o[s] = u @ w_s`` and leave-one-out
products ``y_loo[s] = prod_{t != s} y_o[t]`` (all at the old weights)::

    e = d - y
    w_s <- w_s + (mu * e * y_loo[s]) * u      for every s

The scalar ``mu * e * y_loo[s]`` is formed before touching the regressor, which
is what keeps the vector work at one length-M product per branch.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from pathlib import Path

import numpy as np

from ._validation import as_factor_array, as_vector, check_positive_int, check_signal_pair, check_step_size
from .mse_surface import MomentSet, Plant, grad
from .sml_model import MultCounter, delay_line, evaluate, output
from .tensor_kron import kron_power

INIT_VARIANTS = ("table", "text")


class DivergenceError(FloatingPointError):
    """A filter produced non-finite values."""

    def __init__(self, iteration: int, algorithm: str = "filter", realization: int | None = None):
        self.iteration = iteration
        self.algorithm = algorithm
        self.realization = realization
        where = "" if realization is None else f" (realization {realization})"
        super().__init__(f"{algorithm} diverged at iteration {iteration}{where}")


def sml_mults_per_iter(M: int, K: int) -> int:
    """Closed-form multiplication count of one :func:`sml_step` for ``K >= 2``."""
    return 2 * M * K + K * K - K + 2


def published_sml_mults_per_iter(M: int, K: int) -> int:
    """The published per-iteration count ``MK + K^2 - K + 2M + 2`` (agrees with the above only at K=2)."""
    return M * K + K * K - K + 2 * M + 2


def volterra_mults_per_iter(M: int, K: int) -> int:
    """Multiplications of one :func:`volterra_step` on the ``C(M+K-1, K)`` basis."""
    C = math.comb(M + K - 1, K)
    return C * (K - 1) + C + 1 + C


# --------------------------------------------------------------------- SML-LMS


@dataclass
class SmlLmsState:
    W: np.ndarray
    mu: float
    iter: int = 0
    mult_count_last: int = 0

    @property
    def K(self) -> int:
        return self.W.shape[0]

    @property
    def M(self) -> int:
        return self.W.shape[1]

    def step(self, u, d):
        return sml_step(self, u, d)

    def predict(self, u) -> float:
        return output(u, self.W)


def initial_factors(K: int, M: int, variant: str = "table") -> np.ndarray:
    """Starting branches ``w_j = [2**(1-j), 0, ..., 0]`` for ``j < K`` and ``w_K = 0``.

    ``variant="text"`` additionally puts a 1 in the last tap of ``w_1..w_{K-1}``.
    All-zero starts are a fixed point of the update, hence the staggered scales.
    """
    K = check_positive_int(K, "K")
    M = check_positive_int(M, "M")
    if variant not in INIT_VARIANTS:
        raise ValueError(f"unknown init variant {variant!r}; expected one of {INIT_VARIANTS}")
    W = np.zeros((K, M))
    for j in range(1, K):
        if variant == "text" and M > 1:
            W[j - 1, -1] = 1.0
        W[j - 1, 0] = 2.0 ** (1 - j)
    return W


def sml_init(K: int, M: int, mu: float = 0.01, variant: str = "table") -> SmlLmsState:
    return SmlLmsState(W=initial_factors(K, M, variant), mu=check_step_size(mu))


def sml_step(state: SmlLmsState, u, d: float, counter: MultCounter | None = None):
    """Advance ``state`` by one sample; returns ``(e, y)`` at the pre-update weights."""
    u = as_vector(u, "u")
    if u.size != state.M:
        raise ValueError(f"regressor length {u.size} != filter length {state.M}")
    local = MultCounter()
    # overflow is reported below as DivergenceError
    with np.errstate(over="ignore", invalid="ignore"):
        fo = evaluate(u, state.W, local)
        e = float(d) - fo.y
        mue = state.mu * e
        g = mue * fo.y_loo
        W = state.W + g[:, None] * u[None, :]
    local.add(1 + state.K + state.K * state.M)
    state.iter += 1
    if not (np.isfinite(e) and np.all(np.isfinite(W))):
        raise DivergenceError(state.iter, "sml-lms")
    state.W = W
    state.mult_count_last = local.count
    if counter is not None:
        counter.add(local.count)
    return e, fo.y


def instantaneous_gradient(W, u, d: float) -> np.ndarray:
    """Gradient of the one-sample cost ``e²/2`` built from rank-one moment estimates.

    Uses ``R_uK ≈ u^{⊗K}ᵀ u^{⊗K}`` and ``R_uKd ≈ d u^{⊗K}`` in the dense
    closed-form gradient, so it is independent of the fast O(KM) path.
    """
    F = as_factor_array(W)
    K, M = F.shape
    uK = kron_power(u, K)
    mom = MomentSet(R_uK=np.outer(uK, uK), R_uKd=float(d) * uK, R_d=float(d) ** 2, M=M, K=K, sample_count=1)
    return 0.5 * grad(F, mom)


def sml_step_matches_gradient(state: SmlLmsState, u, d: float, tol: float = 1e-10) -> bool:
    """Check that one step moves the weights by ``-mu * instantaneous_gradient``.

    The state passed in is not modified.
    """
    probe = SmlLmsState(W=state.W.copy(), mu=state.mu, iter=state.iter)
    expected = -state.mu * instantaneous_gradient(state.W, u, d)
    sml_step(probe, u, d)
    increment = probe.W - state.W
    scale = max(1.0, float(np.max(np.abs(expected))))
    return bool(np.max(np.abs(increment - expected)) <= tol * scale)


# ----------------------------------------------------------------- Volterra-LMS


def monomial_basis(M: int, K: int) -> np.ndarray:
    """Delay multisets ``i_1 <= ... <= i_K``, one row each; ``C(M+K-1, K)`` rows."""
    return np.array(list(combinations_with_replacement(range(M), K)), dtype=np.intp).reshape(-1, K)


def volterra_coeffs_from_factors(W) -> np.ndarray:
    """Reduced-basis coefficients reproducing the separable kernel ``prod_s h_s(i_s)``.

    Each multiset collects the kernel over all its distinct orderings.
    """
    F = as_factor_array(W)
    K, M = F.shape
    basis = monomial_basis(M, K)
    coeffs = np.zeros(len(basis))
    lookup = {tuple(b): c for c, b in enumerate(basis)}
    for idx in np.ndindex(*(M,) * K):
        coeffs[lookup[tuple(sorted(idx))]] += np.prod(F[np.arange(K), idx])
    return coeffs


@dataclass
class VolterraLmsState:
    coeffs: np.ndarray
    mu: float
    K: int
    M: int
    iter: int = 0
    mult_count_last: int = 0
    basis: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.basis = monomial_basis(self.M, self.K)
        if self.coeffs.shape != (len(self.basis),):
            raise ValueError(
                f"coefficient vector must have length C(M+K-1, K) = {len(self.basis)}, "
                f"got {self.coeffs.shape}"
            )

    def regressor(self, u) -> np.ndarray:
        u = as_vector(u, "u")
        if u.size != self.M:
            raise ValueError(f"regressor length {u.size} != filter length {self.M}")
        phi = u[self.basis[:, 0]]
        for k in range(1, self.K):
            phi = phi * u[self.basis[:, k]]
        return phi

    def step(self, u, d):
        return volterra_step(self, u, d)

    def predict(self, u) -> float:
        return float(self.coeffs @ self.regressor(u))


def volterra_init(K: int, M: int, mu: float = 0.01, coeffs=None) -> VolterraLmsState:
    K = check_positive_int(K, "K")
    M = check_positive_int(M, "M")
    n = math.comb(M + K - 1, K)
    c = np.zeros(n) if coeffs is None else np.array(coeffs, dtype=float).reshape(-1)
    return VolterraLmsState(coeffs=c, mu=check_step_size(mu), K=K, M=M)


def volterra_step(state: VolterraLmsState, u, d: float, counter: MultCounter | None = None):
    """Plain LMS on the monomial regressor; returns ``(e, y)`` at the pre-update coefficients."""
    phi = state.regressor(u)
    C = phi.size
    with np.errstate(over="ignore", invalid="ignore"):
        y = float(state.coeffs @ phi)
        e = float(d) - y
        coeffs = state.coeffs + state.mu * e * phi
    n = C * (state.K - 1) + C + 1 + C
    state.iter += 1
    if not (np.isfinite(e) and np.all(np.isfinite(coeffs))):
        raise DivergenceError(state.iter, "volterra-lms")
    state.coeffs = coeffs
    state.mult_count_last = n
    if counter is not None:
        counter.add(n)
    return e, y


# ---------------------------------------------------------------- error traces


@dataclass(eq=False)
class ErrorTrace:
    """Per-iteration record of a filter run; ``excess_err`` is NaN without a plant."""

    e: np.ndarray
    y: np.ndarray
    excess_err: np.ndarray

    @property
    def iter(self) -> np.ndarray:
        return np.arange(1, len(self.e) + 1)

    def __len__(self) -> int:
        return len(self.e)

    def equals(self, other: "ErrorTrace") -> bool:
        return all(
            np.array_equal(a, b, equal_nan=True)
            for a, b in ((self.e, other.e), (self.y, other.y), (self.excess_err, other.excess_err))
        )

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iter", "e", "y", "excess_err"])
            for i, e, y, x in zip(self.iter, self.e, self.y, self.excess_err):
                writer.writerow([int(i), f"{e:.17g}", f"{y:.17g}", f"{x:.17g}"])

    @classmethod
    def from_csv(cls, path) -> "ErrorTrace":
        with open(Path(path), newline="") as fh:
            rows = list(csv.DictReader(fh))
        col = lambda k: np.array([float(r[k]) for r in rows])  # noqa: E731
        return cls(e=col("e"), y=col("y"), excess_err=col("excess_err"))


def run_filter(stepper, inputs, desired, plant: Plant | None = None) -> ErrorTrace:
    """Drive ``stepper`` (an SML or Volterra state) over a signal pair.

    ``inputs`` is the raw input signal; delay-line regressors are formed with
    zeros before time 0.  With a plant, ``excess_err[i]`` is the a-priori
    mismatch between plant output and filter output at the old weights.
    """
    x, d = check_signal_pair(inputs, desired)
    n = x.size
    e = np.empty(n)
    y = np.empty(n)
    excess = np.full(n, np.nan)
    U = delay_line(x, stepper.M)
    if plant is not None:
        if plant.M != stepper.M:
            raise ValueError(f"plant length {plant.M} != filter length {stepper.M}")
        plant_out = np.prod(U @ plant.factors.T, axis=1)
    for i in range(n):
        e[i], y[i] = stepper.step(U[i], d[i])
        if plant is not None:
            excess[i] = plant_out[i] - y[i]
    return ErrorTrace(e=e, y=y, excess_err=excess)
