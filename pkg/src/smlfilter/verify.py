"""Self-check suite run by ``smlfilter verify``.

Each check draws its own random instances from a fixed seed and compares a
fast path against an independent reference (dense Kronecker algebra, finite
differences, or a closed form).  ``mutations`` injects known faults so the
suite itself can be shown to catch them.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import mse_surface
from .adaptive import (
    SmlLmsState,
    instantaneous_gradient,
    published_sml_mults_per_iter,
    sml_mults_per_iter,
    sml_step,
)
from .mse_surface import estimate_moments, mse, normal_residual
from .sml_model import delay_line, output
from .tensor_kron import contract, flat_index, kron, kron_power, simple_tensor

MUTATIONS = ("grad-sign",)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def central_difference_grad(f: Callable[[np.ndarray], float], W: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central finite-difference gradient of a scalar function of a ``(K, M)`` array."""
    W = np.asarray(W, dtype=float)
    out = np.zeros_like(W)
    for idx in np.ndindex(W.shape):
        Wp = W.copy()
        Wm = W.copy()
        Wp[idx] += h
        Wm[idx] -= h
        out[idx] = (f(Wp) - f(Wm)) / (2 * h)
    return out


def random_moments(rng: np.random.Generator, M: int, K: int, n: int = 40) -> mse_surface.MomentSet:
    U = rng.standard_normal((n, M))
    d = rng.standard_normal(n)
    return estimate_moments(U, d, K)


def rel_err(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


# ------------------------------------------------------------------ checks


def check_mixed_product(rng, n):
    worst = 0.0
    for _ in range(n):
        a = rng.standard_normal(rng.integers(1, 5))
        b = rng.standard_normal(rng.integers(1, 5))
        c = rng.standard_normal(a.size)
        d = rng.standard_normal(b.size)
        lhs = contract(kron(a, b), kron(c, d))
        rhs = (a @ c) * (b @ d)
        worst = max(worst, abs(lhs - rhs) / max(abs(rhs), 1e-300))
    return worst <= 1e-12, f"max rel err {worst:.2e}"


def check_kron_power_entries(rng, n):
    bad = 0
    for M in range(1, 5):
        for K in range(1, 4):
            u = rng.standard_normal(M)
            uK = kron_power(u, K)
            for mi in np.ndindex(*(M,) * K):
                if uK[flat_index(mi, M)] != math.prod(u[j] for j in mi):
                    bad += 1
    return bad == 0, f"{bad} mismatching entries"


def check_output_equivalence(rng, n):
    worst = 0.0
    for _ in range(n):
        M = int(rng.integers(1, 6))
        K = int(rng.integers(1, 4))
        W = rng.standard_normal((K, M))
        u = rng.standard_normal(M)
        worst = max(worst, abs(output(u, W) - contract(kron_power(u, K), simple_tensor(W))))
    return worst <= 1e-10, f"max abs err {worst:.2e}"


def check_gradient(rng, n, grad_fn=mse_surface.grad):
    worst = 0.0
    for _ in range(n):
        M = int(rng.integers(1, 5))
        K = int(rng.integers(1, 4))
        mom = random_moments(rng, M, K)
        W = rng.standard_normal((K, M))
        fd = central_difference_grad(lambda V: mse(V, mom), W)
        worst = max(worst, rel_err(grad_fn(W, mom), fd))
    return worst < 1e-5, f"max rel err {worst:.2e}"


def check_update_law(rng, n):
    worst = 0.0
    for _ in range(n):
        M = int(rng.integers(1, 5))
        K = int(rng.integers(1, 4))
        state = SmlLmsState(W=rng.standard_normal((K, M)), mu=float(rng.uniform(0.01, 0.5)))
        u = rng.standard_normal(M)
        d = float(rng.standard_normal())
        W0 = state.W.copy()
        expected = -state.mu * instantaneous_gradient(W0, u, d)
        sml_step(state, u, d)
        worst = max(worst, float(np.max(np.abs((state.W - W0) - expected))))
    return worst <= 1e-10, f"max abs err {worst:.2e}"


def check_census(rng, n):
    bad = []
    for M in range(2, 11):
        for K in range(2, 5):
            state = SmlLmsState(W=rng.standard_normal((K, M)), mu=0.01)
            sml_step(state, rng.standard_normal(M), 0.3)
            if state.mult_count_last != sml_mults_per_iter(M, K):
                bad.append((M, K, state.mult_count_last))
            if K == 2 and state.mult_count_last != published_sml_mults_per_iter(M, K):
                bad.append((M, K, "published"))
    return not bad, f"mismatches: {bad[:4]}" if bad else "2MK + K^2 - K + 2 on M in 2..10, K in 2..4"


def check_zero_fixed_point(rng, n):
    state = SmlLmsState(W=np.zeros((3, 4)), mu=0.1)
    for _ in range(n):
        sml_step(state, rng.standard_normal(4), float(rng.standard_normal()))
    return bool(np.all(state.W == 0)), f"max |w| {np.max(np.abs(state.W)):.1e}"


def check_planted_solution(rng, n):
    M, K = 4, 2
    H = rng.standard_normal((K, M)) / 2
    x = rng.standard_normal(n)
    U = delay_line(x, M)
    d = np.prod(U @ H.T, axis=1)
    mom = estimate_moments(U, d, K)
    res = normal_residual(H, mom)
    return res <= 1e-12, f"residual {res:.2e}"


def check_degree(rng, n):
    worst = 0.0
    for K in (2, 3):
        for _ in range(n):
            M = 3
            mom = random_moments(rng, M, K)
            W = rng.standard_normal((K, M))
            D = rng.standard_normal((K, M))
            deg = 2 * K
            ts = np.linspace(-1.0, 1.0, deg + 1)
            vals = [mse(W + t * D, mom) for t in ts]
            coeffs = np.polyfit(ts, vals, deg)
            t_new = 1.37
            pred = np.polyval(coeffs, t_new)
            actual = mse(W + t_new * D, mom)
            worst = max(worst, abs(pred - actual) / abs(actual))
    return worst <= 1e-8, f"max rel prediction err {worst:.2e}"


def check_white_moments(rng, n):
    M = 4
    U = rng.standard_normal((n, M))
    mom = estimate_moments(U, np.zeros(n), 1)
    dev = float(np.max(np.abs(mom.R_uK - np.eye(M))))
    return dev <= 5e-2, f"max |R - I| {dev:.3f} over {n} samples"


def run_suite(scale: str = "small", mutations: frozenset | set = frozenset(), seed: int = 20240) -> list[CheckResult]:
    if scale not in ("small", "full"):
        raise ValueError(f"scale must be 'small' or 'full', got {scale!r}")
    unknown = set(mutations) - set(MUTATIONS)
    if unknown:
        raise ValueError(f"unknown mutations {sorted(unknown)}")
    full = scale == "full"
    grad_fn = mse_surface.grad
    if "grad-sign" in mutations:
        grad_fn = lambda W, mom: -mse_surface.grad(W, mom)  # noqa: E731

    plan = [
        ("kronecker mixed-product identity", check_mixed_product, 200),
        ("kron_power entry formula", check_kron_power_entries, 0),
        ("product form == Kronecker contraction", check_output_equivalence, 1000 if full else 200),
        ("closed-form gradient vs finite differences", lambda r, n: check_gradient(r, n, grad_fn), 200 if full else 40),
        ("update law == -mu * instantaneous gradient", check_update_law, 100 if full else 30),
        ("multiplication census", check_census, 0),
        ("zero weights are a fixed point", check_zero_fixed_point, 100),
        ("planted plant solves normal equations", check_planted_solution, 2000),
        ("mse has degree 2K along lines", check_degree, 10 if full else 3),
    ]
    if full:
        plan.append(("white-input moment estimate ~ identity", check_white_moments, 100_000))

    rng = np.random.default_rng(seed)
    results = []
    for name, fn, n in plan:
        t0 = time.perf_counter()
        try:
            ok, detail = fn(rng, n)
        except Exception as exc:  # a crashing check is a failing check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        results.append(CheckResult(name, bool(ok), detail, time.perf_counter() - t0))
    return results
