"""System-identification experiments and Monte-Carlo EMSE learning curves.

A run identifies a fixed product-of-FIR plant driven by white unit-variance
Gaussian input, with white Gaussian measurement noise on the desired signal.
The ensemble kernel advances all realizations together as one batch; each
realization still owns independent input and noise streams derived from
``signal_seed``, so results do not depend on how realizations are grouped.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._validation import as_factor_array
from .adaptive import (
    DivergenceError,
    initial_factors,
    monomial_basis,
    sml_mults_per_iter,
    volterra_mults_per_iter,
)
from .mse_surface import Plant

logger = logging.getLogger(__name__)

ALGORITHMS = ("sml-lms", "volterra-lms")
SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


@dataclass(frozen=True)
class ExperimentConfig:
    M: int
    K: int
    n_iters: int
    n_realizations: int
    noise_var: float
    mu: float
    algorithm: str = "sml-lms"
    plant_seed: int = 0
    signal_seed: int = 1
    plant_factors: tuple | None = None
    init: str = "table"
    exclude_diverged: bool = False
    target_emse_db: float = -30.0
    name: str = "experiment"

    def __post_init__(self):
        for key in ("M", "K", "n_iters", "n_realizations"):
            v = getattr(self, key)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or v < 1:
                raise ConfigError(f"{key} must be an integer >= 1, got {v!r}")
        if not (math.isfinite(self.noise_var) and self.noise_var >= 0):
            raise ConfigError(f"noise_var must be finite and >= 0, got {self.noise_var}")
        if not (math.isfinite(self.mu) and self.mu > 0):
            raise ConfigError(f"mu must be positive, got {self.mu}")
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.init not in ("table", "text"):
            raise ConfigError(f"init must be 'table' or 'text', got {self.init!r}")
        if self.plant_factors is not None:
            F = np.asarray(self.plant_factors, dtype=float)
            if F.shape != (self.K, self.M):
                raise ConfigError(f"plant factors must have shape (K, M) = {(self.K, self.M)}, got {F.shape}")

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        if self.plant_factors is not None:
            out["plant_factors"] = [list(r) for r in self.plant_factors]
        return out

    @property
    def mults_per_iter(self) -> int:
        if self.algorithm == "sml-lms":
            return sml_mults_per_iter(self.M, self.K)
        return volterra_mults_per_iter(self.M, self.K)


@dataclass(eq=False)
class EmseCurve:
    """Ensemble-averaged excess MSE per iteration (linear scale)."""

    values: np.ndarray
    n_realizations: int = 0
    n_diverged: int = 0

    def __len__(self) -> int:
        return len(self.values)

    def db(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return 10.0 * np.log10(self.values)

    def steady_state(self, fraction: float = 0.1) -> float:
        """Mean EMSE over the last ``fraction`` of iterations, linear scale."""
        n = max(1, int(round(len(self.values) * fraction)))
        return float(np.mean(self.values[-n:]))

    def steady_state_db(self, fraction: float = 0.1) -> float:
        with np.errstate(divide="ignore"):
            return float(10.0 * np.log10(self.steady_state(fraction)))

    def iterations_to(self, target_db: float, window: int | None = None) -> int | None:
        """Settling iteration: first (1-based) iteration from which the smoothed curve stays at or below ``target_db``.

        Smoothing is a trailing moving average over ``window`` iterations
        (default 1% of the curve).  ``None`` if the curve ends above target.
        """
        n = len(self.values)
        window = max(1, n // 100) if window is None else int(window)
        csum = np.concatenate([[0.0], np.cumsum(self.values)])
        lo = np.maximum(np.arange(1, n + 1) - window, 0)
        smooth = (csum[1:] - csum[lo]) / (np.arange(1, n + 1) - lo)
        with np.errstate(divide="ignore"):
            above = np.nonzero(~(10.0 * np.log10(smooth) <= target_db))[0]
        if above.size == 0:
            return 1
        if above[-1] == n - 1:
            return None
        return int(above[-1]) + 2

    def to_csv(self, path) -> None:
        db = self.db()
        with open(path, "w") as fh:
            fh.write("iter,emse_linear,emse_db\n")
            for i, (v, vdb) in enumerate(zip(self.values, db), start=1):
                fh.write(f"{i},{v:.17g},{vdb:.17g}\n")

    @classmethod
    def from_csv(cls, path) -> "EmseCurve":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(values=data[:, 1])


# ------------------------------------------------------------------- signals


def gen_input(n: int, seed) -> np.ndarray:
    """White, zero-mean, unit-variance Gaussian input."""
    return np.random.default_rng(seed).standard_normal(n)


def random_unit_factors(K: int, M: int, rng: np.random.Generator) -> np.ndarray:
    F = rng.standard_normal((K, M))
    return F / np.linalg.norm(F, axis=1, keepdims=True)


def output_power_gain(F: np.ndarray, rng: np.random.Generator, n_probe: int = 10_000) -> float:
    """Gain that brings the plant's output power under white unit Gaussian input to ~1."""
    U = rng.standard_normal((n_probe, F.shape[1]))
    power = float(np.mean(np.prod(U @ F.T, axis=1) ** 2))
    return 1.0 / math.sqrt(power)


def gen_plant(cfg: ExperimentConfig) -> Plant:
    """Plant for ``cfg``: explicit factors verbatim, else normalized random factors.

    Random plants draw i.i.d. Gaussian branches, scale each to unit norm and
    then spread a global gain evenly over the branches so that the output power
    is close to one.  The noise variance then fixes the SNR directly.
    """
    if cfg.plant_factors is not None:
        return Plant(factors=as_factor_array(cfg.plant_factors, M=cfg.M, K=cfg.K), noise_var=cfg.noise_var)
    rng = np.random.default_rng(cfg.plant_seed)
    F = random_unit_factors(cfg.K, cfg.M, rng)
    gain = output_power_gain(F, rng)
    return Plant(factors=F * gain ** (1.0 / cfg.K), noise_var=cfg.noise_var)


def plant_output(plant: Plant, x: np.ndarray) -> np.ndarray:
    """Noiseless plant response to the signal(s) ``x`` along the last axis (zero initial state)."""
    x = np.asarray(x, dtype=float)
    out = np.ones_like(x)
    for h in plant.factors:
        branch = np.zeros_like(x)
        for j, hj in enumerate(h):
            if j == 0:
                branch += hj * x
            else:
                branch[..., j:] += hj * x[..., :-j]
        out *= branch
    return out


def synth_desired(plant: Plant, inputs, noise_seed) -> np.ndarray:
    """Plant output plus independent Gaussian noise of variance ``plant.noise_var``."""
    x = np.asarray(inputs, dtype=float)
    y = plant_output(plant, x)
    if plant.noise_var == 0:
        return y
    noise = np.random.default_rng(noise_seed).standard_normal(x.shape)
    return y + math.sqrt(plant.noise_var) * noise


def realization_seeds(signal_seed: int, n_realizations: int) -> list[tuple[np.random.SeedSequence, np.random.SeedSequence]]:
    """(input, noise) seed pairs, one per realization."""
    children = np.random.SeedSequence(signal_seed).spawn(n_realizations)
    return [tuple(c.spawn(2)) for c in children]


# ------------------------------------------------------------------- ensemble


def _batch_signals(cfg: ExperimentConfig, plant: Plant, seeds) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    X = np.vstack([gen_input(cfg.n_iters, s_in) for s_in, _ in seeds])
    P = plant_output(plant, X)
    D = P.copy()
    if plant.noise_var > 0:
        noise = np.vstack([np.random.default_rng(s_n).standard_normal(cfg.n_iters) for _, s_n in seeds])
        D += math.sqrt(plant.noise_var) * noise
    return X, P, D


def _run_batch(cfg: ExperimentConfig, plant: Plant, seeds, initial_weights, adapt: bool):
    """Squared excess error summed over the batch, per iteration, and divergence flags."""
    R = len(seeds)
    M, K, N = cfg.M, cfg.K, cfg.n_iters
    X, P, D = _batch_signals(cfg, plant, seeds)
    Xp = np.concatenate([np.zeros((R, M - 1)), X], axis=1)
    mu = cfg.mu
    alive = np.ones(R, dtype=bool)
    diverged_at = np.zeros(R, dtype=int)
    acc = np.zeros(N)

    if cfg.algorithm == "sml-lms":
        W0 = initial_factors(K, M, cfg.init) if initial_weights is None else as_factor_array(initial_weights, M=M, K=K)
        W = np.broadcast_to(W0, (R, K, M)).copy()
    else:
        basis = monomial_basis(M, K)
        c0 = np.zeros(len(basis)) if initial_weights is None else np.asarray(initial_weights, dtype=float)
        C = np.broadcast_to(c0, (R, len(basis))).copy()

    for i in range(N):
        U = Xp[:, i : i + M][:, ::-1]
        if cfg.algorithm == "sml-lms":
            y_o = np.einsum("rkm,rm->rk", W, U)
            y_loo = np.empty_like(y_o)
            for s in range(K):
                others = [t for t in range(K) if t != s]
                if not others:
                    y_loo[:, s] = 1.0
                    continue
                prod = y_o[:, others[0]]
                for t in others[1:]:
                    prod = prod * y_o[:, t]
                y_loo[:, s] = prod
            y = y_loo[:, -1] * y_o[:, -1]
        else:
            phi = U[:, basis[:, 0]]
            for k in range(1, K):
                phi = phi * U[:, basis[:, k]]
            y = np.einsum("rc,rc->r", C, phi)

        excess = P[:, i] - y
        e = D[:, i] - y
        bad = alive & ~(np.isfinite(e) & np.isfinite(excess))
        if bad.any():
            diverged_at[bad] = i + 1
            alive &= ~bad
            if not cfg.exclude_diverged:
                r = int(np.nonzero(bad)[0][0])
                raise DivergenceError(i + 1, cfg.algorithm, realization=r)
        acc[i] = np.sum(np.where(alive, excess, 0.0) ** 2)
        if not adapt:
            continue
        mue = np.where(alive, mu * e, 0.0)
        if cfg.algorithm == "sml-lms":
            g = mue[:, None] * y_loo
            W += g[:, :, None] * U[:, None, :]
        else:
            C += mue[:, None] * phi
    if cfg.algorithm == "sml-lms":
        final_bad = alive & ~np.all(np.isfinite(W), axis=(1, 2))
    else:
        final_bad = alive & ~np.all(np.isfinite(C), axis=1)
    if final_bad.any():
        r = int(np.nonzero(final_bad)[0][0])
        if not cfg.exclude_diverged:
            raise DivergenceError(N, cfg.algorithm, realization=r)
        diverged_at[final_bad] = N
    return acc, diverged_at


def _run_chunk(args):
    cfg, plant, seeds, initial_weights, adapt = args
    # overflow is expected on divergence and is reported explicitly
    with np.errstate(over="ignore", invalid="ignore"):
        return _run_batch(cfg, plant, seeds, initial_weights, adapt)


def emse_ensemble(
    cfg: ExperimentConfig,
    plant: Plant | None = None,
    *,
    initial_weights=None,
    adapt: bool = True,
    serial: bool = True,
    n_jobs: int | None = None,
    chunk_size: int = 256,
) -> EmseCurve:
    """Monte-Carlo EMSE curve ``E[(plant_out(i) - y(i))²]`` with ``y(i)`` at the pre-update weights.

    The plant is shared by all realizations.  ``initial_weights`` and
    ``adapt=False`` exist as test hooks.  Diverging realizations raise
    :class:`DivergenceError` unless ``cfg.exclude_diverged`` is set, in which
    case they are dropped from the average from the iteration they fail on.

    Realizations are processed in chunks of ``chunk_size``; with
    ``serial=False`` the chunks run in worker processes.  The per-chunk sums
    are always reduced in chunk order.
    """
    plant = gen_plant(cfg) if plant is None else plant
    if plant.K != cfg.K or plant.M != cfg.M:
        raise ConfigError(f"plant shape {(plant.K, plant.M)} does not match config {(cfg.K, cfg.M)}")
    seeds = realization_seeds(cfg.signal_seed, cfg.n_realizations)
    chunks = [seeds[lo : lo + chunk_size] for lo in range(0, len(seeds), chunk_size)]
    jobs = [(cfg, plant, ch, initial_weights, adapt) for ch in chunks]
    if serial or len(chunks) == 1:
        results = [_run_chunk(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_run_chunk, jobs))

    total = np.zeros(cfg.n_iters)
    alive_count = np.full(cfg.n_iters, cfg.n_realizations, dtype=float)
    n_div = 0
    for acc, diverged_at in results:
        total += acc
        for it in diverged_at[diverged_at > 0]:
            alive_count[it - 1 :] -= 1
            n_div += 1
    if n_div:
        logger.warning("%d of %d realizations diverged and were excluded", n_div, cfg.n_realizations)
    with np.errstate(invalid="ignore", divide="ignore"):
        values = np.where(alive_count > 0, total / np.maximum(alive_count, 1), np.nan)
    return EmseCurve(values=values, n_realizations=cfg.n_realizations, n_diverged=n_div)


# --------------------------------------------------------------- config files

_INT_KEYS = {"schema_version", "M", "K", "n_iters", "n_realizations", "plant_seed", "signal_seed"}
_FLOAT_KEYS = {"noise_var", "target_emse_db"}
_REQUIRED = {"schema_version", "M", "K", "n_iters", "n_realizations", "noise_var", "mu", "algorithm"}
_KNOWN = _INT_KEYS | _FLOAT_KEYS | _REQUIRED | {"plant", "init", "exclude_diverged", "name"}


def parse_config_text(text: str, source: str = "<config>") -> list[ExperimentConfig]:
    """Parse a ``key = value`` config; one :class:`ExperimentConfig` per listed algorithm.

    ``algorithm`` and ``mu`` accept comma-separated lists (a single ``mu`` is
    shared).  ``plant`` is ``random`` or explicit factors as rows separated by
    ``;`` with whitespace-separated taps.  Unknown keys are errors.
    """
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in _KNOWN:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in raw:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        raw[key] = value
    missing = _REQUIRED - raw.keys()
    if missing:
        raise ConfigError(f"{source}: missing required keys {sorted(missing)}")

    def conv(key, fn):
        try:
            return fn(raw[key])
        except ValueError as exc:
            raise ConfigError(f"{source}: bad value for {key!r}: {raw[key]!r}") from exc

    if conv("schema_version", int) != SCHEMA_VERSION:
        raise ConfigError(f"{source}: unsupported schema_version {raw['schema_version']} (expected {SCHEMA_VERSION})")
    common = {k: conv(k, int) for k in _INT_KEYS - {"schema_version"} if k in raw}
    common.update({k: conv(k, float) for k in _FLOAT_KEYS if k in raw})
    if "init" in raw:
        common["init"] = raw["init"]
    if "name" in raw:
        common["name"] = raw["name"]
    if "exclude_diverged" in raw:
        flag = raw["exclude_diverged"].lower()
        if flag not in ("true", "false"):
            raise ConfigError(f"{source}: exclude_diverged must be true or false")
        common["exclude_diverged"] = flag == "true"
    plant = raw.get("plant", "random").strip()
    if plant != "random":
        try:
            rows = tuple(tuple(float(v) for v in row.split()) for row in plant.split(";") if row.strip())
        except ValueError as exc:
            raise ConfigError(f"{source}: cannot parse plant factors {plant!r}") from exc
        common["plant_factors"] = rows

    algorithms = [a.strip() for a in raw["algorithm"].split(",") if a.strip()]
    mus = conv("mu", lambda v: [float(m) for m in v.split(",")])
    if len(mus) == 1:
        mus = mus * len(algorithms)
    if len(mus) != len(algorithms):
        raise ConfigError(f"{source}: {len(algorithms)} algorithms but {len(mus)} step sizes")
    try:
        return [ExperimentConfig(algorithm=a, mu=m, **common) for a, m in zip(algorithms, mus)]
    except TypeError as exc:
        raise ConfigError(f"{source}: {exc}") from exc


def load_config(path) -> list[ExperimentConfig]:
    path = Path(path)
    return parse_config_text(path.read_text(), str(path))
