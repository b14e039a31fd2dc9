"""Command line front end: ``smlfilter run|compare|verify``.

Exit codes: 0 success, 2 configuration/usage error, 3 divergence,
4 verification failure, 5 config file missing or unreadable.
"""

from __future__ import annotations

import argparse
import datetime as dt
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

from .adaptive import DivergenceError
from .simkit import ConfigError, EmseCurve, ExperimentConfig, emse_ensemble, gen_plant, load_config
from .verify import MUTATIONS, run_suite

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_VERIFY = 4
EXIT_IO = 5

logger = logging.getLogger("smlfilter")


def _now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


def _read_configs(path: str, seed_override: int | None) -> tuple[list[ExperimentConfig], str]:
    p = Path(path)
    try:
        raw = p.read_bytes()
    except OSError as exc:
        raise FileNotFoundError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    configs = load_config(p)
    if seed_override is not None:
        configs = [c.replace(signal_seed=seed_override) for c in configs]
    return configs, hashlib.sha256(raw).hexdigest()


def _run_one(cfg: ExperimentConfig, out: Path, serial: bool) -> dict:
    plant = gen_plant(cfg)
    t0 = time.perf_counter()
    curve = emse_ensemble(cfg, plant, serial=serial)
    wall = time.perf_counter() - t0
    csv_name = f"{cfg.name}_{cfg.algorithm}.csv"
    curve.to_csv(out / csv_name)
    return {
        "algorithm": cfg.algorithm,
        "mu": cfg.mu,
        "csv": csv_name,
        "steady_state_emse_db": curve.steady_state_db(),
        "target_emse_db": cfg.target_emse_db,
        "iterations_to_target": curve.iterations_to(cfg.target_emse_db),
        "mults_per_iter": cfg.mults_per_iter,
        "n_realizations": cfg.n_realizations,
        "n_diverged": curve.n_diverged,
        "wall_time_s": round(wall, 3),
        "_curve": curve,
    }


def _write_manifest(out: Path, command: str, configs, digest: str, runs: list[dict], started: str) -> Path:
    base = configs[0].to_dict()
    for key in ("algorithm", "mu"):
        base.pop(key)
    manifest = {
        "command": command,
        "config": base,
        "config_sha256": digest,
        "seeds": {"plant_seed": configs[0].plant_seed, "signal_seed": configs[0].signal_seed},
        "runs": [{k: v for k, v in r.items() if not k.startswith("_")} for r in runs],
        "divergence_count": sum(r["n_diverged"] for r in runs),
        "started_at": started,
        "finished_at": _now(),
    }
    path = out / f"{configs[0].name}_manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def _experiment(args, command: str) -> int:
    started = _now()
    try:
        configs, digest = _read_configs(args.config, args.seed_override)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if command == "run" and len(configs) != 1:
        print("config error: 'run' takes exactly one algorithm; use 'compare' for several", file=sys.stderr)
        return EXIT_CONFIG
    if command == "compare" and len(configs) < 2:
        print("usage error: 'compare' needs a config naming at least two algorithms", file=sys.stderr)
        return EXIT_CONFIG

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    runs = []
    try:
        for cfg in configs:
            logger.info("running %s (mu=%g, %d x %d)", cfg.algorithm, cfg.mu, cfg.n_realizations, cfg.n_iters)
            runs.append(_run_one(cfg, out, args.serial))
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    manifest = _write_manifest(out, command, configs, digest, runs, started)

    print(f"{'algorithm':<14}{'mu':>10}{'mult/iter':>11}{'steady dB':>11}{'iters to target':>17}")
    for r in runs:
        hit = "-" if r["iterations_to_target"] is None else str(r["iterations_to_target"])
        print(
            f"{r['algorithm']:<14}{r['mu']:>10.4g}{r['mults_per_iter']:>11d}"
            f"{r['steady_state_emse_db']:>11.2f}{hit:>17}"
        )
    print(f"manifest: {manifest}")
    return EXIT_OK


def cmd_run(args) -> int:
    return _experiment(args, "run")


def cmd_compare(args) -> int:
    return _experiment(args, "compare")


def cmd_verify(args) -> int:
    results = run_suite(args.scale, frozenset(args.mutate or ()))
    width = max(len(r.name) for r in results)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status}  {r.name:<{width}}  {r.seconds:7.2f}s  {r.detail}")
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_VERIFY


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="smlfilter", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, func, help_ in (
        ("run", cmd_run, "run one Monte-Carlo EMSE experiment"),
        ("compare", cmd_compare, "run several algorithms on the same plant and signals"),
    ):
        p = sub.add_parser(name, help=help_)
        p.add_argument("config", help="key = value experiment config file")
        p.add_argument("--out", default="results", help="output directory (default: results)")
        p.add_argument("--serial", action="store_true", help="process realizations in-process")
        p.add_argument("--seed-override", type=int, default=None, help="replace signal_seed from the config")
        p.set_defaults(func=func)

    p = sub.add_parser("verify", help="run the built-in property checks")
    p.add_argument("--scale", choices=("small", "full"), default="small")
    p.add_argument("--mutate", action="append", choices=MUTATIONS, help="inject a known fault (suite self-test)")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
