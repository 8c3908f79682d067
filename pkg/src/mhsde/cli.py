"""Command line front-end: ``mhsde simulate | scenario | converge``.

Exit codes: 0 success, 2 bad config or arguments, 3 rate bound violated,
4 solver blow-up, 5 I/O or resource failure.  Failures print one JSON
object on stderr with ``error``, ``exit_code`` and ``message`` keys.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import apply_overrides, load_config, model_from_config, resolve_config
from .convergence import run_convergence_study
from .engine import default_jobs, simulate
from .errors import ConfigError, DomainError, MhsdeError, RateBoundError, ResourceError, SolverBlowUpError
from .export import OutputError, audit_csv, path_csv, write_manifest, write_text
from .noise import tape_bytes
from .scenarios import SCENARIOS, ScenarioRun, run_scenario

_CATEGORIES = (
    (RateBoundError, "rate_bound"),
    (SolverBlowUpError, "solver_blowup"),
    (OutputError, "io"),
    (ResourceError, "resource"),
    (ConfigError, "config"),
    (DomainError, "domain"),
)


def _raw_config(path, overrides):
    import yaml

    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from None
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must be a mapping")
    return resolve_config(apply_overrides(raw, overrides))


def cmd_simulate(args, argv) -> int:
    cfg = _raw_config(args.config, args.set)
    if args.seed is not None:
        cfg["run"]["seed"] = args.seed
    model = model_from_config(cfg, resolved=True)
    run = cfg["run"]
    T, n, seed = run["horizon_time"], run["level_n"], run["seed"]
    n_ref = cfg["noise"]["n_ref"] or n
    tape = model.tape(seed, T, n_ref)
    path = simulate(model, T, n, tape)
    out = Path(args.out)
    files = [
        write_text(out / "path.csv", path_csv(path)),
        write_text(out / "audit.csv", audit_csv(path.audit)),
    ]
    if args.dump_tape:
        target = out / "tape.bin"
        try:
            target.write_bytes(tape_bytes(tape))
        except OSError as exc:
            raise OutputError(f"cannot write {target}: {exc.strerror or exc}") from None
        files.append(target)
    write_manifest(out, argv, cfg, seed, files)
    print(f"wrote {len(files) + 1} files to {out}")
    return 0


def cmd_scenario(args, argv) -> int:
    if args.name not in SCENARIOS:
        raise ConfigError(f"unknown scenario {args.name!r}; expected one of {', '.join(SCENARIOS)}")
    run = ScenarioRun(args.name, seed=args.seed, horizon=args.horizon, n=args.n, outdir=args.out, n_ref=args.n_ref)
    _, files = run_scenario(run, command=argv)
    print(f"wrote {len(files)} files to {args.out}")
    return 0


def _levels(text):
    try:
        levels = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"--levels must be a comma-separated list of integers, got {text!r}") from None
    return levels


def cmd_converge(args, argv) -> int:
    levels = _levels(args.levels)
    if len(levels) < 3:
        raise ConfigError(f"a convergence study needs at least 3 levels, got {len(levels)}")
    cfg = _raw_config(args.config, args.set)
    if args.horizon is not None:
        cfg["run"]["horizon_time"] = args.horizon
    model = model_from_config(cfg, resolved=True)
    T = cfg["run"]["horizon_time"]
    n_ref = cfg["noise"]["n_ref"] or args.n_fine
    jobs = args.jobs if args.jobs is not None else default_jobs()
    report = run_convergence_study(
        model, T, levels, args.n_fine, args.paths, args.seed, jobs=jobs, n_ref=n_ref, metric=args.metric
    )
    out = Path(args.out)
    summary = report.summary()
    files = [
        write_text(out / "report.csv", report.to_csv()),
        write_text(out / "summary.txt", summary),
    ]
    study = {"levels": levels, "n_fine": args.n_fine, "paths": args.paths, "n_ref": n_ref, "metric": args.metric}
    write_manifest(out, argv, {"model": cfg, "study": study}, args.seed, files)
    sys.stdout.write(summary)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mhsde", description="Simulate hybrid SDEs with path-dependent switching.")
    p.add_argument("-v", "--verbose", action="store_true", help="log warnings and progress")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="simulate one path from a config file")
    s.add_argument("config")
    s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a dotted config key")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", default="run")
    s.add_argument("--dump-tape", action="store_true", help="also write the noise tape as tape.bin")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("scenario", help="run one of the shipped example models")
    s.add_argument("name", help=", ".join(SCENARIOS))
    s.add_argument("--seed", type=int, default=1)
    s.add_argument("--horizon", type=float)
    s.add_argument("--n", type=int, help="discretisation level (steps per time unit)")
    s.add_argument("--n-ref", type=int, help="fine Brownian grid (defaults to --n)")
    s.add_argument("--out", default="run")
    s.set_defaults(func=cmd_scenario)

    s = sub.add_parser("converge", help="coupled convergence study against a fine reference level")
    s.add_argument("config")
    s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    s.add_argument("--levels", required=True, help="comma-separated, strictly increasing")
    s.add_argument("--n-fine", type=int, required=True)
    s.add_argument("--paths", type=int, default=200)
    s.add_argument("--seed", type=int, default=1)
    s.add_argument("--horizon", type=float)
    s.add_argument("--metric", choices=("path", "nodes"), default="path",
                   help="sup error over all times (path) or over coarse grid nodes and event times (nodes)")
    s.add_argument("--jobs", type=int, help="worker processes (default: all cores)")
    s.add_argument("--out", default="run")
    s.set_defaults(func=cmd_converge)
    return p


def _category(exc):
    for cls, name in _CATEGORIES:
        if isinstance(exc, cls):
            return name
    return "error"


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(message)s")
    try:
        return args.func(args, ["mhsde", *argv])
    except MhsdeError as exc:
        payload = {"error": _category(exc), "exit_code": exc.exit_code, "message": str(exc)}
        if isinstance(exc, RateBoundError):
            payload.update(time=exc.time, rates={str(k): v for k, v in exc.rates.items()}, lam=exc.lam)
        if isinstance(exc, SolverBlowUpError):
            payload.update(last_finite_time=exc.last_finite_time, mode=exc.mode)
        print(json.dumps(payload), file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(json.dumps({"error": "io", "exit_code": 5, "message": str(exc)}), file=sys.stderr)
        return 5


if __name__ == "__main__":
    sys.exit(main())
