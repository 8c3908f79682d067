"""The four shipped example models.

Each scenario is a config tree (see :mod:`mhsde.config`) whose
``provenance`` map flags every parameter either ``published`` (taken from the
published example) or ``default`` (chosen here because the example leaves
it open).  :data:`PUBLISHED_CONSTANTS` pins the published-flagged values;
:func:`check_published_constants` refuses a config that drifts from them.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import model_from_config, resolve_config
from .engine import ModelSpec, simulate
from .errors import ConfigError
from .export import PLOT_SCRIPT, audit_csv, csv_text, path_csv, write_manifest, write_text
from .functionals import FunctionalTerm

SCENARIOS = ("insurance", "reliability", "levy_financial", "reinforcement")

# Default level and indicator sampling step for scenario runs.
DEFAULT_LEVEL = 1024
INDICATOR_STEP = 0.01

_OCC = {"kind": "occupation", "barrier": 1.0, "window_time": 1.0}
_DD = {"kind": "drawdown_indicator", "threshold": 0.25}


def _scalar_mode(micro, slope, intercept, sig_slope, sig_intercept, jump=None):
    out = {
        "micro": micro,
        "drift": {"slope": [[slope]], "intercept": [intercept]},
        "diffusion": {"slope": [[sig_slope]], "intercept": [[sig_intercept]]},
    }
    if jump is not None:
        out["jump"] = {"slope": [[jump[0]]], "intercept": [[jump[1]]]}
    return out


def _insurance():
    # lambda: the rates are maxima of (a + b Occ + g 1{DD}) v 0 over Occ in [0, 1]
    # and the indicator in {0, 1}: 0.2 + 3.0 = 3.2 out of mode 0 and
    # 0.3 + 2.0 = 2.3 out of mode 1, so 4.0 dominates both with headroom.
    return {
        "model": {
            "lambda_per_time": 4.0,
            "initial": {"mode": 0, "position": [0.9]},
            "modes": {
                0: _scalar_mode("euler", 0.08, 0.02, 0.0, 0.08),
                1: _scalar_mode("euler", -0.03, 0.01, 0.0, 0.20),
            },
            "intensity": {"rows": [
                {"from": 0, "link": "direct", "targets": [
                    {"to": 1, "base_per_time": 0.2,
                     "terms": [dict(_OCC, coef=-0.5), dict(_DD, coef=3.0)], "truncate": True},
                ]},
                {"from": 1, "link": "direct", "targets": [
                    {"to": 0, "base_per_time": 0.3,
                     "terms": [dict(_OCC, coef=2.0), dict(_DD, coef=-2.0)], "truncate": True},
                ]},
            ]},
        },
        "run": {"horizon_time": 10.0, "level_n": DEFAULT_LEVEL, "seed": 1},
    }


_INSURANCE_PUBLISHED = {
    "model.initial.position.0": 0.9,
    "model.modes.0.drift.slope.0.0": 0.08,
    "model.modes.0.drift.intercept.0": 0.02,
    "model.modes.0.diffusion.intercept.0.0": 0.08,
    "model.modes.1.drift.slope.0.0": -0.03,
    "model.modes.1.drift.intercept.0": 0.01,
    "model.modes.1.diffusion.intercept.0.0": 0.20,
    "model.intensity.rows.0.targets.0.base_per_time": 0.2,
    "model.intensity.rows.0.targets.0.terms.0.coef": -0.5,
    "model.intensity.rows.0.targets.0.terms.1.coef": 3.0,
    "model.intensity.rows.1.targets.0.base_per_time": 0.3,
    "model.intensity.rows.1.targets.0.terms.0.coef": 2.0,
    "model.intensity.rows.1.targets.0.terms.1.coef": -2.0,
    "model.intensity.rows.0.targets.0.terms.0.barrier": 1.0,
    "model.intensity.rows.0.targets.0.terms.0.window_time": 1.0,
    "model.intensity.rows.0.targets.0.terms.1.threshold": 0.25,
    "model.intensity.rows.1.targets.0.terms.0.barrier": 1.0,
    "model.intensity.rows.1.targets.0.terms.0.window_time": 1.0,
    "model.intensity.rows.1.targets.0.terms.1.threshold": 0.25,
    "model.intensity.rows.0.targets.0.truncate": True,
    "model.intensity.rows.1.targets.0.truncate": True,
    "run.horizon_time": 10.0,
}


def _reliability():
    # Component performance degrades linearly (faster for the standard
    # component); replacement does not reset it.  Rates ignore X entirely.
    return {
        "model": {
            "lambda_per_time": 2.0,
            "initial": {"mode": 0, "position": [1.0]},
            "modes": {
                0: _scalar_mode("euler", 0.0, -0.02, 0.0, 0.0),
                1: _scalar_mode("euler", 0.0, -0.05, 0.0, 0.0),
            },
            "intensity": {"rows": [
                {"from": 0, "link": "direct", "targets": [
                    {"to": 1, "feature": {"kind": "age"}, "cap_per_time": 2.0, "truncate": True, "pieces": [
                        {"lo": 0.0, "hi": 0.5, "shape": "exp", "a": 1.5, "b": -3.0},
                        {"lo": 0.5, "hi": 5.0, "shape": "constant", "a": 0.2},
                        {"lo": 5.0, "hi": None, "shape": "linear", "a": 0.2, "b": 0.3, "shift": 5.0},
                    ]},
                ]},
                {"from": 1, "link": "direct", "targets": [
                    {"to": 0, "base_per_time": 0.3, "terms": [{"kind": "age", "coef": 0.25}],
                     "cap_per_time": 2.0, "truncate": True},
                ]},
            ]},
        },
        "run": {"horizon_time": 15.0, "level_n": DEFAULT_LEVEL, "seed": 1},
    }


_RELIABILITY_PUBLISHED = {
    "model.lambda_per_time": 2.0,
    "model.intensity.rows.0.targets.0.cap_per_time": 2.0,
    "model.intensity.rows.0.targets.0.pieces.0.hi": 0.5,
    "model.intensity.rows.0.targets.0.pieces.0.a": 1.5,
    "model.intensity.rows.0.targets.0.pieces.0.b": -3.0,
    "model.intensity.rows.0.targets.0.pieces.1.hi": 5.0,
    "model.intensity.rows.0.targets.0.pieces.1.a": 0.2,
    "model.intensity.rows.0.targets.0.pieces.2.a": 0.2,
    "model.intensity.rows.0.targets.0.pieces.2.b": 0.3,
    "model.intensity.rows.0.targets.0.pieces.2.shift": 5.0,
    "model.intensity.rows.1.targets.0.base_per_time": 0.3,
    "model.intensity.rows.1.targets.0.terms.0.coef": 0.25,
    "model.intensity.rows.1.targets.0.cap_per_time": 2.0,
    "run.horizon_time": 15.0,
}


_CP_DEFAULT = {"rate_per_time": 0.5, "p_up": 0.4, "eta_up": 0.18, "eta_down": 0.22}


def _levy_financial():
    down = {"kind": "jump_count", "eps": 0.15, "window_time": 1.0, "sign": "-", "relative": True}
    up = {"kind": "jump_count", "eps": 0.15, "window_time": 1.0, "sign": "+", "relative": True}
    # lambda: both rates are capped at 2.0
    return {
        "model": {
            "lambda_per_time": 2.0,
            "initial": {"mode": 0, "position": [10.0]},
            "modes": {
                0: _scalar_mode("jump_euler", 0.15, 0.0, 0.0, 1.0, jump=(1.0, 0.0)),
                1: _scalar_mode("jump_euler", -0.10, 0.0, 0.0, 1.0, jump=(1.0, 0.0)),
            },
            "intensity": {"rows": [
                {"from": 0, "link": "direct", "targets": [
                    {"to": 1, "base_per_time": 0.1, "terms": [dict(down, coef=0.8)], "cap_per_time": 2.0},
                ]},
                {"from": 1, "link": "direct", "targets": [
                    {"to": 0, "base_per_time": 0.1, "terms": [dict(up, coef=0.6)], "cap_per_time": 2.0},
                ]},
            ]},
        },
        "noise": {"compound_poisson": [dict(_CP_DEFAULT)]},
        "run": {"horizon_time": 10.0, "level_n": DEFAULT_LEVEL, "seed": 1},
    }


_LEVY_PUBLISHED = {
    "model.modes.0.drift.slope.0.0": 0.15,
    "model.modes.1.drift.slope.0.0": -0.10,
    "model.modes.0.diffusion.intercept.0.0": 1.0,
    "model.modes.1.diffusion.intercept.0.0": 1.0,
    "model.modes.0.jump.slope.0.0": 1.0,
    "model.modes.1.jump.slope.0.0": 1.0,
    "model.intensity.rows.0.targets.0.base_per_time": 0.1,
    "model.intensity.rows.0.targets.0.terms.0.coef": 0.8,
    "model.intensity.rows.0.targets.0.terms.0.eps": 0.15,
    "model.intensity.rows.0.targets.0.terms.0.window_time": 1.0,
    "model.intensity.rows.0.targets.0.cap_per_time": 2.0,
    "model.intensity.rows.1.targets.0.base_per_time": 0.1,
    "model.intensity.rows.1.targets.0.terms.0.coef": 0.6,
    "model.intensity.rows.1.targets.0.terms.0.eps": 0.15,
    "model.intensity.rows.1.targets.0.terms.0.window_time": 1.0,
    "model.intensity.rows.1.targets.0.cap_per_time": 2.0,
    "run.horizon_time": 10.0,
}


def _reinforcement():
    return {
        "model": {
            "lambda_per_time": 2.0,
            "brownian_dim": 0,
            "initial": {"mode": 0, "position": [0.0]},
            "modes": {0: {"micro": "constant"}, 1: {"micro": "constant"}},
            "intensity": {"rows": [
                {"from": 0, "link": "softmax", "targets": [
                    {"to": 1, "base": 0.0, "terms": [
                        {"kind": "cnt", "from_mode": 0, "to_mode": 1, "coef": 0.25},
                        {"kind": "loc", "mode": 0, "coef": -0.005},
                    ]},
                ]},
                {"from": 1, "link": "softmax", "targets": [
                    {"to": 0, "base": 0.2, "terms": [
                        {"kind": "cnt", "from_mode": 1, "to_mode": 0, "coef": 0.20},
                        {"kind": "loc", "mode": 1, "coef": -0.008},
                    ]},
                ]},
            ]},
        },
        "run": {"horizon_time": 20.0, "level_n": 1, "seed": 1},
    }


_REINFORCEMENT_PUBLISHED = {
    "model.lambda_per_time": 2.0,
    "model.intensity.rows.0.link": "softmax",
    "model.intensity.rows.0.targets.0.base": 0.0,
    "model.intensity.rows.0.targets.0.terms.0.coef": 0.25,
    "model.intensity.rows.0.targets.0.terms.1.coef": -0.005,
    "model.intensity.rows.1.link": "softmax",
    "model.intensity.rows.1.targets.0.base": 0.2,
    "model.intensity.rows.1.targets.0.terms.0.coef": 0.20,
    "model.intensity.rows.1.targets.0.terms.1.coef": -0.008,
    "run.horizon_time": 20.0,
}

_BUILDERS = {
    "insurance": _insurance,
    "reliability": _reliability,
    "levy_financial": _levy_financial,
    "reinforcement": _reinforcement,
}

#: published values per scenario, keyed by dotted config path
PUBLISHED_CONSTANTS = {
    "insurance": _INSURANCE_PUBLISHED,
    "reliability": _RELIABILITY_PUBLISHED,
    "levy_financial": _LEVY_PUBLISHED,
    "reinforcement": _REINFORCEMENT_PUBLISHED,
}


def get_dotted(tree, key: str):
    node = tree
    for part in key.split("."):
        if isinstance(node, list):
            node = node[int(part)]
        elif part in node:
            node = node[part]
        else:
            node = node[int(part)]
    return node


def _leaf_keys(tree, prefix=""):
    if isinstance(tree, dict):
        for k, v in tree.items():
            yield from _leaf_keys(v, f"{prefix}{k}.")
    elif isinstance(tree, list):
        for k, v in enumerate(tree):
            yield from _leaf_keys(v, f"{prefix}{k}.")
    else:
        yield prefix[:-1]


def scenario_config(name: str, horizon=None, n=None, seed=None, n_ref=None) -> dict:
    """Resolved config for scenario ``name`` with optional run overrides."""
    if name not in _BUILDERS:
        raise ConfigError(f"unknown scenario {name!r}; expected one of {SCENARIOS}")
    raw = _BUILDERS[name]()
    published = PUBLISHED_CONSTANTS[name]
    run = raw["run"]
    if horizon is not None:
        run["horizon_time"] = horizon
    if n is not None:
        run["level_n"] = n
    if seed is not None:
        run["seed"] = seed
    if n_ref is not None:
        raw.setdefault("noise", {})["n_ref"] = n_ref
    cfg = resolve_config(raw)
    prov = {}
    for key in _leaf_keys({"model": cfg["model"], "noise": cfg["noise"]}):
        prov[key] = "published" if key in published else "default"
    if "run.horizon_time" in published and horizon is None:
        prov["run.horizon_time"] = "published"
    cfg["provenance"] = dict(sorted(prov.items()))
    check_published_constants(cfg, name)
    return cfg


def check_published_constants(cfg: dict, name: str) -> None:
    """Raise :class:`ConfigError` if a published-flagged value differs from the pinned table."""
    table = PUBLISHED_CONSTANTS[name]
    for key, flag in cfg.get("provenance", {}).items():
        if flag != "published":
            continue
        if key not in table:
            raise ConfigError(f"{name}: {key} is flagged 'published' but has no pinned value")
        value = get_dotted(cfg, key)
        if value != table[key]:
            raise ConfigError(f"{name}: published value {key}={table[key]!r} changed to {value!r}")


def build_insurance() -> ModelSpec:
    return model_from_config(scenario_config("insurance"), resolved=True)


def build_reliability() -> ModelSpec:
    return model_from_config(scenario_config("reliability"), resolved=True)


def build_levy_financial() -> ModelSpec:
    return model_from_config(scenario_config("levy_financial"), resolved=True)


def build_reinforcement() -> ModelSpec:
    return model_from_config(scenario_config("reinforcement"), resolved=True)


def build_scenario(name: str) -> ModelSpec:
    return model_from_config(scenario_config(name), resolved=True)


# -- indicators -----------------------------------------------------------------

#: functional columns of each scenario's indicators.csv (rate columns follow)
INDICATORS = {
    "insurance": (
        ("occupation", FunctionalTerm("occupation", {"barrier": 1.0, "window_time": 1.0})),
        ("drawdown", FunctionalTerm("drawdown", {})),
    ),
    "reliability": (("age", FunctionalTerm("age", {})),),
    "levy_financial": (
        ("n_plus", FunctionalTerm("jump_count", {"eps": 0.15, "window_time": 1.0, "sign": "+", "relative": True})),
        ("n_minus", FunctionalTerm("jump_count", {"eps": 0.15, "window_time": 1.0, "sign": "-", "relative": True})),
    ),
    "reinforcement": (
        ("loc_0", FunctionalTerm("loc", {"mode": 0})),
        ("loc_1", FunctionalTerm("loc", {"mode": 1})),
        ("cnt_01", FunctionalTerm("cnt", {"from_mode": 0, "to_mode": 1})),
        ("cnt_10", FunctionalTerm("cnt", {"from_mode": 1, "to_mode": 0})),
    ),
}


def indicator_times(path, audit, step: float = INDICATOR_STEP) -> np.ndarray:
    """Uniform times ``k * step`` in ``(0, horizon]`` merged with the atom times."""
    k = int(math.floor(path.horizon / step + 1e-9))
    grid = step * np.arange(1, k + 1)
    atoms = np.array([r.time for r in audit], dtype=float)
    return np.union1d(grid[grid <= path.horizon], atoms)


def indicator_columns(name: str, model: ModelSpec):
    rate_cols = [f"q_{i}{j}" for i, row in sorted(model.intensity.rows.items()) for j in sorted(_targets(row))]
    return ("time", "mode", *(c for c, _ in INDICATORS[name]), *rate_cols)


def _targets(row):
    return row.targets if hasattr(row, "targets") else row.logits


def indicator_rows(name: str, model: ModelSpec, path, times):
    """Predictable indicator values (left limits) and every row's rates at ``times``."""
    terms = INDICATORS[name]
    lam = model.intensity.lam
    for t in np.asarray(times, dtype=float).tolist():
        row = [t, path.mode_left_at(t)]
        row += [term.evaluate(path, t) for _, term in terms]
        for i, spec_row in sorted(model.intensity.rows.items()):
            values = {}
            for term in spec_row.functionals():
                values.setdefault(term.key(), term.evaluate(path, t))
            rates = spec_row.rates(values, lam)
            row += [rates[j] for j in sorted(_targets(spec_row))]
        yield tuple(row)


def indicators_csv(name: str, model: ModelSpec, path, times) -> str:
    return csv_text(indicator_columns(name, model), indicator_rows(name, model, path, times))


# -- runs -----------------------------------------------------------------------


@dataclass
class ScenarioRun:
    name: str
    seed: int = 1
    horizon: float | None = None
    n: int | None = None
    outdir: str | Path = "."
    n_ref: int | None = None
    indicator_step: float = INDICATOR_STEP


def run_scenario(run: ScenarioRun, command=("scenario",)):
    """Simulate one path of a scenario and write its CSVs, plot script and manifest.

    Returns ``(path, files)``.
    """
    cfg = scenario_config(run.name, run.horizon, run.n, run.seed, run.n_ref)
    model = model_from_config(cfg, resolved=True)
    settings = cfg["run"]
    T, n = settings["horizon_time"], settings["level_n"]
    n_ref = cfg["noise"]["n_ref"] or n
    tape = model.tape(settings["seed"], T, n_ref)
    path = simulate(model, T, n, tape)
    out = Path(run.outdir)
    times = indicator_times(path, path.audit, run.indicator_step)
    files = [
        write_text(out / "path.csv", path_csv(path)),
        write_text(out / "audit.csv", audit_csv(path.audit)),
        write_text(out / "indicators.csv", indicators_csv(run.name, model, path, times)),
        write_text(out / "plot.py", PLOT_SCRIPT),
    ]
    manifest = write_manifest(out, command, copy.deepcopy(cfg), settings["seed"], files)
    return path, files + [manifest]
