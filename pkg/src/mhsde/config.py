"""Run configuration files.

A config is a YAML key tree.  Units are spelled out in key names
(``lambda_per_time``, ``base_per_time``, ``horizon_time``).  Example::

    schema_version: 1
    model:
      lambda_per_time: 2.0
      dimension: 1
      brownian_dim: 1
      initial: {mode: 0, position: [1.0]}
      modes:
        0:
          micro: euler
          drift: {slope: [[0.05]], intercept: [0.0]}
          diffusion: {slope: [[0.2]], intercept: [[0.0]]}
        1:
          micro: euler
          drift: {slope: [[-0.03]], intercept: [0.01]}
          diffusion: {slope: [[0.0]], intercept: [[0.2]]}
      intensity:
        rows:
          - from: 0
            link: direct
            targets:
              - to: 1
                base_per_time: 0.2
                terms:
                  - {kind: occupation, barrier: 1.0, window_time: 1.0, coef: -0.5}
                cap_per_time: null
                truncate: true
    noise:
      n_ref: null            # fine Brownian grid; defaults to the run level
      compound_poisson: []   # [{rate_per_time, p_up, eta_up, eta_down}]
    run: {horizon_time: 1.0, level_n: 256, seed: 1}
    provenance: {}           # dotted key -> "published" | "default"

Scalars are accepted wherever a 1x1 matrix or length-1 vector is expected.
:func:`resolve_config` normalises a raw tree into the canonical form that
:func:`dump_config` writes, so parse -> serialize -> parse is the identity.
"""

from __future__ import annotations

import copy
from pathlib import Path

import numpy as np
import yaml

from .engine import ModelSpec
from .errors import ConfigError
from .functionals import FunctionalTerm
from .kernel import AffineExpr, DirectRow, IntensitySpec, Piece, PiecewiseExpr, SoftmaxRow
from .micro import MICRO_ALGORITHMS, AffineDynamics
from .noise import CompoundPoissonSpec
from .paths import HybridState

SCHEMA_VERSION = 1
PROVENANCE_FLAGS = ("published", "default")


def _require(tree, key, where):
    if not isinstance(tree, dict) or key not in tree:
        raise ConfigError(f"missing key {where}.{key}")
    return tree[key]


def _float(value, where):
    if isinstance(value, bool):
        raise ConfigError(f"{where} must be a number, got {value!r}")
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{where} must be a number, got {value!r}") from None


def _int(value, where):
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        if isinstance(value, float) and value.is_integer():
            return int(value)
        raise ConfigError(f"{where} must be an integer, got {value!r}")
    return int(value)


def _matrix(value, shape, where):
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"{where} is not numeric: {value!r}") from None
    if arr.size == 1 and np.prod(shape) == 1:
        arr = arr.reshape(shape)
    if arr.shape != tuple(shape):
        raise ConfigError(f"{where} has shape {arr.shape}, expected {tuple(shape)}")
    return arr.tolist()


def _check_keys(tree, allowed, where):
    if not isinstance(tree, dict):
        raise ConfigError(f"{where} must be a mapping")
    extra = set(tree) - set(allowed)
    if extra:
        raise ConfigError(f"unknown keys in {where}: {sorted(map(str, extra))}")


# -- resolution ---------------------------------------------------------------


def _resolve_term(raw, where, with_coef=True):
    raw = dict(raw)
    coef = _float(raw.pop("coef"), f"{where}.coef") if with_coef and "coef" in raw else None
    if with_coef and coef is None:
        raise ConfigError(f"missing key {where}.coef")
    kind = raw.pop("kind", None)
    if kind is None:
        raise ConfigError(f"missing key {where}.kind")
    term = FunctionalTerm(kind, raw)
    out = term.to_config()
    if with_coef:
        out["coef"] = coef
    return out


def _resolve_affine(raw, where, base_key):
    _check_keys(raw, {"to", base_key, "terms", "truncate", "cap_per_time"}, where)
    cap = raw.get("cap_per_time")
    return {
        "to": _int(_require(raw, "to", where), f"{where}.to"),
        base_key: _float(raw.get(base_key, 0.0), f"{where}.{base_key}"),
        "terms": [_resolve_term(t, f"{where}.terms[{k}]") for k, t in enumerate(raw.get("terms") or [])],
        "truncate": bool(raw.get("truncate", True)),
        "cap_per_time": None if cap is None else _float(cap, f"{where}.cap_per_time"),
    }


def _resolve_piecewise(raw, where):
    _check_keys(raw, {"to", "feature", "pieces", "truncate", "cap_per_time"}, where)
    cap = raw.get("cap_per_time")
    pieces = []
    for k, p in enumerate(_require(raw, "pieces", where)):
        pw = f"{where}.pieces[{k}]"
        _check_keys(p, {"lo", "hi", "shape", "a", "b", "shift"}, pw)
        hi = p.get("hi")
        pieces.append({
            "lo": _float(_require(p, "lo", pw), f"{pw}.lo"),
            "hi": None if hi is None else _float(hi, f"{pw}.hi"),
            "shape": str(_require(p, "shape", pw)),
            "a": _float(_require(p, "a", pw), f"{pw}.a"),
            "b": _float(p.get("b", 0.0), f"{pw}.b"),
            "shift": _float(p.get("shift", 0.0), f"{pw}.shift"),
        })
    return {
        "to": _int(_require(raw, "to", where), f"{where}.to"),
        "feature": _resolve_term(_require(raw, "feature", where), f"{where}.feature", with_coef=False),
        "pieces": pieces,
        "truncate": bool(raw.get("truncate", True)),
        "cap_per_time": None if cap is None else _float(cap, f"{where}.cap_per_time"),
    }


def _resolve_row(raw, where):
    _check_keys(raw, {"from", "link", "targets"}, where)
    link = raw.get("link", "direct")
    if link not in ("direct", "softmax"):
        raise ConfigError(f"{where}.link must be 'direct' or 'softmax', got {link!r}")
    targets = []
    for k, t in enumerate(_require(raw, "targets", where)):
        tw = f"{where}.targets[{k}]"
        if link == "softmax":
            targets.append(_resolve_affine(t, tw, "base"))
        elif "pieces" in t:
            targets.append(_resolve_piecewise(t, tw))
        else:
            targets.append(_resolve_affine(t, tw, "base_per_time"))
    seen = [t["to"] for t in targets]
    if len(set(seen)) != len(seen):
        raise ConfigError(f"{where} lists a target mode twice")
    return {"from": _int(_require(raw, "from", where), f"{where}.from"), "link": link, "targets": targets}


def _resolve_mode(raw, p, d, n_cp, where):
    raw = raw or {}
    _check_keys(raw, {"micro", "drift", "diffusion", "jump"}, where)
    micro = raw.get("micro", "euler")
    if micro not in MICRO_ALGORITHMS:
        raise ConfigError(f"{where}.micro: unknown micro-algorithm {micro!r}; expected one of {sorted(MICRO_ALGORITHMS)}")
    drift = raw.get("drift") or {}
    diff = raw.get("diffusion") or {}
    _check_keys(drift, {"slope", "intercept"}, f"{where}.drift")
    _check_keys(diff, {"slope", "intercept"}, f"{where}.diffusion")
    out = {
        "micro": micro,
        "drift": {
            "slope": _matrix(drift.get("slope", np.zeros((p, p))), (p, p), f"{where}.drift.slope"),
            "intercept": _matrix(drift.get("intercept", np.zeros(p)), (p,), f"{where}.drift.intercept"),
        },
        "diffusion": {
            "slope": _matrix(diff.get("slope", np.zeros((p, d))), (p, d), f"{where}.diffusion.slope"),
            "intercept": _matrix(diff.get("intercept", np.zeros((p, d))), (p, d), f"{where}.diffusion.intercept"),
        },
        "jump": None,
    }
    jump = raw.get("jump")
    if jump is not None:
        _check_keys(jump, {"slope", "intercept"}, f"{where}.jump")
        if n_cp == 0:
            raise ConfigError(f"{where}.jump given but noise.compound_poisson is empty")
        out["jump"] = {
            "slope": _matrix(jump.get("slope", np.zeros((p, n_cp))), (p, n_cp), f"{where}.jump.slope"),
            "intercept": _matrix(jump.get("intercept", np.zeros((p, n_cp))), (p, n_cp), f"{where}.jump.intercept"),
        }
    elif micro == "jump_euler":
        raise ConfigError(f"{where}: micro 'jump_euler' needs a jump coefficient")
    return out


def resolve_config(raw: dict) -> dict:
    """Validate ``raw`` and return the canonical config tree with all defaults filled in."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    _check_keys(raw, {"schema_version", "model", "noise", "run", "provenance"}, "config")
    version = raw.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version!r}; this build reads {SCHEMA_VERSION}")

    noise = raw.get("noise") or {}
    _check_keys(noise, {"n_ref", "compound_poisson"}, "noise")
    cps = []
    for k, c in enumerate(noise.get("compound_poisson") or []):
        w = f"noise.compound_poisson[{k}]"
        _check_keys(c, {"rate_per_time", "p_up", "eta_up", "eta_down"}, w)
        cps.append({key: _float(_require(c, key, w), f"{w}.{key}") for key in ("rate_per_time", "p_up", "eta_up", "eta_down")})
        CompoundPoissonSpec(cps[-1]["rate_per_time"], cps[-1]["p_up"], cps[-1]["eta_up"], cps[-1]["eta_down"])
    n_ref = noise.get("n_ref")

    model = _require(raw, "model", "config")
    _check_keys(
        model,
        {"lambda_per_time", "dimension", "brownian_dim", "initial", "modes", "intensity", "constant_prehistory"},
        "model",
    )
    lam = _float(_require(model, "lambda_per_time", "model"), "model.lambda_per_time")
    if not lam > 0:
        raise ConfigError(f"model.lambda_per_time must be positive, got {lam}")
    p = _int(model.get("dimension", 1), "model.dimension")
    d = _int(model.get("brownian_dim", 1), "model.brownian_dim")
    if p < 1 or d < 0:
        raise ConfigError("model.dimension must be >= 1 and model.brownian_dim >= 0")
    initial = _require(model, "initial", "model")
    _check_keys(initial, {"mode", "position"}, "model.initial")
    init = {
        "mode": _int(_require(initial, "mode", "model.initial"), "model.initial.mode"),
        "position": _matrix(_require(initial, "position", "model.initial"), (p,), "model.initial.position"),
    }
    modes_raw = _require(model, "modes", "model")
    if not isinstance(modes_raw, dict) or not modes_raw:
        raise ConfigError("model.modes must be a non-empty mapping")
    modes = {}
    for key in sorted(modes_raw, key=lambda k: _int(k, "model.modes key")):
        i = _int(key, "model.modes key")
        modes[i] = _resolve_mode(modes_raw[key], p, d, len(cps), f"model.modes.{i}")
    if init["mode"] not in modes:
        raise ConfigError(f"initial mode {init['mode']} is not declared in model.modes")

    intensity = model.get("intensity") or {}
    _check_keys(intensity, {"rows"}, "model.intensity")
    rows = [_resolve_row(r, f"model.intensity.rows[{k}]") for k, r in enumerate(intensity.get("rows") or [])]
    rows.sort(key=lambda r: r["from"])
    froms = [r["from"] for r in rows]
    if len(set(froms)) != len(froms):
        raise ConfigError("model.intensity.rows has two rows for the same mode")
    for r in rows:
        for m in [r["from"]] + [t["to"] for t in r["targets"]]:
            if m not in modes:
                raise ConfigError(f"intensity row refers to undeclared mode {m}")
        if r["from"] in [t["to"] for t in r["targets"]]:
            raise ConfigError(f"intensity row for mode {r['from']} lists itself as a target")
        r["targets"].sort(key=lambda t: t["to"])

    run = raw.get("run") or {}
    _check_keys(run, {"horizon_time", "level_n", "seed"}, "run")
    horizon = _float(run.get("horizon_time", 1.0), "run.horizon_time")
    level = _int(run.get("level_n", 256), "run.level_n")
    if not horizon > 0 or level < 1:
        raise ConfigError("run.horizon_time must be positive and run.level_n >= 1")
    seed = _int(run.get("seed", 0), "run.seed")
    if seed < 0:
        raise ConfigError("run.seed must be non-negative")
    if n_ref is not None:
        n_ref = _int(n_ref, "noise.n_ref")
        if n_ref < 1:
            raise ConfigError("noise.n_ref must be >= 1")

    prov = raw.get("provenance") or {}
    if not isinstance(prov, dict):
        raise ConfigError("provenance must be a mapping")
    for k, v in prov.items():
        if v not in PROVENANCE_FLAGS:
            raise ConfigError(f"provenance flag for {k!r} must be one of {PROVENANCE_FLAGS}, got {v!r}")

    out = {
        "schema_version": SCHEMA_VERSION,
        "model": {
            "lambda_per_time": lam,
            "dimension": p,
            "brownian_dim": d,
            "constant_prehistory": bool(model.get("constant_prehistory", False)),
            "initial": init,
            "modes": modes,
            "intensity": {"rows": rows},
        },
        "noise": {"n_ref": n_ref, "compound_poisson": cps},
        "run": {"horizon_time": horizon, "level_n": level, "seed": seed},
        "provenance": {str(k): str(v) for k, v in sorted(prov.items())},
    }
    # building the model catches anything the per-key checks cannot see
    model_from_config(out, resolved=True)
    return out


# -- building objects -----------------------------------------------------------


def _term_from(cfg):
    params = {k: v for k, v in cfg.items() if k not in ("kind", "coef")}
    return FunctionalTerm(cfg["kind"], params)


def _affine_from(cfg, base_key):
    terms = tuple((t["coef"], _term_from(t)) for t in cfg["terms"])
    return AffineExpr(cfg[base_key], terms, cfg.get("truncate", True), cfg.get("cap_per_time"))


def _piecewise_from(cfg):
    pieces = tuple(Piece(p["lo"], p["hi"], p["shape"], p["a"], p["b"], p["shift"]) for p in cfg["pieces"])
    return PiecewiseExpr(_term_from(cfg["feature"]), pieces, cfg["cap_per_time"], cfg["truncate"])


def model_from_config(cfg: dict, resolved: bool = False) -> ModelSpec:
    """Build a :class:`ModelSpec` from a config tree."""
    if not resolved:
        cfg = resolve_config(cfg)
    m = cfg["model"]
    lam = m["lambda_per_time"]
    rows = {}
    for r in m["intensity"]["rows"]:
        if r["link"] == "softmax":
            rows[r["from"]] = SoftmaxRow({t["to"]: _affine_from(t, "base") for t in r["targets"]})
        else:
            rows[r["from"]] = DirectRow(
                {t["to"]: _piecewise_from(t) if "pieces" in t else _affine_from(t, "base_per_time") for t in r["targets"]}
            )
    modes = m["modes"]

    def table(part, key):
        return {i: np.array(spec[part][key], dtype=float) for i, spec in modes.items() if spec[part] is not None}

    has_jumps = any(spec["jump"] is not None for spec in modes.values())
    dynamics = AffineDynamics(
        table("drift", "slope"),
        table("drift", "intercept"),
        table("diffusion", "slope"),
        table("diffusion", "intercept"),
        table("jump", "slope") if has_jumps else None,
        table("jump", "intercept") if has_jumps else None,
    )
    cps = tuple(
        CompoundPoissonSpec(c["rate_per_time"], c["p_up"], c["eta_up"], c["eta_down"]) for c in cfg["noise"]["compound_poisson"]
    )
    return ModelSpec(
        lam=lam,
        intensity=IntensitySpec(lam, rows),
        dynamics=dynamics,
        initial=HybridState(m["initial"]["mode"], m["initial"]["position"]),
        micro={i: spec["micro"] for i, spec in modes.items()},
        brownian_dim=m["brownian_dim"],
        cp_specs=cps,
        constant_prehistory=m["constant_prehistory"],
    )


def run_settings(cfg: dict) -> dict:
    """``horizon``, ``n``, ``seed`` and ``n_ref`` of a resolved config."""
    run = cfg["run"]
    n_ref = cfg["noise"]["n_ref"] or run["level_n"]
    return {"horizon": run["horizon_time"], "n": run["level_n"], "seed": run["seed"], "n_ref": n_ref}


# -- text round trip -------------------------------------------------------------


def dump_config(cfg: dict) -> str:
    return yaml.safe_dump(cfg, sort_keys=False, default_flow_style=None, width=120)


def parse_config(text: str) -> dict:
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from None
    return resolve_config(raw)


def load_config(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from None
    return parse_config(text)


def apply_overrides(raw: dict, overrides) -> dict:
    """Apply ``dotted.key=value`` strings; values are parsed as YAML scalars or lists."""
    out = copy.deepcopy(raw)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, text = item.split("=", 1)
        try:
            value = yaml.safe_load(text)
        except yaml.YAMLError:
            raise ConfigError(f"override value {text!r} is not valid YAML") from None
        node = out
        parts = key.strip().split(".")
        for part in parts[:-1]:
            node = _step(node, part, key, create=True)
        last = parts[-1]
        if isinstance(node, list):
            node[_list_index(node, last, key)] = value
        elif isinstance(node, dict):
            node[_dict_key(node, last)] = value
        else:
            raise ConfigError(f"override {key!r} does not address a mapping or list")
    return out


def _dict_key(node, part):
    if part in node:
        return part
    if part.lstrip("-").isdigit() and int(part) in node:
        return int(part)
    return part


def _list_index(node, part, key):
    try:
        k = int(part)
        node[k]
    except (ValueError, IndexError):
        raise ConfigError(f"override {key!r}: bad list index {part!r}") from None
    return k


def _step(node, part, key, create):
    if isinstance(node, list):
        return node[_list_index(node, part, key)]
    if not isinstance(node, dict):
        raise ConfigError(f"override {key!r} does not address a mapping or list")
    k = _dict_key(node, part)
    if k not in node:
        if not create:
            raise ConfigError(f"override {key!r}: no key {part!r}")
        node[k] = {}
    return node[k]
