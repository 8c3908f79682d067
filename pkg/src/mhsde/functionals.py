"""History functionals used inside intensity specifications.

Every functional evaluated at time ``t`` reads only the strict past of the
path (left limits), so it is safe to call while the path is still being
built by the engine.
"""

from __future__ import annotations

import bisect
import logging
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import ConfigError, DomainError
from .paths import HybridPath

_LOG = logging.getLogger(__name__)

#: running count of relative-jump events skipped because the pre-jump value was 0
relative_jump_skips = 0


def _check_t(path: HybridPath, t: float):
    if t < 0 or t > path.horizon + 1e-12:
        raise DomainError(f"t={t} outside [0, {path.horizon}]")


def occupation_time(path: HybridPath, t: float, b: float, delta: float, component: int = 0) -> float:
    """Time in ``[t - delta, t)`` during which ``X_{s-} >= b``."""
    if delta <= 0:
        raise DomainError("window delta must be positive")
    _check_t(path, t)
    a = t - delta
    total = 0.0
    if a < 0:
        if path.constant_prehistory and path.origin.position[component] >= b:
            total += -a
        a = 0.0
    if t <= a:
        return total
    segs = path.segments
    first = path.segment_index_at(a)
    for seg in segs[first:]:
        if seg.t_start >= t:
            break
        times = seg.grid_times
        if times.shape[0] < 2:
            continue
        lo = np.maximum(times[:-1], a)
        hi = np.minimum(times[1:], t)
        length = hi - lo
        above = (seg.grid_values[:-1, component] >= b) & (length > 0)
        if above.any():
            total += float(length[above].sum())
    return total


def running_max(path: HybridPath, t: float, left: bool = False, component: int = 0) -> float:
    """Max of the held grid values on ``[0, t]`` (``[0, t)`` plus ``X_{t-}`` if ``left``)."""
    side = "left" if left else "right"
    best = -math.inf
    for seg in path.segments:
        if seg.t_start > t or (left and seg.t_start >= t and seg.t_start > 0):
            break
        times = seg.grid_times
        if times[-1] < t:
            best = max(best, float(seg.grid_values[:, component].max()))
        else:
            k = int(np.searchsorted(times, t, side=side))
            if k:
                best = max(best, float(seg.grid_values[:k, component].max()))
    if left:
        best = max(best, float(path.position_left_at(t)[component]))
    else:
        best = max(best, float(path.position_at(t)[component]))
    return best


def drawdown(path: HybridPath, t: float, left: bool = False, component: int = 0) -> float:
    """``M_t - X_t`` (``M_{t-} - X_{t-}`` if ``left``)."""
    _check_t(path, t)
    if left and t == 0:
        left = False
    m = running_max(path, t, left=left, component=component)
    x = path.position_left_at(t) if left else path.position_at(t)
    return m - float(x[component])


def age(path: HybridPath, t: float) -> float:
    """Time since the last discrete jump strictly before ``t`` (``t`` if none)."""
    _check_t(path, t)
    times = path.event_times
    k = bisect.bisect_left(times, t)
    return t - times[k - 1] if k else t


def jump_count(
    path: HybridPath,
    t: float,
    eps: float,
    delta: float,
    sign: str = "both",
    relative: bool = False,
    component: int = 0,
) -> int:
    """Number of Euclidean jumps in ``[t - delta, t)`` exceeding ``eps``.

    ``sign`` is ``"+"``, ``"-"`` or ``"both"``.  With ``relative`` the
    increment is ``(post - pre) / pre`` of ``component``; events with a zero
    pre-jump value are skipped and logged.
    """
    global relative_jump_skips
    if eps <= 0:
        raise DomainError("eps must be positive")
    if sign not in ("+", "-", "both"):
        raise DomainError(f"unknown sign {sign!r}")
    _check_t(path, t)
    times = path.jump_times
    lo = bisect.bisect_left(times, max(t - delta, 0.0))
    hi = bisect.bisect_left(times, t)
    jumps = path.euclid_jump_events
    count = 0
    for k in range(lo, hi):
        ev = jumps[k]
        if relative:
            pre = ev.pre_value[component]
            if pre == 0:
                relative_jump_skips += 1
                _LOG.warning("relative jump at t=%s skipped: pre-jump value is 0", ev.time)
                continue
            inc = (ev.post_value[component] - pre) / pre
        elif sign == "both":
            inc = float(np.linalg.norm(ev.post_value - ev.pre_value))
        else:
            inc = ev.post_value[component] - ev.pre_value[component]
        if sign == "+":
            count += inc > eps
        elif sign == "-":
            count += inc < -eps
        else:
            count += abs(inc) > eps
    return int(count)


def occupation_by_mode(path: HybridPath, t: float, mode: int) -> float:
    """Lebesgue time spent in ``mode`` on ``[0, t)``."""
    _check_t(path, t)
    terms = []
    start, current = 0.0, path.origin.mode
    for ev in path.discrete_events:
        if ev.time >= t:
            break
        if current == mode:
            terms += [ev.time, -start]
        start, current = ev.time, ev.post_mode
    if current == mode:
        terms += [t, -start]
    # fsum of the signed endpoints is the correctly rounded total
    return math.fsum(terms)


def transition_count(path: HybridPath, t: float, i: int, j: int) -> int:
    """Number of ``i -> j`` jumps at times in ``(0, t)``."""
    if i == j:
        raise DomainError("transition_count needs i != j")
    _check_t(path, t)
    n = 0
    for ev in path.discrete_events:
        if ev.time >= t:
            break
        if ev.pre_mode == i and ev.post_mode == j:
            n += 1
    return n


def recent_states(path: HybridPath, t: float, k: int) -> list[int]:
    """Current mode followed by up to ``k - 1`` previously visited modes, newest first."""
    if k < 1:
        raise DomainError("memory order k must be >= 1")
    _check_t(path, t)
    events = path.discrete_events
    n = bisect.bisect_left(path.event_times, t)
    current = events[n - 1].post_mode if n else path.origin.mode
    out = [current]
    for ev in reversed(events[max(0, n - (k - 1)):n]):
        out.append(ev.pre_mode)
    return out


def softmax_rates(theta: Mapping[int, float], lam: float) -> dict[int, float]:
    """``lam * exp(theta_j) / (1 + sum_k exp(theta_k))`` for every target ``j``.

    The total stays strictly below ``lam``; if rounding pushes it onto ``lam``
    all rates are scaled down by the smallest representable amount.
    """
    if lam <= 0:
        raise DomainError("lambda must be positive")
    if not theta:
        return {}
    targets = sorted(theta)
    th = np.array([theta[j] for j in targets], dtype=float)
    if not np.all(np.isfinite(th)):
        raise DomainError("softmax logits must be finite")
    shift = max(0.0, float(th.max()))
    w = np.exp(th - shift)
    denom = math.exp(-shift) + float(w.sum())
    q = lam * w / denom
    total = math.fsum(q)
    while total >= lam:
        q = q * (np.nextafter(lam, 0.0) / total)
        total = math.fsum(q)
    return {j: float(v) for j, v in zip(targets, q)}


# -- declarative terms --------------------------------------------------------

KINDS = (
    "constant",
    "occupation",
    "drawdown",
    "drawdown_indicator",
    "age",
    "jump_count",
    "loc",
    "cnt",
    "recent_states",
)

_REQUIRED = {
    "constant": (),
    "occupation": ("barrier", "window_time"),
    "drawdown": (),
    "drawdown_indicator": ("threshold",),
    "age": (),
    "jump_count": ("eps", "window_time"),
    "loc": ("mode",),
    "cnt": ("from_mode", "to_mode"),
    "recent_states": ("pattern",),
}

_OPTIONAL = {
    "occupation": {"component": 0},
    "drawdown": {"component": 0},
    "drawdown_indicator": {"component": 0},
    "jump_count": {"sign": "both", "relative": False, "component": 0},
}


@dataclass(frozen=True)
class FunctionalTerm:
    """A named history functional with its parameters.

    ``recent_states`` evaluates to 1.0 when the recent-state vector starts
    with ``pattern`` (newest first) and 0.0 otherwise, so it can enter affine
    rate formulas like any other scalar term.
    """

    kind: str
    params: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown functional kind {self.kind!r}; expected one of {KINDS}")
        params = dict(_OPTIONAL.get(self.kind, {}))
        params.update(self.params)
        missing = [p for p in _REQUIRED[self.kind] if p not in params]
        if missing:
            raise ConfigError(f"functional {self.kind!r} missing parameters {missing}")
        allowed = set(_REQUIRED[self.kind]) | set(_OPTIONAL.get(self.kind, {}))
        extra = set(params) - allowed
        if extra:
            raise ConfigError(f"functional {self.kind!r} got unknown parameters {sorted(extra)}")
        if "window_time" in params and not params["window_time"] > 0:
            raise ConfigError("window_time must be positive")
        if self.kind == "jump_count":
            if not params["eps"] > 0:
                raise ConfigError("eps must be positive")
            if params["sign"] not in ("+", "-", "both"):
                raise ConfigError(f"jump_count sign must be '+', '-' or 'both', got {params['sign']!r}")
        if self.kind == "cnt" and params["from_mode"] == params["to_mode"]:
            raise ConfigError("cnt needs from_mode != to_mode")
        if self.kind == "recent_states":
            params["pattern"] = tuple(int(m) for m in params["pattern"])
            if not params["pattern"]:
                raise ConfigError("recent_states pattern must be non-empty")
        object.__setattr__(self, "params", params)

    def key(self):
        return (self.kind, tuple(sorted(self.params.items())))

    def evaluate(self, path: HybridPath, t: float) -> float:
        p = self.params
        kind = self.kind
        if kind == "constant":
            return 1.0
        if kind == "occupation":
            return occupation_time(path, t, p["barrier"], p["window_time"], p["component"])
        if kind == "drawdown":
            return drawdown(path, t, left=True, component=p["component"])
        if kind == "drawdown_indicator":
            return 1.0 if drawdown(path, t, left=True, component=p["component"]) >= p["threshold"] else 0.0
        if kind == "age":
            return age(path, t)
        if kind == "jump_count":
            return float(
                jump_count(path, t, p["eps"], p["window_time"], p["sign"], p["relative"], p["component"])
            )
        if kind == "loc":
            return occupation_by_mode(path, t, p["mode"])
        if kind == "cnt":
            return float(transition_count(path, t, p["from_mode"], p["to_mode"]))
        pattern = p["pattern"]
        recent = recent_states(path, t, len(pattern))
        return 1.0 if tuple(recent) == pattern else 0.0

    def to_config(self) -> dict:
        out = {"kind": self.kind}
        for name, value in self.params.items():
            out[name] = list(value) if isinstance(value, tuple) else value
        return out
