"""History-dependent intensity rows and the thinning step.

The dominating Poisson process has rate ``lam``; a candidate atom with mark
``u`` in ``[0, lam)`` is resolved against the canonical partition of the
mark space built from the active :class:`RateRow`.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .errors import ConfigError, DomainError, RateBoundError
from .functionals import FunctionalTerm, softmax_rates
from .paths import HybridPath

#: absolute slack allowed on ``sum(q) <= lam`` before a run is aborted
RATE_BOUND_TOL = 1e-12


@dataclass(frozen=True)
class RateRow:
    current_mode: int
    rates: Mapping[int, float]
    lam: float

    def __post_init__(self):
        if not self.lam > 0:
            raise DomainError(f"lambda must be positive, got {self.lam}")
        rates = {}
        for j, q in sorted(self.rates.items()):
            j = int(j)
            if j == self.current_mode:
                raise DomainError(f"rate row for mode {j} lists itself as a target")
            q = float(q)
            if not (q >= 0 and math.isfinite(q)):
                raise RateBoundError(f"invalid rate q[{self.current_mode},{j}]={q}", rates=self.rates, lam=self.lam)
            rates[j] = q
        object.__setattr__(self, "rates", rates)
        total = math.fsum(rates.values())
        if total > self.lam + RATE_BOUND_TOL:
            raise RateBoundError(
                f"total exit rate {total!r} from mode {self.current_mode} exceeds lambda={self.lam}",
                rates=rates,
                lam=self.lam,
            )

    @property
    def total_exit(self) -> float:
        return math.fsum(self.rates.values())


@dataclass(frozen=True)
class MarkPartition:
    """Left-packed split of ``[0, lam)``: one interval per target, residual last."""

    current_mode: int
    lam: float
    intervals: tuple  # ((lo, hi, target), ...), residual included as the final entry

    @property
    def jump_intervals(self):
        return self.intervals[:-1]

    @property
    def residual(self):
        return self.intervals[-1]

    def length(self, target: int) -> float:
        return sum(hi - lo for lo, hi, j in self.intervals if j == target)


def canonical_partition(row: RateRow) -> MarkPartition:
    """Lay the rates out left to right in increasing target order."""
    intervals = []
    lo = 0.0
    acc = []
    for j, q in row.rates.items():
        acc.append(q)
        hi = min(math.fsum(acc), row.lam)
        intervals.append((lo, hi, j))
        lo = hi
    intervals.append((lo, row.lam, row.current_mode))
    return MarkPartition(row.current_mode, row.lam, tuple(intervals))


def apply_mark(partition: MarkPartition, u: float) -> int:
    """Post-jump mode for mark ``u``; boundaries belong to the right interval."""
    if not 0 <= u < partition.lam:
        raise DomainError(f"mark u={u} outside [0, {partition.lam})")
    his = [hi for _, hi, _ in partition.intervals]
    k = bisect.bisect_right(his, u)
    return partition.intervals[k][2]


def symmetric_difference_measure(a: MarkPartition, b: MarkPartition) -> float:
    """Sum over targets of the measure of the symmetric difference of their sets.

    Only jump targets count; the residual (no-jump) sets are excluded, as in
    the log-Hölder regularity condition.
    """
    targets = {j for _, _, j in a.jump_intervals} | {j for _, _, j in b.jump_intervals}
    total = 0.0
    for j in targets:
        ia = [(lo, hi) for lo, hi, k in a.jump_intervals if k == j]
        ib = [(lo, hi) for lo, hi, k in b.jump_intervals if k == j]
        len_a = sum(hi - lo for lo, hi in ia)
        len_b = sum(hi - lo for lo, hi in ib)
        inter = sum(max(0.0, min(h1, h2) - max(l1, l2)) for l1, h1 in ia for l2, h2 in ib)
        total += len_a + len_b - 2 * inter
    return total


# -- declarative intensity specifications -------------------------------------


@dataclass(frozen=True)
class AffineExpr:
    """``base + sum(coef * term)``, optionally clamped at 0 and capped."""

    base: float = 0.0
    terms: tuple = ()  # ((coef, FunctionalTerm), ...)
    truncate: bool = True
    cap: float | None = None

    def raw(self, values) -> float:
        return self.base + math.fsum(c * values[t.key()] for c, t in self.terms)

    def __call__(self, values) -> float:
        v = self.raw(values)
        if self.truncate:
            v = max(v, 0.0)
        if self.cap is not None:
            v = min(v, self.cap)
        return v

    def functionals(self):
        return [t for _, t in self.terms]


_SHAPES = ("constant", "linear", "exp")


@dataclass(frozen=True)
class Piece:
    lo: float
    hi: float | None
    shape: str
    a: float  # constant value / intercept / scale
    b: float = 0.0  # slope / exponential rate
    shift: float = 0.0

    def __post_init__(self):
        if self.shape not in _SHAPES:
            raise ConfigError(f"unknown piece shape {self.shape!r}; expected one of {_SHAPES}")

    def __call__(self, x: float) -> float:
        if self.shape == "constant":
            return self.a
        if self.shape == "linear":
            return self.a + self.b * (x - self.shift)
        return self.a * math.exp(self.b * (x - self.shift))


@dataclass(frozen=True)
class PiecewiseExpr:
    """A rate that is a piecewise function of one scalar functional."""

    feature: FunctionalTerm
    pieces: tuple
    cap: float | None = None
    truncate: bool = True

    def __post_init__(self):
        if not self.pieces:
            raise ConfigError("piecewise rate needs at least one piece")
        for p, q in zip(self.pieces, self.pieces[1:]):
            if p.hi is None or p.hi != q.lo:
                raise ConfigError("piecewise pieces must be contiguous and ordered")

    def __call__(self, values) -> float:
        x = values[self.feature.key()]
        for p in self.pieces:
            if x >= p.lo and (p.hi is None or x < p.hi):
                v = p(x)
                break
        else:
            raise DomainError(f"feature value {x} not covered by the piecewise rate")
        if self.truncate:
            v = max(v, 0.0)
        if self.cap is not None:
            v = min(v, self.cap)
        return v

    def functionals(self):
        return [self.feature]


@dataclass(frozen=True)
class DirectRow:
    """Rates given target by target."""

    targets: Mapping  # {to_mode: AffineExpr | PiecewiseExpr}

    def rates(self, values, lam) -> dict:
        return {j: expr(values) for j, expr in self.targets.items()}

    def functionals(self):
        return [t for e in self.targets.values() for t in e.functionals()]


@dataclass(frozen=True)
class SoftmaxRow:
    """Rates ``lam * softmax`` of affine logits with an implicit zero logit for staying."""

    logits: Mapping  # {to_mode: AffineExpr}

    def rates(self, values, lam) -> dict:
        theta = {j: expr.raw(values) for j, expr in self.logits.items()}
        return softmax_rates(theta, lam)

    def functionals(self):
        return [t for e in self.logits.values() for t in e.functionals()]


@dataclass(frozen=True)
class IntensitySpec:
    lam: float
    rows: Mapping = field(default_factory=dict)  # {from_mode: DirectRow | SoftmaxRow}

    def __post_init__(self):
        if not self.lam > 0:
            raise ConfigError(f"lambda must be positive, got {self.lam}")
        for i, row in self.rows.items():
            targets = row.targets if isinstance(row, DirectRow) else row.logits
            if i in targets:
                raise ConfigError(f"row for mode {i} lists itself as a target")

    def functionals_for(self, mode: int) -> list[FunctionalTerm]:
        row = self.rows.get(mode)
        return row.functionals() if row is not None else []

    def all_functionals(self) -> list[FunctionalTerm]:
        seen = {}
        for row in self.rows.values():
            for t in row.functionals():
                seen.setdefault(t.key(), t)
        return list(seen.values())


def evaluate_rates(spec: IntensitySpec, t: float, history: HybridPath) -> RateRow:
    """Active rate row at ``t`` computed from the strict past of ``history``."""
    mode = history.mode_left_at(t)
    row = spec.rows.get(mode)
    if row is None:
        return RateRow(mode, {}, spec.lam)
    values = {}
    for term in row.functionals():
        k = term.key()
        if k not in values:
            values[k] = term.evaluate(history, t)
    rates = row.rates(values, spec.lam)
    try:
        return RateRow(mode, rates, spec.lam)
    except RateBoundError as exc:
        raise RateBoundError(
            f"rate bound violated at t={t!r} in mode {mode}: {exc}", time=t, rates=rates, lam=spec.lam
        ) from None


def constant_spec(lam: float, rates: Mapping[int, Mapping[int, float]]) -> IntensitySpec:
    """Time-homogeneous rates ``{i: {j: q_ij}}``."""
    rows = {
        int(i): DirectRow({int(j): AffineExpr(base=float(q)) for j, q in row.items()}) for i, row in rates.items()
    }
    return IntensitySpec(lam, rows)


def zero_spec(lam: float) -> IntensitySpec:
    return IntensitySpec(lam, {})


def affine(base: float, terms: Sequence = (), truncate: bool = True, cap: float | None = None) -> AffineExpr:
    return AffineExpr(float(base), tuple((float(c), t) for c, t in terms), truncate, cap)
