"""Empirical convergence experiments.

The exact process is not simulable, so studies compare each level against
a high-level reference run on the same noise tape (a proxy reference; the
report says so).  Errors are the sup distance up to the decoupling time,
taken over pairs that did not decouple by the horizon; decoupled pairs feed
the decoupling frequency instead.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .engine import ERROR_METRICS, ModelSpec, compare_coupled, run_batch, simulate
from .errors import DomainError
from .export import REPORT_COLUMNS, csv_text
from .micro import AffineDynamics, MicroRequest, euler_maruyama, exact_gbm
from .noise import generate_tape

_LOG = logging.getLogger(__name__)

BOOTSTRAP_REPLICATES = 2000
TREND_CONFIDENCE = 0.95


def fit_rate(levels, errors):
    """OLS of ``log2(error)`` on ``log2(level)``: ``(slope, intercept, r_squared)``.

    Non-positive errors are dropped with a warning; fewer than three
    remaining points raise :class:`DomainError`.
    """
    levels = np.asarray(levels, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if levels.shape != errors.shape:
        raise DomainError("levels and errors must have the same length")
    keep = errors > 0
    if not keep.all():
        _LOG.warning("fit_rate: dropping levels %s with non-positive error", levels[~keep].tolist())
    levels, errors = levels[keep], errors[keep]
    if levels.size < 3:
        raise DomainError(f"need at least 3 levels with positive error to fit a rate, have {levels.size}")
    x, y = np.log2(levels), np.log2(errors)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2


@dataclass
class LevelStats:
    level: int
    paths: int
    errors: np.ndarray  # conditional sup errors of the pairs that stayed coupled
    decoupled: int
    consistency_violations: int

    @property
    def coupled(self) -> int:
        return self.paths - self.decoupled

    @property
    def decoupling_frequency(self) -> float:
        return self.decoupled / self.paths if self.paths else 0.0

    @property
    def median_error(self) -> float:
        return float(np.median(self.errors)) if self.errors.size else math.nan

    @property
    def q90_error(self) -> float:
        return float(np.quantile(self.errors, 0.9)) if self.errors.size else math.nan


@dataclass
class ConvergenceReport:
    levels: list
    n_fine: int
    T: float
    paths: int
    seed: int
    stats: list
    decoupled_matrix: np.ndarray = field(repr=False)  # (paths, levels) booleans
    slope: float | None = None
    intercept: float | None = None
    r_squared: float | None = None
    warnings: list = field(default_factory=list)
    metric: str = "path"
    reference: str = "proxy: same model at level n_fine on the same tape"

    @property
    def frequencies(self) -> list[float]:
        return [s.decoupling_frequency for s in self.stats]

    @property
    def medians(self) -> list[float]:
        return [s.median_error for s in self.stats]

    @property
    def consistency_violations(self) -> int:
        return sum(s.consistency_violations for s in self.stats)

    def error_trend(self) -> bool:
        """Median conditional error strictly decreasing across levels."""
        m = self.medians
        return all(b < a for a, b in zip(m, m[1:]))

    def decoupling_trend(self, replicates: int = BOOTSTRAP_REPLICATES, seed: int | None = None) -> dict:
        """Paired bootstrap check that decoupling frequency does not increase with the level."""
        return decoupling_trend(self.levels, self.decoupled_matrix, replicates, self.seed if seed is None else seed)

    def rows(self):
        for s in self.stats:
            yield (
                s.level, s.paths, s.coupled, s.decoupled, s.decoupling_frequency,
                s.median_error, s.q90_error, s.consistency_violations,
            )

    def to_csv(self) -> str:
        return csv_text(REPORT_COLUMNS, self.rows())

    def summary(self) -> str:
        trend = self.decoupling_trend()
        lines = [
            f"convergence study: T={self.T!r}, reference level n_fine={self.n_fine}, paths/level={self.paths}, seed={self.seed}",
            f"reference: {self.reference}",
            f"error metric: {self.metric} (sup over {'all times' if self.metric == 'path' else 'coarse grid nodes and event times'})",
            "level  decoupling_freq  median_error  q90_error",
        ]
        for s in self.stats:
            lines.append(f"{s.level:>5}  {s.decoupling_frequency:>15.4f}  {s.median_error:>12.6g}  {s.q90_error:>9.6g}")
        if self.slope is None:
            lines.append("fitted log2-slope: not available")
        else:
            lines.append(f"fitted log2-slope: {self.slope:.4f} (intercept {self.intercept:.4f}, r^2 {self.r_squared:.4f})")
        lines.append(f"error trend (median strictly decreasing): {'PASS' if self.error_trend() else 'FAIL'}")
        lines.append(
            f"decoupling trend (non-increasing, {int(TREND_CONFIDENCE * 100)}% bootstrap): "
            f"{'PASS' if trend['non_increasing'] else 'FAIL'} "
            f"(slope {trend['slope']:.4g}, CI [{trend['slope_ci'][0]:.4g}, {trend['slope_ci'][1]:.4g}])"
        )
        lines.append(f"disagreement/decoupling consistency violations: {self.consistency_violations}")
        lines += [f"warning: {w}" for w in self.warnings]
        return "\n".join(lines) + "\n"


def _freq_slope(x, freqs):
    xc = x - x.mean()
    return float(np.dot(xc, freqs - freqs.mean()) / np.dot(xc, xc))


def decoupling_trend(levels, decoupled, replicates: int = BOOTSTRAP_REPLICATES, seed: int = 0) -> dict:
    """Bootstrap verdict on the decoupling frequencies.

    Paths are resampled jointly across levels (they share tapes).  The trend
    counts as non-increasing when neither the least-squares slope of
    frequency on ``log2(level)`` nor any consecutive-level difference is
    significantly positive at the 95% level, and the finest level is not
    significantly above the coarsest.
    """
    d = np.asarray(decoupled, dtype=float)
    n_paths, n_levels = d.shape
    x = np.log2(np.asarray(levels, dtype=float))
    freqs = d.mean(axis=0)
    alpha = 1.0 - TREND_CONFIDENCE
    if n_levels < 2 or n_paths == 0:
        return {"non_increasing": True, "slope": 0.0, "slope_ci": (0.0, 0.0), "pairs": [], "frequencies": freqs.tolist()}
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=(0xB007,))))
    idx = rng.integers(0, n_paths, size=(replicates, n_paths))
    boot = np.stack([d[i].mean(axis=0) for i in idx])  # (replicates, levels)
    slope = _freq_slope(x, freqs) if n_levels > 1 else 0.0
    boot_slopes = np.array([_freq_slope(x, b) for b in boot]) if n_levels > 1 else np.zeros(replicates)
    lo, hi = np.quantile(boot_slopes, [alpha / 2, 1 - alpha / 2])
    diffs = boot[:, 1:] - boot[:, :-1]
    pair_lo = np.quantile(diffs, alpha, axis=0)
    end_lo = float(np.quantile(boot[:, -1] - boot[:, 0], alpha))
    pairs_ok = bool(np.all(pair_lo <= 0))
    ok = bool(np.quantile(boot_slopes, alpha) <= 0) and pairs_ok and end_lo <= 0 and freqs[-1] <= freqs[0]
    return {
        "non_increasing": ok,
        "slope": slope,
        "slope_ci": (float(lo), float(hi)),
        "pairs": pair_lo.tolist(),
        "finest_minus_coarsest_lo": end_lo,
        "frequencies": freqs.tolist(),
    }


@dataclass
class _StudyTask:
    model: ModelSpec
    T: float
    levels: tuple
    n_fine: int
    seed: int
    n_ref: int
    metric: str = "path"

    def __call__(self, index: int):
        tape = self.model.tape(self.seed, self.T, self.n_ref, path_index=index)
        fine = simulate(self.model, self.T, self.n_fine, tape)
        out = []
        for n in self.levels:
            coarse = fine if n == self.n_fine else simulate(self.model, self.T, n, tape)
            res = compare_coupled(fine, coarse, self.T, self.metric)
            out.append((res.decoupled, res.sup_err_pre_decouple, res.kappa_iota_consistent))
        return out


def _check_levels(levels, n_fine, n_ref):
    levels = [int(n) for n in levels]
    if not levels:
        raise DomainError("need at least one level")
    if any(b <= a for a, b in zip(levels, levels[1:])):
        raise DomainError(f"levels must be strictly increasing, got {levels}")
    for n in levels:
        if n < 1 or n > n_fine or n_fine % n:
            raise DomainError(f"level {n} must divide n_fine={n_fine}")
    if n_ref % n_fine:
        raise DomainError(f"n_fine={n_fine} must divide n_ref={n_ref}")
    return levels


def run_convergence_study(model: ModelSpec, T: float, levels, n_fine: int, paths: int, seed: int,
                          jobs: int = 1, n_ref: int | None = None, metric: str = "path") -> ConvergenceReport:
    """Coupled runs of every level against ``n_fine`` on ``paths`` independent tapes.

    ``metric`` is passed to :func:`compare_coupled`.
    """
    if metric not in ERROR_METRICS:
        raise DomainError(f"unknown error metric {metric!r}; expected one of {ERROR_METRICS}")
    n_ref = n_ref or n_fine
    levels = _check_levels(levels, n_fine, n_ref)
    if paths < 1:
        raise DomainError("paths must be >= 1")
    task = _StudyTask(model, T, tuple(levels), n_fine, seed, n_ref, metric)
    results = run_batch(task, list(range(paths)), jobs)
    decoupled = np.array([[r[k][0] for k in range(len(levels))] for r in results], dtype=bool)
    stats = []
    for k, n in enumerate(levels):
        errs = np.array([r[k][1] for r in results if not r[k][0]], dtype=float)
        violations = sum(1 for r in results if not r[k][2])
        stats.append(LevelStats(n, paths, errs, int(decoupled[:, k].sum()), violations))
    report = ConvergenceReport(levels, n_fine, T, paths, seed, stats, decoupled, metric=metric)
    try:
        report.slope, report.intercept, report.r_squared = fit_rate(levels, report.medians)
    except DomainError as exc:
        msg = f"slope fit refused: {exc}"
        _LOG.warning(msg)
        report.warnings.append(msg)
    return report


# -- micro-solver strong order --------------------------------------------------


@dataclass
class MicroOrderReport:
    levels: list
    medians: list
    errors: np.ndarray  # (paths, levels)
    slope: float
    intercept: float
    r_squared: float


def _gbm_task(args):
    mu, sigma, x0, T, levels, n_ref, seed, index = args
    dyn = AffineDynamics({0: np.array([[mu]])}, {0: np.array([0.0])}, {0: np.array([[sigma]])}, {0: np.array([[0.0]])})
    tape = generate_tape(seed, T, n_ref, 1.0, path_index=index)
    out = []
    for n in levels:
        req = MicroRequest(0, [x0], 0.0, T, n, tape)
        a = euler_maruyama(req, dyn)
        b = exact_gbm(req, mu, sigma)
        out.append(float(np.abs(a.grid_values - b.grid_values).max()))
    return out


def gbm_strong_order(mu: float, sigma: float, x0: float, T: float, levels, paths: int, seed: int,
                     n_ref: int | None = None, jobs: int = 1) -> MicroOrderReport:
    """Euler–Maruyama against the exact GBM solution on shared tapes, sup error over grid nodes."""
    levels = [int(n) for n in levels]
    n_ref = n_ref or max(levels)
    for n in levels:
        if n_ref % n:
            raise DomainError(f"level {n} must divide n_ref={n_ref}")
    args = [(mu, sigma, x0, T, tuple(levels), n_ref, seed, i) for i in range(paths)]
    errors = np.array(run_batch(_gbm_task, args, jobs))
    medians = np.median(errors, axis=0).tolist()
    slope, intercept, r2 = fit_rate(levels, medians)
    return MicroOrderReport(levels, medians, errors, slope, intercept, r2)
