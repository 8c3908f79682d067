from __future__ import annotations

import numpy as np
import pytest

from mhsde.convergence import decoupling_trend, fit_rate, gbm_strong_order, run_convergence_study
from mhsde.engine import ModelSpec
from mhsde.errors import DomainError
from mhsde.export import REPORT_COLUMNS, read_csv
from mhsde.kernel import zero_spec
from mhsde.micro import AffineDynamics
from mhsde.paths import HybridState


def gbm_model():
    dyn = AffineDynamics({0: np.array([[0.05]])}, {0: np.array([0.0])}, {0: np.array([[0.2]])},
                         {0: np.array([[0.0]])})
    return ModelSpec(1.0, zero_spec(1.0), dyn, HybridState(0, [1.0]))


def test_fit_rate_exact_power_law():
    levels = [16, 32, 64, 128]
    slope, intercept, r2 = fit_rate(levels, [3.0 * n**-0.5 for n in levels])
    assert slope == pytest.approx(-0.5, abs=1e-12)
    assert intercept == pytest.approx(np.log2(3.0), abs=1e-12)
    assert r2 == pytest.approx(1.0, abs=1e-12)


def test_fit_rate_constant_and_refusals():
    slope, _, r2 = fit_rate([2, 4, 8], [0.1, 0.1, 0.1])
    assert slope == pytest.approx(0.0, abs=1e-12) and r2 == 1.0
    with pytest.raises(DomainError):
        fit_rate([2, 4], [0.1, 0.05])
    with pytest.raises(DomainError):
        fit_rate([2, 4, 8], [0.1, 0.0, 0.05])
    slope, _, _ = fit_rate([4, 8, 16, 64], [0.5, 0.0, 0.25, 0.125])
    assert slope == pytest.approx(-0.5, abs=1e-12)


def test_decoupling_trend_verdicts():
    rng = np.random.default_rng(0)
    levels = [16, 32, 64, 128]
    down = rng.random((800, 4)) < np.array([0.2, 0.1, 0.05, 0.02])
    up = rng.random((800, 4)) < np.array([0.02, 0.05, 0.1, 0.2])
    assert decoupling_trend(levels, down, seed=1)["non_increasing"]
    result = decoupling_trend(levels, up, seed=1)
    assert not result["non_increasing"]
    assert result["slope"] > 0 and result["slope_ci"][0] > 0
    flat = np.zeros((100, 4), dtype=bool)
    assert decoupling_trend(levels, flat, seed=1)["non_increasing"]


def test_degenerate_study_at_reference_level():
    report = run_convergence_study(gbm_model(), 1.0, [64], 64, paths=5, seed=1)
    assert report.medians == [0.0]
    assert report.slope is None
    assert report.warnings and "refused" in report.warnings[0]
    assert "not available" in report.summary()


def test_zero_intensity_study_reduces_to_micro_order():
    report = run_convergence_study(gbm_model(), 1.0, [16, 32, 64, 128, 256], 1024, paths=100, seed=3,
                                   metric="nodes")
    assert report.frequencies == [0.0] * 5
    assert report.consistency_violations == 0
    assert -0.6 <= report.slope <= -0.4
    assert report.error_trend()


def test_study_level_checks():
    with pytest.raises(DomainError):
        run_convergence_study(gbm_model(), 1.0, [32, 16], 64, paths=2, seed=1)
    with pytest.raises(DomainError):
        run_convergence_study(gbm_model(), 1.0, [16, 24], 64, paths=2, seed=1)
    with pytest.raises(DomainError):
        run_convergence_study(gbm_model(), 1.0, [16, 32], 64, paths=2, seed=1, n_ref=96)
    with pytest.raises(DomainError):
        run_convergence_study(gbm_model(), 1.0, [16, 32], 64, paths=2, seed=1, metric="rms")


def test_report_csv_schema():
    report = run_convergence_study(gbm_model(), 1.0, [8, 16, 32], 64, paths=4, seed=2)
    columns, rows = read_csv(report.to_csv())
    assert tuple(columns) == REPORT_COLUMNS
    assert [int(r[0]) for r in rows] == [8, 16, 32]
    assert all(int(r[1]) == 4 for r in rows)


def test_study_independent_of_jobs():
    a = run_convergence_study(gbm_model(), 1.0, [8, 16, 32], 64, paths=6, seed=2, jobs=1)
    b = run_convergence_study(gbm_model(), 1.0, [8, 16, 32], 64, paths=6, seed=2, jobs=2)
    assert a.to_csv() == b.to_csv()


def test_gbm_strong_order_small():
    report = gbm_strong_order(0.05, 0.2, 1.0, 1.0, [8, 16, 32, 64, 128], paths=60, seed=5, n_ref=128)
    assert report.errors.shape == (60, 5)
    assert -0.7 <= report.slope <= -0.3
