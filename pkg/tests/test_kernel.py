from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mhsde.errors import ConfigError, DomainError, RateBoundError
from mhsde.kernel import (
    RateRow,
    apply_mark,
    canonical_partition,
    constant_spec,
    evaluate_rates,
    symmetric_difference_measure,
)
from mhsde.paths import EuclidJump, HybridPath, HybridState, Segment
from mhsde.scenarios import build_insurance, build_levy_financial

from oracles import check_partition, random_row


def test_partition_examples():
    part = canonical_partition(RateRow(0, {1: 0.3}, 2.0))
    assert part.intervals == ((0.0, 0.3, 1), (0.3, 2.0, 0))
    part = canonical_partition(RateRow(0, {}, 2.0))
    assert part.intervals == ((0.0, 2.0, 0),)
    part = canonical_partition(RateRow(0, {2: 0.25, 1: 0.5}, 1.0))
    assert part.intervals == ((0.0, 0.5, 1), (0.5, 0.75, 2), (0.75, 1.0, 0))


def test_apply_mark_examples():
    part = canonical_partition(RateRow(0, {1: 0.3}, 2.0))
    assert apply_mark(part, 0.1) == 1
    assert apply_mark(part, 0.3) == 0
    assert apply_mark(canonical_partition(RateRow(0, {1: 0.5, 2: 0.25}, 1.0)), 0.6) == 2
    with pytest.raises(DomainError):
        apply_mark(part, 2.0)
    with pytest.raises(DomainError):
        apply_mark(part, -0.1)


def test_rate_row_validation():
    with pytest.raises(RateBoundError):
        RateRow(0, {1: 1.5, 2: 0.6}, 2.0)
    with pytest.raises(RateBoundError):
        RateRow(0, {1: -0.1}, 2.0)
    with pytest.raises(RateBoundError):
        RateRow(0, {1: math.nan}, 2.0)
    with pytest.raises(DomainError):
        RateRow(0, {0: 0.1}, 2.0)
    RateRow(0, {1: 2.0 + 5e-13}, 2.0)  # inside the absolute tolerance


@settings(max_examples=500, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_partition_exactness_property(seed):
    assert check_partition(random_row(np.random.default_rng(seed))) == []


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_symmetric_difference_bound(seed):
    rng = np.random.default_rng(seed)
    row = random_row(rng)
    rates = {j: max(0.0, q + float(rng.normal(0.0, 0.01))) for j, q in row.rates.items()}
    total = math.fsum(rates.values())
    if total > row.lam:
        rates = {j: q * row.lam / total * 0.999 for j, q in rates.items()}
    other = RateRow(row.current_mode, rates, row.lam)
    delta = math.fsum(abs(rates[j] - row.rates[j]) for j in rates)
    pa, pb = canonical_partition(row), canonical_partition(other)
    measure = symmetric_difference_measure(pa, pb)
    k = len(rates)
    # left-packed layout: boundary j moves by |D_j| <= sum|delta|, interior boundaries count twice
    assert measure <= max(2 * k - 1, 0) * delta + 1e-12
    if k <= 2:
        assert measure <= (k + 1) * delta + 1e-12
    # the mark decision differs on a set of measure at most the symmetric-difference sum
    assert _disagreement_measure(pa, pb) <= measure + 1e-12


def _disagreement_measure(a, b):
    total = 0.0
    for lo1, hi1, j1 in a.intervals:
        for lo2, hi2, j2 in b.intervals:
            if j1 != j2:
                total += max(0.0, min(hi1, hi2) - max(lo1, lo2))
    return total


def test_symmetric_difference_three_targets_exceeds_k_plus_one():
    # only the first of three rates moves by d: every later interval shifts by d
    d = 0.01
    a = canonical_partition(RateRow(0, {1: 0.25, 2: 0.25, 3: 0.25}, 1.0))
    b = canonical_partition(RateRow(0, {1: 0.25 + d, 2: 0.25, 3: 0.25}, 1.0))
    measure = symmetric_difference_measure(a, b)
    assert measure == pytest.approx(5 * d, abs=1e-15)
    assert measure > (3 + 1) * d


def test_evaluate_rates_constant():
    spec = constant_spec(2.0, {0: {1: 0.3}, 1: {0: 0.7}})
    path = HybridPath(HybridState(0, [0.0]), [Segment(0.0, 1.0, 0, np.array([0.0, 1.0]), np.array([0.0, 0.0]))])
    row = evaluate_rates(spec, 1.0, path)
    assert row.current_mode == 0 and row.rates == {1: 0.3}


def test_evaluate_rates_levy_crash():
    # one -20% relative jump inside the one-unit window, mode 0
    model = build_levy_financial()
    jump = EuclidJump(0.5, np.array([10.0]), np.array([8.0]))
    seg = Segment(0.0, 1.0, 0, np.array([0.0, 0.5, 1.0]), np.array([10.0, 8.0, 8.0]), (jump,))
    path = HybridPath(HybridState(0, [10.0]), [seg])
    assert evaluate_rates(model.intensity, 1.0, path).rates[1] == pytest.approx(0.9, abs=1e-15)


def test_evaluate_rates_insurance_full_occupation():
    # X = 1.2 >= barrier for the whole window, no drawdown: max(0, 0.2 - 0.5) = 0
    model = build_insurance()
    seg = Segment(0.0, 2.0, 0, np.array([0.0, 1.0, 2.0]), np.array([1.2, 1.2, 1.2]))
    path = HybridPath(HybridState(0, [1.2]), [seg])
    assert evaluate_rates(model.intensity, 2.0, path).rates[1] == 0.0


def test_evaluate_rates_bound_violation_reports_time():
    spec = constant_spec(0.2, {0: {1: 0.3}})
    path = HybridPath(HybridState(0, [0.0]), [Segment(0.0, 1.0, 0, np.array([0.0, 1.0]), np.array([0.0, 0.0]))])
    with pytest.raises(RateBoundError) as info:
        evaluate_rates(spec, 0.75, path)
    assert info.value.time == 0.75


def test_intensity_rejects_self_target():
    with pytest.raises(ConfigError):
        constant_spec(2.0, {0: {0: 0.1}})
