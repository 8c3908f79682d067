from __future__ import annotations

import math

import numpy as np
import pytest

from mhsde.errors import ConfigError, DomainError, SolverBlowUpError
from mhsde.micro import (
    AffineDynamics,
    MicroRequest,
    ModeDynamics,
    constant_segment,
    euler_maruyama,
    exact_gbm,
    get_micro,
    jump_adapted_euler,
    local_grid,
)
from mhsde.noise import CompoundPoissonSpec, NoiseTape, generate_tape


def scalar(a, b, s, c, js=None, jc=0.0):
    jump = None if js is None else {0: np.array([[js]])}
    jump_c = None if js is None else {0: np.array([[jc]])}
    return AffineDynamics(
        {0: np.array([[a]])}, {0: np.array([b])}, {0: np.array([[s]])}, {0: np.array([[c]])}, jump, jump_c
    )


def test_local_grid():
    assert local_grid(0.0, 1.0, 4).tolist() == [0.0, 0.25, 0.5, 0.75, 1.0]
    g = local_grid(0.3, 1.0, 4)
    assert g[0] == 0.3 and g[-1] == 1.0
    assert np.all(np.diff(g) <= 0.25 + 1e-15)
    assert local_grid(0.0, 0.01, 4).tolist() == [0.0, 0.01]


def test_euler_constant_when_coefficients_vanish():
    tape = generate_tape(1, 1.0, 16, 1.0)
    seg = euler_maruyama(MicroRequest(0, [1.5], 0.0, 1.0, 16, tape), scalar(0, 0, 0, 0))
    assert np.all(seg.grid_values == 1.5)


def test_euler_deterministic_ode():
    tape = generate_tape(1, 1.0, 4, 1.0)
    seg = euler_maruyama(MicroRequest(0, [0.0], 0.0, 1.0, 4, tape), scalar(0.0, 1.0, 0.0, 0.0))
    assert seg.grid_values[:, 0].tolist() == [0.0, 0.25, 0.5, 0.75, 1.0]
    assert seg.grid_times.tolist() == [0.0, 0.25, 0.5, 0.75, 1.0]


def test_scalar_fast_path_matches_generic_loop():
    tape = generate_tape(3, 2.0, 256, 2.0, (CompoundPoissonSpec(3.0, 0.5, 0.1, 0.2),))
    dyn = scalar(0.07, 0.01, 0.3, 0.05, js=1.0, jc=0.02)
    # ModeDynamics has no scalar_coefficients, so it takes the vector loop
    generic = ModeDynamics(dyn.drift, dyn.diffusion, dyn.jump_coefficient)
    for micro in (euler_maruyama, jump_adapted_euler):
        req = MicroRequest(0, [1.3], 0.1234, 1.9, 64, tape)
        a, b = micro(req, dyn), micro(req, generic)
        assert np.array_equal(a.grid_times, b.grid_times)
        assert np.array_equal(a.grid_values, b.grid_values)
        assert [j.time for j in a.euclid_jumps] == [j.time for j in b.euclid_jumps]


def test_jump_euler_without_events_equals_euler():
    tape = generate_tape(5, 1.0, 64, 1.0, (CompoundPoissonSpec(0.0, 0.5, 0.1, 0.1),))
    dyn = scalar(0.05, 0.0, 0.2, 0.0, js=1.0)
    req = MicroRequest(0, [1.0], 0.0, 1.0, 64, tape)
    assert np.array_equal(jump_adapted_euler(req, dyn).grid_values, euler_maruyama(req, dyn).grid_values)


def _tape_with_event(t_event, size):
    base = generate_tape(1, 2.0, 8, 1.0, brownian_dim=1)
    return NoiseTape(
        1, 0, 2.0, 8, 1.0, np.zeros_like(base.brownian), np.zeros(0), np.zeros(0),
        (np.array([t_event]),), (np.array([size]),),
    )


def test_single_multiplicative_jump():
    tape = _tape_with_event(0.6, 0.2)
    seg = jump_adapted_euler(MicroRequest(0, [1.0], 0.0, 1.0, 4, tape), scalar(0, 0, 0, 0, js=1.0))
    assert seg.grid_values[-1, 0] == pytest.approx(1.2)
    (jump,) = seg.euclid_jumps
    assert jump.time == 0.6 and jump.pre_value[0] == 1.0 and jump.post_value[0] == pytest.approx(1.2)


def test_jump_at_grid_node_diffusion_first():
    # drift 1: the step to 0.5 is taken first, then the jump x_ <- x_(1 + z)
    tape = _tape_with_event(0.5, 1.0)
    seg = jump_adapted_euler(MicroRequest(0, [0.0], 0.0, 1.0, 4, tape), scalar(0.0, 1.0, 0.0, 0.0, js=1.0))
    (jump,) = seg.euclid_jumps
    assert jump.pre_value[0] == 0.5 and jump.post_value[0] == 1.0
    assert seg.grid_values[:, 0].tolist() == [0.0, 0.25, 1.0, 1.25, 1.5]


def test_jump_euler_needs_jump_coefficient():
    tape = _tape_with_event(0.5, 1.0)
    with pytest.raises(ConfigError):
        jump_adapted_euler(MicroRequest(0, [1.0], 0.0, 1.0, 4, tape), scalar(0, 0, 0, 0))


def test_exact_gbm_deterministic_cases():
    tape = generate_tape(1, 1.0, 8, 1.0)
    seg = exact_gbm(MicroRequest(0, [2.0], 0.0, 1.0, 8, tape), 0.1, 0.0)
    assert np.allclose(seg.grid_values[:, 0], 2.0 * np.exp(0.1 * seg.grid_times), rtol=1e-15)
    seg = exact_gbm(MicroRequest(0, [2.0], 0.0, 1.0, 8, tape), 0.0, 0.0)
    assert np.all(seg.grid_values == 2.0)


def test_exact_gbm_matches_closed_form_on_tape():
    tape = generate_tape(2, 1.0, 64, 1.0)
    seg = exact_gbm(MicroRequest(0, [1.0], 0.0, 1.0, 16, tape), 0.05, 0.2)
    w = np.concatenate([[0.0], np.cumsum(tape.brownian[:, 0])])[::4]
    expected = np.exp((0.05 - 0.02) * seg.grid_times + 0.2 * w)
    assert np.allclose(seg.grid_values[:, 0], expected, rtol=1e-13)


def test_euler_strong_error_shrinks():
    errs = []
    for n in (8, 64, 512):
        e = []
        for s in range(50):
            tape = generate_tape(s, 1.0, 512, 1.0)
            req = MicroRequest(0, [1.0], 0.0, 1.0, n, tape)
            a = euler_maruyama(req, scalar(0.05, 0.0, 0.2, 0.0))
            b = exact_gbm(req, 0.05, 0.2)
            e.append(np.abs(a.grid_values - b.grid_values).max())
        errs.append(float(np.median(e)))
    slope = np.polyfit(np.log2([8, 64, 512]), np.log2(errs), 1)[0]
    assert -0.7 < slope < -0.35


def test_blow_up_reports_last_finite_time():
    tape = generate_tape(1, 1.0, 16, 1.0)
    with pytest.raises(SolverBlowUpError) as info:
        euler_maruyama(MicroRequest(0, [1.0], 0.0, 1.0, 16, tape), scalar(1e300, 0.0, 0.0, 0.0))
    assert 0.0 <= info.value.last_finite_time < 1.0
    assert info.value.mode == 0


def test_constant_segment_and_registry():
    tape = generate_tape(1, 1.0, 4, 1.0, brownian_dim=0)
    seg = constant_segment(MicroRequest(1, [0.5, 2.0], 0.2, 0.9, 4, tape))
    assert seg.grid_times.tolist() == [0.2, 0.9]
    assert seg.grid_values.tolist() == [[0.5, 2.0], [0.5, 2.0]]
    assert get_micro("constant") is constant_segment
    with pytest.raises(ConfigError):
        get_micro("rk4")


def test_request_validation():
    tape = generate_tape(1, 1.0, 4, 1.0)
    with pytest.raises(DomainError):
        MicroRequest(0, [1.0], 0.5, 0.5, 4, tape)
    with pytest.raises(DomainError):
        MicroRequest(0, [1.0], 0.0, 2.0, 4, tape)
    with pytest.raises(DomainError):
        MicroRequest(0, [1.0], 0.0, 1.0, 0, tape)


def test_vector_state_euler():
    tape = generate_tape(4, 1.0, 32, 1.0, brownian_dim=2)
    a = np.array([[0.1, 0.0], [0.0, -0.2]])
    dyn = AffineDynamics({0: a}, {0: np.zeros(2)}, {0: np.zeros((2, 2))}, {0: np.eye(2) * 0.3})
    seg = euler_maruyama(MicroRequest(0, [1.0, 2.0], 0.0, 1.0, 32, tape), dyn)
    assert seg.grid_values.shape == (33, 2)
    x = np.array([1.0, 2.0])
    for k in range(32):
        x = x + a @ x / 32 + 0.3 * tape.brownian[k]
    assert np.allclose(seg.grid_values[-1], x, rtol=1e-12)
    assert math.isfinite(seg.grid_values.sum())
