"""Mode-specific SDE segment solvers ("micro-algorithms").

Every solver takes a :class:`MicroRequest` and returns a :class:`Segment`
on ``[t_start, t_end]`` whose first value is exactly ``x0``.  Step size is
``1/n`` from ``t_start``, with a shorter final step landing on ``t_end``.
Brownian increments are read from the request's noise tape, so solvers at
different levels see the same underlying Brownian path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigError, DomainError, SolverBlowUpError
from .noise import NoiseTape
from .paths import EuclidJump, Segment


@dataclass(frozen=True)
class ModeDynamics:
    """Coefficients of ``dX = drift dt + diffusion dW + jump_coefficient dZ``.

    ``drift(mode, x)`` returns shape ``(p,)``, ``diffusion(mode, x)`` shape
    ``(p, d_w)`` and ``jump_coefficient(mode, x_left)`` shape ``(p, n_cp)``.
    """

    drift: Callable
    diffusion: Callable
    jump_coefficient: Callable | None = None


@dataclass(frozen=True)
class AffineDynamics:
    """Per-mode affine coefficients, the family used in config files.

    For mode ``i`` (``p`` = state dimension, ``d`` = Brownian dimension):

    * drift ``A[i] @ x + b[i]`` with ``A[i]`` of shape ``(p, p)``;
    * diffusion entry ``(k, l)``: ``S[i][k, l] * x[k] + C[i][k, l]``;
    * jump coefficient entry ``(k, s)``: ``JS[i][k, s] * x[k] + JC[i][k, s]``.
    """

    drift_slope: dict
    drift_intercept: dict
    diffusion_slope: dict
    diffusion_intercept: dict
    jump_slope: dict | None = None
    jump_intercept: dict | None = None

    def _get(self, table, mode):
        try:
            return table[mode]
        except KeyError:
            raise ConfigError(f"no dynamics configured for mode {mode}") from None

    def drift(self, mode, x):
        return self._get(self.drift_slope, mode) @ x + self._get(self.drift_intercept, mode)

    def diffusion(self, mode, x):
        return self._get(self.diffusion_slope, mode) * x[:, None] + self._get(self.diffusion_intercept, mode)

    def jump_coefficient(self, mode, x):
        if self.jump_slope is None or mode not in self.jump_slope:
            return None
        return self.jump_slope[mode] * x[:, None] + self.jump_intercept[mode]

    @property
    def has_jumps(self) -> bool:
        return self.jump_slope is not None

    def scalar_coefficients(self, mode):
        """``(a, b, s, c, js, jc)`` floats for a 1-D state with one Brownian driver, else ``None``."""
        a = self._get(self.drift_slope, mode)
        s = self._get(self.diffusion_slope, mode)
        if a.shape != (1, 1) or s.shape != (1, 1):
            return None
        js = jc = None
        if self.jump_slope is not None and mode in self.jump_slope:
            jsa, jca = self.jump_slope[mode], self.jump_intercept[mode]
            if jsa.shape != (1, 1):
                return None
            js, jc = float(jsa[0, 0]), float(jca[0, 0])
        b = self._get(self.drift_intercept, mode)
        c = self._get(self.diffusion_intercept, mode)
        return float(a[0, 0]), float(b[0]), float(s[0, 0]), float(c[0, 0]), js, jc

    def scalar_gbm(self, mode):
        """``(mu, sigma)`` if mode ``mode`` is a scalar GBM ``mu x dt + sigma x dW``, else ``None``."""
        a = self._get(self.drift_slope, mode)
        b = self._get(self.drift_intercept, mode)
        s = self._get(self.diffusion_slope, mode)
        c = self._get(self.diffusion_intercept, mode)
        if a.shape != (1, 1) or s.shape != (1, 1) or b[0] != 0 or c[0, 0] != 0:
            return None
        return float(a[0, 0]), float(s[0, 0])


@dataclass(frozen=True)
class MicroRequest:
    mode: int
    x0: np.ndarray
    t_start: float
    t_end: float
    n: int
    tape: NoiseTape

    def __post_init__(self):
        if not self.t_end > self.t_start:
            raise DomainError(f"t_end={self.t_end} must exceed t_start={self.t_start}")
        if self.n < 1:
            raise DomainError("level n must be >= 1")
        if self.t_end > self.tape.horizon + 1e-12:
            raise DomainError(f"request ends at {self.t_end}, tape horizon is {self.tape.horizon}")
        x0 = np.array(self.x0, dtype=float).reshape(-1)
        object.__setattr__(self, "x0", x0)

    @property
    def h(self) -> float:
        return 1.0 / self.n


def local_grid(t_start: float, t_end: float, n: int) -> np.ndarray:
    """``t_start + k/n`` below ``t_end``, then ``t_end``."""
    h = 1.0 / n
    k = int(math.ceil((t_end - t_start) * n - 1e-9))
    k = max(k, 1)
    times = t_start + h * np.arange(k, dtype=float)
    return np.append(times, t_end)


def _finish(req: MicroRequest, times, values, jumps=()):
    if not np.all(np.isfinite(values)):
        bad = int(np.argmax(~np.all(np.isfinite(values), axis=1)))
        last = float(times[bad - 1]) if bad else req.t_start
        raise SolverBlowUpError(
            f"non-finite state in mode {req.mode} after t={last}", last_finite_time=last, mode=req.mode
        )
    return Segment(req.t_start, req.t_end, req.mode, times, values, tuple(jumps))


def _check_diffusion(g, p, tape):
    if g.shape != (p, tape.brownian_dim):
        raise DomainError(f"diffusion has shape {g.shape}, expected {(p, tape.brownian_dim)}")


def euler_maruyama(req: MicroRequest, dyn) -> Segment:
    """Euler–Maruyama on the level-``n`` grid, ignoring any jump coefficient."""
    times = local_grid(req.t_start, req.t_end, req.n)
    return _euler_on_grid(req, dyn, times, {})


def jump_adapted_euler(req: MicroRequest, dyn) -> Segment:
    """Euler–Maruyama on the level-``n`` grid merged with compound Poisson times.

    At an event time the diffusion step to that time is taken first, then
    ``x <- x_left + jump_coefficient(mode, x_left) @ dz``.
    """
    events = req.tape.cp_events_between(req.t_start, req.t_end)
    times = local_grid(req.t_start, req.t_end, req.n)
    if not events:
        return _euler_on_grid(req, dyn, times, {})
    ev_times = np.array([e[0] for e in events])
    times = np.union1d(times, ev_times)
    n_cp = len(req.tape.cp_times)
    kicks: dict[float, np.ndarray] = {}
    for t, s, z in events:
        dz = kicks.setdefault(t, np.zeros(n_cp))
        dz[s] += z
    return _euler_on_grid(req, dyn, times, kicks)


def _euler_on_grid(req, dyn, times, kicks):
    if req.x0.shape[0] == 1 and req.tape.brownian_dim == 1 and hasattr(dyn, "scalar_coefficients"):
        coeffs = dyn.scalar_coefficients(req.mode)
        if coeffs is not None:
            return _scalar_euler(req, times, kicks, *coeffs)
    mode = req.mode
    x = req.x0.copy()
    p = x.shape[0]
    dw = req.tape.brownian_increments(times)
    h = np.diff(times)
    out = np.empty((times.shape[0], p))
    out[0] = x
    drift, diffusion = dyn.drift, dyn.diffusion
    _check_diffusion(np.asarray(diffusion(mode, x)), p, req.tape)
    jumps = []
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(h.shape[0]):
            x = x + drift(mode, x) * h[k] + diffusion(mode, x) @ dw[k]
            if kicks:
                dz = kicks.get(times[k + 1])
                if dz is not None:
                    coef = dyn.jump_coefficient(mode, x)
                    if coef is None:
                        raise ConfigError(f"mode {mode} uses jump_euler but has no jump coefficient")
                    post = x + coef @ dz
                    jumps.append(EuclidJump(float(times[k + 1]), x, post))
                    x = post
            out[k + 1] = x
    return _finish(req, times, out, jumps)


def _scalar_euler(req, times, kicks, a, b, s, c, js, jc):
    # same operation order as the vector loop: x + (a x + b) h + (s x + c) dw
    dw = req.tape.brownian_increments(times)[:, 0].tolist()
    t = times.tolist()
    x = float(req.x0[0])
    out = [x]
    jumps = []
    try:
        for k in range(len(dw)):
            x = x + (a * x + b) * (t[k + 1] - t[k]) + (s * x + c) * dw[k]
            if kicks:
                dz = kicks.get(t[k + 1])
                if dz is not None:
                    if js is None:
                        raise ConfigError(f"mode {req.mode} uses jump_euler but has no jump coefficient")
                    post = x + (js * x + jc) * float(dz[0])
                    jumps.append(EuclidJump(t[k + 1], np.array([x]), np.array([post])))
                    x = post
            out.append(x)
    except OverflowError:
        out.extend([math.inf] * (len(t) - len(out)))
    return _finish(req, times, np.array(out).reshape(-1, 1), jumps)


def exact_gbm(req: MicroRequest, mu: float, sigma: float) -> Segment:
    """Exact scalar GBM ``x0 exp((mu - sigma^2/2)(t - t0) + sigma (W_t - W_t0))``."""
    if req.x0.shape[0] != 1:
        raise DomainError("exact_gbm is scalar")
    times = local_grid(req.t_start, req.t_end, req.n)
    w = req.tape.brownian_at(times)[:, 0]
    w = w - w[0]
    with np.errstate(over="ignore"):
        values = req.x0[0] * np.exp((mu - 0.5 * sigma * sigma) * (times - req.t_start) + sigma * w)
    values[0] = req.x0[0]
    return _finish(req, times, values.reshape(-1, 1))


def constant_segment(req: MicroRequest, dyn=None) -> Segment:
    """Hold ``x0`` over the interval on a two-node grid (placeholder dynamics)."""
    times = np.array([req.t_start, req.t_end])
    values = np.empty((2, req.x0.shape[0]))
    values[:] = req.x0
    return Segment(req.t_start, req.t_end, req.mode, times, values)


def _exact_gbm_micro(req, dyn):
    params = dyn.scalar_gbm(req.mode) if hasattr(dyn, "scalar_gbm") else None
    if params is None:
        raise ConfigError(f"exact_gbm needs scalar GBM dynamics in mode {req.mode}")
    return exact_gbm(req, *params)


MICRO_ALGORITHMS = {
    "euler": euler_maruyama,
    "jump_euler": jump_adapted_euler,
    "exact_gbm": _exact_gbm_micro,
    "constant": constant_segment,
}


def get_micro(name: str):
    try:
        return MICRO_ALGORITHMS[name]
    except KeyError:
        raise ConfigError(f"unknown micro-algorithm {name!r}; expected one of {sorted(MICRO_ALGORITHMS)}") from None
