"""Reproducible, stream-separated driving noise.

Each path draws from independent Philox streams keyed by
``SeedSequence(seed, spawn_key=(path_index, stream_id))``:

====== ==============================================
stream content
====== ==============================================
0      master Poisson inter-arrival times
1      master marks ``U_m`` (uniform on ``[0, lam)``)
2      Brownian increments on the fine grid
3      Brownian bridge values at off-grid times
4+2s   arrival times of compound Poisson stream ``s``
5+2s   jump sizes of compound Poisson stream ``s``
====== ==============================================

Changing ``lam`` therefore leaves the fine Brownian increments untouched.

Solvers restart their grid at every master atom, so they ask for ``W`` at
times ``T_m + j/n`` that are off the fine grid.  For every level ``n``
dividing ``n_ref`` those times lie in the set ``T_m + j/n_ref`` (plus atom
and compound Poisson times), which the tape fixes in advance; ``W`` is
sampled there exactly by Brownian bridges between fine grid points.  Any
other time is linearly interpolated between the known points.
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DomainError, ResourceError

STREAM_ATOM_TIMES = 0
STREAM_MARKS = 1
STREAM_BROWNIAN = 2
STREAM_BRIDGE = 3
_STREAM_CP_BASE = 4

#: maximum number of fine Brownian increments per tape
MAX_FINE_INCREMENTS = 50_000_000

TAPE_MAGIC = b"MHSDTAPE"
TAPE_VERSION = 1


def stream_rng(seed: int, path_index: int, stream: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(path_index), int(stream)))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class CompoundPoissonSpec:
    """Compound Poisson stream with double-exponential jump sizes."""

    rate: float
    p_up: float
    eta_up: float
    eta_down: float

    def __post_init__(self):
        if not self.rate >= 0:
            raise ConfigError(f"compound Poisson rate must be >= 0, got {self.rate}")
        _check_double_exponential(self.p_up, self.eta_up, self.eta_down)


def _check_double_exponential(p_up, eta_up, eta_down):
    if not 0 <= p_up <= 1:
        raise ConfigError(f"p_up must lie in [0, 1], got {p_up}")
    if not (eta_up > 0 and eta_down > 0):
        raise ConfigError("eta_up and eta_down must be positive")


def sample_double_exponential(rng: np.random.Generator, p_up: float, eta_up: float, eta_down: float, size=None):
    """``+Exp(mean eta_up)`` with probability ``p_up``, else ``-Exp(mean eta_down)``."""
    _check_double_exponential(p_up, eta_up, eta_down)
    n = 1 if size is None else size
    up = rng.random(n) < p_up
    mag = rng.exponential(1.0, n)
    out = np.where(up, mag * eta_up, -mag * eta_down)
    return float(out[0]) if size is None else out


def _poisson_times(rng: np.random.Generator, rate: float, horizon: float) -> np.ndarray:
    if rate == 0 or horizon <= 0:
        return np.zeros(0)
    chunk = int(rate * horizon + 5 * math.sqrt(rate * horizon) + 16)
    parts = []
    t = 0.0
    while t <= horizon:
        gaps = rng.exponential(1.0 / rate, chunk)
        times = t + np.cumsum(gaps)
        parts.append(times)
        t = times[-1]
    times = np.concatenate(parts)
    return times[times <= horizon]


@dataclass(frozen=True, eq=False)
class NoiseTape:
    seed: int
    path_index: int
    horizon: float
    n_ref: int
    lam: float
    brownian: np.ndarray  # (n_steps, d_w) increments on the fine grid
    atom_times: np.ndarray
    atom_marks: np.ndarray
    cp_times: tuple = ()  # one array per compound Poisson stream
    cp_sizes: tuple = ()
    bridge_times: np.ndarray = None  # off-grid times where W is known exactly
    bridge_values: np.ndarray = None  # (len(bridge_times), d_w)
    _knots: tuple = field(default=None, repr=False)

    def __post_init__(self):
        d_w = self.brownian.shape[1]
        if self.bridge_times is None:
            object.__setattr__(self, "bridge_times", np.zeros(0))
            object.__setattr__(self, "bridge_values", np.zeros((0, d_w)))
        cum = np.vstack([np.zeros((1, d_w)), np.cumsum(self.brownian, axis=0)])
        grid = np.arange(self.n_steps + 1) / self.n_ref
        times = np.concatenate([grid, self.bridge_times])
        order = np.argsort(times, kind="stable")
        knots_t = times[order]
        knots_w = np.concatenate([cum, self.bridge_values.reshape(self.bridge_times.shape[0], d_w)])[order]
        for arr in (self.brownian, self.atom_times, self.atom_marks, self.bridge_times, self.bridge_values,
                    knots_t, knots_w, *self.cp_times, *self.cp_sizes):
            arr.setflags(write=False)
        object.__setattr__(self, "_knots", (knots_t, knots_w))

    @property
    def fine_step(self) -> float:
        return 1.0 / self.n_ref

    @property
    def brownian_dim(self) -> int:
        return self.brownian.shape[1]

    @property
    def n_steps(self) -> int:
        return self.brownian.shape[0]

    @property
    def atoms(self):
        return list(zip(self.atom_times.tolist(), self.atom_marks.tolist()))

    def brownian_at(self, times) -> np.ndarray:
        """``W(t)`` for each time, shape ``(len(times), d_w)``.

        Exact on the fine grid and at the bridge times, linear in between.
        """
        times = np.atleast_1d(np.asarray(times, dtype=float))
        knots_t, knots_w = self._knots
        if times.size and (times.min() < 0 or times.max() > knots_t[-1] + 1e-9 / self.n_ref):
            raise DomainError(f"Brownian path requested outside [0, {self.horizon}]")
        last = knots_t.shape[0] - 1
        k = np.clip(np.searchsorted(knots_t, times, side="right") - 1, 0, last)
        nxt = np.minimum(k + 1, last)
        span = knots_t[nxt] - knots_t[k]
        frac = np.where(span > 0, (times - knots_t[k]) / np.where(span > 0, span, 1.0), 0.0)
        frac = np.clip(frac, 0.0, 1.0)[:, None]
        return knots_w[k] + frac * (knots_w[nxt] - knots_w[k])

    def brownian_increments(self, grid) -> np.ndarray:
        """Increments of ``W`` over consecutive grid intervals, shape ``(len(grid)-1, d_w)``."""
        return np.diff(self.brownian_at(grid), axis=0)

    def cp_events_between(self, t0: float, t1: float):
        """Compound Poisson events with ``t0 < time < t1`` as ``(time, stream, size)`` sorted by time."""
        out = []
        for s, (times, sizes) in enumerate(zip(self.cp_times, self.cp_sizes)):
            lo = np.searchsorted(times, t0, side="right")
            hi = np.searchsorted(times, t1, side="left")
            out.extend((float(times[k]), s, float(sizes[k])) for k in range(lo, hi))
        out.sort()
        return out

    def cp_time_array(self) -> np.ndarray:
        return np.concatenate(self.cp_times) if self.cp_times else np.zeros(0)


def generate_tape(
    seed: int,
    horizon: float,
    n_ref: int,
    lam: float,
    cp_specs=(),
    brownian_dim: int = 1,
    path_index: int = 0,
) -> NoiseTape:
    """Materialise all randomness for one path on ``[0, horizon]``."""
    if n_ref < 1:
        raise DomainError("n_ref must be >= 1")
    if not lam > 0:
        raise DomainError("lambda must be positive")
    if horizon <= 0:
        raise DomainError("horizon must be positive")
    if brownian_dim < 0:
        raise DomainError("brownian_dim must be >= 0")
    n_steps = int(math.ceil(horizon * n_ref - 1e-9))
    if n_steps * max(brownian_dim, 1) > MAX_FINE_INCREMENTS:
        raise ResourceError(
            f"tape needs {n_steps * brownian_dim} Brownian increments (horizon={horizon}, n_ref={n_ref}); "
            f"budget is {MAX_FINE_INCREMENTS}"
        )
    atom_times = _poisson_times(stream_rng(seed, path_index, STREAM_ATOM_TIMES), lam, horizon)
    marks = lam * stream_rng(seed, path_index, STREAM_MARKS).random(atom_times.shape[0])
    marks = np.minimum(marks, np.nextafter(lam, 0.0))
    if brownian_dim:
        brownian = stream_rng(seed, path_index, STREAM_BROWNIAN).standard_normal((n_steps, brownian_dim))
        brownian *= math.sqrt(1.0 / n_ref)
    else:
        brownian = np.zeros((n_steps, 0))
    cp_times, cp_sizes = [], []
    for s, spec in enumerate(cp_specs):
        times = _poisson_times(stream_rng(seed, path_index, _STREAM_CP_BASE + 2 * s), spec.rate, horizon)
        sizes = sample_double_exponential(
            stream_rng(seed, path_index, _STREAM_CP_BASE + 2 * s + 1),
            spec.p_up,
            spec.eta_up,
            spec.eta_down,
            size=times.shape[0],
        )
        cp_times.append(times)
        cp_sizes.append(np.asarray(sizes, dtype=float))
    bridge_t = bridge_w = None
    if brownian_dim:
        bridge_t = _bridge_times(atom_times, cp_times, horizon, n_ref, n_steps)
        bridge_w = _sample_bridge(
            stream_rng(seed, path_index, STREAM_BRIDGE), brownian, bridge_t, n_ref
        )
    return NoiseTape(
        int(seed), int(path_index), float(horizon), int(n_ref), float(lam),
        brownian, atom_times, marks, tuple(cp_times), tuple(cp_sizes), bridge_t, bridge_w,
    )


def _bridge_times(atom_times, cp_times, horizon, n_ref, n_steps) -> np.ndarray:
    """Off-grid times a solver at any level dividing ``n_ref`` can ask for."""
    h = 1.0 / n_ref
    parts = [atom_times, *cp_times]
    ends = np.append(atom_times, horizon)
    for start, end in zip(atom_times.tolist(), ends[1:].tolist()):
        k = int(math.ceil((end - start) * n_ref - 1e-9))
        if k > 1:
            # same arithmetic as the solver grid ``t_start + (1/n) * j``
            parts.append(start + h * np.arange(1, k, dtype=float))
    times = np.unique(np.concatenate(parts)) if parts else np.zeros(0)
    pos = times * n_ref
    off_grid = np.abs(pos - np.rint(pos)) > 1e-9
    return times[off_grid & (times > 0) & (pos < n_steps)]


def _sample_bridge(rng, brownian, times, n_ref) -> np.ndarray:
    """Exact Brownian bridge values at sorted off-grid ``times`` given the fine increments."""
    d_w = brownian.shape[1]
    z = rng.standard_normal((times.shape[0], d_w))
    if not times.size:
        return np.zeros((0, d_w))
    cum = np.vstack([np.zeros((1, d_w)), np.cumsum(brownian, axis=0)])
    cell = np.floor(times * n_ref).astype(np.int64)
    t_right = (cell + 1) / n_ref
    w_right = cum[cell + 1]
    # within a cell, sample left to right conditioning on the previous point
    first = np.ones(times.shape[0], dtype=bool)
    first[1:] = cell[1:] != cell[:-1]
    out = np.empty((times.shape[0], d_w))
    t_left = cell / n_ref
    w_left = cum[cell]
    pos = np.arange(times.shape[0])
    rank = pos - np.maximum.accumulate(np.where(first, pos, 0))
    for r in range(int(rank.max()) + 1):
        idx = np.nonzero(rank == r)[0]
        if r:
            t_left[idx] = times[idx - 1]
            w_left[idx] = out[idx - 1]
        span = t_right[idx] - t_left[idx]
        a = (times[idx] - t_left[idx]) / span
        var = (times[idx] - t_left[idx]) * (t_right[idx] - times[idx]) / span
        out[idx] = w_left[idx] + a[:, None] * (w_right[idx] - w_left[idx]) + np.sqrt(var)[:, None] * z[idx]
    return out


def _prime_factors(n: int) -> list[int]:
    out, p = [], 2
    while p * p <= n:
        while n % p == 0:
            out.append(p)
            n //= p
        p += 1
    if n > 1:
        out.append(n)
    return out


def coarsen_increments(increments: np.ndarray, factor: int) -> np.ndarray:
    """Sum consecutive blocks of ``factor`` increments.

    Blocks are summed one prime factor at a time in increasing order, so for
    power-of-two factors coarsening by ``a`` then ``b`` is bit-identical to
    coarsening by ``a * b``.
    """
    factor = int(factor)
    if factor < 1:
        raise DomainError("coarsening factor must be >= 1")
    inc = np.asarray(increments, dtype=float)
    if inc.ndim == 1:
        inc = inc[:, None]
    if inc.shape[0] % factor:
        raise DomainError(f"{inc.shape[0]} increments are not divisible by factor {factor}")
    for p in _prime_factors(factor):
        inc = inc.reshape(-1, p, inc.shape[1]).sum(axis=1)
    return inc


def coarsen_brownian(tape: NoiseTape, factor: int) -> np.ndarray:
    """Brownian increments at step ``factor * fine_step``."""
    if tape.n_ref % factor:
        raise DomainError(f"factor {factor} does not divide n_ref={tape.n_ref}")
    return coarsen_increments(tape.brownian, factor)


# -- binary dump ----------------------------------------------------------------
#
# Little-endian layout:
#   magic "MHSDTAPE" | u32 version | u64 seed | u64 path_index | f64 horizon
#   | u64 n_ref | f64 lam | u32 d_w | u64 n_steps | u64 n_atoms | u32 n_cp
#   | f64[n_steps*d_w] brownian (row-major) | f64[n_atoms] atom times
#   | f64[n_atoms] marks | per cp stream: u64 count, f64[count] times, f64[count] sizes
#   | u64 n_bridge | f64[n_bridge] bridge times | f64[n_bridge*d_w] bridge values (row-major)

_HEADER = struct.Struct("<8sIQQdQdIQQI")


def dump_tape(tape: NoiseTape, fh) -> None:
    fh.write(
        _HEADER.pack(
            TAPE_MAGIC, TAPE_VERSION, tape.seed, tape.path_index, tape.horizon, tape.n_ref, tape.lam,
            tape.brownian_dim, tape.n_steps, tape.atom_times.shape[0], len(tape.cp_times),
        )
    )
    fh.write(np.ascontiguousarray(tape.brownian, dtype="<f8").tobytes())
    fh.write(tape.atom_times.astype("<f8").tobytes())
    fh.write(tape.atom_marks.astype("<f8").tobytes())
    for times, sizes in zip(tape.cp_times, tape.cp_sizes):
        fh.write(struct.pack("<Q", times.shape[0]))
        fh.write(times.astype("<f8").tobytes())
        fh.write(sizes.astype("<f8").tobytes())
    fh.write(struct.pack("<Q", tape.bridge_times.shape[0]))
    fh.write(tape.bridge_times.astype("<f8").tobytes())
    fh.write(np.ascontiguousarray(tape.bridge_values, dtype="<f8").tobytes())


def load_tape(fh) -> NoiseTape:
    head = fh.read(_HEADER.size)
    magic, version, seed, path_index, horizon, n_ref, lam, d_w, n_steps, n_atoms, n_cp = _HEADER.unpack(head)
    if magic != TAPE_MAGIC:
        raise DomainError("not a noise tape file")
    if version != TAPE_VERSION:
        raise DomainError(f"unsupported tape version {version}")

    def read(n):
        return np.frombuffer(fh.read(8 * n), dtype="<f8").astype(float)

    brownian = read(n_steps * d_w).reshape(n_steps, d_w)
    atom_times = read(n_atoms)
    marks = read(n_atoms)
    cp_times, cp_sizes = [], []
    for _ in range(n_cp):
        (count,) = struct.unpack("<Q", fh.read(8))
        cp_times.append(read(count))
        cp_sizes.append(read(count))
    (n_bridge,) = struct.unpack("<Q", fh.read(8))
    bridge_t = read(n_bridge)
    bridge_w = read(n_bridge * d_w).reshape(n_bridge, d_w)
    return NoiseTape(
        seed, path_index, horizon, n_ref, lam, brownian, atom_times, marks,
        tuple(cp_times), tuple(cp_sizes), bridge_t, bridge_w,
    )


def tape_bytes(tape: NoiseTape) -> bytes:
    buf = io.BytesIO()
    dump_tape(tape, buf)
    return buf.getvalue()
