"""Hybrid states and trajectories.

A :class:`HybridPath` stores the joint trajectory ``(J, X)`` as

* an ordered log of discrete jumps ``(time, pre_mode, post_mode)``,
* the Euclidean component as per-interval grid :class:`Segment` objects,
* an ordered log of Euclidean discontinuities ``(time, pre, post)``.

Between grid nodes ``X`` is held constant from the left node, so every
query is exact on the stored data.  All times are model time units.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import DomainError

#: Norm used for the Euclidean part of the hybrid norm (``numpy.linalg.norm`` ``ord``).
VECTOR_NORM_ORD = 2

_TIME_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class HybridState:
    mode: int
    position: np.ndarray

    def __post_init__(self):
        pos = np.array(self.position, dtype=float).reshape(-1)
        pos.setflags(write=False)
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "mode", int(self.mode))

    @property
    def dim(self) -> int:
        return self.position.shape[0]

    def __eq__(self, other):
        if not isinstance(other, HybridState):
            return NotImplemented
        return self.mode == other.mode and np.array_equal(self.position, other.position)

    def __repr__(self):
        return f"HybridState(mode={self.mode}, position={self.position.tolist()})"


@dataclass(frozen=True, eq=False)
class Segment:
    """Euclidean grid on ``[t_start, t_end]`` for one frozen mode.

    ``grid_values[k]`` is the right-continuous value at ``grid_times[k]``.
    """

    t_start: float
    t_end: float
    mode: int
    grid_times: np.ndarray
    grid_values: np.ndarray
    euclid_jumps: tuple = ()  # EuclidJump records inside (t_start, t_end)

    def __post_init__(self):
        times = np.asarray(self.grid_times, dtype=float)
        values = np.asarray(self.grid_values, dtype=float)
        if values.ndim == 1:
            values = values.reshape(-1, 1)
        if times.ndim != 1 or times.shape[0] != values.shape[0] or times.shape[0] < 1:
            raise DomainError("segment grid_times and grid_values must have the same length")
        if times[0] != self.t_start or times[-1] != self.t_end:
            raise DomainError("segment grid must start at t_start and end at t_end")
        n = times.shape[0]
        if n == 2:
            if not times[1] > times[0]:
                raise DomainError("segment grid_times must be strictly increasing")
        elif n > 2 and not (times[1:] > times[:-1]).all():
            raise DomainError("segment grid_times must be strictly increasing")
        times.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "grid_times", times)
        object.__setattr__(self, "grid_values", values)
        object.__setattr__(self, "mode", int(self.mode))

    @property
    def start_value(self) -> np.ndarray:
        return self.grid_values[0]

    @property
    def end_value(self) -> np.ndarray:
        return self.grid_values[-1]


class DiscreteEvent(NamedTuple):
    time: float
    pre_mode: int
    post_mode: int


class EuclidJump(NamedTuple):
    time: float
    pre_value: np.ndarray
    post_value: np.ndarray


class HybridPath:
    """Càdlàg joint trajectory of the discrete and Euclidean components.

    The engine grows a path with :meth:`append_segment`, :meth:`append_event`
    and :meth:`append_euclid_jump`, then calls :meth:`freeze`.  While growing,
    the horizon is the end of the last segment, and all history queries
    already work, which is how rates are evaluated during simulation.
    """

    def __init__(
        self,
        origin: HybridState,
        segments: Sequence[Segment] = (),
        discrete_events: Sequence[DiscreteEvent] = (),
        euclid_jump_events: Sequence[EuclidJump] = (),
        horizon: float | None = None,
        constant_prehistory: bool = False,
    ):
        self.origin = origin
        self.constant_prehistory = constant_prehistory
        self._segments: list[Segment] = []
        self._seg_starts: list[float] = []
        self._events: list[DiscreteEvent] = []
        self._event_times: list[float] = []
        self._jumps: list[EuclidJump] = []
        self._jump_times: list[float] = []
        self._frozen = False
        self._horizon = 0.0
        self._cache = None
        for seg in segments:
            self.append_segment(seg)
        jumps = sorted(euclid_jump_events, key=lambda e: e.time)
        for ev in discrete_events:
            self.append_event(ev.time, ev.pre_mode, ev.post_mode)
        for jp in jumps:
            self.append_euclid_jump(jp.time, jp.pre_value, jp.post_value)
        if horizon is not None or segments:
            self.freeze(horizon)

    # -- construction -----------------------------------------------------

    def _check_mutable(self):
        if self._frozen:
            raise DomainError("HybridPath is frozen")

    def append_segment(self, seg: Segment) -> None:
        self._check_mutable()
        if seg.grid_values.shape[1] != self.dim:
            raise DomainError(f"segment dimension {seg.grid_values.shape[1]} != path dimension {self.dim}")
        if self._segments:
            prev = self._segments[-1]
            if seg.t_start != prev.t_end:
                raise DomainError(f"segment starts at {seg.t_start}, previous ends at {prev.t_end}")
            if not (seg.start_value == prev.end_value).all():
                raise DomainError(f"segment at {seg.t_start} does not continue the previous one")
        else:
            if seg.t_start != 0.0:
                raise DomainError("first segment must start at t=0")
            if not (seg.start_value == self.origin.position).all():
                raise DomainError("first segment must start at the origin position")
        self._segments.append(seg)
        self._seg_starts.append(seg.t_start)
        self._horizon = seg.t_end
        self._cache = None
        for jp in seg.euclid_jumps:
            self.append_euclid_jump(jp.time, jp.pre_value, jp.post_value)

    def append_event(self, time: float, pre_mode: int, post_mode: int) -> None:
        self._check_mutable()
        if time <= 0:
            raise DomainError("discrete events must occur at t > 0")
        if self._event_times and time <= self._event_times[-1]:
            raise DomainError("discrete event times must be strictly increasing")
        expected = self._events[-1].post_mode if self._events else self.origin.mode
        if int(pre_mode) != expected:
            raise DomainError(f"event at {time} has pre_mode {pre_mode}, path is in mode {expected}")
        if int(pre_mode) == int(post_mode):
            raise DomainError("a discrete event must change the mode")
        self._events.append(DiscreteEvent(float(time), int(pre_mode), int(post_mode)))
        self._event_times.append(float(time))
        self._cache = None

    def append_euclid_jump(self, time: float, pre_value, post_value) -> None:
        self._check_mutable()
        if self._jump_times and time <= self._jump_times[-1]:
            raise DomainError("Euclidean jump times must be strictly increasing")
        pre = np.array(pre_value, dtype=float).reshape(-1)
        post = np.array(post_value, dtype=float).reshape(-1)
        pre.setflags(write=False)
        post.setflags(write=False)
        self._jumps.append(EuclidJump(float(time), pre, post))
        self._jump_times.append(float(time))
        self._cache = None

    def freeze(self, horizon: float | None = None) -> "HybridPath":
        if horizon is not None:
            if self._segments and abs(horizon - self._horizon) > _TIME_TOL:
                raise DomainError(f"segments end at {self._horizon}, horizon given as {horizon}")
            self._horizon = float(horizon) if not self._segments else self._horizon
        self._frozen = True
        return self

    # -- basic accessors ----------------------------------------------------

    @property
    def dim(self) -> int:
        return self.origin.dim

    @property
    def horizon(self) -> float:
        return self._horizon

    @property
    def frozen(self) -> bool:
        return self._frozen

    @property
    def segments(self) -> tuple[Segment, ...]:
        return tuple(self._segments)

    @property
    def discrete_events(self) -> tuple[DiscreteEvent, ...]:
        return tuple(self._events)

    @property
    def euclid_jump_events(self) -> tuple[EuclidJump, ...]:
        return tuple(self._jumps)

    @property
    def event_times(self) -> list[float]:
        return self._event_times

    @property
    def jump_times(self) -> list[float]:
        return self._jump_times

    def _check_time(self, t: float, left: bool = False):
        if left:
            if not 0 < t <= self._horizon + _TIME_TOL:
                raise DomainError(f"left limit requested at t={t}, path defined on (0, {self._horizon}]")
        elif not 0 <= t <= self._horizon + _TIME_TOL:
            raise DomainError(f"t={t} outside [0, {self._horizon}]")

    # -- discrete component -------------------------------------------------

    def mode_at(self, t: float) -> int:
        k = bisect.bisect_right(self._event_times, t)
        return self._events[k - 1].post_mode if k else self.origin.mode

    def mode_left_at(self, t: float) -> int:
        k = bisect.bisect_left(self._event_times, t)
        return self._events[k - 1].post_mode if k else self.origin.mode

    # -- Euclidean component ------------------------------------------------

    def segment_index_at(self, t: float) -> int:
        """Index of the segment holding the right-continuous value at ``t``."""
        k = bisect.bisect_right(self._seg_starts, t) - 1
        return max(k, 0)

    def position_at(self, t: float) -> np.ndarray:
        if not self._segments:
            return self.origin.position
        seg = self._segments[self.segment_index_at(t)]
        k = int(np.searchsorted(seg.grid_times, t, side="right")) - 1
        return seg.grid_values[max(k, 0)]

    def position_left_at(self, t: float) -> np.ndarray:
        k = bisect.bisect_left(self._jump_times, t)
        if k < len(self._jump_times) and self._jump_times[k] == t:
            return self._jumps[k].pre_value
        return self.position_at(t)

    def state_at(self, t: float) -> HybridState:
        """Right-continuous value ``Y_t``."""
        self._check_time(t)
        return HybridState(self.mode_at(t), self.position_at(t))

    def state_left_at(self, t: float) -> HybridState:
        """Left limit ``Y_{t-}``."""
        self._check_time(t, left=True)
        return HybridState(self.mode_left_at(t), self.position_left_at(t))

    # -- vectorised evaluation on finished paths ----------------------------

    def _flat(self):
        if self._cache is None:
            if self._segments:
                times = np.concatenate([s.grid_times for s in self._segments])
                values = np.concatenate([s.grid_values for s in self._segments])
            else:
                times = np.zeros(1)
                values = self.origin.position.reshape(1, -1)
            ev_t = np.array(self._event_times, dtype=float)
            ev_post = np.array([self.origin.mode] + [e.post_mode for e in self._events], dtype=np.int64)
            jp_t = np.array(self._jump_times, dtype=float)
            jp_pre = (
                np.array([j.pre_value for j in self._jumps], dtype=float).reshape(-1, self.dim)
                if self._jumps
                else np.zeros((0, self.dim))
            )
            self._cache = (times, values, ev_t, ev_post, jp_t, jp_pre)
        return self._cache

    def grid_times(self) -> np.ndarray:
        """Sorted unique grid node times over all segments."""
        return np.unique(self._flat()[0])

    def all_event_times(self) -> np.ndarray:
        """Sorted unique times of discrete and Euclidean jumps."""
        return np.union1d(np.array(self._event_times, dtype=float), np.array(self._jump_times, dtype=float))

    def modes_at(self, times, left: bool = False) -> np.ndarray:
        _, _, ev_t, ev_post, _, _ = self._flat()
        side = "left" if left else "right"
        return ev_post[np.searchsorted(ev_t, times, side=side)]

    def positions_at(self, times, left: bool = False) -> np.ndarray:
        g_t, g_v, _, _, jp_t, jp_pre = self._flat()
        times = np.asarray(times, dtype=float)
        idx = np.maximum(np.searchsorted(g_t, times, side="right") - 1, 0)
        out = g_v[idx]
        if left and jp_t.size:
            k = np.searchsorted(jp_t, times, side="left")
            hit = (k < jp_t.size) & (jp_t[np.minimum(k, jp_t.size - 1)] == times)
            if hit.any():
                out = out.copy()
                out[hit] = jp_pre[k[hit]]
        return out

    def __repr__(self):
        return (
            f"HybridPath(horizon={self._horizon}, segments={len(self._segments)}, "
            f"discrete_events={len(self._events)}, euclid_jumps={len(self._jumps)})"
        )


def hybrid_norm(a: HybridState, b: HybridState) -> float:
    """``|j_a - j_b| + ||x_a - x_b||``."""
    if a.dim != b.dim:
        raise DomainError(f"dimension mismatch: {a.dim} vs {b.dim}")
    return abs(a.mode - b.mode) + float(np.linalg.norm(a.position - b.position, ord=VECTOR_NORM_ORD))


def evaluation_times(paths: Sequence[HybridPath], t_end: float) -> np.ndarray:
    """Merged grid and event times of ``paths`` in ``[0, t_end]``."""
    parts = [np.array([0.0, t_end])]
    for p in paths:
        parts.append(p.grid_times())
        parts.append(p.all_event_times())
    times = np.unique(np.concatenate(parts))
    return times[(times >= 0) & (times <= t_end)]


def sup_distance(a: HybridPath, b: HybridPath, t_end: float, open_end: bool = False, nodes_of=None) -> float:
    """Supremum of the hybrid norm of ``a - b`` over ``[0, t_end]``.

    Evaluated on the merged grid/event times with left limits included at
    event times, which is exact for held paths.  With ``open_end`` the
    supremum is over ``[0, t_end)``: only the left limit is used at ``t_end``.
    With ``nodes_of`` set to one of the paths, only that path's grid nodes
    (plus all event times) are used: the usual nodal strong error.
    """
    if a.dim != b.dim:
        raise DomainError(f"dimension mismatch: {a.dim} vs {b.dim}")
    for p in (a, b):
        if p.horizon + _TIME_TOL < t_end:
            raise DomainError(f"path horizon {p.horizon} shorter than t_end={t_end}")
    times = evaluation_times((a, b) if nodes_of is None else (nodes_of,), t_end)
    ev = np.union1d(a.all_event_times(), b.all_event_times())
    ev = ev[(ev > 0) & (ev <= t_end)]
    if open_end and t_end > 0:
        times = times[times < t_end]
        ev = np.union1d(ev, [t_end])
    dist = _norm_diff(a, b, times, left=False) if times.size else 0.0
    if ev.size:
        dist = max(dist, _norm_diff(a, b, ev, left=True))
    return dist


def _norm_diff(a, b, times, left):
    dm = np.abs(a.modes_at(times, left) - b.modes_at(times, left))
    dx = np.linalg.norm(a.positions_at(times, left) - b.positions_at(times, left), ord=VECTOR_NORM_ORD, axis=1)
    return float(np.max(dm + dx))
