"""Event-driven construction of approximate hybrid paths.

The master Poisson atoms ``(T_m, U_m)`` of a :class:`NoiseTape` drive the
discrete component: between atoms the Euclidean part is advanced by the
mode's micro-algorithm, and at each atom the rate row is computed from the
path built so far and resolved by thinning.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, NamedTuple

from .errors import ConfigError, DomainError
from .kernel import IntensitySpec, RateRow, apply_mark, canonical_partition, evaluate_rates
from .micro import MicroRequest, get_micro
from .noise import CompoundPoissonSpec, NoiseTape, generate_tape
from .paths import HybridPath, HybridState, sup_distance


@dataclass(frozen=True)
class ModelSpec:
    lam: float
    intensity: IntensitySpec
    dynamics: object  # ModeDynamics or AffineDynamics
    initial: HybridState
    micro: str | Mapping = "euler"  # name, or {mode: name} with optional "default"
    brownian_dim: int = 1
    cp_specs: tuple = ()  # CompoundPoissonSpec per compound Poisson stream
    constant_prehistory: bool = False

    def __post_init__(self):
        if not self.lam > 0:
            raise ConfigError(f"lambda must be positive, got {self.lam}")
        if self.intensity.lam != self.lam:
            raise ConfigError(f"intensity lambda {self.intensity.lam} != model lambda {self.lam}")
        for spec in self.cp_specs:
            if not isinstance(spec, CompoundPoissonSpec):
                raise ConfigError("cp_specs entries must be CompoundPoissonSpec")

    @property
    def dim(self) -> int:
        return self.initial.dim

    def micro_for(self, mode: int) -> Callable:
        if isinstance(self.micro, str):
            return get_micro(self.micro)
        name = self.micro.get(mode, self.micro.get("default"))
        if name is None:
            raise ConfigError(f"no micro-algorithm configured for mode {mode}")
        return get_micro(name)

    def tape(self, seed: int, horizon: float, n_ref: int, path_index: int = 0) -> NoiseTape:
        return generate_tape(seed, horizon, n_ref, self.lam, self.cp_specs, self.brownian_dim, path_index)


class AuditRecord(NamedTuple):
    atom_index: int  # 1-based
    time: float
    mode_before: int
    row: RateRow
    u: float
    mode_after: int

    @property
    def q_total(self) -> float:
        return self.row.total_exit

    @property
    def increment(self) -> int:
        return self.mode_after - self.mode_before


def _check_tape(model: ModelSpec, T: float, tape: NoiseTape):
    if tape.horizon + 1e-12 < T:
        raise DomainError(f"tape horizon {tape.horizon} shorter than T={T}")
    if tape.lam != model.lam:
        raise DomainError(f"tape lambda {tape.lam} != model lambda {model.lam}")
    if len(tape.cp_times) != len(model.cp_specs):
        raise DomainError("tape and model disagree on the number of compound Poisson streams")


def simulate(model: ModelSpec, T: float, n: int, tape: NoiseTape) -> HybridPath:
    """Approximate path on ``[0, T]`` at level ``n``; the audit trail is ``path.audit``."""
    if not T > 0:
        raise DomainError("horizon T must be positive")
    _check_tape(model, T, tape)
    path = HybridPath(model.initial, constant_prehistory=model.constant_prehistory)
    audit = []
    dyn = model.dynamics
    mode = model.initial.mode
    x = model.initial.position
    t_prev = 0.0
    for m, (tm, um) in enumerate(zip(tape.atom_times.tolist(), tape.atom_marks.tolist()), start=1):
        if tm > T:
            break
        seg = model.micro_for(mode)(MicroRequest(mode, x, t_prev, tm, n, tape), dyn)
        path.append_segment(seg)
        row = evaluate_rates(model.intensity, tm, path)
        new_mode = apply_mark(canonical_partition(row), um)
        audit.append(AuditRecord(m, tm, mode, row, um, new_mode))
        if new_mode != mode:
            path.append_event(tm, mode, new_mode)
        mode, x, t_prev = new_mode, seg.end_value, tm
    if t_prev < T:
        seg = model.micro_for(mode)(MicroRequest(mode, x, t_prev, T, n, tape), dyn)
        path.append_segment(seg)
    path.freeze()
    path.audit = tuple(audit)
    return path


def decoupling_time(a: HybridPath, b: HybridPath):
    """First time the discrete components differ, or ``None``."""
    if a.origin.mode != b.origin.mode:
        return 0.0
    horizon = min(a.horizon, b.horizon)
    for t in sorted(set(a.event_times) | set(b.event_times)):
        if t > horizon:
            break
        if a.mode_at(t) != b.mode_at(t):
            return t
    return None


def disagreement_index(audit_a, audit_b):
    """Index of the first atom where the two runs' jump increments differ, or ``None``."""
    for ra, rb in zip(audit_a, audit_b):
        if ra.atom_index != rb.atom_index or ra.time != rb.time or ra.u != rb.u:
            raise DomainError(f"audits come from different tapes (atom {ra.atom_index})")
        if ra.increment != rb.increment:
            return ra.atom_index
    if len(audit_a) != len(audit_b):
        raise DomainError("audits have different numbers of atoms")
    return None


@dataclass
class CoupledResult:
    fine: HybridPath
    coarse: HybridPath
    iota: float | None
    sup_err_pre_decouple: float
    kappa: int | None = None
    kappa_time: float | None = None

    @property
    def decoupled(self) -> bool:
        return self.iota is not None

    @property
    def kappa_iota_consistent(self) -> bool:
        """No disagreement implies no decoupling; with both present ``T_kappa == iota``."""
        if self.kappa is None:
            return self.iota is None
        return self.iota is not None and self.kappa_time == self.iota


ERROR_METRICS = ("path", "nodes")


def compare_coupled(fine: HybridPath, coarse: HybridPath, T: float, metric: str = "path") -> CoupledResult:
    """Decoupling time, disagreement index and the sup error before decoupling.

    ``metric="path"`` takes the supremum over all of ``[0, T ^ iota)``;
    ``"nodes"`` restricts it to the coarse path's grid nodes and event times.
    """
    if metric not in ERROR_METRICS:
        raise DomainError(f"unknown error metric {metric!r}; expected one of {ERROR_METRICS}")
    nodes_of = coarse if metric == "nodes" else None
    iota = decoupling_time(fine, coarse)
    if iota is None:
        err = sup_distance(fine, coarse, T, nodes_of=nodes_of)
    elif iota == 0:
        err = 0.0
    else:
        err = sup_distance(fine, coarse, iota, open_end=True, nodes_of=nodes_of)
    kappa = disagreement_index(fine.audit, coarse.audit)
    kappa_time = fine.audit[kappa - 1].time if kappa is not None else None
    return CoupledResult(fine, coarse, iota, err, kappa, kappa_time)


def simulate_coupled(model: ModelSpec, T: float, n_coarse: int, n_fine: int, tape: NoiseTape,
                     metric: str = "path") -> CoupledResult:
    """Run levels ``n_fine`` (reference) and ``n_coarse`` on the same tape."""
    if n_coarse < 1 or n_fine % n_coarse:
        raise DomainError(f"n_fine={n_fine} must be an integer multiple of n_coarse={n_coarse}")
    fine = simulate(model, T, n_fine, tape)
    coarse = simulate(model, T, n_coarse, tape)
    return compare_coupled(fine, coarse, T, metric)


# -- batch driver -----------------------------------------------------------------


def default_jobs() -> int:
    return os.cpu_count() or 1


def run_batch(fn: Callable, args: list, jobs: int = 1) -> list:
    """``[fn(a) for a in args]``, optionally in worker processes; order is preserved."""
    if jobs is None:
        jobs = default_jobs()
    if jobs <= 1 or len(args) <= 1:
        return [fn(a) for a in args]
    chunk = max(1, len(args) // (4 * jobs))
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, args, chunksize=chunk))


@dataclass
class _PathTask:
    model: ModelSpec
    T: float
    n: int
    seed: int
    n_ref: int
    path_fn: Callable | None = field(default=None)

    def __call__(self, index: int):
        tape = self.model.tape(self.seed, self.T, self.n_ref, path_index=index)
        path = simulate(self.model, self.T, self.n, tape)
        return self.path_fn(path) if self.path_fn is not None else path


def simulate_many(model: ModelSpec, T: float, n: int, paths: int, seed: int, n_ref: int | None = None,
                  reduce: Callable | None = None, jobs: int = 1) -> list:
    """Simulate ``paths`` independent paths (path index 0..paths-1), mapping each through ``reduce``."""
    task = _PathTask(model, T, n, seed, n_ref or n, reduce)
    return run_batch(task, list(range(paths)), jobs)
