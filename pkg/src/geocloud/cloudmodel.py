"""Cloud domain model and physical models (utilisation, power, cooling, migration).

Resource tuples follow the scenario's declared kinds; by convention index 0 is
CPU cores and index 1 is RAM in GB.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from datetime import datetime
from typing import Iterable, Mapping, Optional, Sequence, Union

from .errors import ActionError, DomainError, ModelError, ParameterError
from .geotemporal import TimeSeries, as_utc, make_rng

log = logging.getLogger(__name__)

CPU, RAM = 0, 1
BITS_PER_GB = 8e9


def resource_spec(values: Iterable[float], r: Optional[int] = None) -> tuple[float, ...]:
    spec = tuple(float(v) for v in values)
    if r is not None and len(spec) != r:
        raise ParameterError(f"expected {r} resource values, got {len(spec)}")
    if any(v < 0 for v in spec):
        raise ParameterError(f"resource values must be >= 0, got {spec}")
    return spec


def normalize_weights(weights: Sequence[float]) -> tuple[float, ...]:
    total = float(sum(weights))
    if total <= 0 or any(w < 0 for w in weights):
        raise ParameterError(f"weights must be nonnegative with a positive sum, got {tuple(weights)}")
    return tuple(w / total for w in weights)


# -- power models --------------------------------------------------------------

Level = Union[float, TimeSeries]


def _level(x: Level, t: Optional[datetime]) -> float:
    if isinstance(x, TimeSeries):
        if t is None:
            raise ParameterError("time-varying power level needs a timestamp")
        return x.value_at(t)
    return float(x)


@dataclass(frozen=True)
class LinearPowerModel:
    p_peak: Level = 200.0
    p_idle: Level = 100.0
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ParameterError("noise_sigma must be >= 0")
        if not isinstance(self.p_peak, TimeSeries) and not isinstance(self.p_idle, TimeSeries):
            if self.p_idle > self.p_peak:
                raise ParameterError(f"p_idle {self.p_idle} exceeds p_peak {self.p_peak}")


# ARM Cortex-A15 fit; order (p00, p10, p01, p20, p11, p30, p21).
ARM_PEAK_COEFFS = (1.318, 0.2243, 0.03559, 0.03137, -0.00318, 0.00711, 0.000438)
ARM_GAMMA_COEFFS = (-1.362, 2.798, 1.31)
ARM_P_MAX_CORE = sum(ARM_GAMMA_COEFFS)


@dataclass(frozen=True)
class MulticorePowerModel:
    peak_coeffs: tuple = ARM_PEAK_COEFFS
    gamma_coeffs: tuple = ARM_GAMMA_COEFFS
    p_max_core: float = ARM_P_MAX_CORE
    freq_steps: int = 11
    core_count: int = 4

    def __post_init__(self):
        if len(self.peak_coeffs) != 7 or len(self.gamma_coeffs) != 3:
            raise ParameterError("multicore model needs 7 peak and 3 gamma coefficients")
        if self.freq_steps < 1 or self.core_count < 1:
            raise ParameterError("freq_steps and core_count must be >= 1")


PowerModel = Union[LinearPowerModel, MulticorePowerModel]


@dataclass(frozen=True)
class MigrationModel:
    """Pre-copy live migration; rates in bits/s, sizes in bits."""

    bandwidth: float = 1e9
    dirty_rate: float = 0.3e9
    threshold: float = 0.1e9
    energy_per_byte: float = 0.512e-6
    energy_fixed: float = 20.165
    downtime_per_migration: float = 60.0

    def __post_init__(self):
        if not 0 < self.dirty_rate < self.bandwidth:
            raise ModelError(f"need 0 < dirty rate < bandwidth, got D={self.dirty_rate}, R={self.bandwidth}")
        if self.threshold <= 0:
            raise ModelError("pre-copy threshold must be > 0")


# -- domain entities -------------------------------------------------------------

@dataclass(frozen=True)
class PM:
    id: int
    location: str
    capacity: tuple
    power_model: PowerModel = field(default_factory=LinearPowerModel)
    freq_range: tuple = (2.6e9, 3.4e9, 0.2e9)
    n_cores: int = 4

    def __post_init__(self):
        object.__setattr__(self, "capacity", resource_spec(self.capacity))
        if any(c <= 0 for c in self.capacity):
            raise ParameterError(f"PM {self.id}: capacities must be > 0, got {self.capacity}")
        f_min, f_max, f_step = self.freq_range
        if f_min > f_max or f_step <= 0:
            raise ParameterError(f"PM {self.id}: bad frequency range {self.freq_range}")
        n = (f_max - f_min) / f_step
        if abs(n - round(n)) > 1e-9:
            raise ParameterError(f"PM {self.id}: frequency span not divisible by step")

    @property
    def f_min(self) -> float:
        return self.freq_range[0]

    @property
    def f_max(self) -> float:
        return self.freq_range[1]

    @property
    def f_step(self) -> float:
        return self.freq_range[2]

    def freq_levels(self) -> list[float]:
        n = int(round((self.f_max - self.f_min) / self.f_step))
        return [self.f_min + i * self.f_step for i in range(n + 1)]

    def q_step(self, f: float) -> int:
        """Frequency step index, 1 at ``f_min``."""
        q = 1 + (f - self.f_min) / self.f_step
        if abs(q - round(q)) > 1e-6:
            raise DomainError(f"PM {self.id}: {f} Hz is off the frequency grid")
        return int(round(q))

    def on_grid(self, f: float) -> bool:
        if not self.f_min - 1e-6 <= f <= self.f_max + 1e-6:
            return False
        q = (f - self.f_min) / self.f_step
        return abs(q - round(q)) <= 1e-6


@dataclass(frozen=True)
class VM:
    id: int
    requested: tuple
    beta: float = 1.0
    boot_time: Optional[datetime] = None
    delete_time: Optional[datetime] = None
    green: bool = False

    def __post_init__(self):
        object.__setattr__(self, "requested", resource_spec(self.requested))
        if not 0 <= self.beta <= 1:
            raise ParameterError(f"VM {self.id}: beta must lie in [0, 1], got {self.beta}")
        if self.boot_time is not None:
            object.__setattr__(self, "boot_time", as_utc(self.boot_time))
        if self.delete_time is not None:
            object.__setattr__(self, "delete_time", as_utc(self.delete_time))
            if self.boot_time is not None and self.delete_time <= self.boot_time:
                raise ParameterError(f"VM {self.id}: delete_time must follow boot_time")

    @property
    def cores(self) -> int:
        return max(1, int(round(self.requested[CPU])))

    @property
    def ram(self) -> float:
        return self.requested[RAM] if len(self.requested) > RAM else 0.0

    @property
    def mem_bits(self) -> float:
        return self.ram * BITS_PER_GB


@dataclass(frozen=True)
class CloudState:
    """Snapshot of the cloud; never mutated in place."""

    time: Optional[datetime]
    alloc: Mapping = field(default_factory=dict)
    paused: frozenset = frozenset()
    freq: Mapping = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "alloc", {pm: frozenset(v) for pm, v in self.alloc.items()})
        object.__setattr__(self, "paused", frozenset(self.paused))
        object.__setattr__(self, "freq", dict(self.freq))

    @classmethod
    def empty(cls, pms: Iterable[PM], time=None) -> "CloudState":
        pms = list(pms)
        return cls(time, {pm.id: frozenset() for pm in pms}, frozenset(), {pm.id: pm.f_max for pm in pms})

    def host_of(self, vm_id) -> Optional[int]:
        for pm, vms in self.alloc.items():
            if vm_id in vms:
                return pm
        return None

    def hosts(self) -> dict:
        """VM id -> PM id (first host in PM order if a VM is placed twice)."""
        out = {}
        for pm in sorted(self.alloc):
            for vm in self.alloc[pm]:
                out.setdefault(vm, pm)
        return out

    def allocated(self) -> frozenset:
        return frozenset().union(*self.alloc.values()) if self.alloc else frozenset()

    def active_pms(self) -> list:
        return sorted(pm for pm, vms in self.alloc.items() if vms)


MIGRATE, PAUSE, UNPAUSE, SET_FREQ, BOOT, DELETE = "migrate", "pause", "unpause", "set_freq", "boot", "delete"


@dataclass(frozen=True, order=True)
class Action:
    """One control action. ``migrate`` of an unplaced VM is a boot placement."""

    time: datetime
    kind: str
    vm: Optional[int] = None
    pm: Optional[int] = None
    hz: Optional[float] = None

    def __post_init__(self):
        if self.kind not in (MIGRATE, PAUSE, UNPAUSE, SET_FREQ, DELETE):
            raise ActionError(f"unknown action kind {self.kind!r}")

    def to_dict(self) -> dict:
        d = {"time": self.time.isoformat(), "kind": self.kind}
        if self.vm is not None:
            d["vm"] = self.vm
        if self.pm is not None:
            d["pm"] = self.pm
        if self.hz is not None:
            d["hz"] = self.hz
        return d


def migrate(t, vm, pm) -> Action:
    return Action(t, MIGRATE, vm=vm, pm=pm)


@dataclass(frozen=True)
class Schedule:
    """Time-ordered actions inside the window ``[start, end]``."""

    actions: tuple = ()
    start: Optional[datetime] = None
    end: Optional[datetime] = None

    def __post_init__(self):
        acts = tuple(sorted(self.actions, key=lambda a: a.time))
        object.__setattr__(self, "actions", acts)
        for a in acts:
            if (self.start is not None and a.time < self.start) or (self.end is not None and a.time > self.end):
                raise ParameterError(f"action at {a.time.isoformat()} outside schedule window")

    def __len__(self):
        return len(self.actions)

    def __iter__(self):
        return iter(self.actions)

    def at(self, t: datetime) -> list[Action]:
        return [a for a in self.actions if a.time == t]

    def with_actions(self, actions) -> "Schedule":
        return Schedule(tuple(actions), self.start, self.end)


# -- utilisation and power ----------------------------------------------------------

def utilization(pm: PM, hosted: Iterable[VM], weights: Optional[Sequence[float]] = None,
                fractions: Optional[Mapping] = None) -> float:
    """Weighted sum of per-resource utilisations; not clamped at 1.

    ``fractions`` optionally scales each VM's contribution (pro-rata presence).
    """
    r = len(pm.capacity)
    w = normalize_weights(weights) if weights is not None else (1.0 / r,) * r
    if len(w) != r:
        raise ParameterError(f"{len(w)} weights for {r} resource kinds")
    if any(c == 0 for c in pm.capacity):
        raise ModelError(f"PM {pm.id} has zero capacity")
    sums = [0.0] * r
    for vm in hosted:
        frac = 1.0 if fractions is None else fractions.get(vm.id, 1.0)
        for i in range(r):
            sums[i] += vm.requested[i] * frac
    return sum(w[i] * sums[i] / pm.capacity[i] for i in range(r))


def linear_power(model: LinearPowerModel, util: float, t: Optional[datetime] = None, key: int = 0) -> float:
    """Linear idle/peak power with suspension of empty hosts.

    Noise (if any) is a pure function of ``(model.seed, key, t)``.
    """
    if util < 0:
        raise ParameterError(f"utilisation must be >= 0, got {util}")
    if util == 0:
        return 0.0
    idle, peak = _level(model.p_idle, t), _level(model.p_peak, t)
    p = idle + util * (peak - idle)
    if model.noise_sigma:
        stamp = int(t.timestamp()) if t is not None else 0
        p += make_rng(model.seed, key, stamp).normal(0.0, model.noise_sigma)
    return max(p, 0.0)


def _check_qc(model: MulticorePowerModel, q, c=None):
    if not 1 <= q <= model.freq_steps or int(q) != q:
        raise DomainError(f"frequency step {q} outside 1..{model.freq_steps}")
    if c is not None and (not 1 <= c <= model.core_count or int(c) != c):
        raise DomainError(f"core count {c} outside 1..{model.core_count}")


def multicore_peak_power(model: MulticorePowerModel, q: int, c: int) -> float:
    _check_qc(model, q, c)
    p00, p10, p01, p20, p11, p30, p21 = model.peak_coeffs
    return p00 + p10 * q + p01 * c + p20 * q ** 2 + p11 * q * c + p30 * q ** 3 + p21 * q ** 2 * c


def multicore_idle_power(model: MulticorePowerModel, q: int) -> float:
    _check_qc(model, q)
    p00, p10, _, p20, _, p30, _ = model.peak_coeffs
    return p00 + p10 * q + p20 * q ** 2 + p30 * q ** 3


def gamma_core(model: MulticorePowerModel, beta: float) -> float:
    g0, g1, g2 = model.gamma_coeffs
    return (g0 * beta ** 2 + g1 * beta + g2) / model.p_max_core


def cpu_bound_utilization(betas: Sequence[float], model: MulticorePowerModel) -> float:
    if not len(betas):
        raise ParameterError("need at least one active core")
    if model.p_max_core <= 0:
        raise ParameterError("p_max_core must be > 0")
    u = sum(gamma_core(model, b) for b in betas) / len(betas)
    return min(max(u, 0.0), 1.0)


def multicore_power(model: MulticorePowerModel, q: int, c: int, u: float) -> float:
    if not 0 <= u <= 1:
        raise DomainError(f"utilisation {u} outside [0, 1]")
    idle = multicore_idle_power(model, q)
    return idle + (multicore_peak_power(model, q, c) - idle) * u


def core_betas(vms: Iterable[VM], fractions: Optional[Mapping] = None) -> list[float]:
    """One beta per requested core of each running VM, in VM id order."""
    out = []
    for vm in sorted(vms, key=lambda v: v.id):
        if fractions is not None and fractions.get(vm.id, 1.0) <= 0:
            continue
        out.extend([vm.beta] * vm.cores)
    return out


def pm_power(pm: PM, running: Sequence[VM], freq: Optional[float], t: Optional[datetime] = None,
             weights: Optional[Sequence[float]] = None, fractions: Optional[Mapping] = None) -> float:
    """IT power of ``pm`` hosting the unpaused VMs ``running`` (0 W when empty)."""
    model = pm.power_model
    if isinstance(model, LinearPowerModel):
        return linear_power(model, utilization(pm, running, weights, fractions), t, key=pm.id)
    betas = core_betas(running, fractions)
    if not betas:
        return 0.0
    q = pm.q_step(pm.f_max if freq is None else freq)
    c = min(len(betas), model.core_count)
    return multicore_power(model, q, c, cpu_bound_utilization(betas, model))


# -- cooling and migration ---------------------------------------------------------

def ppue(temperature_c: float) -> float:
    """Partial PUE of outside-air-economised cooling at ``temperature_c``."""
    return 7.1705e-5 * temperature_c ** 2 + 0.0041 * temperature_c + 1.0743


def total_power(it_power: float, temperature_c: float) -> float:
    if it_power < 0:
        raise ParameterError("IT power must be >= 0")
    return it_power * ppue(temperature_c)


@dataclass(frozen=True)
class MigrationCost:
    transferred: float
    energy: float
    downtime: float
    duration: float
    rounds: int


def migration_cost(model: MigrationModel, vm_mem_bits: float) -> MigrationCost:
    """Iterative pre-copy: ``n`` dirty-page rounds until the residue drops below the threshold."""
    if vm_mem_bits <= 0:
        raise ParameterError("VM memory must be > 0")
    if model.dirty_rate >= model.bandwidth:
        raise ModelError("dirty rate must stay below bandwidth or pre-copy never converges")
    lam = model.dirty_rate / model.bandwidth
    ratio = model.threshold / vm_mem_bits
    n = 0 if ratio >= 1 else max(0, math.ceil(round(math.log(ratio) / math.log(lam), 12)))
    transferred = vm_mem_bits if n == 0 else vm_mem_bits * (1 - lam ** (n + 1)) / (1 - lam)
    energy = model.energy_per_byte * transferred / 8 + model.energy_fixed
    return MigrationCost(transferred, energy, model.downtime_per_migration, transferred / model.bandwidth, n)


# -- state transitions and constraints ------------------------------------------------

def apply_actions(state: CloudState, actions: Iterable[Action], pms: Optional[Mapping] = None,
                  time: Optional[datetime] = None) -> CloudState:
    """Apply actions in order and return a new state.

    ``pms`` (id -> PM) enables target and frequency validation and lets
    migrations target PMs that do not appear in ``state.alloc`` yet.
    """
    alloc = {pm: set(vms) for pm, vms in state.alloc.items()}
    for pm in pms or ():
        alloc.setdefault(pm, set())
    paused = set(state.paused)
    freq = dict(state.freq)
    for a in actions:
        if a.kind == MIGRATE:
            if a.pm not in alloc:
                raise ActionError(f"migrate of VM {a.vm} to unknown PM {a.pm}")
            for vms in alloc.values():
                vms.discard(a.vm)
            alloc[a.pm].add(a.vm)
        elif a.kind == DELETE:
            for vms in alloc.values():
                vms.discard(a.vm)
            paused.discard(a.vm)
        elif a.kind == PAUSE:
            if not any(a.vm in vms for vms in alloc.values()):
                raise ActionError(f"pause of unallocated VM {a.vm}")
            paused.add(a.vm)
        elif a.kind == UNPAUSE:
            if a.vm not in paused:
                log.info("unpause of VM %s which is not paused; ignored", a.vm)
            paused.discard(a.vm)
        elif a.kind == SET_FREQ:
            if a.pm not in alloc:
                raise ActionError(f"set_freq on unknown PM {a.pm}")
            if pms is not None and not pms[a.pm].on_grid(a.hz):
                raise ActionError(f"{a.hz} Hz is not a valid frequency for PM {a.pm}")
            freq[a.pm] = a.hz
    return CloudState(state.time if time is None else time, alloc, paused, freq)


def check_constraints(state: CloudState, pms: Iterable[PM], vms: Mapping,
                      live: Optional[Iterable] = None) -> tuple[set, set]:
    """Return (unallocated VM ids, overloaded PM ids).

    A VM placed on zero or several PMs counts as unallocated; a PM is overloaded
    when any resource dimension sum exceeds its capacity.
    """
    live = set(vms) if live is None else set(live)
    counts = {vm: 0 for vm in live}
    overloaded = set()
    for pm in pms:
        hosted = state.alloc.get(pm.id, ())
        sums = [0.0] * len(pm.capacity)
        for vm_id in hosted:
            if vm_id in counts:
                counts[vm_id] += 1
            for i, v in enumerate(vms[vm_id].requested):
                sums[i] += v
        if any(s > c + 1e-9 for s, c in zip(sums, pm.capacity)):
            overloaded.add(pm.id)
    return {vm for vm, n in counts.items() if n != 1}, overloaded
