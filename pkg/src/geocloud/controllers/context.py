"""Planning context shared by the schedule-based controllers.

The context freezes everything a controller may look at for one decision: the
current cloud state, the live VMs, the PMs, and the forecast of prices and
temperatures over the forecast window. Arrays are precomputed once so that
fitness evaluation is a handful of numpy reductions.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timedelta
from typing import Mapping, Optional, Sequence

import numpy as np

from ..cloudmodel import PM, CloudState, normalize_weights, ppue
from ..errors import ParameterError


@dataclass(frozen=True)
class FitnessWeights:
    w_ct: float = 0.1
    w_q: float = 0.4
    w_up: float = 0.4
    w_cd: float = 0.1
    w_alloc: float = 0.4
    w_cap: float = 0.6

    def __post_init__(self):
        for name in ("w_ct", "w_q", "w_up", "w_cd", "w_alloc", "w_cap"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ParameterError(f"{name} must lie in [0, 1], got {v}")
        if self.w_ct + self.w_q + self.w_up + self.w_cd <= 0 or self.w_alloc + self.w_cap <= 0:
            raise ParameterError("each weight group needs a positive sum")

    def normalized(self) -> "FitnessWeights":
        ct, q, up, cd = normalize_weights((self.w_ct, self.w_q, self.w_up, self.w_cd))
        alloc, cap = normalize_weights((self.w_alloc, self.w_cap))
        return FitnessWeights(ct, q, up, cd, alloc, cap)


@dataclass(frozen=True)
class QoSParams:
    r_mig_min: float = 0.25
    r_mig_max: float = 1.0

    def __post_init__(self):
        if not 0 <= self.r_mig_min < self.r_mig_max:
            raise ParameterError("need 0 <= r_mig_min < r_mig_max")


@dataclass(frozen=True)
class PlanningContext:
    """Inputs for planning over the window ``times`` (one entry per grid step)."""

    state: CloudState
    pms: tuple
    vms: Mapping
    times: tuple
    period: int
    prices: Mapping           # location -> array over times, $/MWh
    temperatures: Mapping     # location -> array over times, deg C
    weights: FitnessWeights = field(default_factory=FitnessWeights)
    qos: QoSParams = field(default_factory=QoSParams)
    util_weights: Optional[tuple] = None

    def __post_init__(self):
        if not self.times:
            raise ParameterError("forecast window is empty")
        object.__setattr__(self, "pms", tuple(sorted(self.pms, key=lambda p: p.id)))
        object.__setattr__(self, "times", tuple(self.times))
        T = len(self.times)
        for loc in {p.location for p in self.pms}:
            if len(self.prices[loc]) < T or len(self.temperatures[loc]) < T:
                raise ParameterError(f"forecast for {loc} shorter than the window")
        self._precompute()

    def _precompute(self):
        T = len(self.times)
        pms = self.pms
        vm_ids = tuple(sorted(self.vms))
        r = len(pms[0].capacity) if pms else 0
        w = normalize_weights(self.util_weights) if self.util_weights else (1.0 / max(r, 1),) * r
        cap = np.array([p.capacity for p in pms], dtype=float).reshape(len(pms), r)
        req = np.array([self.vms[v].requested for v in vm_ids], dtype=float).reshape(len(vm_ids), r)
        running = np.array([v not in self.state.paused for v in vm_ids], dtype=bool)
        pm_index = {p.id: i for i, p in enumerate(pms)}
        vm_index = {v: i for i, v in enumerate(vm_ids)}
        a0 = np.full(len(vm_ids), -1, dtype=np.int64)
        for pm_id, hosted in self.state.alloc.items():
            if pm_id not in pm_index:
                continue
            for v in hosted:
                if v in vm_index:
                    a0[vm_index[v]] = pm_index[pm_id]
        price = np.array([np.asarray(self.prices[p.location], float)[:T] for p in pms]).reshape(len(pms), T).T
        temp = np.array([np.asarray(self.temperatures[p.location], float)[:T] for p in pms]).reshape(len(pms), T).T
        cost = ppue(temp) * price                          # T x P
        ref = cap.max(axis=0) if len(pms) else np.ones(r)
        s = object.__setattr__
        s(self, "vm_ids", vm_ids)
        s(self, "pm_index", pm_index)
        s(self, "vm_index", vm_index)
        s(self, "time_index", {t: i for i, t in enumerate(self.times)})
        s(self, "cap", cap)
        s(self, "req", req)
        s(self, "running", running)
        s(self, "util_w", np.asarray(w, float))
        s(self, "a0", a0)
        s(self, "cost", cost)
        s(self, "ref_cap", ref)

    @property
    def t_c(self) -> datetime:
        return self.times[0]

    @property
    def t_f(self) -> datetime:
        return self.times[-1]

    @property
    def horizon_hours(self) -> float:
        return len(self.times) * self.period / 3600.0

    def pm(self, pm_id) -> PM:
        return self.pms[self.pm_index[pm_id]]

    def restrict(self, n_steps: int) -> "PlanningContext":
        """Same context truncated to the first ``n_steps`` of the window."""
        return PlanningContext(self.state, self.pms, self.vms, self.times[:n_steps], self.period,
                               self.prices, self.temperatures, self.weights, self.qos, self.util_weights)


def build_context(state: CloudState, pms: Sequence[PM], vms: Mapping, start: datetime, period: int,
                  prices: Mapping, temperatures: Mapping, **kw) -> PlanningContext:
    """Context whose window length follows the shortest forecast array."""
    T = min(len(v) for v in list(prices.values()) + list(temperatures.values()))
    times = tuple(start + timedelta(seconds=period * i) for i in range(T))
    return PlanningContext(state, tuple(pms), dict(vms), times, period, prices, temperatures, **kw)
