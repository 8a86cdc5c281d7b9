"""Best-cost-fit greedy repair and the frequency scaling stage."""
from __future__ import annotations

from collections import defaultdict
from datetime import datetime
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from ..cloudmodel import (MIGRATE, SET_FREQ, Action, CloudState, LinearPowerModel, PM, Schedule, migrate,
                          multicore_power, cpu_bound_utilization, core_betas, ppue)
from ..economics import PERCEIVED, PricingModel, energy_cost, vm_hourly_price
from ..errors import RepairError
from .context import PlanningContext

UNDERUTIL_THRESHOLD = 0.25


class _Packing:
    """Mutable working allocation used by the greedy placers."""

    def __init__(self, ctx: PlanningContext, alloc: Mapping):
        self.ctx = ctx
        self.host = {}
        self.load = np.zeros_like(ctx.cap)
        self.count = np.zeros(len(ctx.pms), dtype=int)
        for pm_id, hosted in alloc.items():
            if pm_id not in ctx.pm_index:
                continue
            for vm in hosted:
                if vm in ctx.vm_index and vm not in self.host:
                    self.add(vm, ctx.pm_index[pm_id])

    def add(self, vm, j: int):
        self.host[vm] = j
        self.load[j] += self.ctx.req[self.ctx.vm_index[vm]]
        self.count[j] += 1

    def remove(self, vm):
        j = self.host.pop(vm)
        self.load[j] -= self.ctx.req[self.ctx.vm_index[vm]]
        self.count[j] -= 1
        return j

    def move(self, vm, j: int):
        if vm in self.host:
            self.remove(vm)
        self.add(vm, j)

    def overloaded(self) -> list[int]:
        return [j for j in range(len(self.ctx.pms)) if (self.load[j] > self.ctx.cap[j] + 1e-9).any()]

    def fits(self, vm, j: int) -> bool:
        return bool((self.load[j] + self.ctx.req[self.ctx.vm_index[vm]] <= self.ctx.cap[j] + 1e-9).all())

    def free(self, j: int) -> float:
        return float(((self.ctx.cap[j] - self.load[j]) / self.ctx.cap[j]) @ self.ctx.util_w)

    def resource_util(self, j: int) -> float:
        return float((self.load[j] / self.ctx.cap[j]) @ self.ctx.util_w)


def vm_size(ctx: PlanningContext, vm) -> float:
    """Resource demand normalised by the largest PM capacity per dimension."""
    return float((ctx.req[ctx.vm_index[vm]] / ctx.ref_cap).sum())


def bcf_repair(schedule: Schedule, ctx: PlanningContext,
               underutil_threshold: float = UNDERUTIL_THRESHOLD) -> Schedule:
    """Add migrations so that every step of the window has every VM placed and no PM over capacity.

    At each step the schedule's own actions are applied first; then unallocated
    VMs, VMs evicted from overloaded PMs and (at the first step only) all VMs of
    underutilised PMs are placed greedily, largest first, preferring active PMs
    with little free capacity and cheap energy (price times pPUE).
    """
    pack = _Packing(ctx, ctx.state.alloc)
    by_step = defaultdict(list)
    for a in schedule.actions:
        if a.kind == MIGRATE and a.time in ctx.time_index:
            by_step[ctx.time_index[a.time]].append(a)
    cap_norm = (ctx.cap / ctx.ref_cap).sum(axis=1)
    added = []
    for k, t in enumerate(ctx.times):
        for a in by_step.get(k, ()):
            if a.vm in ctx.vm_index and a.pm in ctx.pm_index:
                pack.move(a.vm, ctx.pm_index[a.pm])
        origin = dict(pack.host)
        pending = [vm for vm in ctx.vm_ids if vm not in pack.host]
        for j in pack.overloaded():
            hosted = sorted((v for v, h in pack.host.items() if h == j), key=lambda v: (-vm_size(ctx, v), v))
            for v in hosted:
                if not (pack.load[j] > ctx.cap[j] + 1e-9).any():
                    break
                pack.remove(v)
                pending.append(v)
        if k == 0:
            for j in range(len(ctx.pms)):
                if pack.count[j] and pack.resource_util(j) < underutil_threshold:
                    for v in sorted(v for v, h in pack.host.items() if h == j):
                        pack.remove(v)
                        pending.append(v)
        cost = ctx.cost[k]
        failed = []
        for v in sorted(pending, key=lambda v: (-vm_size(ctx, v), v)):
            j = _best_cost_fit(pack, v, cost, cap_norm)
            if j is None:
                failed.append(v)
                continue
            pack.add(v, j)
            if origin.get(v) != j:
                added.append(migrate(t, v, ctx.pms[j].id))
        if failed:
            raise RepairError(sorted(failed))
    return schedule.with_actions(list(schedule.actions) + added)


def _best_cost_fit(pack: _Packing, vm, cost: np.ndarray, cap_norm: np.ndarray) -> Optional[int]:
    ctx = pack.ctx
    req = ctx.req[ctx.vm_index[vm]]
    fit = (pack.load + req <= ctx.cap + 1e-9).all(axis=1)
    ids = np.array([p.id for p in ctx.pms])
    for mask, first in ((fit & (pack.count > 0), None), (fit & (pack.count == 0), -cap_norm)):
        cand = np.flatnonzero(mask)
        if not len(cand):
            continue
        if first is None:
            first = ((ctx.cap - pack.load) / ctx.cap) @ ctx.util_w
        order = np.lexsort((ids[cand], cost[cand], first[cand]))
        return int(cand[order[0]])
    return None


# -- frequency scaling ---------------------------------------------------------------

PricingLike = Union[PricingModel, Mapping]


def pricing_for(pricing: PricingLike, pm: PM) -> PricingModel:
    """Pricing model for ``pm``; a mapping may be keyed by PM id or location."""
    if isinstance(pricing, PricingModel):
        return pricing
    if pm.id in pricing:
        return pricing[pm.id]
    return pricing[pm.location]


def pm_revenue(pm: PM, running: Sequence, pricing: PricingLike, f: float, seconds: float) -> float:
    model = pricing_for(pricing, pm)
    return sum(vm_hourly_price(model, vm, pm, f, PERCEIVED) for vm in running) * seconds / 3600.0


def pm_energy_cost(pm: PM, running: Sequence, f: float, price: float, temperature: float,
                   seconds: float) -> float:
    model = pm.power_model
    betas = core_betas(running)
    if not betas:
        return 0.0
    c = min(len(betas), model.core_count)
    p = multicore_power(model, pm.q_step(f), c, cpu_bound_utilization(betas, model))
    return energy_cost(p * ppue(temperature), seconds, price)


def frequency_scaling_stage(state: CloudState, pms: Mapping, vms: Mapping, pricing: PricingLike,
                            prices: Mapping, temperatures: Mapping, t: datetime,
                            horizon: float = 3600.0) -> tuple[list[Action], list[dict]]:
    """Lower each active PM's frequency while energy savings beat revenue losses.

    ``prices``/``temperatures`` give the current value per location. Returns the
    set_freq actions and one log entry per examined PM with its step trade-offs.
    """
    def running(pm_id):
        return [vms[v] for v in sorted(state.alloc.get(pm_id, ())) if v not in state.paused and v in vms]

    def mean_beta(pm_id):
        r = running(pm_id)
        return float(np.mean([v.beta for v in r])) if r else 0.0

    active = [pid for pid in sorted(state.alloc) if running(pid)
              and not isinstance(pms[pid].power_model, LinearPowerModel)]
    actions, log = [], []
    pruned = set()
    for pid in active:
        if pid in pruned:
            continue
        pm = pms[pid]
        vm_list = running(pid)
        price, temp = prices[pm.location], temperatures[pm.location]
        f = f_apply = pm.f_max
        rev_cur = pm_revenue(pm, vm_list, pricing, f, horizon)
        en_cur = pm_energy_cost(pm, vm_list, f, price, temp, horizon)
        decrease_feasible = False
        steps = []
        levels = pm.freq_levels()
        for f in reversed(levels[:-1]):
            rev_new = pm_revenue(pm, vm_list, pricing, f, horizon)
            en_new = pm_energy_cost(pm, vm_list, f, price, temp, horizon)
            loss, savings = rev_cur - rev_new, en_cur - en_new
            steps.append({"hz": f, "savings": savings, "loss": loss})
            if savings > loss:
                rev_cur, en_cur = rev_new, en_new
                decrease_feasible = True
                f_apply = f
            else:
                break
        log.append({"pm": pid, "hz": f_apply, "steps": steps})
        if decrease_feasible:
            actions.append(Action(t, SET_FREQ, pm=pid, hz=f_apply))
        else:
            b = mean_beta(pid)
            for other in active:
                o = pms[other]
                if (mean_beta(other) > b and prices[o.location] < price
                        and temperatures[o.location] < temp):
                    pruned.add(other)
    return actions, log
