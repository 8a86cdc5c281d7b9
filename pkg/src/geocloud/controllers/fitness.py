"""Schedule fitness: constraint violations, migration QoS, cost heuristic, consolidation.

Lower is better; each component lies in [0, 1] and so does the weighted sum.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..cloudmodel import MIGRATE, Schedule
from .context import PlanningContext


@dataclass(frozen=True)
class FitnessBreakdown:
    constraint: float
    qos: float
    utilprice: float
    consolid: float
    total: float


def assignment_matrix(schedule: Schedule, ctx: PlanningContext) -> np.ndarray:
    """T x n matrix of PM indices (-1 = unallocated) after applying the schedule."""
    T = len(ctx.times)
    a = np.tile(ctx.a0, (T, 1))
    for act in schedule.actions:
        if act.kind != MIGRATE:
            continue
        k = ctx.time_index.get(act.time)
        vi = ctx.vm_index.get(act.vm)
        pj = ctx.pm_index.get(act.pm)
        if k is None or vi is None or pj is None:
            continue
        a[k:, vi] = pj
    return a


def loads(a: np.ndarray, ctx: PlanningContext) -> tuple[np.ndarray, np.ndarray]:
    """(all-VM resource load, running-VM resource load), both T x P x r."""
    T, n = a.shape
    P, r = ctx.cap.shape
    placed = a >= 0
    flat = (np.arange(T)[:, None] * P + a)[placed]
    vm_col = np.broadcast_to(np.arange(n), a.shape)[placed]
    run = ctx.running[vm_col]
    total = np.empty((T * P, r))
    busy = np.empty((T * P, r))
    for i in range(r):
        wts = ctx.req[vm_col, i]
        total[:, i] = np.bincount(flat, weights=wts, minlength=T * P)
        busy[:, i] = np.bincount(flat, weights=wts * run, minlength=T * P)
    return total.reshape(T, P, r), busy.reshape(T, P, r)


def evaluate(schedule: Schedule, ctx: PlanningContext) -> FitnessBreakdown:
    w = ctx.weights.normalized()
    T, n = len(ctx.times), len(ctx.vm_ids)
    P = len(ctx.pms)
    a = assignment_matrix(schedule, ctx)
    total, busy = loads(a, ctx)

    # constraints: unallocated VMs and over-capacity PMs per step
    unalloc = (a < 0).sum(axis=1) / n if n else np.zeros(T)
    overcap = (total > ctx.cap[None] + 1e-9).any(axis=2).sum(axis=1) / P if P else np.zeros(T)
    constraint = float(np.mean(w.w_alloc * unalloc + w.w_cap * overcap))

    # migration rate per VM over the window
    if n:
        prev = np.vstack([ctx.a0[None], a[:-1]])
        moves = ((a != prev) & (a >= 0) & (prev >= 0)).sum(axis=0)
        rate = moves / ctx.horizon_hours
        q = ctx.qos
        pen = np.clip((rate - q.r_mig_min) / (q.r_mig_max - q.r_mig_min), 0.0, 1.0)
        pen[rate < q.r_mig_min] = 0.0
        qos = float(pen.mean())
    else:
        qos = 0.0

    util = np.minimum((busy / ctx.cap[None]) @ ctx.util_w, 1.0) if P else np.zeros((T, 0))
    cost = np.maximum(ctx.cost, 0.0)
    worst = float(cost.mean()) if cost.size else 0.0
    utilprice = float((util * cost).mean() / worst) if worst > 0 else 0.0

    pos = util > 0
    counts = pos.sum(axis=0)
    active = counts > 0
    if active.any():
        means = (util * pos).sum(axis=0)[active] / counts[active]
        consolid = float(1.0 - means.mean())
    else:
        consolid = 0.0

    fit = w.w_ct * constraint + w.w_q * qos + w.w_up * utilprice + w.w_cd * consolid
    return FitnessBreakdown(constraint, qos, utilprice, consolid, float(min(max(fit, 0.0), 1.0)))


def fitness(schedule: Schedule, ctx: PlanningContext) -> float:
    return evaluate(schedule, ctx).total
