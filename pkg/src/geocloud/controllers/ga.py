"""Genetic search over migration schedules."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..cloudmodel import Schedule, migrate
from ..errors import ParameterError
from .context import PlanningContext
from .fitness import fitness

log = logging.getLogger(__name__)

SELECTION_EPS = 1e-6


@dataclass(frozen=True)
class GAParams:
    fw: int = 12 * 3600
    pop: int = 100
    gen: int = 100
    cross: float = 0.15
    mut: float = 0.05
    rand: float = 0.3
    min_migr: int = 0
    max_migr: Optional[int] = None    # None: fw steps * |VMs| / 3
    seed: int = 0

    def __post_init__(self):
        for name in ("cross", "mut", "rand"):
            if not 0 <= getattr(self, name) <= 1:
                raise ParameterError(f"{name} must lie in [0, 1]")
        if self.pop < 2:
            raise ParameterError("pop must be >= 2")
        if self.gen < 0 or self.fw <= 0:
            raise ParameterError("gen must be >= 0 and fw > 0")
        if self.min_migr < 0 or (self.max_migr is not None and self.max_migr < self.min_migr):
            raise ParameterError("need 0 <= min_migr <= max_migr")

    def migration_bounds(self, ctx: PlanningContext) -> tuple[int, int]:
        hi = self.max_migr
        if hi is None:
            hi = len(ctx.times) * len(ctx.vm_ids) // 3
        return min(self.min_migr, hi), hi


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def _window(ctx: PlanningContext, actions=()) -> Schedule:
    return Schedule(tuple(actions), ctx.t_c, ctx.t_f)


def _random_action(ctx: PlanningContext, rng: np.random.Generator):
    t = ctx.times[int(rng.integers(len(ctx.times)))]
    vm = ctx.vm_ids[int(rng.integers(len(ctx.vm_ids)))]
    pm = ctx.pms[int(rng.integers(len(ctx.pms)))].id
    return migrate(t, vm, pm)


def ga_create(ctx: PlanningContext, params: GAParams, seed=0) -> Schedule:
    """Random schedule with a uniformly drawn number of random migrations."""
    rng = _rng(seed)
    lo, hi = params.migration_bounds(ctx)
    if not ctx.vm_ids or not ctx.pms:
        return _window(ctx)
    n = int(rng.integers(lo, hi + 1))
    return _window(ctx, [_random_action(ctx, rng) for _ in range(n)])


def ga_crossover(s1: Schedule, s2: Schedule, seed, times: Sequence) -> Schedule:
    """Child takes ``s1`` before a random grid moment and ``s2`` from it on."""
    if (s1.start, s1.end) != (s2.start, s2.end):
        raise ParameterError("crossover parents span different windows")
    rng = _rng(seed)
    t_r = times[int(rng.integers(len(times)))]
    return crossover_at(s1, s2, t_r)


def crossover_at(s1: Schedule, s2: Schedule, t_r) -> Schedule:
    if (s1.start, s1.end) != (s2.start, s2.end):
        raise ParameterError("crossover parents span different windows")
    head = [a for a in s1.actions if a.time < t_r]
    tail = [a for a in s2.actions if a.time >= t_r]
    return s1.with_actions(head + tail)


def ga_mutate(s: Schedule, ctx: PlanningContext, seed) -> Schedule:
    """Replace one random action with a fresh random one (insert only if empty)."""
    rng = _rng(seed)
    if not ctx.vm_ids or not ctx.pms:
        return s
    acts = list(s.actions)
    if acts:
        del acts[int(rng.integers(len(acts)))]
    acts.append(_random_action(ctx, rng))
    return s.with_actions(acts)


def carry_over(population: Sequence[Schedule], ctx: PlanningContext) -> list[Schedule]:
    """Rebase schedules onto the new window, dropping past actions and gone VMs."""
    out = []
    for s in population:
        keep = [a for a in s.actions if ctx.t_c <= a.time <= ctx.t_f and a.vm in ctx.vm_index
                and a.pm in ctx.pm_index and a.time in ctx.time_index]
        out.append(_window(ctx, keep))
    return out


def create_population(ctx: PlanningContext, params: GAParams, rng, existing=None) -> list[Schedule]:
    pop = []
    if existing:
        keep = int(round((1 - params.rand) * params.pop))
        pop = carry_over(list(existing)[:keep], ctx)
    if not any(len(s) == 0 for s in pop):
        pop.append(_window(ctx))
    while len(pop) < params.pop:
        pop.append(ga_create(ctx, params, rng))
    return pop[:params.pop]


def _roulette(fits: np.ndarray, k: int, rng) -> np.ndarray:
    w = (1.0 - fits) + SELECTION_EPS
    return rng.choice(len(fits), size=k, replace=True, p=w / w.sum())


def ga_run(ctx: PlanningContext, params: GAParams, carryover=None, seed=None) -> tuple[Schedule, list[Schedule]]:
    """Evolve schedules for ``gen`` generations; returns (best, sorted population)."""
    rng = _rng(params.seed if seed is None else seed)
    pop = create_population(ctx, params, rng, carryover)
    fits = np.array([fitness(s, ctx) for s in pop])
    n_children = int(round(params.pop * params.cross))
    for g in range(params.gen):
        order = np.argsort(fits, kind="stable")
        pop = [pop[i] for i in order]
        fits = fits[order]
        children = []
        if n_children:
            parents = _roulette(fits, 2 * n_children, rng)
            for i in range(n_children):
                children.append(ga_crossover(pop[parents[2 * i]], pop[parents[2 * i + 1]], rng, ctx.times))
        survivors = params.pop - n_children
        pop = pop[:survivors] + children
        fits = np.concatenate([fits[:survivors], [fitness(c, ctx) for c in children]])
        # the elite at index 0 is never mutated
        for i in range(1, len(pop)):
            if rng.random() < params.mut:
                pop[i] = ga_mutate(pop[i], ctx, rng)
                fits[i] = fitness(pop[i], ctx)
    order = np.argsort(fits, kind="stable")
    pop = [pop[i] for i in order]
    log.debug("ga best fitness %.6f over %d schedules", fits[order[0]], len(pop))
    return pop[0], pop
