"""Controller interface and the concrete controllers driven by the simulator."""
from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timedelta
from typing import Mapping, Optional

from ..cloudmodel import MIGRATE, SET_FREQ, Action, CloudState, LinearPowerModel, Schedule, apply_actions
from ..economics import PricingModel
from ..geotemporal import find_expensive_hours, make_rng
from .bcf import UNDERUTIL_THRESHOLD, PricingLike, bcf_repair, frequency_scaling_stage
from .bfd import bfd_consolidate, bfd_place
from .context import FitnessWeights, PlanningContext, QoSParams
from .fitness import evaluate
from .ga import GAParams, ga_run
from .peak_pauser import peak_pauser


@dataclass(frozen=True)
class StepView:
    """What a controller sees at one simulation step."""

    step: int
    time: datetime
    period: int
    state: CloudState
    pms: Mapping            # id -> PM
    vms: Mapping            # id -> VM, live only
    prices: Mapping         # location -> forecast array starting at ``time``
    temperatures: Mapping

    def unallocated(self) -> list:
        placed = self.state.allocated()
        return [self.vms[v] for v in sorted(self.vms) if v not in placed]

    def context(self, n_steps: Optional[int] = None, **kw) -> PlanningContext:
        T = min(len(a) for a in list(self.prices.values()) + list(self.temperatures.values()))
        if n_steps is not None:
            T = min(T, n_steps)
        times = tuple(self.time + timedelta(seconds=self.period * i) for i in range(max(T, 1)))
        return PlanningContext(self.state, tuple(self.pms.values()), dict(self.vms), times, self.period,
                               self.prices, self.temperatures, **kw)


def net_moves(actions, state: CloudState) -> list[Action]:
    """Collapse repeated migrations of a VM into its final move; drop no-op moves."""
    last = {}
    other = []
    for a in actions:
        if a.kind == MIGRATE:
            last.pop(a.vm, None)
            last[a.vm] = a
        else:
            other.append(a)
    hosts = state.hosts()
    moves = [a for a in last.values() if hosts.get(a.vm) != a.pm]
    return moves + other


class Controller:
    name = "controller"

    def decide(self, view: StepView) -> tuple[list[Action], dict]:
        raise NotImplementedError


@dataclass
class BFDController(Controller):
    underutil_threshold: float = UNDERUTIL_THRESHOLD
    consolidate: bool = True
    name = "bfd"

    def decide(self, view):
        new = view.unallocated()
        placed = bfd_place(new, view.state, list(view.pms.values()), view.vms).actions if new else ()
        actions = list(placed)
        moved = []
        if self.consolidate:
            state = apply_actions(view.state, actions)
            moved = bfd_consolidate(state, list(view.pms.values()), view.vms, self.underutil_threshold)
        return actions + moved, {"placed": len(placed), "migrations": len(moved)}


@dataclass
class PeakPauserController(Controller):
    """BFD placement plus pausing of green VMs in each location's expensive hours."""

    price_history: Mapping          # location -> TimeSeries of past/true prices
    downtime_ratio: float = 0.16
    name = "peak_pauser"
    expensive: dict = field(init=False)

    def __post_init__(self):
        self.expensive = {loc: find_expensive_hours(ts, self.downtime_ratio)
                          for loc, ts in sorted(self.price_history.items())}

    def decide(self, view):
        new = view.unallocated()
        actions = list(bfd_place(new, view.state, list(view.pms.values()), view.vms).actions) if new else []
        state = apply_actions(view.state, actions)
        hosts = state.hosts()
        by_loc = {}
        for v in sorted(view.vms):
            if view.vms[v].green and v in hosts:
                by_loc.setdefault(view.pms[hosts[v]].location, []).append(v)
        for loc in sorted(by_loc):
            actions += peak_pauser(self.expensive.get(loc, ()), by_loc[loc], view.time, state)
        return actions, {"placed": len(new), "paused_locations": sorted(
            loc for loc in by_loc if view.time.hour in self.expensive.get(loc, ()))}


@dataclass
class BCFController(Controller):
    """Greedy best-cost-fit placement of new VMs and VMs on underutilised hosts."""

    underutil_threshold: float = UNDERUTIL_THRESHOLD
    name = "bcf"

    def place(self, view: StepView) -> list[Action]:
        ctx = view.context(n_steps=1)
        rep = bcf_repair(Schedule((), ctx.t_c, ctx.t_f), ctx, self.underutil_threshold)
        return list(rep.actions)

    def decide(self, view):
        actions = self.place(view)
        return actions, {"migrations": len(actions)}


@dataclass
class BCFFSController(BCFController):
    """BCF placement followed by frequency scaling on the resulting allocation."""

    pricing: PricingLike = field(default_factory=PricingModel)
    name = "bcffs"

    def decide(self, view):
        actions = self.place(view)
        state = apply_actions(view.state, actions)
        reset = {pid: pm.f_max for pid, pm in view.pms.items() if not isinstance(pm.power_model, LinearPowerModel)}
        scaled_state = CloudState(state.time, state.alloc, state.paused, {**state.freq, **reset})
        now_p = {loc: float(a[0]) for loc, a in view.prices.items()}
        now_t = {loc: float(a[0]) for loc, a in view.temperatures.items()}
        freq_actions, log = frequency_scaling_stage(scaled_state, view.pms, view.vms, self.pricing,
                                                    now_p, now_t, view.time, float(view.period))
        target = dict(reset)
        target.update({a.pm: a.hz for a in freq_actions})
        for pid in sorted(target):
            if state.freq.get(pid) != target[pid]:
                actions.append(Action(view.time, SET_FREQ, pm=pid, hz=target[pid]))
        return actions, {"migrations": sum(a.kind != SET_FREQ for a in actions),
                         "reductions": [a.to_dict() for a in freq_actions], "scaling": log}


@dataclass
class GAHybridController(Controller):
    """Genetic schedule search over the forecast window, repaired by BCF."""

    params: GAParams = field(default_factory=GAParams)
    weights: FitnessWeights = field(default_factory=FitnessWeights)
    qos: QoSParams = field(default_factory=QoSParams)
    underutil_threshold: float = UNDERUTIL_THRESHOLD
    name = "ga_hybrid"
    population: Optional[list] = field(default=None, init=False)

    def decide(self, view):
        ctx = view.context(n_steps=max(1, self.params.fw // view.period), weights=self.weights, qos=self.qos)
        seed = make_rng(self.params.seed, view.step)
        best, self.population = ga_run(ctx, self.params, self.population, seed=seed)
        ga_fit = evaluate(best, ctx).total
        repaired = bcf_repair(best, ctx, self.underutil_threshold)
        fit = evaluate(repaired, ctx)
        now = net_moves([a for a in repaired.actions if a.time == view.time], view.state)
        return now, {"fitness": fit.total, "ga_fitness": ga_fit, "constraint": fit.constraint,
                     "qos": fit.qos, "utilprice": fit.utilprice, "consolid": fit.consolid,
                     "planned": len(repaired)}


CONTROLLERS = {
    "bfd": BFDController,
    "peak_pauser": PeakPauserController,
    "bcf": BCFController,
    "bcffs": BCFFSController,
    "ga_hybrid": GAHybridController,
}
