"""Discrete-time simulation of a geo-distributed cloud, plus QoS statistics.

Every step delivers boot/delete requests, hands the controller a (possibly
perturbed) forecast window, applies the actions due now and accrues power,
cooling, energy cost, migration overhead and revenue on the true traces.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .cloudmodel import (DELETE, MIGRATE, SET_FREQ, Action, CloudState, LinearPowerModel, MigrationModel,
                         PM, VM, apply_actions, check_constraints, migration_cost, pm_power, ppue,
                         utilization)
from .controllers import (BCFController, BCFFSController, BFDController, Controller, FitnessWeights,
                          GAHybridController, GAParams, PeakPauserController, QoSParams, StepView)
from .controllers.bcf import PricingLike, pricing_for
from .economics import PERCEIVED, CostReport, PricingModel, integrate_cost, vm_hourly_price
from .errors import ConfigError, GeoCloudError, GridError, ParameterError, SimulationError
from .geotemporal import (DAY, HOUR, UTC, ForecastErrorSpec, TimeSeries, TraceSet, make_rng, perturb_forecast,
                          write_trace_csv)

log = logging.getLogger(__name__)

EPOCH = datetime(2000, 1, 1, tzinfo=UTC)


@dataclass(frozen=True)
class Grid:
    start: datetime
    period: int = HOUR
    duration: int = 14 * DAY

    def __post_init__(self):
        if self.period <= 0 or self.duration <= 0 or self.duration % self.period:
            raise ParameterError(f"duration {self.duration}s must be a positive multiple of period {self.period}s")

    @property
    def n_steps(self) -> int:
        return self.duration // self.period

    @property
    def end(self) -> datetime:
        return self.start + timedelta(seconds=self.duration)

    def time_at(self, k: int) -> datetime:
        return self.start + timedelta(seconds=self.period * k)


@dataclass(frozen=True)
class DataCenter:
    id: int
    location: str


# -- workload and infrastructure generation ----------------------------------------------

@dataclass(frozen=True)
class WorkloadSpec:
    v: int = 10000
    cpu_range: tuple = (1, 2)
    ram_range: tuple = (2, 4)
    beta: Mapping = field(default_factory=lambda: {"kind": "constant", "value": 1.0})
    green_fraction: float = 0.0


@dataclass(frozen=True)
class InfrastructureSpec:
    locations: tuple = ()
    p: int = 2000
    cpu_range: tuple = (8, 16)
    ram_range: tuple = (16, 32)
    power_model: object = field(default_factory=LinearPowerModel)
    freq_range: tuple = (2.6e9, 3.4e9, 0.2e9)
    n_cores: Optional[int] = None


def _normal_int(rng, lo, hi, size) -> np.ndarray:
    if hi == lo:
        return np.full(size, float(lo))
    x = rng.normal((lo + hi) / 2, (hi - lo) / 4, size)
    return np.rint(np.clip(x, lo, hi))


def _betas(rng, spec: Mapping, size: int) -> np.ndarray:
    kind = spec.get("kind", "constant")
    if kind == "constant":
        return np.full(size, float(spec.get("value", 1.0)))
    if kind == "uniform":
        return rng.uniform(spec.get("low", 0.0), spec.get("high", 1.0), size)
    if kind == "exponential":
        return np.minimum(rng.exponential(1.0 / spec["rate"], size), 1.0)
    raise ParameterError(f"unknown beta source {kind!r}")


def generate_workload(spec: WorkloadSpec, grid: Grid, seed: int) -> list[VM]:
    """Boot requests with uniform boot times and durations, on the grid."""
    rng = make_rng(seed)
    n = spec.v
    if n == 0:
        return []
    steps = grid.n_steps
    boot = rng.integers(0, steps, n)
    dur = rng.integers(1, steps + 1, n)
    cpu = _normal_int(rng, *spec.cpu_range, n)
    ram = _normal_int(rng, *spec.ram_range, n)
    betas = np.clip(_betas(rng, spec.beta, n), 0.0, 1.0)
    green = rng.random(n) < spec.green_fraction
    vms = []
    for i in range(n):
        b = grid.time_at(int(boot[i]))
        d_step = int(boot[i] + dur[i])
        delete = grid.time_at(d_step) if d_step < steps else None
        vms.append(VM(i, (cpu[i], ram[i]), float(betas[i]), b, delete, bool(green[i])))
    return vms


def generate_infrastructure(spec: InfrastructureSpec, seed: int) -> tuple[list[DataCenter], list[PM]]:
    """PMs spread round-robin over data centers, the remainder to random ones."""
    d, p = len(spec.locations), spec.p
    if d == 0 or p == 0:
        raise ConfigError("infrastructure", "need at least one data center and one PM")
    rng = make_rng(seed)
    dcs = [DataCenter(i, loc) for i, loc in enumerate(spec.locations)]
    full = (p // d) * d
    owner = [i % d for i in range(full)]
    owner += sorted(rng.choice(d, size=p - full, replace=False).tolist())
    cpu = rng.integers(spec.cpu_range[0], spec.cpu_range[1] + 1, p)
    ram = rng.integers(spec.ram_range[0], spec.ram_range[1] + 1, p)
    pms = []
    for i in range(p):
        cores = spec.n_cores if spec.n_cores is not None else int(cpu[i])
        pms.append(PM(i, dcs[owner[i]].location, (float(cpu[i]), float(ram[i])), spec.power_model,
                      tuple(spec.freq_range), cores))
    return dcs, pms


# -- scenario and result ------------------------------------------------------------------

@dataclass(frozen=True)
class ScenarioConfig:
    grid: Grid
    traces: TraceSet
    pms: tuple
    vms: tuple
    controller: str = "bfd"
    controller_params: Mapping = field(default_factory=dict)
    fw: int = 12 * HOUR
    forecast_error: ForecastErrorSpec = field(default_factory=ForecastErrorSpec)
    pricing: PricingLike = field(default_factory=PricingModel)
    pricing_kind: str = PERCEIVED
    migration: MigrationModel = field(default_factory=MigrationModel)
    util_weights: Optional[tuple] = None
    seed: int = 0

    def __post_init__(self):
        if self.fw <= 0 or self.fw > self.grid.duration or self.fw % self.grid.period:
            raise ParameterError("fw must be a positive multiple of the period no longer than the run")
        missing = {pm.location for pm in self.pms} - set(self.traces.locations)
        if missing:
            raise ParameterError(f"no traces for location(s) {sorted(missing)}")
        if self.traces.start > self.grid.start:
            raise GridError("traces start after the simulation grid")
        ids = [v.id for v in self.vms]
        if len(set(ids)) != len(ids) or len({p.id for p in self.pms}) != len(self.pms):
            raise ParameterError("VM and PM ids must be unique")


def make_controller(config: ScenarioConfig) -> Controller:
    name, params = config.controller, dict(config.controller_params)
    if name == "bfd":
        return BFDController(**params)
    if name == "bcf":
        return BCFController(**params)
    if name == "bcffs":
        return BCFFSController(pricing=config.pricing, **params)
    if name == "peak_pauser":
        return PeakPauserController(price_history=config.traces.electricity, **params)
    if name == "ga_hybrid":
        ga = dict(params.pop("ga", {}))
        ga.setdefault("fw", config.fw)
        ga.setdefault("seed", config.seed)
        return GAHybridController(GAParams(**ga), FitnessWeights(**params.pop("weights", {})),
                                  QoSParams(**params.pop("qos", {})), **params)
    raise ParameterError(f"unknown controller {name!r}")


@dataclass
class SimulationResult:
    grid: Grid
    cost_report: CostReport
    actions: list
    power: dict                  # pm id -> TimeSeries (W, IT power)
    utilization: dict            # pm id -> TimeSeries
    migrations: dict             # vm id -> list of timestamps
    paused: dict                 # vm id -> paused seconds
    lifetimes: dict              # vm id -> (start, end) observed inside the run
    metrics: list
    meta: dict
    downtime_per_migration: float = 60.0

    def report(self) -> dict:
        return {"cost_report": self.cost_report.to_dict(), "metadata": self.meta}

    def save(self, out_dir) -> Path:
        out = Path(out_dir)
        (out / "power").mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(self.report(), sort_keys=True, indent=2) + "\n")
        with open(out / "actions.jsonl", "w") as fh:
            for rec in self.actions:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
        for pm_id, ts in sorted(self.power.items()):
            write_trace_csv(ts, out / "power" / f"{pm_id}.csv")
        if self.metrics:
            with open(out / "metrics.csv", "w", newline="") as fh:
                w = csv.DictWriter(fh, fieldnames=list(self.metrics[0]), lineterminator="\n")
                w.writeheader()
                w.writerows(self.metrics)
        (out / "cost_report.csv").write_text(self.cost_report.to_csv())
        return out


# -- the loop ------------------------------------------------------------------------------

def _grid_values(series: TimeSeries, grid: Grid) -> np.ndarray:
    if series.period == grid.period:
        i0 = series.index_of(grid.start)
        if i0 + grid.n_steps > len(series):
            raise GridError(f"trace ends at {series.end.isoformat()}, before the run ends")
        return np.asarray(series.values[i0:i0 + grid.n_steps], float)
    return np.array([series.value_at(grid.time_at(k)) for k in range(grid.n_steps)])


def _overlap(vm: VM, t0: datetime, t1: datetime) -> float:
    a = max(vm.boot_time or t0, t0)
    b = min(vm.delete_time or t1, t1)
    return max((b - a).total_seconds(), 0.0)


def _action_record(step: int, a: Action, source: str, decision: Optional[dict] = None) -> dict:
    rec = {"step": step, **a.to_dict(), "source": source}
    if decision is not None:
        rec["decision"] = decision
    return rec


def _decision_for(a: Action, info: dict) -> dict:
    base = {k: v for k, v in info.items() if k not in ("scaling", "reductions")}
    if a.kind == SET_FREQ and "scaling" in info:
        base["steps"] = next((e["steps"] for e in info["scaling"] if e["pm"] == a.pm), [])
    return base


def simulate(config: ScenarioConfig, controller: Optional[Controller] = None) -> SimulationResult:
    grid = config.grid
    period, n = grid.period, grid.n_steps
    pms = {pm.id: pm for pm in sorted(config.pms, key=lambda p: p.id)}
    locations = sorted({pm.location for pm in pms.values()})
    loc_key = {loc: i for i, loc in enumerate(config.traces.locations)}
    price = {loc: _grid_values(config.traces.electricity[loc], grid) for loc in locations}
    temp = {loc: _grid_values(config.traces.temperature[loc], grid) for loc in locations}
    fw_steps = config.fw // period
    controller = controller or make_controller(config)

    requests = sorted(config.vms, key=lambda v: ((v.boot_time or grid.start), v.id))
    state = CloudState.empty(pms.values(), grid.start)
    live: dict = {}
    next_req = 0

    power_rows = {pid: np.zeros(n) for pid in pms}
    util_rows = {pid: np.zeros(n) for pid in pms}
    migrations = defaultdict(list)
    paused_s = defaultdict(float)
    lifetimes = {}
    records, metrics = [], []
    it_e = it_c = tot_e = tot_c = mig_e = mig_c = revenue = 0.0
    violations = 0

    for k in range(n):
        t = grid.time_at(k)
        t1 = t + timedelta(seconds=period)
        # 1. workload requests
        gone = sorted(v for v, vm in live.items() if vm.delete_time is not None and vm.delete_time <= t)
        if gone:
            dels = [Action(t, DELETE, vm=v) for v in gone]
            state = apply_actions(state, dels, time=t)
            records += [_action_record(k, a, "workload") for a in dels]
            for v in gone:
                del live[v]
        while next_req < len(requests) and (requests[next_req].boot_time or grid.start) < t1:
            vm = requests[next_req]
            next_req += 1
            if vm.delete_time is not None and vm.delete_time <= t:
                continue
            live[vm.id] = vm
            lifetimes[vm.id] = (max(vm.boot_time or grid.start, grid.start),
                                min(vm.delete_time or grid.end, grid.end))
        state = CloudState(t, state.alloc, state.paused, state.freq)
        frac = {v: _overlap(vm, t, t1) / period for v, vm in live.items()}

        # 2. forecast window
        f_price, f_temp = {}, {}
        for loc in locations:
            li = loc_key[loc]
            win = slice(k, min(k + fw_steps, n))
            pts = TimeSeries(t, period, price[loc][win])
            tts = TimeSeries(t, period, temp[loc][win])
            f_price[loc] = perturb_forecast(pts, config.forecast_error, k, li, 0).values
            f_temp[loc] = perturb_forecast(tts, config.forecast_error, k, li, 1).values

        # 3. controller
        view = StepView(k, t, period, state, pms, dict(live), f_price, f_temp)
        try:
            actions, info = controller.decide(view)
        except GeoCloudError as exc:
            raise SimulationError(k, exc) from exc
        actions = [a for a in actions if a.time == t]

        # 4. apply
        hosts = state.hosts()
        moved = []
        for a in actions:
            if a.kind == MIGRATE:
                src = hosts.get(a.vm)
                if src is not None and src != a.pm:
                    moved.append((a.vm, src, a.pm))
                hosts[a.vm] = a.pm
        try:
            state = apply_actions(state, actions, pms, time=t)
        except GeoCloudError as exc:
            raise SimulationError(k, exc) from exc
        records += [_action_record(k, a, controller.name, _decision_for(a, info)) for a in actions]
        unalloc, over = check_constraints(state, pms.values(), live)
        violations += len(unalloc) + len(over)

        # 5. accrual on true traces
        step_mig_e = step_mig_c = 0.0
        for v, src, dst in moved:
            mc = migration_cost(config.migration, live[v].mem_bits)
            kwh = mc.energy / 3.6e6
            e_mean = (price[pms[src].location][k] + price[pms[dst].location][k]) / 2
            step_mig_e += kwh
            step_mig_c += kwh * e_mean / 1000.0
            migrations[v].append(t)
        step_it = step_tot = step_cost = step_rev = 0.0
        for pid, pm in pms.items():
            hosted = [live[v] for v in sorted(state.alloc[pid]) if v in live]
            running = [vm for vm in hosted if vm.id not in state.paused and frac[vm.id] > 0]
            p = pm_power(pm, running, state.freq.get(pid), t, config.util_weights, frac)
            u = utilization(pm, running, config.util_weights, frac) if running else 0.0
            power_rows[pid][k] = p
            util_rows[pid][k] = u
            kwh = p * period / 3.6e6
            tot = kwh * ppue(temp[pm.location][k])
            step_it += kwh
            step_tot += tot
            step_cost += tot * price[pm.location][k] / 1000.0
            it_c += kwh * price[pm.location][k] / 1000.0
            model = pricing_for(config.pricing, pm)
            for vm in running:
                step_rev += frac[vm.id] * vm_hourly_price(model, vm, pm, state.freq.get(pid),
                                                         config.pricing_kind) * period / 3600.0
        for v in state.paused:
            if v in live:
                paused_s[v] += frac[v] * period
        it_e += step_it
        tot_e += step_tot + step_mig_e
        tot_c += step_cost + step_mig_c
        mig_e += step_mig_e
        mig_c += step_mig_c
        revenue += step_rev
        metrics.append({
            "step": k, "time": t.isoformat(), "live_vms": len(live),
            "active_pms": sum(1 for pid in pms if power_rows[pid][k] > 0),
            "paused_vms": sum(1 for v in state.paused if v in live), "migrations": len(moved),
            "it_energy_kwh": repr(step_it), "total_energy_kwh": repr(step_tot + step_mig_e),
            "cost_usd": repr(step_cost + step_mig_c), "revenue_usd": repr(step_rev),
            "unallocated": len(unalloc), "overloaded": len(over),
        })

    report = CostReport(it_e, it_c, tot_e, tot_c, mig_e, mig_c, revenue)
    meta = {
        "controller": controller.name, "seed": config.seed, "steps": n, "period": period,
        "start": grid.start.isoformat(), "pms": len(pms), "vms": len(config.vms),
        "migrations": sum(len(v) for v in migrations.values()), "constraint_violations": violations,
        "actions": len(records),
    }
    return SimulationResult(
        grid, report, records,
        {pid: TimeSeries(grid.start, period, row) for pid, row in power_rows.items()},
        {pid: TimeSeries(grid.start, period, row) for pid, row in util_rows.items()},
        dict(migrations), dict(paused_s), lifetimes, metrics, meta,
        config.migration.downtime_per_migration,
    )


def it_energy_from_power(result: SimulationResult) -> float:
    """Rectangle integral of the logged per-PM IT power, in kWh."""
    return sum(float(np.sum(ts.values)) * ts.period / 3.6e6 for ts in result.power.values())


# -- QoS metrics -------------------------------------------------------------------------------

def migration_rate_histogram(result: SimulationResult, bucket: int = HOUR) -> dict:
    """Number of (VM, bucket) pairs per migration count, over each VM's lifetime."""
    start = result.grid.start
    hist = Counter()
    for vm, (a, b) in sorted(result.lifetimes.items()):
        first = int((a - start).total_seconds() // bucket)
        last = int(math.ceil((b - start).total_seconds() / bucket))
        counts = Counter(int((t - start).total_seconds() // bucket) for t in result.migrations.get(vm, ()))
        for i in range(first, max(last, first + 1)):
            hist[counts.get(i, 0)] += 1
    return dict(sorted(hist.items()))


def worst_case_daily_rate(result: SimulationResult) -> TimeSeries:
    """Per day, the highest number of migrations any single VM experienced."""
    start = result.grid.start
    days = max(1, math.ceil(result.grid.duration / DAY))
    worst = np.zeros(days)
    for times in result.migrations.values():
        per_day = Counter(int((t - start).total_seconds() // DAY) for t in times)
        for d, c in per_day.items():
            worst[d] = max(worst[d], c)
    return TimeSeries(start, DAY, worst)


def daily_migration_rates(result: SimulationResult) -> list[float]:
    """Migrations per VM per day of observed lifetime (one sample per VM)."""
    out = []
    for vm, (a, b) in sorted(result.lifetimes.items()):
        days = (b - a).total_seconds() / DAY
        if days > 0:
            out.append(len(result.migrations.get(vm, ())) / days)
    return out


def availability_from(n_migrations: int, downtime_per_migration: float, paused_seconds: float,
                      lifetime_seconds: float) -> float:
    if lifetime_seconds <= 0:
        raise ParameterError("lifetime must be > 0")
    down = n_migrations * downtime_per_migration + paused_seconds
    return max(0.0, 1.0 - down / lifetime_seconds)


def availability(result: SimulationResult, vm_id) -> float:
    a, b = result.lifetimes[vm_id]
    life = (b - a).total_seconds()
    return availability_from(len(result.migrations.get(vm_id, ())), result.downtime_per_migration,
                             result.paused.get(vm_id, 0.0), life)


def bootstrap_ci(samples: Sequence[float], level: float = 0.95, resamples: int = 10000,
                 seed: int = 0) -> tuple[float, float]:
    """Percentile bootstrap confidence interval of the mean."""
    x = np.asarray(samples, dtype=float)
    if x.size == 0:
        raise ParameterError("bootstrap of an empty sample")
    if not 0 < level < 1 or resamples < 1:
        raise ParameterError("need 0 < level < 1 and resamples >= 1")
    rng = make_rng(seed)
    means = np.empty(resamples)
    chunk = max(1, 2_000_000 // x.size)
    for i in range(0, resamples, chunk):
        m = min(chunk, resamples - i)
        means[i:i + m] = x[rng.integers(0, x.size, (m, x.size))].mean(axis=1)
    if np.all(x == x[0]):
        return float(x[0]), float(x[0])
    alpha = (1 - level) / 2
    lo, hi = np.quantile(means, [alpha, 1 - alpha])
    return float(lo), float(hi)


def synth_power_signal(peak: float, idle_ratio: float, variance: float, pause_hours: Iterable[int],
                       duration: int, seed: int = 0, period: int = 60, start: datetime = EPOCH) -> TimeSeries:
    """Gaussian oscillation around peak power, or around idle power in paused hours."""
    if not 0 <= idle_ratio <= 1 or variance < 0 or peak < 0:
        raise ParameterError("need peak >= 0, 0 <= idle_ratio <= 1, variance >= 0")
    n = duration // period
    ts = TimeSeries(start, period, np.zeros(n))
    paused = np.isin(ts.hours_of_day(), sorted(set(pause_hours)))
    base = np.where(paused, idle_ratio * peak, peak)
    if variance:
        base = base + make_rng(seed).normal(0.0, math.sqrt(variance), n)
    return ts.with_values(np.maximum(base, 0.0))


def estimate_pause_savings(prices: TimeSeries, peak: float, idle_ratio: float, variance: float,
                           pause_hours: Iterable[int], seed: int = 0, period: int = 60) -> tuple[float, float]:
    """Relative (energy, cost) savings of pausing in ``pause_hours`` versus never pausing."""
    duration = len(prices) * prices.period
    ref = synth_power_signal(peak, idle_ratio, variance, (), duration, seed, period, prices.start)
    sig = synth_power_signal(peak, idle_ratio, variance, pause_hours, duration, seed + 1, period, prices.start)
    e0, c0 = integrate_cost(ref, prices)
    e1, c1 = integrate_cost(sig, prices)
    return 1 - e1 / e0, 1 - c1 / c0
