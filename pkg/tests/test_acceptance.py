"""Acceptance suite: twelve end-to-end criteria, each with a runtime bound.

Every test prints one ``[ACCEPT nn] PASS|FAIL`` line (visible with ``pytest -s``
and also collected into the terminal summary by ``conftest.py``).
"""
import itertools
import json
import time
from dataclasses import replace
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from geocloud.cloudmodel import (ARM_PEAK_COEFFS, PM, SET_FREQ, VM, CloudState, MulticorePowerModel, Schedule,
                                 apply_actions, migrate, multicore_idle_power, multicore_peak_power,
                                 multicore_power, pm_power, ppue)
from geocloud.config import load_config
from geocloud.controllers import (BCFFSController, GAParams, bcf_repair, build_context, fitness, ga_create,
                                  ga_run)
from geocloud.economics import (ARM_PRICE_SCALE, PERCEIVED, PERFORMANCE, KyotoParams, PricingModel,
                                kyoto_equilibrium, kyoto_expected_penalty, kyoto_wastage, vm_hourly_price,
                                vm_price)
from geocloud.geotemporal import (HOUR, UTC, ForecastErrorSpec, TimeSeries, TraceSet, find_expensive_hours,
                                  hourly_means, mape, perturb_forecast, ses_forecast, ses_smooth,
                                  synthetic_price_trace)
from geocloud.simulator import (EPOCH, Grid, ScenarioConfig, availability_from, estimate_pause_savings,
                                simulate)

ROOT = Path(__file__).resolve().parents[1]
T0 = datetime(2024, 1, 1, tzinfo=UTC)
RESULTS = []


class Criterion:
    """Collects named checks and the elapsed time of one criterion."""

    def __init__(self, num, title, limit):
        self.num, self.title, self.limit = num, title, limit
        self.failures = []
        self.elapsed = None

    def check(self, ok, what):
        if not ok:
            self.failures.append(what)

    def __enter__(self):
        self._t = time.perf_counter()
        return self

    def timed(self, fn, *args, **kw):
        """Run ``fn`` and charge only its wall time against the limit."""
        t = time.perf_counter()
        out = fn(*args, **kw)
        self.elapsed = (self.elapsed or 0.0) + time.perf_counter() - t
        return out

    def __exit__(self, exc_type, exc, tb):
        if self.elapsed is None:
            self.elapsed = time.perf_counter() - self._t
        if exc is not None:
            self.failures.append(f"raised {exc_type.__name__}: {exc}")
        if self.elapsed > self.limit:
            self.failures.append(f"runtime {self.elapsed:.4g}s > {self.limit}s")
        status = "PASS" if not self.failures else "FAIL"
        line = f"[ACCEPT {self.num:02d}] {status} {self.title} ({self.elapsed:.4g}s)"
        if self.failures:
            line += " :: " + "; ".join(self.failures)
        RESULTS.append(line)
        print(line)
        if exc is None:
            assert not self.failures, line
        return False


def best_of(fn, repeats=5):
    """Smallest wall time over a few repeats (cold-start noise excluded)."""
    best, out = float("inf"), None
    for _ in range(repeats):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return out, best


# 1 ---------------------------------------------------------------------------------------

def test_01_ppue_endpoints():
    with Criterion(1, "pPUE endpoints", 1e-3) as c:
        (lo, hi), c.elapsed = best_of(lambda: (ppue(-25.0), ppue(35.0)))
        c.check(abs(lo - 1.01662) <= 1e-4, f"ppue(-25)={lo}")
        c.check(abs(hi - 1.30562) <= 1e-4, f"ppue(35)={hi}")
        c.check(round(lo, 2) == 1.02 and round(hi, 1) == 1.3, "range 1.02..1.3")


# 2 ---------------------------------------------------------------------------------------

def test_02_peak_pauser_hours():
    with Criterion(2, "peak pauser hour count", 1.0) as c:
        prices = synthetic_price_trace(T0, 7)
        n4 = c.timed(lambda: len(find_expensive_hours(prices, 0.16)))
        c.check(n4 == 4, f"{n4} expensive hours")
        vals = np.tile(np.full(24, 30.0) + np.random.default_rng(0).uniform(0, 1, 24), 3)
        for d in range(3):
            vals[d * 24 + 13:d * 24 + 17] *= 2
        ts = TimeSeries(T0, HOUR, vals)
        got = c.timed(find_expensive_hours, ts, 0.16)
        # brute force: the 4-subset of hours with the largest summed mean price
        means = hourly_means(ts)
        oracle = max(itertools.combinations(range(24), 4), key=lambda s: sum(means[h] for h in s))
        c.check(got == {13, 14, 15, 16} == set(oracle), f"selected {sorted(got)}")


# 3 ---------------------------------------------------------------------------------------

def test_03_synthetic_savings():
    with Criterion(3, "synthetic pause savings", 5.0) as c:
        flat = TimeSeries(EPOCH, HOUR, np.full(24 * 7, 30.0))
        pause = {13, 14, 15, 16}
        e200, _ = estimate_pause_savings(flat, 200, 0.0, 0.0, pause)
        e100, _ = estimate_pause_savings(flat, 100, 0.0, 0.0, pause)
        c.check(abs(e200 - 4 / 24) < 1e-12, f"energy savings {e200}")
        c.check(abs(e200 - e100) < 1e-15, f"peak dependence {e200 - e100}")
        for idle in (0.3, 0.6):
            a, _ = estimate_pause_savings(flat, 200, idle, 0.0, pause)
            b, _ = estimate_pause_savings(flat, 100, idle, 0.0, pause)
            c.check(abs(a - b) < 1e-15 and abs(a - (1 - idle) * 4 / 24) < 1e-12, f"idle {idle}: {a} {b}")
        peaked = synthetic_price_trace(EPOCH, 7, peak=35.0, width=2.0)
        top = find_expensive_hours(peaked, 4 / 24)
        for idle in (0.0, 0.3, 0.6):
            e, p = estimate_pause_savings(peaked, 200, idle, 0.0, top)
            c.check(p >= e, f"price savings {p} < energy savings {e} at idle {idle}")
        # noisy cells: noise variance 25 W^2, strongly peaked prices
        for peak, e_ref, p_ref in ((100, 0.1696, 0.2656), (200, 0.1701, 0.2663)):
            e, p = estimate_pause_savings(peaked, peak, 0.0, 25.0, top, seed=1)
            c.check(abs(e - e_ref) <= 0.02, f"{peak} W energy {e:.4f} vs {e_ref}")
            c.check(abs(p - p_ref) <= 0.02, f"{peak} W price {p:.4f} vs {p_ref}")


# 4 ---------------------------------------------------------------------------------------

def test_04_availability():
    with Criterion(4, "availability formulas", 1e-3) as c:
        (a, b), c.elapsed = best_of(lambda: (availability_from(19, 60.0, 0.0, 86400.0),
                                             availability_from(0, 60.0, 4 * 3600.0, 86400.0)))
        c.check(abs(a - 0.9868) <= 1e-4, f"migrations {a}")
        c.check(abs(b - 0.8333) <= 1e-4, f"pause {b}")


# 5 ---------------------------------------------------------------------------------------

def _bisect(p, lo, hi, tol=1e-12):
    f = lambda r: kyoto_wastage(p, r) - kyoto_expected_penalty(p, r)
    if f(lo) >= 0:
        return lo
    if f(hi) <= 0:
        return hi
    while hi - lo > tol * max(1.0, hi):
        mid = (lo + hi) / 2
        if f(mid) < 0:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2


def test_05_kyoto_equilibrium():
    with Criterion(5, "Kyoto balance vs bisection", 1.0) as c:
        rng = np.random.default_rng(5)
        worst = 0.0
        for _ in range(1000):
            mean = rng.uniform(0, 100)
            p = KyotoParams(rng.uniform(0.01, 5), rng.uniform(0, 5), rng.uniform(0.01, 20), rng.uniform(1, 200),
                            mean, mean + rng.uniform(0.1, 100))
            worst = max(worst, abs(kyoto_equilibrium(p) - _bisect(p, p.mean_demand, p.max_demand)))
        c.check(worst <= 1e-6, f"max deviation {worst}")
        c.check(kyoto_equilibrium(KyotoParams(0.6, 0.4, 0.0, 100, 50, 100)) == 50, "c_viol -> 0")
        c.check(kyoto_equilibrium(KyotoParams(0.0, 0.0, 1.0, 100, 50, 100)) == 100, "c_en + c_co2 -> 0")
        c.check(abs(kyoto_equilibrium(KyotoParams(0.6, 0.4, 1.0, 100, 50, 100)) - 75) < 1e-12, "worked example")


# 6 ---------------------------------------------------------------------------------------

def test_06_pricing():
    with Criterion(6, "pricing base case and beta grid", 1.0) as c:
        eh = PricingModel(0.027, 0.018, 0.025, 1.0, f_base=2.6e9)
        base = vm_price(eh, VM(0, (1, 1)), [2.6e9])
        c.check(abs(base - 0.052) < 1e-12, f"base price {base}")
        freqs = [2.6e9 + i * 0.2e9 for i in range(5)]
        for beta in np.linspace(0, 1, 11):
            vm = VM(0, (2, 4), beta=float(beta))
            perc = [vm_price(eh, vm, [f, f], PERCEIVED, 3.4e9) for f in freqs]
            if beta == 0:
                c.check(max(perc) - min(perc) < 1e-15, "beta 0 varies with f")
            if beta == 1:
                perf = [vm_price(eh, vm, [f, f], PERFORMANCE) for f in freqs]
                c.check(max(abs(x - y) for x, y in zip(perc, perf)) < 1e-15, "beta 1 != performance")


# 7 ---------------------------------------------------------------------------------------

def test_07_multicore_power():
    with Criterion(7, "multi-core ARM power", 1e-3) as c:
        m = MulticorePowerModel()
        p00, p10, p01, p20, p11, p30, p21 = ARM_PEAK_COEFFS
        hand_peak = p00 + p10 + p01 + p20 + p11 + p30 + p21
        hand_idle = p00 + p10 + p20 + p30
        (pk, idle, us), c.elapsed = best_of(lambda: (multicore_peak_power(m, 1, 1), multicore_idle_power(m, 1),
                                                      [multicore_power(m, 1, 1, u) for u in (0.0, 0.5, 1.0)]))
        c.check(abs(pk - 1.6136) <= 1e-4 and abs(pk - hand_peak) < 1e-12, f"P_f(1,1)={pk}")
        c.check(abs(idle - 1.58078) < 1e-12 and abs(idle - hand_idle) < 1e-12, f"P_idle(1)={idle}")
        c.check(us[0] == idle and us[2] == pk, "endpoints")
        c.check(abs(us[1] - (idle + pk) / 2) < 1e-15, "midpoint")


# 8 ---------------------------------------------------------------------------------------

ARM = MulticorePowerModel()
ARM_FREQ = (0.2e9, 2.2e9, 0.2e9)


class RecordingBCFFS(BCFFSController):
    def __init__(self, **kw):
        super().__init__(**kw)
        self.calls = []

    def decide(self, view):
        actions, info = super().decide(view)
        self.calls.append((view, actions))
        return actions, info


def _fs_scenario(seed):
    rng = np.random.default_rng([8, seed])
    hours = 24
    locs = ("a", "b")
    el = {loc: TimeSeries(T0, HOUR, rng.uniform(100, 4000, hours)) for loc in locs}
    tp = {loc: TimeSeries(T0, HOUR, rng.uniform(-10, 35, hours)) for loc in locs}
    pms = tuple(PM(i, locs[i % 2], (4.0, 8.0), ARM, ARM_FREQ, 4) for i in range(int(rng.integers(2, 6))))
    vms = []
    for i in range(int(rng.integers(3, 14))):
        boot = T0 + timedelta(hours=int(rng.integers(0, 12)))
        dur = int(rng.integers(1, 24))
        delete = boot + timedelta(hours=dur) if boot + timedelta(hours=dur) < T0 + timedelta(hours=hours) else None
        vms.append(VM(i, (1.0, float(rng.integers(1, 3))), float(rng.choice([0.0, 0.1, 0.5, 1.0])), boot, delete))
    pricing = PricingModel(0.027, 0.018, 0.025, 1.0, scale=ARM_PRICE_SCALE)
    return ScenarioConfig(Grid(T0, HOUR, hours * HOUR), TraceSet(locs, el, tp), pms, tuple(vms), "bcf",
                          fw=HOUR, pricing=pricing, seed=seed)


def test_08_frequency_scaling_profitability():
    with Criterion(8, "frequency scaling profitability", 60.0) as c:
        reductions = 0
        for seed in range(50):
            cfg = _fs_scenario(seed)
            bcf = simulate(cfg)
            ctrl = RecordingBCFFS(pricing=cfg.pricing)
            fs = simulate(replace(cfg, controller="bcffs"), ctrl)
            for view, actions in ctrl.calls:
                placed = apply_actions(view.state, [a for a in actions if a.kind != SET_FREQ], view.pms)
                k = view.step
                for a in actions:
                    pm = view.pms.get(a.pm)
                    if a.kind != SET_FREQ or a.hz >= pm.f_max:
                        continue
                    reductions += 1
                    run = [view.vms[v] for v in sorted(placed.alloc[a.pm]) if v not in placed.paused]
                    price = cfg.traces.electricity[pm.location].values[k]
                    cool = ppue(cfg.traces.temperature[pm.location].values[k])

                    def cost(f):
                        return pm_power(pm, run, f) * cool * price / 1e6

                    def rev(f):
                        return sum(vm_hourly_price(cfg.pricing, vm, pm, f, PERCEIVED) for vm in run)
                    save, loss = cost(pm.f_max) - cost(a.hz), rev(pm.f_max) - rev(a.hz)
                    c.check(save > loss, f"seed {seed} step {k} PM {a.pm}: savings {save} <= loss {loss}")
            net_fs = fs.cost_report.total_cost - fs.cost_report.service_revenue
            net_bcf = bcf.cost_report.total_cost - bcf.cost_report.service_revenue
            c.check(net_fs <= net_bcf + 1e-12, f"seed {seed}: BCFFS net {net_fs} > BCF {net_bcf}")
        c.check(reductions > 0, "no frequency reductions were exercised")
        print(f"    criterion 8 exercised {reductions} frequency reductions")


# 9 ---------------------------------------------------------------------------------------

def _toy(prices_dear=100.0, gap=5.0, steps=6):
    pms = (PM(0, "dear", (4.0, 8.0)), PM(1, "cheap", (4.0, 8.0)))
    vms = {i: VM(i, (1.0, 2.0), boot_time=T0) for i in range(3)}
    prices = {"dear": np.full(steps, prices_dear), "cheap": np.full(steps, prices_dear / gap)}
    temps = {"dear": np.full(steps, 15.0), "cheap": np.full(steps, 15.0)}
    return pms, vms, prices, temps


def test_09_ga_toy():
    with Criterion(9, "GA sanity on the 2-DC toy", 120.0) as c:
        pms, vms, prices, temps = _toy()
        # start where the price-blind baseline leaves the VMs: all on the dear PM
        ctx = build_context(CloudState(T0, {0: {0, 1, 2}, 1: set()}), pms, vms, T0, HOUR, prices, temps)
        none = Schedule((), ctx.t_c, ctx.t_f)
        best, _ = ga_run(ctx, GAParams(fw=6 * HOUR, seed=0))
        repaired = bcf_repair(best, ctx)
        f_ga, f_none = fitness(repaired, ctx), fitness(none, ctx)
        c.check(f_ga <= f_none, f"GA+repair fitness {f_ga} > no-action {f_none}")

        acts = [migrate(t, v, p.id) for t in ctx.times for v in sorted(vms) for p in pms]
        fits = [f_none] + [fitness(Schedule((a,), ctx.t_c, ctx.t_f), ctx) for a in acts]
        fits += [fitness(Schedule(pair, ctx.t_c, ctx.t_f), ctx) for pair in itertools.product(acts, repeat=2)]
        decile = float(np.quantile(fits, 0.1))
        c.check(f_ga <= decile, f"GA fitness {f_ga} outside top decile (<= {decile}) of {len(fits)}")

        traces = TraceSet(("cheap", "dear"), {k: TimeSeries(T0, HOUR, v) for k, v in prices.items()},
                          {k: TimeSeries(T0, HOUR, v) for k, v in temps.items()})
        cfg = ScenarioConfig(Grid(T0, HOUR, 6 * HOUR), traces, pms, tuple(vms.values()), "ga_hybrid",
                             {"ga": {"pop": 30, "gen": 30}}, fw=6 * HOUR)
        ga_cost = simulate(cfg).cost_report.total_cost
        bfd_cost = simulate(replace(cfg, controller="bfd", controller_params={})).cost_report.total_cost
        c.check(ga_cost < bfd_cost, f"GA cost {ga_cost} not below BFD {bfd_cost}")
        print(f"    criterion 9: fitness GA {f_ga:.4f}, none {f_none:.4f}, decile {decile:.4f}; "
              f"cost GA {ga_cost:.6f} vs BFD {bfd_cost:.6f}")


# 10 --------------------------------------------------------------------------------------

def _violations(state, pms, vms):
    """Independent brute-force constraint count: unplaced VMs and over-full PMs."""
    placed = [v for hosted in state.alloc.values() for v in hosted]
    unalloc = [v for v in vms if placed.count(v) != 1]
    over = []
    for p in pms:
        for r in range(len(p.capacity)):
            if sum(vms[v].requested[r] for v in state.alloc.get(p.id, ())) > p.capacity[r] + 1e-9:
                over.append(p.id)
                break
    return len(unalloc) + len(over)


def test_10_bcf_repair_feasibility():
    with Criterion(10, "BCF repair feasibility", 30.0) as c:
        rng = np.random.default_rng(10)
        done = 0
        while done < 100:
            n_pm, n_vm = int(rng.integers(1, 11)), int(rng.integers(1, 41))
            locs = ("x", "y", "z")
            pms = [PM(i, locs[i % 3], (float(rng.integers(8, 17)), float(rng.integers(16, 33)))) for i in range(n_pm)]
            vms = {i: VM(i, (float(rng.integers(1, 3)), float(rng.integers(1, 5)))) for i in range(n_vm)}
            demand = np.sum([v.requested for v in vms.values()], axis=0)
            if (demand > 0.7 * np.sum([p.capacity for p in pms], axis=0)).any():
                continue                     # keep instances feasible with slack
            alloc = {p.id: set() for p in pms}
            for v in vms:
                if rng.random() < 0.6:
                    alloc[int(rng.integers(n_pm))].add(v)      # may overload or leave VMs out
            steps = int(rng.integers(1, 5))
            prices = {loc: rng.uniform(10, 90, steps) for loc in locs}
            temps = {loc: rng.uniform(-10, 35, steps) for loc in locs}
            ctx = build_context(CloudState(T0, alloc), pms, vms, T0, HOUR, prices, temps)
            sched = ga_create(ctx, GAParams(max_migr=10), rng)
            out = bcf_repair(sched, ctx)
            state = ctx.state
            pm_map = {p.id: p for p in pms}
            for t in ctx.times:
                state = apply_actions(state, out.at(t), pm_map, time=t)
                n = _violations(state, pms, vms)
                c.check(n == 0, f"instance {done} step {t}: {n} violations")
            done += 1


# 11 --------------------------------------------------------------------------------------

def test_11_determinism(tmp_path):
    with Criterion(11, "byte-identical reruns (6 DC, 50 PM, 200 VM, 7 d)", 60.0) as c:
        cfg = load_config(ROOT / "configs" / "toy.json")
        c.check(len({p.location for p in cfg.pms}) == 6 and len(cfg.pms) == 50 and len(cfg.vms) == 200
                and cfg.grid.n_steps == 7 * 24, "toy config dimensions")
        t = time.perf_counter()
        a = simulate(cfg).save(tmp_path / "a")
        first = time.perf_counter() - t
        b = simulate(load_config(ROOT / "configs" / "toy.json")).save(tmp_path / "b")
        for f in ("report.json", "actions.jsonl"):
            c.check((a / f).read_bytes() == (b / f).read_bytes(), f"{f} differs")
        c.elapsed = first
        rep = json.loads((a / "report.json").read_text())
        c.check(rep["metadata"]["constraint_violations"] == 0, "constraint violations in toy run")


# 12 --------------------------------------------------------------------------------------

def test_12_forecasting():
    with Criterion(12, "forecast error metrics and SES fixed point", 5.0) as c:
        t = time.perf_counter()
        series = TimeSeries(T0, HOUR, np.random.default_rng(1).uniform(20, 60, 500))
        c.check(mape(series, series) == 0.0, "mape(perfect) != 0")
        noisy = perturb_forecast(TimeSeries(T0, HOUR, np.zeros(10000)), ForecastErrorSpec(2.5, 12))
        sd = float(np.std(noisy.values))
        c.check(abs(sd - 2.5) <= 0.05 * 2.5, f"sample std {sd}")
        const = TimeSeries(T0, HOUR, np.full(50, 41.3))
        for alpha in (0.1, 0.5, 0.9):
            c.check(np.array_equal(ses_smooth(const, alpha).values, const.values), f"smooth alpha {alpha}")
            c.check(np.all(ses_forecast(const, alpha, 24).values == 41.3), f"forecast alpha {alpha}")
        c.elapsed = time.perf_counter() - t
