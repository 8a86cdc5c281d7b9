"""Energy cost integration, VM pricing, revenue, chargeback and the Kyoto balance."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, fields
from typing import Mapping, Optional, Sequence

import numpy as np

from .cloudmodel import PM, VM, CloudState
from .errors import DomainError, GridError, ParameterError
from .geotemporal import TimeSeries

PERFORMANCE, PERCEIVED = "performance", "perceived"
J_PER_KWH = 3.6e6


@dataclass(frozen=True)
class PricingModel:
    """Hourly VM price model; ``f_base=None`` bills relative to the host's lowest frequency."""

    c_base: float = 0.027
    c_cpu: float = 0.018
    c_ram: float = 0.025
    ram_base: float = 1.0
    f_base: Optional[float] = None
    scale: float = 1.0

    def __post_init__(self):
        if min(self.c_base, self.c_cpu, self.c_ram, self.scale) < 0:
            raise ParameterError("prices and scale must be >= 0")
        if self.ram_base <= 0:
            raise ParameterError("ram_base must be > 0")
        if self.f_base is not None and self.f_base <= 0:
            raise ParameterError("f_base must be > 0")


ELASTICHOSTS = PricingModel(0.027, 0.018, 0.025, 1.0)
CLOUDSIGMA = PricingModel(0.0045, 0.0017, 0.004, 1.0)
ARM_PRICE_SCALE = 1 / 11


@dataclass(frozen=True)
class KyotoParams:
    c_en: float
    c_co2: float
    c_viol: float
    r_agreed: float
    mean_demand: float
    max_demand: float

    def __post_init__(self):
        if min(self.c_en, self.c_co2, self.c_viol) < 0:
            raise ParameterError("costs must be >= 0")
        if self.r_agreed <= 0:
            raise ParameterError("r_agreed must be > 0")
        if not self.max_demand >= self.mean_demand >= 0:
            raise ParameterError("need max_demand >= mean_demand >= 0")


KytoParams = KyotoParams


@dataclass(frozen=True)
class CostReport:
    it_energy: float = 0.0
    it_cost: float = 0.0
    total_energy: float = 0.0
    total_cost: float = 0.0
    migration_energy: float = 0.0
    migration_cost: float = 0.0
    service_revenue: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: Mapping) -> "CostReport":
        return cls(**{f.name: float(d[f.name]) for f in fields(cls)})

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=[f.name for f in fields(self)], lineterminator="\n")
        w.writeheader()
        w.writerow({k: repr(v) for k, v in self.to_dict().items()})
        return buf.getvalue()

    def summary(self) -> str:
        return (f"it_energy={self.it_energy:.4f} kWh total_energy={self.total_energy:.4f} kWh "
                f"total_cost=${self.total_cost:.4f} migration_cost=${self.migration_cost:.4f} "
                f"revenue=${self.service_revenue:.4f}")


# -- energy cost ------------------------------------------------------------------

def integrate_cost(power: TimeSeries, prices: TimeSeries) -> tuple[float, float]:
    """Rectangle rule: (kWh, $) for a power trace in W against prices in $/MWh.

    Prices on a coarser grid are step-held onto the power grid.
    """
    if not len(power):
        return 0.0, 0.0
    if prices.period % power.period and power.period % prices.period:
        raise GridError(f"price period {prices.period}s cannot be step-held onto {power.period}s")
    if prices.period > power.period or prices.start != power.start:
        idx = [prices.index_of(t) for t in power.timestamps()]
        e = prices.values[idx]
    else:
        if len(prices) < len(power):
            raise GridError("price trace shorter than power trace")
        e = prices.values[:len(power)]
    p = np.asarray(power.values)
    energy = float(np.sum(p)) * power.period / J_PER_KWH
    cost = float(np.sum(p * e)) * power.period / J_PER_KWH / 1000.0
    return energy, cost


def energy_cost(power_w: float, seconds: float, price_mwh: float) -> float:
    return power_w * seconds / J_PER_KWH * price_mwh / 1000.0


# -- pricing ------------------------------------------------------------------------

def effective_freq(f: float, beta: float, f_max: float) -> float:
    """Frequency a customer perceives given the workload's CPU-boundedness."""
    return beta * f + (1 - beta) * f_max


def vm_price(model: PricingModel, vm: VM, per_core_freq: Sequence[float], kind: str = PERFORMANCE,
             f_max: Optional[float] = None, f_min: Optional[float] = None) -> float:
    """Hourly price of ``vm`` with each core running at ``per_core_freq``."""
    f_base = model.f_base if model.f_base is not None else f_min
    if f_base is None:
        raise ParameterError("no base frequency: set PricingModel.f_base or pass f_min")
    if kind not in (PERFORMANCE, PERCEIVED):
        raise ParameterError(f"unknown pricing kind {kind!r}")
    if kind == PERCEIVED and f_max is None:
        raise ParameterError("perceived pricing needs f_max")
    cpu = 0.0
    for f in per_core_freq:
        if f < f_base - 1e-6:
            raise DomainError(f"core frequency {f} Hz below f_base {f_base} Hz")
        if kind == PERCEIVED:
            f = effective_freq(f, vm.beta, f_max)
        cpu += (f - f_base) / f_base
    return model.scale * (model.c_base + model.c_cpu * cpu + model.c_ram * vm.ram / model.ram_base)


def vm_hourly_price(model: PricingModel, vm: VM, pm: PM, freq: Optional[float], kind: str) -> float:
    f = pm.f_max if freq is None else freq
    return vm_price(model, vm, [f] * vm.cores, kind, pm.f_max, pm.f_min)


def service_revenue(states: Sequence[CloudState], vms: Mapping, pms: Mapping, pricing: PricingModel,
                    kind: str = PERCEIVED, period: int = 3600,
                    fractions: Optional[Sequence[Mapping]] = None) -> float:
    """Sum of hourly prices over states and live, unpaused VMs.

    Each state is billed for ``period`` seconds; ``fractions[i]`` optionally gives
    the share of that interval each VM was alive (pro-rata billing).
    """
    total = 0.0
    for i, st in enumerate(states):
        frac = fractions[i] if fractions is not None else None
        for pm_id, hosted in st.alloc.items():
            pm = pms[pm_id]
            for vm_id in hosted:
                if vm_id in st.paused:
                    continue
                share = 1.0 if frac is None else frac.get(vm_id, 1.0)
                total += share * vm_hourly_price(pricing, vms[vm_id], pm, st.freq.get(pm_id), kind)
    return total * period / 3600.0


def environmental_chargeback(energy_kwh: float, cef_lb_per_mwh: float, pue: float) -> float:
    """CO2e in lb attributed to ``energy_kwh`` of IT energy."""
    if min(energy_kwh, cef_lb_per_mwh, pue) < 0:
        raise ParameterError("chargeback inputs must be >= 0")
    return cef_lb_per_mwh * pue * energy_kwh / 1000.0


# -- Kyoto wastage/penalty balance ---------------------------------------------------

def kyoto_wastage(params: KyotoParams, r_provisioned: float) -> float:
    if r_provisioned < params.mean_demand:
        raise DomainError(f"provisioned {r_provisioned} below mean demand {params.mean_demand}")
    return (r_provisioned - params.mean_demand) / params.r_agreed * (params.c_en + params.c_co2)


def kyoto_violation_prob(params: KyotoParams, r_provisioned: float) -> float:
    if not 0 <= r_provisioned <= params.max_demand:
        raise DomainError(f"provisioned {r_provisioned} outside [0, {params.max_demand}]")
    if params.max_demand == 0:
        return 0.0
    return 1 - r_provisioned / params.max_demand


def kyoto_expected_penalty(params: KyotoParams, r_provisioned: float) -> float:
    return kyoto_violation_prob(params, r_provisioned) * params.c_viol


def kyoto_equilibrium(params: KyotoParams) -> float:
    """Provisioning level at which wastage cost equals the expected penalty."""
    c = params.c_en + params.c_co2
    m, mx, a, v = params.mean_demand, params.max_demand, params.r_agreed, params.c_viol
    den = mx * c + a * v
    if c == 0 and v == 0 or den <= 0:
        raise DomainError("wastage and penalty costs are all zero; no unique balance")
    return mx * (m * c + a * v) / den


__all__ = [
    "PricingModel", "KyotoParams", "CostReport", "ELASTICHOSTS", "CLOUDSIGMA", "ARM_PRICE_SCALE",
    "PERFORMANCE", "PERCEIVED", "integrate_cost", "energy_cost", "effective_freq", "vm_price",
    "vm_hourly_price", "service_revenue", "environmental_chargeback", "kyoto_wastage",
    "kyoto_violation_prob", "kyoto_expected_penalty", "kyoto_equilibrium",
]
