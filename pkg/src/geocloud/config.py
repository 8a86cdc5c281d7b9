"""Scenario configuration: a versioned JSON document validated against a schema."""
from __future__ import annotations

import copy
import json
from pathlib import Path
from typing import Any, Mapping, Optional

import jsonschema

from .cloudmodel import PM, VM, LinearPowerModel, MigrationModel, MulticorePowerModel
from .economics import PERCEIVED, PERFORMANCE, PricingModel
from .errors import ConfigError, GeoCloudError
from .geotemporal import (HOUR, ForecastErrorSpec, TraceSet, load_trace_set, parse_timestamp,
                          synthesize_shifted_trace, synthetic_price_trace, synthetic_temperature_trace)
from .simulator import (Grid, InfrastructureSpec, ScenarioConfig, WorkloadSpec, generate_infrastructure,
                        generate_workload)

CONTROLLER_NAMES = ("peak_pauser", "bfd", "ga_hybrid", "bcffs", "bcf")
SEED_NAMES = ("workload", "infrastructure", "forecast", "controller", "power")

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}
_int = {"type": "integer"}
_range = {"type": "array", "items": _nonneg, "minItems": 2, "maxItems": 2}
_str_map = {"type": "object", "additionalProperties": {"type": "string"}}
_num_map = {"type": "object", "additionalProperties": _num}

SCHEMA: dict = {
    "type": "object",
    "required": ["schema", "grid", "traces", "infrastructure", "workload"],
    "additionalProperties": False,
    "properties": {
        "schema": {"const": 1},
        "grid": {
            "type": "object", "required": ["start"], "additionalProperties": False,
            "properties": {"start": {"type": "string"}, "period": {"type": "integer", "minimum": 1},
                           "duration": {"type": "integer", "minimum": 1}},
        },
        "traces": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "electricity": _str_map,
                "temperature": _str_map,
                "synthetic": {
                    "type": "object", "required": ["locations"], "additionalProperties": False,
                    "properties": {
                        "locations": {"type": "array", "items": {"type": "string"}, "minItems": 1},
                        "days": {"type": "integer", "minimum": 1},
                        "price": {"type": "object", "additionalProperties": _num},
                        "temperature": {"type": "object", "additionalProperties": _num},
                        "tz_offsets": {"type": "object", "additionalProperties": _int},
                        "price_offsets": _num_map,
                        "temperature_offsets": _num_map,
                    },
                },
            },
        },
        "power_models": {
            "type": "object",
            "additionalProperties": {
                "type": "object", "required": ["kind"],
                "properties": {"kind": {"enum": ["linear", "multicore"]}},
            },
        },
        "infrastructure": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "generate": {
                    "type": "object", "required": ["p"], "additionalProperties": False,
                    "properties": {
                        "locations": {"type": "array", "items": {"type": "string"}},
                        "p": {"type": "integer", "minimum": 0},
                        "cpu_range": _range, "ram_range": _range,
                        "power_model": {"type": "string"},
                        "freq_range": {"type": "array", "items": _pos, "minItems": 3, "maxItems": 3},
                        "n_cores": {"type": "integer", "minimum": 1},
                    },
                },
                "pms": {
                    "type": "array",
                    "items": {
                        "type": "object", "required": ["id", "location", "capacity"],
                        "additionalProperties": False,
                        "properties": {
                            "id": _int, "location": {"type": "string"},
                            "capacity": {"type": "array", "items": _pos, "minItems": 1},
                            "power_model": {"type": "string"},
                            "freq_range": {"type": "array", "items": _pos, "minItems": 3, "maxItems": 3},
                            "n_cores": {"type": "integer", "minimum": 1},
                        },
                    },
                },
            },
        },
        "workload": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "generate": {
                    "type": "object", "required": ["v"], "additionalProperties": False,
                    "properties": {
                        "v": {"type": "integer", "minimum": 0},
                        "cpu_range": _range, "ram_range": _range,
                        "beta": {"type": "object", "required": ["kind"],
                                 "properties": {"kind": {"enum": ["constant", "uniform", "exponential"]}}},
                        "green_fraction": {"type": "number", "minimum": 0, "maximum": 1},
                    },
                },
                "vms": {
                    "type": "array",
                    "items": {
                        "type": "object", "required": ["id", "requested"], "additionalProperties": False,
                        "properties": {
                            "id": _int, "requested": {"type": "array", "items": _nonneg, "minItems": 1},
                            "beta": {"type": "number", "minimum": 0, "maximum": 1},
                            "boot_time": {"type": "string"}, "delete_time": {"type": ["string", "null"]},
                            "green": {"type": "boolean"},
                        },
                    },
                },
            },
        },
        "controller": {
            "type": "object", "required": ["name"], "additionalProperties": False,
            "properties": {"name": {"enum": list(CONTROLLER_NAMES)}, "params": {"type": "object"}},
        },
        "forecast": {
            "type": "object", "additionalProperties": False,
            "properties": {"fw_hours": {"type": "integer", "minimum": 1}, "sigma_pred": _nonneg},
        },
        "pricing": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "kind": {"enum": [PERFORMANCE, PERCEIVED]},
                "default": {"type": "object", "additionalProperties": _num},
                "by_location": {"type": "object", "additionalProperties": {"type": "object"}},
            },
        },
        "migration": {"type": "object", "additionalProperties": _num},
        "util_weights": {"type": "array", "items": _nonneg, "minItems": 1},
        "seeds": {"type": "object", "additionalProperties": False,
                  "properties": {name: _int for name in SEED_NAMES}},
        "rng": {"enum": ["pcg64"]},
    },
}


def _path(err: jsonschema.ValidationError) -> str:
    return ".".join(str(p) for p in err.absolute_path) or "<root>"


def validate(doc: Any) -> None:
    """Raise ConfigError naming the offending field path for the first schema violation."""
    validator = jsonschema.Draft7Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: (list(map(str, e.absolute_path)), e.message))
    if errors:
        e = errors[0]
        raise ConfigError(_path(e), e.message)


def _power_model(spec: Mapping, seed: int):
    spec = dict(spec)
    kind = spec.pop("kind")
    try:
        if kind == "linear":
            spec.setdefault("seed", seed)
            return LinearPowerModel(**spec)
        for key in ("peak_coeffs", "gamma_coeffs"):
            if key in spec:
                spec[key] = tuple(spec[key])
        return MulticorePowerModel(**spec)
    except TypeError as exc:
        raise ConfigError("power_models", str(exc)) from None


def _traces(doc: Mapping, grid: Grid, base: Path) -> TraceSet:
    tr = doc["traces"]
    if "synthetic" in tr:
        syn = tr["synthetic"]
        days = syn.get("days", -(-grid.duration // 86400))
        base_p = synthetic_price_trace(grid.start, days, grid.period, **syn.get("price", {}))
        base_t = synthetic_temperature_trace(grid.start, days, grid.period, **syn.get("temperature", {}))
        el, te = {}, {}
        for loc in syn["locations"]:
            tz = syn.get("tz_offsets", {}).get(loc, 0)
            el[loc] = synthesize_shifted_trace(base_p, tz, syn.get("price_offsets", {}).get(loc, 0.0))
            te[loc] = synthesize_shifted_trace(base_t, tz, syn.get("temperature_offsets", {}).get(loc, 0.0))
        return TraceSet(tuple(syn["locations"]), el, te)
    if "electricity" not in tr or "temperature" not in tr:
        raise ConfigError("traces", "give either 'synthetic' or both 'electricity' and 'temperature'")

    def resolve(m):
        out = {}
        for loc, p in m.items():
            path = Path(p) if Path(p).is_absolute() else base / p
            if not path.exists():
                raise ConfigError(f"traces.{loc}", f"trace file not found: {path}")
            out[loc] = path
        return out
    return load_trace_set(resolve(tr["electricity"]), resolve(tr["temperature"]))


def build_scenario(doc: Mapping, base_dir: Path | str = ".", seed: Optional[int] = None,
                   controller: Optional[str] = None, controller_params: Optional[Mapping] = None) -> ScenarioConfig:
    """Validate ``doc`` and build a runnable scenario.

    ``seed`` overrides every named seed; ``controller`` swaps the controller
    (keeping params only when the name is unchanged).
    """
    validate(doc)
    doc = copy.deepcopy(doc)
    base = Path(base_dir)
    seeds = {name: 0 for name in SEED_NAMES}
    seeds.update(doc.get("seeds", {}))
    if seed is not None:
        seeds = {name: int(seed) for name in SEED_NAMES}
    try:
        g = doc["grid"]
        grid = Grid(parse_timestamp(g["start"]), g.get("period", HOUR), g.get("duration", 14 * 86400))
        traces = _traces(doc, grid, base)
        models = {name: _power_model(spec, seeds["power"]) for name, spec in doc.get("power_models", {}).items()}
        models.setdefault("default", LinearPowerModel(seed=seeds["power"]))

        def model(name, where):
            if name not in models:
                raise ConfigError(where, f"unknown power model {name!r}")
            return models[name]

        infra = doc["infrastructure"]
        if "pms" in infra:
            pms = [PM(p["id"], p["location"], tuple(p["capacity"]), model(p.get("power_model", "default"),
                      f"infrastructure.pms.{i}.power_model"), tuple(p.get("freq_range", (2.6e9, 3.4e9, 0.2e9))),
                      p.get("n_cores", 4)) for i, p in enumerate(infra["pms"])]
        elif "generate" in infra:
            gen = dict(infra["generate"])
            spec = InfrastructureSpec(
                tuple(gen.get("locations", traces.locations)), gen["p"], tuple(gen.get("cpu_range", (8, 16))),
                tuple(gen.get("ram_range", (16, 32))),
                model(gen.get("power_model", "default"), "infrastructure.generate.power_model"),
                tuple(gen.get("freq_range", (2.6e9, 3.4e9, 0.2e9))), gen.get("n_cores"))
            pms = generate_infrastructure(spec, seeds["infrastructure"])[1]
        else:
            raise ConfigError("infrastructure", "give either 'pms' or 'generate'")

        wl = doc["workload"]
        if "vms" in wl:
            vms = [VM(v["id"], tuple(v["requested"]), v.get("beta", 1.0),
                      parse_timestamp(v["boot_time"]) if "boot_time" in v else grid.start,
                      parse_timestamp(v["delete_time"]) if v.get("delete_time") else None,
                      v.get("green", False)) for v in wl["vms"]]
        elif "generate" in wl:
            gen = wl["generate"]
            vms = generate_workload(WorkloadSpec(gen["v"], tuple(gen.get("cpu_range", (1, 2))),
                                                 tuple(gen.get("ram_range", (2, 4))),
                                                 gen.get("beta", {"kind": "constant", "value": 1.0}),
                                                 gen.get("green_fraction", 0.0)), grid, seeds["workload"])
        else:
            raise ConfigError("workload", "give either 'vms' or 'generate'")

        ctrl = doc.get("controller", {"name": "bfd"})
        name = ctrl["name"]
        params = dict(ctrl.get("params", {}))
        if controller is not None and controller != name:
            name, params = controller, {}
        if controller_params:
            params.update(controller_params)

        pr = doc.get("pricing", {})
        default = PricingModel(**pr.get("default", {}))
        pricing = default
        if pr.get("by_location"):
            pricing = {loc: PricingModel(**{**pr.get("default", {}), **p}) for loc, p in pr["by_location"].items()}
            for loc in traces.locations:
                pricing.setdefault(loc, default)

        fc = doc.get("forecast", {})
        return ScenarioConfig(
            grid, traces, tuple(pms), tuple(vms), name, params, fc.get("fw_hours", 12) * HOUR,
            ForecastErrorSpec(fc.get("sigma_pred", 0.0), seeds["forecast"]), pricing,
            pr.get("kind", PERCEIVED), MigrationModel(**doc.get("migration", {})),
            tuple(doc["util_weights"]) if "util_weights" in doc else None, seeds["controller"])
    except ConfigError:
        raise
    except (GeoCloudError, TypeError, ValueError) as exc:
        raise ConfigError(getattr(exc, "path", None) or "", str(exc)) from exc


def load_config(path, **kw) -> ScenarioConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(str(path), "config file not found")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(str(path), f"invalid JSON: {exc}") from None
    return build_scenario(doc, path.parent, **kw)
