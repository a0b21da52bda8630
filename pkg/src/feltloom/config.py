"""One INI-style config file for every tunable constant.

Sections::

    [envelope]            cyl_radius, cyl_height, felt_reach
    [geometry]            StewartGeometry fields (angle lists comma separated)
    [tension.<level>]     nominal_force, jitter_sigma, slack_factor
    [curve]               d0
    [needle.<tip_gauge>]  tau, d_max, tensile, compressive[, peak_stretch]
    [ratio_tensile]       <ratio percent> = N at 50 mm
    [strength]            coil_compressive_cap
    [time]                TimeModel fields
    [simulator]           dr, dz, n_theta, margin, footprint_diameter
    [material.<name>]     entangle_rank, compressibility, linear_density, felt_fix_multiplier
    [plan]                scalar PlanParams fields

Missing sections and keys keep their defaults; unknown ones are errors.
"""
from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, fields, replace

from .coil import TENSIONS, TensionLevel
from .kinematics import StewartGeometry
from .mesh import WorkEnvelope
from .plan import CoreSpec, PlanParams
from .process import (ALL_NEEDLES, MATERIALS, DensityCurve, MaterialSpec, NeedleSpec,
                      ProcessModels, StrengthTable, TimeModel)
from .simulator import SimParams

ENV_VAR = "FELTLOOM_CONFIG"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Config:
    envelope: WorkEnvelope = field(default_factory=WorkEnvelope)
    geometry: StewartGeometry = field(default_factory=StewartGeometry)
    models: ProcessModels = field(default_factory=ProcessModels)
    sim: SimParams = field(default_factory=SimParams)
    plan: PlanParams = field(default_factory=PlanParams)

    def sim_params(self) -> SimParams:
        """Simulator settings matched to the planning parameters."""
        p = self.plan
        return replace(self.sim, line_width=p.line_width, packing=p.packing,
                       feeder_wheel_circumference=p.feeder_wheel_circumference,
                       core_radius=p.core.core_radius, stick_radius=p.core.stick_radius,
                       needle=p.needle)


_GEOMETRY_KEYS = {f.name for f in fields(StewartGeometry)}
_TIME_KEYS = {f.name for f in fields(TimeModel)}
_SIM_KEYS = {"dr", "dz", "n_theta", "margin", "footprint_diameter"}
_PLAN_SCALARS = {
    "line_width": float, "packing": float, "crossed_ratio": int, "slope_deg": float,
    "tension": str, "material": str, "needle": str, "fix_every_layers": int,
    "fix_stations": int, "fix_punches": int, "embroidery_bond_fraction": float,
    "footprint": float, "felt_hz": float, "rot_speed": float, "max_tilt_deg": float,
    "feeder_wheel_circumference": float, "base_fraction": float, "fidelity_slack": float,
    "coil_estimate": str, "estimate_seed": int, "core_radius": float, "stick_radius": float,
    "tack_spacing": float, "tack_punches": int, "shape_sectors": bool,
}


def _float(section, key, text) -> float:
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: expected a number, got {text!r}") from None


def _floats(section, key, text) -> tuple:
    return tuple(_float(section, key, t) for t in text.split(","))


def _check_keys(section, items, allowed):
    extra = sorted(set(items) - set(allowed))
    if extra:
        raise ConfigError(f"[{section}] unknown key(s): {', '.join(extra)}")


def parse_config(text: str) -> Config:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # keys are case sensitive
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    try:
        return _build(cp)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None


def _build(cp: configparser.ConfigParser) -> Config:
    env_kw, geom_kw, time_kw, sim_kw, plan_kw = {}, {}, {}, {}, {}
    tensions = dict(TENSIONS)
    materials = dict(MATERIALS)
    base = ProcessModels()
    d0 = base.curve.d0
    tau = dict(base.curve.tau)
    d_max = dict(base.curve.d_max)
    tensile = dict(base.strength.max_tensile)
    compressive = dict(base.strength.max_compressive)
    stretch = dict(base.strength.tensile_peak_stretch)
    ratio = dict(base.strength.ratio_tensile_at_50mm)
    cap = base.strength.coil_compressive_cap
    footprint = base.footprint_diameter
    needle_keys = {n.key: n for n in ALL_NEEDLES}

    for sec in cp.sections():
        items = dict(cp.items(sec))
        head, _, tail = sec.partition(".")
        if sec == "envelope":
            _check_keys(sec, items, {f.name for f in fields(WorkEnvelope)})
            env_kw = {k: _float(sec, k, v) for k, v in items.items()}
        elif sec == "geometry":
            _check_keys(sec, items, _GEOMETRY_KEYS)
            for k, v in items.items():
                geom_kw[k] = _floats(sec, k, v) if k.endswith("angles") else _float(sec, k, v)
        elif head == "tension" and tail:
            _check_keys(sec, items, {"nominal_force", "jitter_sigma", "slack_factor"})
            old = tensions.get(tail, TensionLevel(tail, 0.0, 0.0, 1.0))
            kw = {k: _float(sec, k, v) for k, v in items.items()}
            tensions[tail] = replace(old, **kw)
        elif sec == "curve":
            _check_keys(sec, items, {"d0"})
            d0 = _float(sec, "d0", items.get("d0", d0))
        elif head == "needle" and tail:
            if tail not in needle_keys:
                raise ConfigError(f"[{sec}] unknown needle; expected one of "
                                  + ", ".join(sorted(needle_keys)))
            _check_keys(sec, items, {"tau", "d_max", "tensile", "compressive", "peak_stretch"})
            n = needle_keys[tail]
            for k, target in (("tau", tau), ("d_max", d_max), ("tensile", tensile),
                              ("compressive", compressive), ("peak_stretch", stretch)):
                if k in items:
                    target[n] = _float(sec, k, items[k])
        elif sec == "ratio_tensile":
            for k, v in items.items():
                try:
                    ratio[int(k)] = _float(sec, k, v)
                except ValueError:
                    raise ConfigError(f"[{sec}] key {k!r} must be a ratio percent") from None
        elif sec == "strength":
            _check_keys(sec, items, {"coil_compressive_cap"})
            cap = _float(sec, "coil_compressive_cap", items.get("coil_compressive_cap", cap))
        elif sec == "time":
            _check_keys(sec, items, _TIME_KEYS)
            time_kw = {k: _float(sec, k, v) for k, v in items.items()}
        elif sec == "simulator":
            _check_keys(sec, items, _SIM_KEYS)
            for k, v in items.items():
                if k == "footprint_diameter":
                    footprint = _float(sec, k, v)
                elif k == "n_theta":
                    sim_kw[k] = int(_float(sec, k, v))
                else:
                    sim_kw[k] = _float(sec, k, v)
        elif head == "material" and tail:
            _check_keys(sec, items, {"entangle_rank", "compressibility", "linear_density",
                                     "felt_fix_multiplier"})
            old = materials.get(tail)
            kw = {k: (int(_float(sec, k, v)) if k == "entangle_rank" else _float(sec, k, v))
                  for k, v in items.items()}
            materials[tail] = replace(old, **kw) if old else MaterialSpec(tail, **kw)
        elif sec == "plan":
            _check_keys(sec, items, _PLAN_SCALARS)
            for k, v in items.items():
                kind = _PLAN_SCALARS[k]
                if kind is bool:
                    try:
                        plan_kw[k] = cp.getboolean(sec, k)
                    except ValueError:
                        raise ConfigError(f"[{sec}] {k}: expected true or false") from None
                else:
                    plan_kw[k] = v.strip() if kind is str else (
                        int(_float(sec, k, v)) if kind is int else _float(sec, k, v))
        else:
            raise ConfigError(f"unknown section [{sec}]")

    core_kw = {k: plan_kw.pop(k) for k in ("core_radius", "stick_radius") if k in plan_kw}
    if "needle" in plan_kw:
        plan_kw["needle"] = NeedleSpec.parse(plan_kw["needle"])
    if core_kw:
        plan_kw["core"] = CoreSpec(**core_kw)
    models = ProcessModels(
        curve=DensityCurve(d0, d_max, tau),
        strength=StrengthTable(tensile, compressive, ratio, stretch, cap),
        time=TimeModel(**time_kw) if time_kw else base.time,
        tensions=tensions,
        materials=materials,
        footprint_diameter=footprint,
    )
    plan = PlanParams(**plan_kw)
    models.tension(plan.tension)
    models.material(plan.material)
    return Config(WorkEnvelope(**env_kw), StewartGeometry(**geom_kw), models,
                  SimParams(**sim_kw), plan)


def load_config(path: str | None = None) -> Config:
    """Read ``path``, else $FELTLOOM_CONFIG, else built-in defaults."""
    path = path or os.environ.get(ENV_VAR)
    if not path:
        return Config()
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None


def time_section(model: TimeModel) -> str:
    lines = ["[time]"]
    for f in fields(TimeModel):
        lines.append(f"{f.name} = {float(getattr(model, f.name)):.6g}")
    return "\n".join(lines) + "\n"
