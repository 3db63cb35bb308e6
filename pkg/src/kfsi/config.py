"""Run configuration: INI parsing, presets, environment overrides and validation."""

from __future__ import annotations

import configparser
import copy
import hashlib
import json
import os
from importlib import resources

import jsonschema
import numpy as np

from .errors import ConfigurationError
from .geometry import Circle, ConstantField, Cylinder, FlatChannel, FourierField, Sphere, make_blend
from .shell_energy import ElasticParams
from .stress_law import StressLaw

DEFAULTS = {
    "geometry": {"kind": "flat", "dim": 2, "length": 1.0, "height": 1.0, "radius": 1.0,
                 "cap_angle": 1.0471975511965976, "blend": "quintic", "blend_width": 0.01},
    "elastic": {"lam": 1.0, "mu": 1.0, "eps0": 0.1, "rho_s": 10.0, "rho_f": 1.0},
    "stress": {"mu0": 0.05, "delta": 1.0, "p": 1.5},
    "regularization": {"eps": 0.0625, "eps_tilde": 1e-3},
    "basis": {"n_s": 8, "n_f": 32, "n_tan": 32, "n_normal": 16, "shell_only": False},
    "time": {"dt": 0.002, "horizon": 0.5, "window": 0.25},
    "forcing": {"f_kind": "none", "f_amplitude": 0.0, "f_center": 0.5, "f_width": 0.1,
                "f_t0": 0.2, "f_duration": 0.1, "f_wavenumber": 1, "f_speed": 0.0, "f_ramp": 0.0,
                "g_kind": "none", "g_amplitude": 0.0, "g_center": 0.5, "g_width": 0.1,
                "g_t0": 0.2, "g_duration": 0.1, "g_wavenumber": 1, "g_speed": 0.0, "g_ramp": 0.0},
    "initial": {"eta0_amplitude": 0.0, "eta0_wavenumber": 1,
                "eta1_amplitude": 0.0, "eta1_wavenumber": 1},
    "solver": {"tol_picard": 1e-10, "tol_fp": 1e-10, "max_iter": 30, "omega": 1.0,
               "kappa_fraction": 0.95, "energy_bound": 1e-4},
    "output": {"dir": "kfsi-out", "seed": 0},
}

PRESETS = {
    "zero": {"time": {"dt": 0.01, "horizon": 0.2, "window": 0.1}},
    "plate-pulse": {"forcing": {"g_kind": "gaussian-pulse", "g_amplitude": 1.0, "g_center": 0.5,
                                "g_width": 0.1, "g_t0": 0.2, "g_duration": 0.1}},
    "breakdown": {"geometry": {"blend": "ramp", "blend_width": 0.01},
                  "basis": {"n_s": 4, "n_f": 16, "n_normal": 12},
                  "time": {"dt": 0.01, "horizon": 4.0, "window": 0.5},
                  "forcing": {"g_kind": "constant", "g_amplitude": -6.0, "g_wavenumber": 1,
                              "g_ramp": 0.1}},
    "oscillator": {"basis": {"n_s": 1, "n_f": 0, "shell_only": True},
                   "regularization": {"eps": 0.0, "eps_tilde": 0.0},
                   "initial": {"eta0_amplitude": 0.1, "eta0_wavenumber": 1},
                   "time": {"dt": 0.01, "horizon": 2.0, "window": 2.0}},
    "stress": {"geometry": {"blend": "ramp", "blend_width": 0.01},
               "basis": {"n_s": 4, "n_f": 16},
               "time": {"dt": 0.01, "horizon": 0.4, "window": 0.4},
               "forcing": {"g_kind": "constant", "g_amplitude": -12.0, "g_wavenumber": 1,
                           "g_ramp": 0.05}},
}


def schema(name):
    text = resources.files("kfsi").joinpath("schemas", name).read_text(encoding="utf-8")
    return json.loads(text)


def _merge(base, over):
    out = copy.deepcopy(base)
    for sec, vals in over.items():
        out.setdefault(sec, {}).update(vals)
    return out


def _coerce(value, kind):
    if not isinstance(value, str):
        return value
    v = value.strip()
    try:
        if kind == "integer":
            return int(v)
        if kind == "number":
            return float(v)
        if kind == "boolean":
            if v.lower() in ("1", "true", "yes", "on"):
                return True
            if v.lower() in ("0", "false", "no", "off"):
                return False
            return v
    except ValueError:
        return v
    return v


def load_config(path=None, preset=None, env=None, overrides=None):
    """Defaults <- preset <- INI file <- KFSI_SECTION__KEY environment <- explicit overrides."""
    cfg = copy.deepcopy(DEFAULTS)
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigurationError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        cfg = _merge(cfg, PRESETS[preset])
    if path is not None:
        parser = configparser.ConfigParser()
        if not parser.read(path, encoding="utf-8"):
            raise ConfigurationError(f"cannot read config file {path}")
        if parser.has_section("run") and parser.has_option("run", "preset") and preset is None:
            cfg = _merge(cfg, PRESETS.get(parser.get("run", "preset"), {}))
        cfg = _merge(cfg, {s: dict(parser.items(s)) for s in parser.sections() if s != "run"})
    env = os.environ if env is None else env
    for key, val in env.items():
        if key.startswith("KFSI_") and "__" in key:
            sec, opt = key[5:].lower().split("__", 1)
            cfg.setdefault(sec, {})[opt] = val
    if overrides:
        cfg = _merge(cfg, overrides)
    return validate(cfg)


def validate(cfg):
    """Coerce string values by schema type and report every violation at once."""
    sch = schema("config.schema.json")
    props = sch["properties"]
    for sec, vals in cfg.items():
        sp = props.get(sec, {}).get("properties", {})
        for k, v in list(vals.items()):
            if k in sp:
                vals[k] = _coerce(v, sp[k].get("type"))
    errors = sorted(jsonschema.Draft7Validator(sch).iter_errors(cfg), key=lambda e: list(e.path))
    msgs = [f"{'.'.join(str(p) for p in e.path) or '<root>'}: {e.message}" for e in errors]
    if msgs:
        raise ConfigurationError("invalid configuration:\n  " + "\n  ".join(msgs))
    return cfg


def config_hash(cfg) -> str:
    """Hash of everything that affects results; the output directory is left out."""
    cfg = copy.deepcopy(cfg)
    cfg.get("output", {}).pop("dir", None)
    text = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:12]


# ---------------------------------------------------------------------------
# forcing catalog
# ---------------------------------------------------------------------------

def _time_factor(t, kind, t0, duration, ramp):
    if kind == "gaussian-pulse":
        return np.exp(-((t - t0) / duration) ** 2)
    return min(t / ramp, 1.0) if ramp > 0 else 1.0


def make_forcing(sec, prefix, L, dim):
    """Callable forcing from the preset catalog, or None."""
    kind = sec[f"{prefix}_kind"]
    if kind == "none":
        return None
    A = float(sec[f"{prefix}_amplitude"])
    x0, w = float(sec[f"{prefix}_center"]), float(sec[f"{prefix}_width"])
    t0, dur = float(sec[f"{prefix}_t0"]), float(sec[f"{prefix}_duration"])
    k, c, ramp = int(sec[f"{prefix}_wavenumber"]), float(sec[f"{prefix}_speed"]), float(sec[f"{prefix}_ramp"])

    def profile(t, x):
        if kind == "gaussian-pulse":
            return np.exp(-((x - x0) / w) ** 2)
        if kind == "constant":
            return np.cos(2.0 * np.pi * k * x / L)
        if kind == "traveling-wave":
            return np.cos(2.0 * np.pi * k * (x - c * t) / L)
        raise ConfigurationError(f"unknown forcing kind {kind!r}")

    if prefix == "g":
        return lambda t, u: A * _time_factor(t, kind, t0, dur, ramp) * profile(t, u[..., 0])

    def f(t, y):
        out = np.zeros(y.shape)
        out[..., dim - 1] = A * _time_factor(t, kind, t0, dur, ramp) * profile(t, y[..., 0])
        return out

    return f


def _mode_field(amplitude, k, L, m):
    if amplitude == 0.0:
        return ConstantField(0.0, m)
    kv = np.zeros((1, m))
    kv[0, 0] = k
    return FourierField([L] * m, kv, [amplitude], [0.0])


def make_surface(cfg):
    """Catalog reference surface selected by the geometry section."""
    geo = cfg["geometry"]
    kind = geo["kind"]
    if kind == "flat":
        return FlatChannel(int(geo["dim"]), float(geo["length"]), float(geo["height"]))
    if kind == "circle":
        return Circle(float(geo["radius"]))
    if kind == "cylinder":
        return Cylinder(float(geo["radius"]), float(geo["length"]))
    return Sphere(float(geo["radius"]), float(geo["cap_angle"]))


def elastic_params(cfg):
    el = cfg["elastic"]
    return ElasticParams(el["lam"], el["mu"], el["eps0"], el["rho_s"], el["rho_f"])


def problem_data(cfg):
    """ProblemData for a validated configuration."""
    from .coupler import ProblemData

    geo = cfg["geometry"]
    if geo["kind"] != "flat":
        raise ConfigurationError("coupled runs support the flat channel geometry only")
    sf = make_surface(cfg)
    params = elastic_params(cfg)
    st = cfg["stress"]
    law = StressLaw(st["mu0"], st["delta"], st["p"], cfg["regularization"]["eps_tilde"])
    b = cfg["basis"]
    ini = cfg["initial"]
    L, m = sf.length, sf.m
    return ProblemData(
        surface=sf, params=params, law=law, n_s=int(b["n_s"]), n_f=int(b["n_f"]),
        eta0=_mode_field(ini["eta0_amplitude"], ini["eta0_wavenumber"], L, m),
        eta1=_mode_field(ini["eta1_amplitude"], ini["eta1_wavenumber"], L, m),
        f=make_forcing(cfg["forcing"], "f", L, sf.dim), g=make_forcing(cfg["forcing"], "g", L, sf.dim),
        blend=make_blend(geo["blend"], geo["blend_width"]), n_tan=int(b["n_tan"]),
        n_normal=int(b["n_normal"]), shell_only=bool(b["shell_only"]))
