"""Run configuration: JSON schema, validation, overrides, hashing.

Configs are plain nested dicts validated into dataclasses.  Validation
errors carry dotted field paths (``stepper.s_index: ...``).  Initial data is
declarative: the surface is a constant plus a list of cosine modes, the
density perturbation is zero or a Gaussian bump in (x, z); no expression
parser is involved.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field as dc_field

import numpy as np

from .flatten import DepthMode, FiniteDepth, InfiniteDepth
from .profiles import (
    StratificationProfile,
    affine_profile,
    constant_profile,
    tanh_profile,
)
from .spectral import SurfaceField, make_grid
from .stepper import StepControl, make_context
from .strip import StripField, StripGrid, make_strip_grid

__all__ = ["ConfigError", "SimConfig", "parse_config", "apply_overrides",
           "DEFAULT_CONFIG"]


class ConfigError(ValueError):
    def __init__(self, errors):
        if isinstance(errors, str):
            errors = [errors]
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


DEFAULT_CONFIG = {
    "grid": {"n_x": 64, "L": 2 * np.pi, "n_z": 32, "clustering": "chebyshev"},
    "depth": {"mode": "finite", "H": 1.0, "b0_modes": {}, "z_max": 8.0},
    "profile": {"kind": "constant", "c": 1.0, "c0": 1.0, "c1": 0.0,
                "a": 1.0, "b": 0.1, "ell": 1.0},
    "initial": {
        "f_constant": 0.0,
        "f_modes": {},            # {"k": [amplitude, phase]}
        "g_kind": "zero",         # zero | gaussian
        "g_center": [np.pi, -0.5],
        "g_width": [0.8, 0.2],
        "g_amplitude": 0.0,
    },
    "thresholds": {"a_frak": 1e-2, "d_frak": 0.1},
    "stepper": {
        "scheme": "imex",
        "dt": 5e-3,
        "use_cfl": False,
        "cfl_target": 0.4,
        "dt_max": 0.05,
        "t_end": 1.0,
        "s_index": 2.6,
        "implicit_rule": "min_taylor",
    },
    "picard": {
        "enabled": False,
        "n_max": 6,
        "nu": 1e-3,
        "mu": 0.25,
        "T": 0.2,
        "n_t": 64,
        "ratio_gate": 0.75,
        "adapt_T": True,
        "max_halvings": 4,
    },
    "tolerances": {
        "elliptic": 1e-11,
        "tangency": 1e-6,
        "variational": 0.01,
        "tail": 1e-3,
        "delta_safety": 0.9,
    },
    "output": {"interval": 0.02, "seed": 0, "checkpoints": False},
}


# subtrees keyed by user data (mode indices) rather than schema fields
_OPEN_PATHS = {"initial.f_modes", "depth.b0_modes"}


def _merge(base: dict, override: dict, path="") -> dict:
    if path in _OPEN_PATHS:
        return copy.deepcopy(override)
    out = copy.deepcopy(base)
    for key, val in override.items():
        where = f"{path}.{key}" if path else key
        if key not in out:
            raise ConfigError(f"{where}: unknown configuration field")
        if isinstance(out[key], dict) and isinstance(val, dict):
            out[key] = _merge(out[key], val, where)
        else:
            out[key] = val
    return out


def _check(cond, errors, path, message):
    if not cond:
        errors.append(f"{path}: {message}")


@dataclass
class SimConfig:
    """Validated run description; build* methods realize the objects."""

    raw: dict = dc_field(repr=False, default_factory=dict)

    # -- construction --------------------------------------------------------

    @classmethod
    def from_dict(cls, data: dict) -> "SimConfig":
        merged = _merge(DEFAULT_CONFIG, data)
        errors = cls._validate(merged)
        if errors:
            raise ConfigError(errors)
        return cls(raw=merged)

    @staticmethod
    def _validate(c: dict):
        errors = []
        g = c["grid"]
        _check(isinstance(g["n_x"], int) and g["n_x"] >= 4 and g["n_x"] % 2 == 0,
               errors, "grid.n_x", f"must be an even integer >= 4, got {g['n_x']}")
        _check(g["L"] > 0, errors, "grid.L", f"must be positive, got {g['L']}")
        _check(isinstance(g["n_z"], int) and g["n_z"] >= 8, errors, "grid.n_z",
               f"must be an integer >= 8, got {g['n_z']}")
        _check(g["clustering"] == "chebyshev", errors, "grid.clustering",
               f"only 'chebyshev' is supported, got {g['clustering']!r}")
        d = c["depth"]
        _check(d["mode"] in ("finite", "infinite"), errors, "depth.mode",
               f"must be 'finite' or 'infinite', got {d['mode']!r}")
        if d["mode"] == "finite":
            _check(d["H"] > 0, errors, "depth.H", f"must be positive, got {d['H']}")
        else:
            _check(d["z_max"] > 0, errors, "depth.z_max",
                   f"must be positive, got {d['z_max']}")
        p = c["profile"]
        _check(p["kind"] in ("constant", "affine", "tanh"), errors, "profile.kind",
               f"must be one of constant/affine/tanh, got {p['kind']!r}")
        ini = c["initial"]
        _check(ini["g_kind"] in ("zero", "gaussian"), errors, "initial.g_kind",
               f"must be 'zero' or 'gaussian', got {ini['g_kind']!r}")
        for key, pair in ini["f_modes"].items():
            try:
                int(key)
                ok = len(pair) == 2
            except (TypeError, ValueError):
                ok = False
            _check(ok, errors, f"initial.f_modes.{key}",
                   "must map an integer mode to [amplitude, phase]")
        th = c["thresholds"]
        _check(th["a_frak"] > 0, errors, "thresholds.a_frak",
               f"must be positive, got {th['a_frak']}")
        _check(th["d_frak"] > 0, errors, "thresholds.d_frak",
               f"must be positive, got {th['d_frak']}")
        st = c["stepper"]
        _check(st["scheme"] in ("imex", "imex_midpoint", "explicit_rk4"), errors,
               "stepper.scheme", f"unknown scheme {st['scheme']!r}")
        _check(st["dt"] > 0, errors, "stepper.dt", f"must be positive, got {st['dt']}")
        _check(st["t_end"] >= 0, errors, "stepper.t_end",
               f"must be >= 0, got {st['t_end']}")
        _check(0 < st["cfl_target"] < 1, errors, "stepper.cfl_target",
               f"must lie in (0, 1), got {st['cfl_target']}")
        # well-posedness needs s > 3/2 + d/2 with d = 1
        _check(st["s_index"] > 2.0, errors, "stepper.s_index",
               f"must exceed 3/2 + d/2 = 2 (d = 1), got {st['s_index']}")
        _check(st["implicit_rule"] in ("min_taylor", "frozen"), errors,
               "stepper.implicit_rule", f"unknown rule {st['implicit_rule']!r}")
        pi = c["picard"]
        _check(0 < pi["mu"] < 0.5, errors, "picard.mu",
               f"must lie in (0, 1/2), got {pi['mu']}")
        _check(pi["nu"] >= 0, errors, "picard.nu",
               f"must be >= 0, got {pi['nu']}")
        _check(pi["T"] > 0, errors, "picard.T", f"must be positive, got {pi['T']}")
        _check(isinstance(pi["n_max"], int) and pi["n_max"] >= 2, errors,
               "picard.n_max", f"must be an integer >= 2, got {pi['n_max']}")
        to = c["tolerances"]
        for key in ("elliptic", "tangency", "variational", "tail"):
            _check(to[key] > 0, errors, f"tolerances.{key}",
                   f"must be positive, got {to[key]}")
        _check(0 < to["delta_safety"] < 1, errors, "tolerances.delta_safety",
               f"must lie in (0, 1), got {to['delta_safety']}")
        out = c["output"]
        _check(out["interval"] >= 0, errors, "output.interval",
               f"must be >= 0, got {out['interval']}")
        return errors

    # -- realized objects ----------------------------------------------------

    @property
    def grid_cfg(self):
        return self.raw["grid"]

    def config_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.raw, sort_keys=True, default=float).encode()
        ).hexdigest()

    def to_json(self, indent=2) -> str:
        return json.dumps(self.raw, sort_keys=True, indent=indent, default=float)

    def build_depth(self, x_grid) -> DepthMode:
        d = self.raw["depth"]
        if d["mode"] == "infinite":
            return InfiniteDepth(z_max=float(d["z_max"]))
        b0 = None
        if d["b0_modes"]:
            b0 = _field_from_modes(x_grid, 0.0, d["b0_modes"])
        return FiniteDepth(H=float(d["H"]), b0=b0)

    def build_grid(self) -> StripGrid:
        g = self.raw["grid"]
        x_grid = make_grid(int(g["n_x"]), float(g["L"]))
        d = self.raw["depth"]
        z_bot = -1.0 if d["mode"] == "finite" else -float(d["z_max"])
        return make_strip_grid(x_grid, int(g["n_z"]), z_bot)

    def build_profile(self) -> StratificationProfile:
        p = self.raw["profile"]
        if p["kind"] == "constant":
            return constant_profile(p["c"])
        if p["kind"] == "affine":
            return affine_profile(p["c0"], p["c1"])
        return tanh_profile(p["a"], p["b"], p["ell"])

    def build_initial(self, grid: StripGrid):
        ini = self.raw["initial"]
        f = _field_from_modes(grid.x_grid, ini["f_constant"], ini["f_modes"])
        if ini["g_kind"] == "zero" or ini["g_amplitude"] == 0.0:
            g = StripField.zeros(grid)
        else:
            x0, z0 = ini["g_center"]
            wx, wz = ini["g_width"]
            L = grid.x_grid.length
            x = grid.x_grid.x
            # periodic minimum-image distance in x
            dx = np.abs((x - x0 + L / 2) % L - L / 2)
            gx = np.exp(-0.5 * (dx / wx) ** 2)
            gz = np.exp(-0.5 * ((grid.z_nodes - z0) / wz) ** 2)
            g = StripField(grid, ini["g_amplitude"] * np.outer(gx, gz))
        return f, g

    def build_context(self) -> tuple:
        """Realize (ctx, control, f0, g0, t_end, output_interval)."""
        grid = self.build_grid()
        depth = self.build_depth(grid.x_grid)
        profile = self.build_profile()
        f0, g0 = self.build_initial(grid)
        th = self.raw["thresholds"]
        to = self.raw["tolerances"]
        st = self.raw["stepper"]
        ctx = make_context(
            grid, depth, profile, f0,
            a_threshold=float(th["a_frak"]),
            d_threshold=float(th["d_frak"]),
            delta_safety=float(to["delta_safety"]),
            elliptic_tol=float(to["elliptic"]),
            tangency_tol=float(to["tangency"]),
            s_index=float(st["s_index"]),
        )
        control = StepControl(
            dt=float(st["dt"]),
            cfl_target=float(st["cfl_target"]),
            dt_max=float(st["dt_max"]),
            scheme=st["scheme"],
            implicit_coefficient_rule=st["implicit_rule"],
        )
        return ctx, control, f0, g0, float(st["t_end"]), float(
            self.raw["output"]["interval"]
        )


def _field_from_modes(x_grid, constant, modes: dict) -> SurfaceField:
    vals = np.full(x_grid.n, float(constant))
    base = 2.0 * np.pi / x_grid.length
    for key, (amp, phase) in modes.items():
        k = int(key)
        vals += float(amp) * np.cos(base * k * x_grid.x + float(phase))
    return SurfaceField(x_grid, vals)


def _parse_override_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(data: dict, overrides) -> dict:
    """Apply ``key.path=value`` strings onto a config dict."""
    out = copy.deepcopy(data)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        path, _, value = item.partition("=")
        keys = path.strip().split(".")
        node = out
        for key in keys[:-1]:
            node = node.setdefault(key, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {path!r} descends into a scalar")
        node[keys[-1]] = _parse_override_value(value.strip())
    return out


def parse_config(source=None, overrides=None) -> SimConfig:
    """Load a config from a JSON file path, a dict, or defaults; validate."""
    if source is None:
        data = {}
    elif isinstance(source, dict):
        data = source
    else:
        try:
            with open(source) as fh:
                data = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {source}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}")
    if overrides:
        data = apply_overrides(data, overrides)
    return SimConfig.from_dict(data)
