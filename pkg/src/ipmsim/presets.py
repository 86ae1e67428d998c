"""Experiment presets: canned runs with machine-checkable summaries.

Each preset writes, into its run directory, the effective-config echo, a
diagnostics CSV (when a time loop runs), and a ``summary.json`` with a
pass/fail verdict per check it covers.  All file writes are
write-then-rename so a crash never leaves partial artifacts.  Independent
sub-runs fan out over threads, capped by the ``IPM_SIM_THREADS`` variable.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .config import SimConfig, parse_config
from .dynamics import stability_report
from .elliptic import dirichlet_neumann
from .flatten import FiniteDepth, build_map, select_delta
from .picard import picard_iterate
from .profiles import constant_profile, tanh_profile
from .spectral import SurfaceField, make_grid
from .stepper import CSV_HEADER, run_simulation
from .strip import make_strip_grid

__all__ = ["PRESET_NAMES", "run_preset", "write_atomic", "fit_log_slope"]

PRESET_NAMES = (
    "dn-flat",
    "steady-state",
    "muskat-decay",
    "stability-scan",
    "picard-contract",
    "conservation",
)


def write_atomic(path, data):
    tmp = f"{path}.tmp"
    mode = "wb" if isinstance(data, bytes) else "w"
    with open(tmp, mode) as fh:
        fh.write(data)
    os.replace(tmp, path)


def _write_run_artifacts(run_dir, config: SimConfig, rows, summary: dict):
    os.makedirs(run_dir, exist_ok=True)
    write_atomic(os.path.join(run_dir, "config.echo.json"), config.to_json())
    csv = CSV_HEADER + "\n" + "\n".join(r.to_csv() for r in rows) + "\n"
    write_atomic(os.path.join(run_dir, "diagnostics.csv"), csv)
    write_atomic(
        os.path.join(run_dir, "summary.json"),
        json.dumps(summary, indent=2, sort_keys=True, default=float) + "\n",
    )


def _max_workers(n_tasks: int) -> int:
    cap = os.environ.get("IPM_SIM_THREADS")
    if cap:
        try:
            cap = max(1, int(cap))
        except ValueError:
            cap = 1
    else:
        cap = os.cpu_count() or 1
    return max(1, min(n_tasks, cap))


def _fan_out(tasks):
    """Run callables, preserving order; sequential when capped at 1."""
    workers = _max_workers(len(tasks))
    if workers == 1 or len(tasks) == 1:
        return [task() for task in tasks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(task) for task in tasks]
        return [fut.result() for fut in futures]


def fit_log_slope(t, amplitude, t_min, t_max):
    """Ordinary least squares slope of log(amplitude) over a time window."""
    t = np.asarray(t, dtype=float)
    a = np.asarray(amplitude, dtype=float)
    mask = (t >= t_min) & (t <= t_max) & (a > 0)
    if mask.sum() < 2:
        raise ValueError("not enough samples in the fit window")
    return float(np.polyfit(t[mask], np.log(a[mask]), 1)[0])


# ---------------------------------------------------------------------------
# dn-flat


def _preset_dn_flat(overrides, out_dir, quiet):
    config = parse_config(
        {"grid": {"n_x": 32, "n_z": 128}, "stepper": {"t_end": 0.0}},
        overrides,
    )
    heights = (0.5, 1.0, 2.0)
    wavenumbers = (1, 2, 4, 8)

    def dn_table(n_z):
        errors = {}
        for H in heights:
            xg = make_grid(config.raw["grid"]["n_x"], config.raw["grid"]["L"])
            grid = make_strip_grid(xg, n_z, -1.0)
            depth = FiniteDepth(H=H)
            f0 = SurfaceField.zeros(xg)
            delta = select_delta(f0, depth, grid, d_frak=H)
            fmap = build_map(f0, depth, delta, grid)
            for k in wavenumbers:
                h = SurfaceField(xg, np.cos(k * xg.x))
                g = dirichlet_neumann(fmap, h)
                exact = k * np.tanh(k * H) * np.cos(k * xg.x)
                scale = np.abs(exact).max()
                errors[(H, k)] = float(np.abs(g.values - exact).max() / scale)
        return errors

    rated_nz = config.raw["grid"]["n_z"]
    err_rated = dn_table(rated_nz)
    max_rel_error = max(err_rated.values())

    # self-convergence in the pre-roundoff regime
    coarse = (12, 16, 24)
    tables = _fan_out([lambda n=n: dn_table(n) for n in coarse])
    orders = []
    for key in err_rated:
        errs = [tables[i][key] for i in range(len(coarse))]
        for i in range(len(coarse) - 1):
            h1 = 1.0 / (coarse[i] - 1)
            h2 = 1.0 / (coarse[i + 1] - 1)
            if errs[i + 1] > 1e-14:
                orders.append(np.log(errs[i] / errs[i + 1]) / np.log(h1 / h2))
    observed_order = float(np.median(orders))

    passed = max_rel_error <= 1e-4 and observed_order >= 2.0
    summary = {
        "preset": "dn-flat",
        "criteria": {
            "flat_dn_operator": {
                "pass": passed,
                "max_rel_error": max_rel_error,
                "tolerance": 1e-4,
                "rated_n_z": rated_nz,
                "observed_order": observed_order,
                "order_floor": 2.0,
            }
        },
        "table": {f"H={H},k={k}": err_rated[(H, k)] for H, k in err_rated},
    }
    _write_run_artifacts(out_dir, config, [], summary)
    if not quiet:
        print(
            f"dn-flat: max rel error {max_rel_error:.3e} (<= 1e-4), "
            f"order {observed_order:.2f} (>= 2): {'PASS' if passed else 'FAIL'}"
        )
    return 0 if passed else 4


# ---------------------------------------------------------------------------
# steady-state


def _steady_one(profile_cfg, overrides, label):
    base = {
        "grid": {"n_x": 16, "n_z": 16},
        "profile": profile_cfg,
        "initial": {"f_constant": 0.05},
        "stepper": {"dt": 1e-3, "t_end": 1.0},
        "output": {"interval": 0.05},
        "thresholds": {"a_frak": 1e-3, "d_frak": 0.1},
    }
    config = parse_config(base, overrides)
    ctx, control, f0, g0, t_end, interval = config.build_context()
    res = run_simulation(ctx, control, f0, g0, t_end, interval)
    r0 = res.rows[0]
    drift = 0.0
    for r in res.rows[1:]:
        drift = max(
            drift,
            abs(r.Hs_f - r0.Hs_f),
            abs(r.Hs_g - r0.Hs_g),
            abs(r.taylor_min - r0.taylor_min),
            abs(r.mean_f - r0.mean_f),
            abs(r.total_density - r0.total_density) / max(abs(r0.total_density), 1.0),
        )
    return label, config, res, drift


def _preset_steady_state(overrides, out_dir, quiet):
    profiles = [
        ({"kind": "constant", "c": 1.0}, "constant"),
        ({"kind": "affine", "c0": 2.0, "c1": 0.5}, "affine"),
        ({"kind": "tanh", "a": 1.0, "b": 0.1, "ell": 1.0}, "tanh"),
    ]
    results = _fan_out(
        [lambda p=p, lab=lab: _steady_one(p, overrides, lab) for p, lab in profiles]
    )
    drifts = {}
    worst = 0.0
    steps = None
    for label, config, res, drift in results:
        drifts[label] = drift
        worst = max(worst, drift)
        steps = res.steps_accepted
        _write_run_artifacts(os.path.join(out_dir, label), config, res.rows, {
            "profile": label, "drift": drift, "status": res.status,
        })
    passed = worst < 1e-10
    summary = {
        "preset": "steady-state",
        "criteria": {
            "steady_states": {
                "pass": passed,
                "max_drift": worst,
                "tolerance": 1e-10,
                "steps": steps,
                "per_profile": drifts,
            }
        },
    }
    config = results[0][1]
    _write_run_artifacts(out_dir, config, results[0][2].rows, summary)
    if not quiet:
        print(f"steady-state: max drift {worst:.3e} over {steps} steps "
              f"(< 1e-10): {'PASS' if passed else 'FAIL'}")
    return 0 if passed else 4


# ---------------------------------------------------------------------------
# muskat-decay


def _muskat_one(k, overrides):
    base = {
        "grid": {"n_x": 32, "n_z": 48},
        "depth": {"mode": "infinite", "z_max": 8.0},
        "profile": {"kind": "constant", "c": 1.0},
        "initial": {"f_modes": {str(k): [1e-3, 0.0]}},
        "stepper": {"dt": 1e-3, "t_end": 1.0},
        "output": {"interval": 0.01},
        "thresholds": {"a_frak": 1e-3},
    }
    config = parse_config(base, overrides)
    ctx, control, f0, g0, t_end, interval = config.build_context()
    res = run_simulation(ctx, control, f0, g0, t_end, interval)
    t = [r.t for r in res.rows]
    amp = [r.Hs_f for r in res.rows]
    slope = fit_log_slope(t, amp, 0.1, t_end)
    return k, config, res, slope


def _preset_muskat_decay(overrides, out_dir, quiet):
    modes = (1, 2, 3)
    results = _fan_out([lambda k=k: _muskat_one(k, overrides) for k in modes])
    rates = {}
    errors = {}
    for k, config, res, slope in results:
        rate = -slope
        rates[str(k)] = rate
        errors[str(k)] = abs(rate - k) / k
        _write_run_artifacts(os.path.join(out_dir, f"mode{k}"), config, res.rows, {
            "mode": k,
            "fitted_slope": slope,
            "fitted_rate": rate,
            "expected_rate": float(k),
            "relative_error": errors[str(k)],
            "fit_window": [0.1, config.raw["stepper"]["t_end"]],
            "status": res.status,
        })
    worst = max(errors.values())
    passed = worst <= 0.02
    summary = {
        "preset": "muskat-decay",
        "criteria": {
            "muskat_linear_decay": {
                "pass": passed,
                "rates": rates,
                "relative_errors": errors,
                "tolerance": 0.02,
                "fit_window": [0.1, 1.0],
            }
        },
    }
    _write_run_artifacts(out_dir, results[0][1], results[0][2].rows, summary)
    if not quiet:
        print(f"muskat-decay: rates {rates}, worst rel error {worst:.3%} "
              f"(<= 2%): {'PASS' if passed else 'FAIL'}")
    return 0 if passed else 4


# ---------------------------------------------------------------------------
# stability-scan


def random_c1_surface(xg, rng, bound=0.9, n_modes=6):
    """Random smooth surface rescaled to a C^1 norm below ``bound``."""
    vals = np.zeros(xg.n)
    base = 2 * np.pi / xg.length
    for k in range(1, n_modes + 1):
        amp = rng.normal() / k**2
        phase = rng.uniform(0, 2 * np.pi)
        vals += amp * np.cos(base * k * xg.x + phase)
    f = SurfaceField(xg, vals)
    from .spectral import x_derivative

    c1 = max(np.abs(f.values).max(), np.abs(x_derivative(f).values).max())
    return SurfaceField(xg, vals * (bound / c1))


def _preset_stability_scan(overrides, out_dir, quiet):
    config = parse_config(
        {"grid": {"n_x": 48, "n_z": 40}, "depth": {"H": 1.5},
         "thresholds": {"d_frak": 0.2}, "output": {"seed": 0}},
        overrides,
    )
    seed = int(config.raw["output"]["seed"])
    n_samples = 20
    xg = make_grid(config.raw["grid"]["n_x"], config.raw["grid"]["L"])
    grid = make_strip_grid(xg, config.raw["grid"]["n_z"], -1.0)
    depth = FiniteDepth(H=config.raw["depth"]["H"])
    cases = {
        "constant": constant_profile(1.0),
        "tanh": tanh_profile(1.0, 0.1, 1.0),
    }

    def scan(label_profile):
        label, profile = label_profile
        rng = np.random.default_rng(seed)
        minima = []
        for _ in range(n_samples):
            f = random_c1_surface(xg, rng)
            delta = select_delta(f, depth, grid,
                                 d_frak=config.raw["thresholds"]["d_frak"])
            fmap = build_map(f, depth, delta, grid)
            rep = stability_report(fmap, f, profile, 0.0, 0.0)
            minima.append(rep.taylor_min)
        return label, minima

    results = _fan_out([lambda c=c: scan(c) for c in cases.items()])
    details = {}
    violations = 0
    for label, minima in results:
        details[label] = {
            "min_taylor": float(min(minima)),
            "violations": int(sum(m <= 0 for m in minima)),
            "samples": n_samples,
        }
        violations += details[label]["violations"]
    passed = violations == 0
    summary = {
        "preset": "stability-scan",
        "criteria": {
            "stability_functional_positive": {
                "pass": passed,
                "violations": violations,
                "per_profile": details,
                "seed": seed,
            }
        },
    }
    _write_run_artifacts(out_dir, config, [], summary)
    if not quiet:
        print(f"stability-scan: {violations} violations over "
              f"{2 * n_samples} samples: {'PASS' if passed else 'FAIL'}")
    return 0 if passed else 4


# ---------------------------------------------------------------------------
# picard-contract


def _preset_picard_contract(overrides, out_dir, quiet):
    base = {
        "grid": {"n_x": 32, "n_z": 20},
        "profile": {"kind": "tanh", "a": 1.0, "b": 0.1, "ell": 1.0},
        "initial": {
            "f_modes": {"1": [0.05, 0.0]},
            "g_kind": "gaussian",
            "g_center": [np.pi, -0.4],
            "g_width": [0.7, 0.2],
            "g_amplitude": 1e-3,
        },
        "picard": {"enabled": True, "n_max": 6, "T": 0.2, "n_t": 32},
        "thresholds": {"a_frak": 0.05, "d_frak": 0.2},
    }
    config = parse_config(base, overrides)
    ctx, _, f0, g0, _, _ = config.build_context()
    pc = config.raw["picard"]
    run = picard_iterate(
        ctx, f0, g0,
        n_max=int(pc["n_max"]), nu=float(pc["nu"]), mu=float(pc["mu"]),
        T=float(pc["T"]), n_t=int(pc["n_t"]),
        ratio_gate=float(pc["ratio_gate"]),
        adapt_T=bool(pc["adapt_T"]),
        max_halvings=int(pc["max_halvings"]),
    )
    ratios = run.ratios_f + run.ratios_g
    max_ratio = max(ratios) if ratios else float("inf")

    # degenerate homogeneous case: the scheme must hit its fixed point
    muskat_cfg = parse_config(
        {
            "grid": base["grid"],
            "profile": {"kind": "constant", "c": 1.0},
            "initial": {"f_modes": {"1": [0.05, 0.0]}},
            "picard": {"enabled": True, "n_max": 4, "T": 0.1, "n_t": 16},
            "thresholds": {"a_frak": 0.05, "d_frak": 0.2},
        },
        overrides,
    )
    mctx, _, mf0, mg0, _, _ = muskat_cfg.build_context()
    mrun = picard_iterate(mctx, mf0, mg0, n_max=4, nu=float(pc["nu"]),
                          mu=float(pc["mu"]), T=0.1, n_t=16, adapt_T=False)
    fixed_ok = mrun.fixed_point_n is not None and mrun.fixed_point_n <= 3

    passed = run.converged and max_ratio <= float(pc["ratio_gate"]) and fixed_ok
    summary = {
        "preset": "picard-contract",
        "criteria": {
            "picard_contraction": {
                "pass": run.converged and max_ratio <= float(pc["ratio_gate"]),
                "max_ratio": max_ratio,
                "ratio_gate": float(pc["ratio_gate"]),
                "T_final": run.T,
                "n_halvings": run.n_halvings,
            },
            "muskat_fixed_point": {
                "pass": fixed_ok,
                "fixed_point_n": mrun.fixed_point_n,
                "deltas_f": mrun.deltas_f,
            },
        },
        "deltas_f": run.deltas_f,
        "deltas_g": run.deltas_g,
        "ratios_f": run.ratios_f,
        "ratios_g": run.ratios_g,
        "nu": run.nu,
        "mu": run.mu,
    }
    _write_run_artifacts(out_dir, config, [], summary)
    if not quiet:
        print(f"picard-contract: max ratio {max_ratio:.3f} "
              f"(<= {pc['ratio_gate']}), T = {run.T}, fixed point at "
              f"n = {mrun.fixed_point_n}: {'PASS' if passed else 'FAIL'}")
    return 0 if passed else 4


# ---------------------------------------------------------------------------
# conservation


def _conservation_run(dt, overrides):
    base = {
        "grid": {"n_x": 48, "n_z": 32},
        "profile": {"kind": "tanh", "a": 1.0, "b": 0.1, "ell": 1.0},
        "initial": {
            "f_modes": {"1": [0.1, 0.0]},
            "g_kind": "gaussian",
            "g_center": [np.pi, -0.5],
            "g_width": [0.8, 0.2],
            "g_amplitude": 0.01,
        },
        "stepper": {"dt": dt, "t_end": 0.5, "scheme": "imex_midpoint"},
        "output": {"interval": 0.05},
        "thresholds": {"a_frak": 0.05, "d_frak": 0.2},
    }
    config = parse_config(base, overrides)
    ctx, control, f0, g0, t_end, interval = config.build_context()
    res = run_simulation(ctx, control, f0, g0, t_end, interval)
    r0 = res.rows[0]
    mean_drift = max(abs(r.mean_f - r0.mean_f) for r in res.rows)
    density_drift = max(
        abs(r.total_density - r0.total_density) / abs(r0.total_density)
        for r in res.rows
    )
    return config, res, mean_drift, density_drift


def _preset_conservation(overrides, out_dir, quiet):
    dt = 0.01
    (cfgA, resA, meanA, densA), (cfgB, resB, meanB, densB) = _fan_out(
        [
            lambda: _conservation_run(dt, overrides),
            lambda: _conservation_run(dt / 2, overrides),
        ]
    )
    mean_ok = max(meanA, meanB) <= 1e-8 * (1 + abs(resA.rows[0].mean_f))
    halving = densB <= 0.5 * densA
    tangency = max(resA.tangency_max_relative, resB.tangency_max_relative)
    tangency_ok = tangency <= 1e-8
    passed = mean_ok and halving and tangency_ok
    _write_run_artifacts(os.path.join(out_dir, "dt_coarse"), cfgA, resA.rows,
                         {"dt": dt, "density_drift": densA, "mean_drift": meanA})
    _write_run_artifacts(os.path.join(out_dir, "dt_fine"), cfgB, resB.rows,
                         {"dt": dt / 2, "density_drift": densB, "mean_drift": meanB})
    summary = {
        "preset": "conservation",
        "criteria": {
            "mean_conservation": {
                "pass": bool(mean_ok),
                "max_mean_drift": max(meanA, meanB),
                "tolerance": 1e-8,
            },
            "density_drift_halving": {
                "pass": bool(halving),
                "drift_coarse": densA,
                "drift_fine": densB,
                "ratio": densB / densA if densA > 0 else 0.0,
            },
            "tangency": {
                "pass": bool(tangency_ok),
                "max_relative_defect": tangency,
                "tolerance": 1e-8,
            },
        },
    }
    _write_run_artifacts(out_dir, cfgA, resA.rows, summary)
    if not quiet:
        print(
            f"conservation: mean drift {max(meanA, meanB):.2e}, density ratio "
            f"{densB / max(densA, 1e-300):.3f}, tangency {tangency:.2e}: "
            f"{'PASS' if passed else 'FAIL'}"
        )
    return 0 if passed else 4


_PRESET_IMPL = {
    "dn-flat": _preset_dn_flat,
    "steady-state": _preset_steady_state,
    "muskat-decay": _preset_muskat_decay,
    "stability-scan": _preset_stability_scan,
    "picard-contract": _preset_picard_contract,
    "conservation": _preset_conservation,
}


def run_preset(name: str, overrides=None, out_dir=None, quiet=False) -> int:
    """Run a named preset; returns a process exit code (0 ok, 4 criterion)."""
    if name not in _PRESET_IMPL:
        raise ValueError(
            f"unknown preset {name!r}; available: {', '.join(PRESET_NAMES)}"
        )
    out_dir = out_dir or os.path.join("runs", name)
    os.makedirs(out_dir, exist_ok=True)
    return _PRESET_IMPL[name](list(overrides or []), out_dir, quiet)
