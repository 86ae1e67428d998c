"""Time integration of the coupled surface/density system.

The surface equation is stiff through the Dirichlet-Neumann term, whose
linearization acts like ``-c(x) |D|`` with ``c = T(f)/(1+|grad f|^2)``.  The
default scheme treats a frozen scalar multiple of ``|D|`` implicitly (exact
in Fourier space) and everything else explicitly:

    (1 + dt cbar |k|) f_hat_new = f_hat + dt (rhs_hat + cbar |k| f_hat)

with ``cbar`` from the stability functional.  Density transport is explicit.
Steps are transactional: a step that violates the stability thresholds or
the Jacobian floor is discarded, the step size halved, and the accepted
state never mutated.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .dynamics import (
    Assembly,
    StabilityReport,
    assemble,
    conserved_quantities,
    rhs_density,
    stability_report,
    strip_sobolev_norm,
)
from .flatten import (
    DepthMode,
    FiniteDepth,
    FlatteningError,
    FlatteningMap,
    build_map,
    jac_target,
    select_delta,
)
from .profiles import StratificationProfile
from .spectral import SurfaceField, sobolev_norm
from .strip import StripField, StripGrid

__all__ = [
    "RunContext",
    "StepControl",
    "SimState",
    "StepError",
    "initial_state",
    "cfl_dt",
    "step_imex",
    "run_simulation",
    "DiagnosticsRow",
    "CSV_HEADER",
    "checkpoint",
    "restore",
    "CheckpointError",
]

CSV_HEADER = "t,Hs_f,Hs_g,taylor_min,separation_min,mean_f,total_density,dt,step_status"


class StepError(RuntimeError):
    pass


@dataclass
class RunContext:
    """Immutable description of the run shared by all steps."""

    grid: StripGrid
    depth: DepthMode
    profile: StratificationProfile
    a_threshold: float
    d_threshold: float
    delta: float
    delta_safety: float = 0.9
    elliptic_tol: float = 1e-11
    tangency_tol: float = 1e-6
    s_index: float = 2.6

    @property
    def jac_floor(self) -> float:
        dfrak = self.d_threshold if isinstance(self.depth, FiniteDepth) else None
        return self.delta_safety * jac_target(self.depth, dfrak)

    def build(self, f: SurfaceField) -> FlatteningMap:
        return build_map(f, self.depth, self.delta, self.grid,
                         jac_floor=self.jac_floor)


@dataclass
class StepControl:
    dt: float
    cfl_target: float = 0.4
    dt_max: float = 0.1
    scheme: str = "imex"  # imex | imex_midpoint | explicit_rk4
    implicit_coefficient_rule: str = "min_taylor"  # min_taylor | frozen
    max_rejects: int = 8
    frozen_coefficient: Optional[float] = None

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if not 0 < self.cfl_target < 1:
            raise ValueError("cfl_target must lie in (0, 1)")
        if self.scheme not in ("imex", "imex_midpoint", "explicit_rk4"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.implicit_coefficient_rule not in ("min_taylor", "frozen"):
            raise ValueError(
                f"unknown implicit coefficient rule {self.implicit_coefficient_rule!r}"
            )


@dataclass
class SimState:
    t: float
    f: SurfaceField
    g_strip: StripField
    map: FlatteningMap
    stability: StabilityReport


def initial_state(f: SurfaceField, g_strip: StripField, ctx: RunContext) -> SimState:
    fmap = ctx.build(f)
    stab = stability_report(fmap, f, ctx.profile, ctx.a_threshold,
                            ctx.d_threshold, tol=ctx.elliptic_tol)
    if not stab.ok:
        raise StepError(
            f"initial data violates the stability thresholds: "
            f"min T(f) = {stab.taylor_min:.4g} (>= {ctx.a_threshold:.4g} required), "
            f"separation = {stab.separation_min:.4g} (>= {ctx.d_threshold:.4g})"
        )
    return SimState(t=0.0, f=f, g_strip=g_strip, map=fmap, stability=stab)


def _cbar(state: SimState, control: StepControl) -> float:
    """Frozen implicit coefficient for the |D| term."""
    if control.implicit_coefficient_rule == "frozen" and control.frozen_coefficient:
        return control.frozen_coefficient
    from .spectral import x_derivative

    fx = x_derivative(state.f).values
    c = state.stability.taylor.values / np.sqrt(1.0 + fx * fx)
    return float(max(c.min(), 0.0))


def cfl_dt(state: SimState, control: StepControl,
           velocity_sup: Optional[tuple] = None) -> float:
    """Advective and stiffness step bound.

    The advective bound uses local spacing/speed ratios (the z-spacing is
    graded, but the vertical velocity vanishes at the boundaries where the
    cells are smallest, so the local ratio is the meaningful one).  The
    stiffness bound is 1/(max T(f) * k_max) for the Dirichlet-Neumann term.
    """
    grid = state.map.grid
    bounds = []
    if velocity_sup is not None:
        ubar_x, ubar_z = velocity_sup
        ax = float(np.abs(ubar_x).max())
        if ax > 0:
            bounds.append(grid.x_grid.dx / ax)
        dz_local = np.empty(grid.n_z)
        dz_local[:-1] = np.diff(grid.z_nodes)
        dz_local[-1] = dz_local[-2]
        ratio = dz_local[None, :] / np.maximum(np.abs(ubar_z), 1e-300)
        bounds.append(float(ratio.min()))
    c_max = float(max(state.stability.taylor.values.max(), 0.0))
    k_max = float(grid.x_grid.k_half[-1])
    if c_max > 0 and k_max > 0:
        bounds.append(1.0 / (c_max * k_max))
    if not bounds:
        return control.dt_max
    return min(control.dt_max, control.cfl_target * min(bounds))


def _imex_update(f: SurfaceField, rhs: SurfaceField, dt: float, cbar: float,
                 nu: float = 0.0, mu: float = 0.25,
                 theta: float = 1.0) -> SurfaceField:
    """Solve (1 + theta dt (cbar|k| + nu|k|^{1+mu})) f_new = explicit part."""
    k = np.abs(f.grid.k_half)
    sym = cbar * k + nu * k ** (1.0 + mu)
    num = f.coeffs * (1.0 - (1.0 - theta) * dt * sym) + dt * (
        rhs.coeffs + cbar * k * f.coeffs
    )
    den = 1.0 + theta * dt * sym
    return SurfaceField.from_coeffs(f.grid, num / den)


@dataclass
class StepInfo:
    dt_used: float
    rejects: int
    tangency_top: float
    tangency_bottom: float
    velocity_sup: float
    cg_iterations: tuple


def _advance(state: SimState, asm: Assembly, dt: float, ctx: RunContext,
             control: StepControl) -> SimState:
    """One candidate step from a precomputed assembly; raises on rejection."""
    cbar = _cbar(state, control)
    if control.scheme == "imex":
        f_new = _imex_update(state.f, asm.rhs_f, dt, cbar)
        dg = rhs_density(state.map, asm.velocity, state.g_strip, ctx.profile,
                         tangency_tol=ctx.tangency_tol)
        g_new = StripField(ctx.grid, state.g_strip.values + dt * dg.values)
    elif control.scheme == "imex_midpoint":
        # half step (IMEX Euler), then midpoint evaluation
        f_half = _imex_update(state.f, asm.rhs_f, dt / 2, cbar)
        dg0 = rhs_density(state.map, asm.velocity, state.g_strip, ctx.profile,
                          tangency_tol=ctx.tangency_tol)
        g_half = StripField(ctx.grid, state.g_strip.values + 0.5 * dt * dg0.values)
        map_half = ctx.build(f_half)
        asm_mid = assemble(map_half, f_half, g_half, ctx.profile, ctx.elliptic_tol)
        dg_mid = rhs_density(map_half, asm_mid.velocity, g_half, ctx.profile,
                             tangency_tol=ctx.tangency_tol)
        k = np.abs(state.f.grid.k_half)
        num = (
            state.f.coeffs * (1.0 - 0.5 * dt * cbar * k)
            + dt * (asm_mid.rhs_f.coeffs + cbar * k * f_half.coeffs)
        )
        f_new = SurfaceField.from_coeffs(
            state.f.grid, num / (1.0 + 0.5 * dt * cbar * k)
        )
        g_new = StripField(ctx.grid, state.g_strip.values + dt * dg_mid.values)
    elif control.scheme == "explicit_rk4":
        f_new, g_new = _rk4(state, asm, dt, ctx)
    else:  # pragma: no cover
        raise StepError(f"unknown scheme {control.scheme}")

    map_new = ctx.build(f_new)  # raises FlatteningError when the jacobian degrades
    stab = stability_report(map_new, f_new, ctx.profile, ctx.a_threshold,
                            ctx.d_threshold, tol=ctx.elliptic_tol)
    if not stab.ok:
        raise StepError(
            f"stability violated after step: min T = {stab.taylor_min:.4g}, "
            f"separation = {stab.separation_min:.4g}"
        )
    return SimState(t=state.t + dt, f=f_new, g_strip=g_new, map=map_new,
                    stability=stab)


def _rk4(state: SimState, asm: Assembly, dt: float, ctx: RunContext):
    def rhs_pair(f, g, asm_local=None):
        if asm_local is None:
            fmap = ctx.build(f)
            asm_local = assemble(fmap, f, g, ctx.profile, ctx.elliptic_tol)
            fmap_used = fmap
        else:
            fmap_used = state.map
        dg = rhs_density(fmap_used, asm_local.velocity, g, ctx.profile,
                         tangency_tol=ctx.tangency_tol)
        return asm_local.rhs_f, dg

    f0, g0 = state.f, state.g_strip
    k1f, k1g = rhs_pair(f0, g0, asm)
    k2f, k2g = rhs_pair(f0 + (dt / 2) * k1f,
                        StripField(ctx.grid, g0.values + (dt / 2) * k1g.values))
    k3f, k3g = rhs_pair(f0 + (dt / 2) * k2f,
                        StripField(ctx.grid, g0.values + (dt / 2) * k2g.values))
    k4f, k4g = rhs_pair(f0 + dt * k3f,
                        StripField(ctx.grid, g0.values + dt * k3g.values))
    f_new = f0 + (dt / 6) * (k1f + 2 * k2f + 2 * k3f + k4f)
    g_new = StripField(
        ctx.grid,
        g0.values + (dt / 6) * (k1g.values + 2 * k2g.values + 2 * k3g.values + k4g.values),
    )
    return f_new, g_new


def step_imex(state: SimState, control: StepControl, ctx: RunContext):
    """One accepted step with halving-on-rejection; returns (state, info)."""
    asm = assemble(state.map, state.f, state.g_strip, ctx.profile, ctx.elliptic_tol)
    dt = control.dt
    rejects = 0
    while True:
        try:
            new_state = _advance(state, asm, dt, ctx, control)
            info = StepInfo(
                dt_used=dt,
                rejects=rejects,
                tangency_top=asm.velocity.tangency_top,
                tangency_bottom=asm.velocity.tangency_bottom,
                velocity_sup=asm.velocity.sup_norm,
                cg_iterations=asm.iterations,
            )
            return new_state, info
        except (StepError, FlatteningError) as exc:
            rejects += 1
            if rejects > control.max_rejects:
                raise StepError(
                    f"step rejected {rejects} times (dt down to {dt:.3e}): {exc}"
                ) from exc
            dt *= 0.5


@dataclass
class DiagnosticsRow:
    t: float
    Hs_f: float
    Hs_g: float
    taylor_min: float
    separation_min: float
    mean_f: float
    total_density: float
    dt: float
    step_status: str

    def to_csv(self) -> str:
        return ",".join(
            [
                repr(self.t),
                repr(self.Hs_f),
                repr(self.Hs_g),
                repr(self.taylor_min),
                repr(self.separation_min),
                repr(self.mean_f),
                repr(self.total_density),
                repr(self.dt),
                self.step_status,
            ]
        )


def _diag_row(state: SimState, ctx: RunContext, dt: float, status: str) -> DiagnosticsRow:
    cons = conserved_quantities(state.map, state.f, state.g_strip, ctx.profile,
                                s_index=ctx.s_index)
    return DiagnosticsRow(
        t=state.t,
        Hs_f=cons["sobolev_norms"]["f"],
        Hs_g=cons["sobolev_norms"]["g"],
        taylor_min=state.stability.taylor_min,
        separation_min=state.stability.separation_min,
        mean_f=cons["mean_f"],
        total_density=cons["total_density"],
        dt=dt,
        step_status=status,
    )


@dataclass
class RunResult:
    rows: list
    state: SimState
    status: str
    steps_accepted: int
    steps_rejected: int
    tangency_max: float          # max over accepted steps of the boundary defect
    tangency_max_relative: float  # same, scaled by 1 + ||ubar||_inf
    mode_history: Optional[dict] = None


def run_simulation(
    ctx: RunContext,
    control: StepControl,
    f0: SurfaceField,
    g0: StripField,
    t_end: float,
    output_interval: float = 0.0,
    track_modes: Optional[list] = None,
    max_steps: int = 2_000_000,
    on_row: Optional[Callable[[DiagnosticsRow], None]] = None,
) -> RunResult:
    """Step to t_end, emitting diagnostics rows every output interval.

    ``track_modes`` optionally records |f_hat_k(t)| for the listed integer
    mode indices at every accepted step (used by the dispersion fits).
    """
    state = initial_state(f0, g0, ctx)
    rows = [_diag_row(state, ctx, control.dt, "initial")]
    if on_row:
        on_row(rows[0])
    mode_history = None
    if track_modes:
        mode_history = {"t": [state.t]}
        for k in track_modes:
            mode_history[k] = [abs(state.f.coeffs[k])]
    next_output = output_interval
    accepted = rejected = 0
    tangency_max = 0.0
    tangency_rel = 0.0
    status = "ok"
    steps = 0
    while state.t < t_end - 1e-14:
        dt_eff = min(control.dt, t_end - state.t)
        try:
            state, info = step_imex(state, replace(control, dt=dt_eff), ctx)
        except (StepError, FlatteningError) as exc:
            status = f"failed: {exc}"
            rows.append(_diag_row(state, ctx, dt_eff, "failed"))
            if on_row:
                on_row(rows[-1])
            break
        accepted += 1
        rejected += info.rejects
        defect = max(info.tangency_top, info.tangency_bottom)
        tangency_max = max(tangency_max, defect)
        tangency_rel = max(tangency_rel, defect / (1.0 + info.velocity_sup))
        if mode_history is not None:
            mode_history["t"].append(state.t)
            for k in track_modes:
                mode_history[k].append(abs(state.f.coeffs[k]))
        if output_interval <= 0 or state.t >= next_output - 1e-12:
            label = "ok" if info.rejects == 0 else f"ok(rejects={info.rejects})"
            rows.append(_diag_row(state, ctx, info.dt_used, label))
            if on_row:
                on_row(rows[-1])
            next_output += output_interval
        steps += 1
        if steps >= max_steps:
            status = "failed: max step count reached"
            break
    if rows[-1].t < state.t - 1e-14:
        rows.append(_diag_row(state, ctx, control.dt, "final"))
        if on_row:
            on_row(rows[-1])
    return RunResult(
        rows=rows,
        state=state,
        status=status,
        steps_accepted=accepted,
        steps_rejected=rejected,
        tangency_max=tangency_max,
        tangency_max_relative=tangency_rel,
        mode_history=mode_history,
    )


# ---------------------------------------------------------------------------
# Checkpointing: JSON metadata header + length-prefixed float64 blocks.

_MAGIC = b"IPMCKPT1"


class CheckpointError(RuntimeError):
    pass


def checkpoint(state: SimState, config_hash: str = "", s_index: float = 2.6,
               profile: Optional[StratificationProfile] = None) -> bytes:
    """Serialize (t, f, g) with grid metadata and a diagnostics snapshot."""
    header = {
        "version": 1,
        "t": state.t,
        "n_x": state.map.grid.x_grid.n,
        "L": state.map.grid.x_grid.length,
        "n_z": state.map.grid.n_z,
        "z_bot": state.map.grid.z_bot,
        "delta": state.map.delta,
        "config_hash": config_hash,
        "diagnostics": {
            "Hs_f": sobolev_norm(state.f, s_index),
            "Hs_g": strip_sobolev_norm(state.g_strip, s_index),
            "taylor_min": state.stability.taylor_min,
            "separation_min": state.stability.separation_min,
            "mean_f": state.f.mean(),
        },
    }
    head = json.dumps(header, sort_keys=True).encode()
    blocks = [
        np.float64(state.t).tobytes(),
        np.ascontiguousarray(state.f.values, dtype=np.float64).tobytes(),
        np.ascontiguousarray(state.g_strip.values, dtype=np.float64).tobytes(),
    ]
    out = [_MAGIC, struct.pack("<Q", len(head)), head]
    for b in blocks:
        out.append(struct.pack("<Q", len(b)))
        out.append(b)
    payload = b"".join(out)
    digest = hashlib.sha256(payload).digest()
    return payload + digest


def read_checkpoint_header(blob: bytes) -> dict:
    if blob[: len(_MAGIC)] != _MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    if len(blob) < len(_MAGIC) + 8:
        raise CheckpointError("truncated checkpoint (no header length)")
    off = len(_MAGIC)
    (hlen,) = struct.unpack_from("<Q", blob, off)
    off += 8
    if off + hlen > len(blob):
        raise CheckpointError(f"truncated checkpoint header at offset {off}")
    header = json.loads(blob[off : off + hlen].decode())
    if header.get("version") != 1:
        raise CheckpointError(
            f"unsupported checkpoint version {header.get('version')!r}"
        )
    return header


def restore(blob: bytes, ctx: RunContext, config_hash: str = "") -> SimState:
    """Rebuild a state; validates integrity, version, hash, and grid shape."""
    if len(blob) < 32:
        raise CheckpointError("truncated checkpoint (too short)")
    payload, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(payload).digest() != digest:
        raise CheckpointError("checkpoint corrupted (sha256 mismatch)")
    header = read_checkpoint_header(payload)
    if config_hash and header["config_hash"] and header["config_hash"] != config_hash:
        raise CheckpointError(
            f"config hash mismatch: checkpoint {header['config_hash'][:12]}..., "
            f"current {config_hash[:12]}..."
        )
    xg = ctx.grid.x_grid
    if (header["n_x"], header["n_z"]) != (xg.n, ctx.grid.n_z) or not (
        abs(header["L"] - xg.length) < 1e-12
        and abs(header["z_bot"] - ctx.grid.z_bot) < 1e-12
    ):
        raise CheckpointError(
            f"grid mismatch: checkpoint ({header['n_x']}x{header['n_z']}, "
            f"L={header['L']}, z_bot={header['z_bot']}), context "
            f"({xg.n}x{ctx.grid.n_z}, L={xg.length}, z_bot={ctx.grid.z_bot})"
        )
    off = len(_MAGIC)
    (hlen,) = struct.unpack_from("<Q", payload, off)
    off += 8 + hlen
    blocks = []
    for _ in range(3):
        if off + 8 > len(payload):
            raise CheckpointError(f"truncated checkpoint block at offset {off}")
        (blen,) = struct.unpack_from("<Q", payload, off)
        off += 8
        if off + blen > len(payload):
            raise CheckpointError(
                f"truncated checkpoint block at offset {off} (need {blen} bytes)"
            )
        blocks.append(payload[off : off + blen])
        off += blen
    t = float(np.frombuffer(blocks[0], dtype=np.float64)[0])
    f_vals = np.frombuffer(blocks[1], dtype=np.float64).copy()
    g_vals = np.frombuffer(blocks[2], dtype=np.float64).copy()
    if f_vals.size != xg.n or g_vals.size != xg.n * ctx.grid.n_z:
        raise CheckpointError("checkpoint field blocks have wrong sizes")
    f = SurfaceField(xg, f_vals)
    g = StripField(ctx.grid, g_vals.reshape(xg.n, ctx.grid.n_z))
    fmap = ctx.build(f)
    stab = stability_report(fmap, f, ctx.profile, ctx.a_threshold, ctx.d_threshold,
                            tol=ctx.elliptic_tol)
    return SimState(t=t, f=f, g_strip=g, map=fmap, stability=stab)


def make_context(
    grid: StripGrid,
    depth: DepthMode,
    profile: StratificationProfile,
    f0: SurfaceField,
    a_threshold: float = 1e-2,
    d_threshold: float = 0.1,
    delta_safety: float = 0.9,
    elliptic_tol: float = 1e-11,
    tangency_tol: float = 1e-6,
    s_index: float = 2.6,
) -> RunContext:
    """Select delta for the initial surface and freeze the run context."""
    dfrak = d_threshold if isinstance(depth, FiniteDepth) else None
    delta = select_delta(f0, depth, grid, safety=delta_safety, d_frak=dfrak)
    return RunContext(
        grid=grid,
        depth=depth,
        profile=profile,
        a_threshold=a_threshold,
        d_threshold=d_threshold,
        delta=delta,
        delta_safety=delta_safety,
        elliptic_tol=elliptic_tol,
        tangency_tol=tangency_tol,
        s_index=s_index,
    )
