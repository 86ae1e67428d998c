"""Iterative construction of solutions (decoupled Picard scheme).

Level n >= 2 solves, on a shared time grid over [0, T]:

  surface:  d/dt f_n + G[f_n]Gamma(f_n) + nu |D|^{1+mu} f_n = R_{n-1},
            R_{n-1} = -(N_{n-1} . S[f_{n-1}] g_{n-1} + g_{n-1})|_surface,
  density:  d/dt g_n + ubar_{n-1} . grad g_n
            + gamma'(rho_{n-1}) (u_{n-1,y} o F_{n-1}) = 0,

where the transport velocity mixes levels: its horizontal part and the
harmonic-extension part of its vertical component live at level n-1, while
the source-potential part and the density trace in the vertical component
live at level n-2.  The time derivative of the flattening is closed with the
unregularized combination ``-G[f_m]Gamma(f_m) + R_{m-1}``, which is exactly
what makes the vertical velocity vanish on the strip boundaries; the nu-term
perturbs the trajectory by O(nu) but never the tangency identity.

Level 1 is a spectrally smoothed copy of the data (modes above half the
resolved band dropped); level 0 is the data itself.  Both are constant in
time.  Successive differences are measured in H^{s-1} (x-Sobolev, L2 in z
for the density) and the horizon T is halved adaptively until the measured
contraction ratio passes the configured gate.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dynamics import strip_sobolev_norm
from .elliptic import solver_for
from .flatten import FiniteDepth, rho_time_derivative
from .spectral import SurfaceField, sobolev_norm
from .stepper import RunContext, _imex_update
from .strip import StripField

__all__ = ["PicardError", "PicardRun", "picard_iterate"]


class PicardError(RuntimeError):
    def __init__(self, message, threshold: str = "", level: int = -1, t: float = 0.0):
        super().__init__(message)
        self.threshold = threshold
        self.level = level
        self.t = t


@dataclass
class PicardRun:
    nu: float
    mu: float
    T: float
    n_halvings: int
    iterates: list            # final-time (f_n, g_n) pairs, n = 1..n_max
    deltas_f: list            # sup_t ||f_n - f_{n-1}||_{H^{s-1}}, index n-2
    deltas_g: list
    ratios_f: list
    ratios_g: list
    fixed_point_n: Optional[int]
    converged: bool
    status: str


@dataclass
class _Level:
    """Per-time-index cache of the strip quantities a later level consumes."""

    f: np.ndarray          # (n_t+1, n_x)
    g: np.ndarray          # (n_t+1, n_x, n_z)
    ux: np.ndarray         # u_x o F at this level
    uy: np.ndarray         # u_y o F
    g_bracket: np.ndarray  # (A grad v1 . e_z), boundary rows flux-recovered
    s_bracket: np.ndarray  # (A grad v2 . e_z), boundary rows flux-recovered
    dn: np.ndarray         # (n_t+1, n_x) G[f]Gamma(f)
    R: np.ndarray          # (n_t+1, n_x) source term for the next level
    dtf: np.ndarray        # (n_t+1, n_x) unregularized surface velocity
    rho: np.ndarray        # (n_t+1, n_x, n_z)
    drz: np.ndarray


def _truncate_low(values: np.ndarray, grid) -> np.ndarray:
    """Keep the lower half of the resolved modes (|j| < n/4) along x."""
    ah = np.fft.rfft(values, axis=0)
    j = np.arange(grid.n // 2 + 1)
    ah[j >= grid.n // 4] = 0.0
    return np.fft.irfft(ah, n=grid.n, axis=0)


def _level_slices(ctx: RunContext, f_traj, g_traj, R_prev, tol, constant=False):
    """Compute the cached strip quantities for a whole trajectory.

    ``constant`` marks a time-independent trajectory (levels 0 and 1): the
    strip quantities are computed once and broadcast, except ``dtf`` which
    still varies through R_prev.
    """
    n_t = f_traj.shape[0]
    grid = ctx.grid
    nx, nz = grid.shape
    lvl = _Level(
        f=f_traj,
        g=g_traj,
        ux=np.empty((n_t, nx, nz)),
        uy=np.empty((n_t, nx, nz)),
        g_bracket=np.empty((n_t, nx, nz)),
        s_bracket=np.empty((n_t, nx, nz)),
        dn=np.empty((n_t, nx)),
        R=np.empty((n_t, nx)),
        dtf=np.empty((n_t, nx)),
        rho=np.empty((n_t, nx, nz)),
        drz=np.empty((n_t, nx, nz)),
    )
    for i in range(n_t):
        if constant and i > 0:
            for name in ("ux", "uy", "g_bracket", "s_bracket", "dn", "R",
                         "rho", "drz"):
                getattr(lvl, name)[i] = getattr(lvl, name)[0]
            lvl.dtf[i] = -lvl.dn[i] + R_prev[i]
            continue
        f_i = SurfaceField(grid.x_grid, f_traj[i])
        fmap = ctx.build(f_i)
        solver = solver_for(fmap, tol)
        Gamma_f = SurfaceField(grid.x_grid,
                               np.asarray(ctx.profile.Gamma(f_traj[i]), dtype=float))
        r1 = solver.solve_phi1(Gamma_f)
        r2 = solver.solve_phi2(StripField(grid, g_traj[i]))
        drz, drx = fmap.drho_dz, fmap.grad_x_rho
        vx1, vz1 = r1.solution.grad_x.values, r1.solution.grad_z.values
        vx2, vz2 = r2.solution.grad_x.values, r2.solution.grad_z.values
        phi_x = (vx1 + vx2) - (vz1 + vz2) * drx / drz
        phi_y = (vz1 + vz2) / drz
        lvl.ux[i] = -phi_x
        lvl.uy[i] = -phi_y - g_traj[i]
        gb = r1.conormal.copy()
        gb[:, -1] = r1.dn
        gb[:, 0] = -r1.residual_bottom
        sb = r2.conormal.copy()
        sb[:, -1] = r2.n_trace
        sb[:, 0] = -r2.residual_bottom - g_traj[i][:, 0]
        lvl.g_bracket[i] = gb
        lvl.s_bracket[i] = sb
        lvl.dn[i] = r1.dn
        lvl.R[i] = -r2.combined_top
        lvl.dtf[i] = -r1.dn + R_prev[i]
        lvl.rho[i] = fmap.rho
        lvl.drz[i] = drz
    return lvl


def _transport_rhs(ctx, lvl_prev: _Level, lvl_prev2: _Level, i: int,
                   g_vals: np.ndarray) -> np.ndarray:
    """RHS of the level-n transport at time index i."""
    from .spectral import dealias_values, deriv_x_values

    grid = ctx.grid
    rho_t = rho_time_derivative(grid, ctx.depth, ctx.delta, lvl_prev.dtf[i])
    ubar_z = (
        -lvl_prev.g_bracket[i]
        - lvl_prev2.s_bracket[i]
        - lvl_prev2.g[i]
        - rho_t
    ) / lvl_prev.drz[i]
    if not isinstance(ctx.depth, FiniteDepth):
        ubar_z[:, 0] = 0.0  # wall closure of the truncated bottom
    ubar_x = lvl_prev.ux[i]
    gx = deriv_x_values(g_vals, grid.x_grid)
    gz = grid.dz(g_vals)
    gamma_p = np.asarray(ctx.profile.gamma_prime(lvl_prev.rho[i]), dtype=float)
    rhs = -(ubar_x * gx + ubar_z * gz) - gamma_p * lvl_prev.uy[i]
    return dealias_values(rhs, grid.x_grid)


def _hs_norm_surface(values: np.ndarray, grid, s: float) -> float:
    return sobolev_norm(SurfaceField(grid.x_grid, values), s)


def picard_iterate(
    ctx: RunContext,
    f0: SurfaceField,
    g0: StripField,
    n_max: int = 6,
    nu: float = 1e-3,
    mu: float = 0.25,
    T: float = 0.2,
    n_t: int = 64,
    ratio_gate: float = 0.75,
    adapt_T: bool = True,
    max_halvings: int = 4,
    R_cap: Optional[float] = None,
) -> PicardRun:
    """Run the iterative scheme; optionally halve T until contraction holds.

    Preconditions: T(f0) >= 2 * a_threshold and, in the finite-depth case,
    separation >= 2 * d_threshold.  The three runtime monitors of the
    surface sub-solve (norm bound, stability functional, bottom separation)
    raise ``PicardError`` naming the violated threshold.
    """
    if not (0.0 < mu < 0.5):
        raise ValueError(f"mu must lie in (0, 1/2), got {mu}")
    if nu < 0:
        raise ValueError("nu must be >= 0")
    from .dynamics import stability_report

    fmap0 = ctx.build(f0)
    stab0 = stability_report(fmap0, f0, ctx.profile, ctx.a_threshold,
                             ctx.d_threshold, tol=ctx.elliptic_tol)
    if stab0.taylor_min < 2 * ctx.a_threshold:
        raise PicardError(
            f"initial stability functional {stab0.taylor_min:.4g} below "
            f"2*a = {2 * ctx.a_threshold:.4g}",
            threshold="taylor",
        )
    if isinstance(ctx.depth, FiniteDepth) and stab0.separation_min < 2 * ctx.d_threshold:
        raise PicardError(
            f"initial separation {stab0.separation_min:.4g} below "
            f"2*d = {2 * ctx.d_threshold:.4g}",
            threshold="separation",
        )
    norm_cap = R_cap if R_cap is not None else 2.0 * max(
        sobolev_norm(f0, ctx.s_index), 1.0
    )

    halvings = 0
    T_cur, n_t_cur = float(T), int(n_t)
    while True:
        run = _picard_once(ctx, f0, g0, n_max, nu, mu, T_cur, n_t_cur,
                           ratio_gate, norm_cap, halvings)
        if run.converged or not adapt_T or halvings >= max_halvings:
            return run
        halvings += 1
        T_cur *= 0.5
        n_t_cur = max(n_t_cur // 2, 8)


def _picard_once(ctx, f0, g0, n_max, nu, mu, T, n_t, ratio_gate, norm_cap,
                 halvings) -> PicardRun:
    grid = ctx.grid
    xg = grid.x_grid
    dt = T / n_t
    tol = ctx.elliptic_tol
    s1 = ctx.s_index - 1.0

    # level 0: the data; level 1: spectrally smoothed data (constant in time)
    f0v, g0v = f0.values, g0.values
    f1v = _truncate_low(f0v, xg)
    g1v = _truncate_low(g0v, xg)

    def constant_traj(fv, gv):
        return (
            np.repeat(fv[None, :], n_t + 1, axis=0),
            np.repeat(gv[None, :, :], n_t + 1, axis=0),
        )

    R_zero = np.zeros((n_t + 1, xg.n))
    lvl0_f, lvl0_g = constant_traj(f0v, g0v)
    level0 = _level_slices(ctx, lvl0_f, lvl0_g, R_zero, tol, constant=True)
    lvl1_f, lvl1_g = constant_traj(f1v, g1v)
    level1 = _level_slices(ctx, lvl1_f, lvl1_g, level0.R, tol, constant=True)

    levels = {0: level0, 1: level1}
    iterates = [(SurfaceField(xg, f1v.copy()), StripField(grid, g1v.copy()))]
    deltas_f, deltas_g = [], []

    for n in range(2, n_max + 1):
        prev = levels[n - 1]
        prev2 = levels[n - 2]

        # --- density transport with the mixed-level velocity (Heun) ---
        g_traj = np.empty((n_t + 1, xg.n, grid.n_z))
        g_traj[0] = g0v
        for i in range(n_t):
            k1 = _transport_rhs(ctx, prev, prev2, i, g_traj[i])
            g_star = g_traj[i] + dt * k1
            k2 = _transport_rhs(ctx, prev, prev2, i + 1, g_star)
            g_traj[i + 1] = g_traj[i] + 0.5 * dt * (k1 + k2)

        # --- regularized nonlinear surface solve (IMEX substeps) ---
        f_traj = np.empty((n_t + 1, xg.n))
        f_traj[0] = f0v
        for i in range(n_t):
            t_i = i * dt
            f_i = SurfaceField(xg, f_traj[i])
            fmap = ctx.build(f_i)
            solver = solver_for(fmap, tol)
            Gamma_f = SurfaceField(
                xg, np.asarray(ctx.profile.Gamma(f_traj[i]), dtype=float)
            )
            dn = solver.solve_phi1(Gamma_f).dn
            taylor = np.asarray(ctx.profile.gamma(f_traj[i]), dtype=float) - dn
            if taylor.min() < ctx.a_threshold:
                raise PicardError(
                    f"stability functional dropped to {taylor.min():.4g} at "
                    f"level {n}, t = {t_i:.4g}",
                    threshold="taylor", level=n, t=t_i,
                )
            if isinstance(ctx.depth, FiniteDepth):
                sep = f_traj[i] - ctx.depth.bottom_values(xg)
                if sep.min() < ctx.d_threshold:
                    raise PicardError(
                        f"bottom separation dropped to {sep.min():.4g} at "
                        f"level {n}, t = {t_i:.4g}",
                        threshold="separation", level=n, t=t_i,
                    )
            hs = _hs_norm_surface(f_traj[i], grid, ctx.s_index)
            if hs > norm_cap:
                raise PicardError(
                    f"H^s norm {hs:.4g} exceeded the cap {norm_cap:.4g} at "
                    f"level {n}, t = {t_i:.4g}",
                    threshold="norm", level=n, t=t_i,
                )
            rhs = SurfaceField(xg, -dn + prev.R[i])
            cbar = float(max(taylor.min(), 0.0))
            f_next = _imex_update(f_i, rhs, dt, cbar, nu=nu, mu=mu)
            f_traj[i + 1] = f_next.values

        # --- cache this level and measure the contraction ---
        level_n = _level_slices(ctx, f_traj, g_traj, prev.R, tol)
        levels[n] = level_n
        levels.pop(n - 2, None)

        df = max(
            _hs_norm_surface(f_traj[i] - prev.f[i], grid, s1)
            for i in range(n_t + 1)
        )
        dg = max(
            strip_sobolev_norm(StripField(grid, g_traj[i] - prev.g[i]), s1)
            for i in range(n_t + 1)
        )
        deltas_f.append(df)
        deltas_g.append(dg)
        iterates.append(
            (SurfaceField(xg, f_traj[-1].copy()), StripField(grid, g_traj[-1].copy()))
        )

    floor = 100.0 * tol * max(1.0, _hs_norm_surface(f0v, grid, s1))
    ratios_f, ratios_g = [], []
    fixed_point_n = None
    for idx in range(1, len(deltas_f)):
        n = idx + 2
        if deltas_f[idx] <= floor and fixed_point_n is None:
            fixed_point_n = n
        rf = deltas_f[idx] / deltas_f[idx - 1] if deltas_f[idx - 1] > floor else 0.0
        rg = deltas_g[idx] / deltas_g[idx - 1] if deltas_g[idx - 1] > floor else 0.0
        ratios_f.append(rf)
        ratios_g.append(rg)
    converged = all(r <= ratio_gate for r in ratios_f + ratios_g)
    return PicardRun(
        nu=nu,
        mu=mu,
        T=T,
        n_halvings=halvings,
        iterates=iterates,
        deltas_f=deltas_f,
        deltas_g=deltas_g,
        ratios_f=ratios_f,
        ratios_g=ratios_g,
        fixed_point_n=fixed_point_n,
        converged=converged,
        status="contraction" if converged else "ratio gate not met",
    )
