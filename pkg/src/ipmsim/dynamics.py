"""Physical right-hand sides: velocity, surface and density evolution,
stability functional, conserved-quantity diagnostics.

The velocity in strip coordinates is assembled from the two elliptic solves.
With ``v = v1 + v2`` the total potential pullback and ``con = (A grad v).e_z``
its conormal flux field, the vertical pulled-back velocity is

    ubar_z = (1/drho_dz) * (-con - g - drho_dt),

valid at every node (the identity ``(-grad_x rho, 1).(grad phi o F) = con``
is exact pointwise).  At the two horizontal boundaries ``con`` is replaced by
its variationally recovered value and ``drho_dt`` is closed with the same
discrete surface velocity that drives the f-equation; the boundary rows then
cancel to solver tolerance, which is the discrete form of the tangency
identity and what makes the g-transport well posed without boundary
conditions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .elliptic import solver_for
from .flatten import FiniteDepth, FlatteningMap, InfiniteDepth
from .profiles import StratificationProfile
from .spectral import SurfaceField, dealias_values, deriv_x_values, sobolev_norm
from .strip import StripField

__all__ = [
    "VelocityBundle",
    "StabilityReport",
    "DynamicsError",
    "assemble_velocity",
    "rhs_surface",
    "rhs_density",
    "stability_report",
    "conserved_quantities",
    "strip_sobolev_norm",
]


class DynamicsError(RuntimeError):
    pass


@dataclass
class VelocityBundle:
    ubar_x: StripField
    ubar_z: StripField
    u_x: StripField  # u_x o F
    u_y: StripField  # u_y o F
    surface_normal_speed: SurfaceField  # u.N at the surface == d f/d t
    tangency_top: float
    tangency_bottom: float
    truncation_defect: float  # |d rho/dt| leakage at a truncated bottom
    sup_norm: float


@dataclass
class StabilityReport:
    taylor: SurfaceField
    taylor_min: float
    separation_min: float
    a_threshold: float
    d_threshold: float
    ok: bool


@dataclass
class Assembly:
    """Everything one right-hand-side evaluation produces."""

    velocity: VelocityBundle
    rhs_f: SurfaceField
    dn_gamma: np.ndarray        # G[f]Gamma(f), flux recovery
    source_top: np.ndarray      # N.S[f]g + g at the surface, flux recovery
    iterations: tuple


def assemble(
    fmap: FlatteningMap,
    f: SurfaceField,
    g_strip: StripField,
    profile: StratificationProfile,
    tol: float = 1e-11,
) -> Assembly:
    """One full evaluation of the coupled right-hand sides."""
    xg = fmap.grid.x_grid
    solver = solver_for(fmap, tol)
    Gamma_f = SurfaceField(xg, np.asarray(profile.Gamma(f.values), dtype=float))
    r1 = solver.solve_phi1(Gamma_f)
    r2 = solver.solve_phi2(g_strip)

    gv = g_strip.values
    rhs_f_vals = -(r1.dn + r2.combined_top)

    drz, drx = fmap.drho_dz, fmap.grad_x_rho
    vx = r1.solution.grad_x.values + r2.solution.grad_x.values
    vz = r1.solution.grad_z.values + r2.solution.grad_z.values
    phi_x = vx - vz * drx / drz
    phi_y = vz / drz
    u_x = -phi_x
    u_y = -phi_y - gv

    # pointwise conormal flux of the total potential, with the boundary rows
    # replaced by their variationally recovered values
    con = r1.conormal + r2.conormal
    con[:, -1] = r1.dn + r2.n_trace
    con[:, 0] = -(r1.residual_bottom + r2.residual_bottom) - gv[:, 0]

    rho_t = fmap.rho_t(SurfaceField(xg, rhs_f_vals))
    ubar_z = (-con - gv - rho_t) / drz
    ubar_x = u_x

    tan_top = float(np.abs(ubar_z[:, -1]).max())
    if isinstance(fmap.depth, InfiniteDepth):
        # the truncated bottom is an artificial wall: the steady part of the
        # vertical velocity vanishes there to solver tolerance, while the
        # d rho/dt leakage is pure truncation error and is closed to zero
        steady = (-con[:, 0] - gv[:, 0]) / drz[:, 0]
        tan_bot = float(np.abs(steady).max())
        truncation = float(np.abs(rho_t[:, 0] / drz[:, 0]).max())
        ubar_z[:, 0] = 0.0
    else:
        tan_bot = float(np.abs(ubar_z[:, 0]).max())
        truncation = 0.0
    sup = max(np.abs(ubar_x).max(), np.abs(ubar_z).max())

    vel = VelocityBundle(
        ubar_x=StripField(fmap.grid, ubar_x),
        ubar_z=StripField(fmap.grid, ubar_z),
        u_x=StripField(fmap.grid, u_x),
        u_y=StripField(fmap.grid, u_y),
        surface_normal_speed=SurfaceField(xg, rhs_f_vals),
        tangency_top=tan_top,
        tangency_bottom=tan_bot,
        truncation_defect=truncation,
        sup_norm=float(sup),
    )
    return Assembly(
        velocity=vel,
        rhs_f=SurfaceField(xg, rhs_f_vals),
        dn_gamma=r1.dn,
        source_top=r2.combined_top,
        iterations=(r1.solution.iterations, r2.solution.iterations),
    )


def assemble_velocity(
    fmap: FlatteningMap,
    f: SurfaceField,
    g_strip: StripField,
    profile: StratificationProfile,
    tol: float = 1e-11,
) -> VelocityBundle:
    return assemble(fmap, f, g_strip, profile, tol).velocity


def rhs_surface(
    fmap: FlatteningMap,
    f: SurfaceField,
    g_strip: StripField,
    profile: StratificationProfile,
    tol: float = 1e-11,
) -> SurfaceField:
    """u.N at the surface: -G[f]Gamma(f) - (N.S[f]g + g)|_surface."""
    return assemble(fmap, f, g_strip, profile, tol).rhs_f


def rhs_density(
    fmap: FlatteningMap,
    velocity: VelocityBundle,
    g_strip: StripField,
    profile: StratificationProfile,
    tangency_tol: float = 1e-6,
) -> StripField:
    """Transport right-hand side for the pulled-back density.

    Advection is spectral in x (2/3-dealiased products) and Chebyshev in z;
    no boundary condition is applied because ubar_z vanishes on the
    horizontal boundaries.  A tangency defect above ``tangency_tol`` means
    the velocity bundle was assembled inconsistently and is a hard error.
    """
    defect = max(velocity.tangency_top, velocity.tangency_bottom)
    if defect > tangency_tol * (1.0 + velocity.sup_norm):
        raise DynamicsError(
            f"boundary tangency defect {defect:.3e} exceeds "
            f"{tangency_tol:.1e} * (1 + ||ubar||): velocity assembly is inconsistent"
        )
    grid = fmap.grid
    gx = deriv_x_values(g_strip.values, grid.x_grid)
    gz = grid.dz(g_strip.values)
    adv = velocity.ubar_x.values * gx + velocity.ubar_z.values * gz
    gamma_p = np.asarray(profile.gamma_prime(fmap.rho), dtype=float)
    forcing = gamma_p * velocity.u_y.values
    out = -dealias_values(adv + forcing, grid.x_grid)
    return StripField(grid, out)


def stability_report(
    fmap: FlatteningMap,
    f: SurfaceField,
    profile: StratificationProfile,
    a_threshold: float,
    d_threshold: float,
    tol: float = 1e-11,
) -> StabilityReport:
    """Rayleigh-Taylor-type functional T(f) = gamma(f) - G[f]Gamma(f)."""
    xg = fmap.grid.x_grid
    Gamma_f = SurfaceField(xg, np.asarray(profile.Gamma(f.values), dtype=float))
    dn = solver_for(fmap, tol).solve_phi1(Gamma_f).dn
    taylor = np.asarray(profile.gamma(f.values), dtype=float) - dn
    taylor_min = float(taylor.min())
    if isinstance(fmap.depth, FiniteDepth):
        sep = f.values - fmap.depth.bottom_values(xg)
        separation_min = float(sep.min())
        ok = taylor_min >= a_threshold and separation_min >= d_threshold
    else:
        separation_min = float("inf")
        ok = taylor_min >= a_threshold
    return StabilityReport(
        taylor=SurfaceField(xg, taylor),
        taylor_min=taylor_min,
        separation_min=separation_min,
        a_threshold=float(a_threshold),
        d_threshold=float(d_threshold),
        ok=bool(ok),
    )


def strip_sobolev_norm(g_strip: StripField, s: float) -> float:
    """Anisotropic H^s_x (x) L^2_z surrogate norm on the strip.

    The x-direction carries the full inhomogeneous Sobolev weight; the
    z-direction is plain quadrature.  This is the norm used for diagnostics
    and contraction measurements.
    """
    grid = g_strip.grid
    xg = grid.x_grid
    gh = np.fft.rfft(g_strip.values, axis=0) / xg.n
    w = np.full(xg.n // 2 + 1, 2.0)
    w[0] = 1.0
    w[-1] = 1.0
    weight = (1.0 + xg.k_half**2) ** s * w
    per_mode = np.sum(np.abs(gh) ** 2 * grid.wz[None, :], axis=1)
    return float(np.sqrt(xg.length * np.sum(weight * per_mode)))


def conserved_quantities(
    fmap: FlatteningMap,
    f: SurfaceField,
    g_strip: StripField,
    profile: StratificationProfile,
    s_index: float = 2.6,
) -> dict:
    """Diagnostics that the continuum dynamics conserves.

    ``total_density`` is the Jacobian-weighted integral of the full density
    over the strip, i.e. the mass of the fluid region.
    """
    gamma_rho = np.asarray(profile.gamma(fmap.rho), dtype=float)
    density = (gamma_rho + g_strip.values) * fmap.drho_dz
    total = fmap.grid.integrate(density)
    return {
        "mean_f": f.mean(),
        "total_density": total,
        "sobolev_norms": {
            "f": sobolev_norm(f, s_index),
            "g": strip_sobolev_norm(g_strip, s_index),
        },
    }
