"""Flattening of the fluid domain onto the reference strip.

The moving domain under the graph ``y = f(x)`` is pulled back to the strip
``[0, L) x [z_bot, 0]`` by ``(x, z) -> (x, rho(x, z))`` where

* infinite depth:  ``rho = z + E(dz) f``
* finite depth:    ``rho = (z+1) E(dz) f - z E(-d(z+1)) b0 + z H``

with ``E(a) = exp(a <D_x>)`` the Poisson-type smoothing layer and ``d``
(``delta``) a small positive constant keeping ``d rho / d z`` bounded away
from zero.  The z-dependence is explicit, so all z-derivatives of ``rho``
are analytic; x-derivatives are spectral.

The infinite-depth strip is truncated at ``z = -Z_max``; harmonic extensions
decay like ``exp(delta * z * <k>)`` so the truncation error is exponentially
small and is monitored by a tail-convergence check rather than hidden.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .spectral import FourierGrid, SurfaceField
from .strip import StripField, StripGrid

__all__ = [
    "InfiniteDepth",
    "FiniteDepth",
    "DepthMode",
    "FlatteningMap",
    "EllipticCoeffs",
    "select_delta",
    "build_map",
    "build_coeffs",
    "pushforward_sample",
]


class FlatteningError(RuntimeError):
    pass


@dataclass(frozen=True)
class InfiniteDepth:
    """Unbounded fluid below, truncated at z = -z_max for the solver."""

    z_max: float = 8.0

    def __post_init__(self):
        if not (np.isfinite(self.z_max) and self.z_max > 0):
            raise ValueError(f"z_max must be positive, got {self.z_max}")

    @property
    def z_bot(self):
        return -self.z_max


@dataclass(frozen=True)
class FiniteDepth:
    """Rigid bottom ``b(x) = -H + b0(x)``; the strip is always [-1, 0]."""

    H: float
    b0: Optional[SurfaceField] = None

    def __post_init__(self):
        if not (np.isfinite(self.H) and self.H > 0):
            raise ValueError(f"depth H must be positive, got {self.H}")

    @property
    def z_bot(self):
        return -1.0

    def bottom_values(self, grid: FourierGrid) -> np.ndarray:
        b0 = np.zeros(grid.n) if self.b0 is None else self.b0.values
        return -self.H + b0


DepthMode = Union[InfiniteDepth, FiniteDepth]


def jac_target(depth: DepthMode, d_frak: Optional[float] = None) -> float:
    """Theoretical Jacobian floor: 1/2 (infinite) or d/2 (finite)."""
    if isinstance(depth, InfiniteDepth):
        return 0.5
    if d_frak is None:
        raise ValueError("finite depth jac target needs the separation bound")
    return 0.5 * d_frak


class FlatteningMap:
    """The map rho and its derivatives sampled on a strip grid.

    All arrays have shape (n_x, n_z).  ``drho_dz`` comes from the exact
    analytic z-formula, never from numerical z-differencing.
    """

    __slots__ = (
        "grid",
        "depth",
        "delta",
        "f",
        "rho",
        "drho_dz",
        "grad_x_rho",
        "d2rho_dz2",
        "d2rho_dxdz",
        "d2rho_dx2",
        "jac_min",
        "_solver",
    )

    def __init__(self, grid, depth, delta, f, fields):
        self.grid = grid
        self.depth = depth
        self.delta = float(delta)
        self.f = f
        (
            self.rho,
            self.drho_dz,
            self.grad_x_rho,
            self.d2rho_dz2,
            self.d2rho_dxdz,
            self.d2rho_dx2,
        ) = fields
        self.jac_min = float(self.drho_dz.min())
        self._solver = None

    def rho_t(self, df_dt: SurfaceField) -> np.ndarray:
        """d rho / d t given d f / d t (rho depends on f linearly)."""
        return rho_time_derivative(self.grid, self.depth, self.delta, df_dt.values)

    def surface_values(self) -> np.ndarray:
        return self.rho[:, -1]

    def bottom_values(self) -> np.ndarray:
        return self.rho[:, 0]

    def __repr__(self):
        kind = "infinite" if isinstance(self.depth, InfiniteDepth) else "finite"
        return (
            f"FlatteningMap({kind}, delta={self.delta:.4g}, "
            f"jac_min={self.jac_min:.4g})"
        )


@dataclass
class EllipticCoeffs:
    """Coefficients of the flattened elliptic operator.

    ``a11, a12, a22`` are the entries of the symmetric matrix A with
    ``div(A grad v)`` the divergence form; ``alpha, beta, gamma_c`` are the
    expanded-form coefficients.  All shapes (n_x, n_z).
    """

    a11: np.ndarray
    a12: np.ndarray
    a22: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    gamma_c: np.ndarray

    def a_matrix(self) -> np.ndarray:
        """Per-node 2x2 symmetric matrix, shape (n_x, n_z, 2, 2)."""
        out = np.empty(self.a11.shape + (2, 2))
        out[..., 0, 0] = self.a11
        out[..., 0, 1] = self.a12
        out[..., 1, 0] = self.a12
        out[..., 1, 1] = self.a22
        return out


def _layer_field(grid: StripGrid, delta: float, fvals: np.ndarray, deriv: int,
                 reflect: bool = False) -> np.ndarray:
    """Evaluate ``E(delta * z) <D>^deriv f`` on the strip (or the finite-depth
    mirrored layer ``E(-delta*(z+1)) <D>^deriv f`` when ``reflect``)."""
    xg = grid.x_grid
    fh = np.fft.rfft(fvals) / xg.n
    kappa = np.sqrt(1.0 + xg.k_half**2)
    z = grid.z_nodes
    expo = -delta * (z + 1.0)[None, :] if reflect else delta * z[None, :]
    M = np.exp(np.outer(kappa, np.ones_like(z)) * expo) * (kappa**deriv)[:, None]
    return np.fft.irfft(M * fh[:, None] * xg.n, n=xg.n, axis=0)


def _layer_dx(grid: StripGrid, delta: float, fvals: np.ndarray, deriv_x: int,
              reflect: bool = False) -> np.ndarray:
    """Same layer applied to the spectral x-derivative of f (Nyquist zeroed)."""
    xg = grid.x_grid
    fh = np.fft.rfft(fvals) / xg.n
    fh = fh * (1j * xg.k_half) ** deriv_x
    if deriv_x % 2 == 1:
        fh[-1] = 0.0
    kappa = np.sqrt(1.0 + xg.k_half**2)
    z = grid.z_nodes
    expo = -delta * (z + 1.0)[None, :] if reflect else delta * z[None, :]
    M = np.exp(np.outer(kappa, np.ones_like(z)) * expo)
    return np.fft.irfft(M * fh[:, None] * xg.n, n=xg.n, axis=0)


def _map_fields(grid: StripGrid, depth: DepthMode, delta: float, f: SurfaceField):
    z = grid.z_nodes[None, :]
    fv = f.values
    if isinstance(depth, InfiniteDepth):
        Ef = _layer_field(grid, delta, fv, 0)
        EDf = _layer_field(grid, delta, fv, 1)
        ED2f = _layer_field(grid, delta, fv, 2)
        rho = z + Ef
        drz = 1.0 + delta * EDf
        d2z = delta * delta * ED2f
        drx = _layer_dx(grid, delta, fv, 1)
        dxz = delta * _mixed_layer(grid, delta, fv)
        dxx = _layer_dx(grid, delta, fv, 2)
        return rho, drz, drx, d2z, dxz, dxx

    b0 = np.zeros(grid.x_grid.n) if depth.b0 is None else depth.b0.values
    H = depth.H
    Ef = _layer_field(grid, delta, fv, 0)
    EDf = _layer_field(grid, delta, fv, 1)
    ED2f = _layer_field(grid, delta, fv, 2)
    Bb = _layer_field(grid, delta, b0, 0, reflect=True)
    BDb = _layer_field(grid, delta, b0, 1, reflect=True)
    BD2b = _layer_field(grid, delta, b0, 2, reflect=True)
    zp1 = z + 1.0
    rho = zp1 * Ef - z * Bb + z * H
    drz = Ef + delta * zp1 * EDf - Bb + delta * z * BDb + H
    d2z = (
        2.0 * delta * EDf
        + delta**2 * zp1 * ED2f
        + 2.0 * delta * BDb
        - delta**2 * z * BD2b
    )
    Efx = _layer_dx(grid, delta, fv, 1)
    Bbx = _layer_dx(grid, delta, b0, 1, reflect=True)
    drx = zp1 * Efx - z * Bbx
    EDfx = _mixed_layer(grid, delta, fv)
    BDbx = _mixed_layer(grid, delta, b0, reflect=True)
    dxz = Efx + delta * zp1 * EDfx - Bbx + delta * z * BDbx
    dxx = zp1 * _layer_dx(grid, delta, fv, 2) - z * _layer_dx(
        grid, delta, b0, 2, reflect=True
    )
    return rho, drz, drx, d2z, dxz, dxx


def rho_time_derivative(grid: StripGrid, depth: DepthMode, delta: float,
                        df_dt_values: np.ndarray) -> np.ndarray:
    """Smoothing-layer action of the surface velocity on the flattening.

    rho is linear in f, so d rho/dt is the layer applied to d f/dt (with the
    finite-depth (z+1) prefactor); the static bottom never contributes.
    """
    layer = _layer_field(grid, delta, np.asarray(df_dt_values, dtype=float), 0)
    if isinstance(depth, InfiniteDepth):
        return layer
    return layer * (grid.z_nodes + 1.0)[None, :]


def _mixed_layer(grid: StripGrid, delta: float, fvals: np.ndarray,
                 reflect: bool = False) -> np.ndarray:
    """``E(.) <D> d/dx f`` for the mixed second derivative of rho."""
    xg = grid.x_grid
    fh = np.fft.rfft(fvals) / xg.n
    fh = fh * (1j * xg.k_half)
    fh[-1] = 0.0
    kappa = np.sqrt(1.0 + xg.k_half**2)
    z = grid.z_nodes
    expo = -delta * (z + 1.0)[None, :] if reflect else delta * z[None, :]
    M = np.exp(np.outer(kappa, np.ones_like(z)) * expo) * kappa[:, None]
    return np.fft.irfft(M * fh[:, None] * xg.n, n=xg.n, axis=0)


def build_map(
    f: SurfaceField,
    depth: DepthMode,
    delta: float,
    grid: StripGrid,
    jac_floor: Optional[float] = None,
) -> FlatteningMap:
    """Construct the flattening map; fails if min d rho/dz drops below floor."""
    if f.grid != grid.x_grid:
        raise FlatteningError("surface field and strip grid disagree in x")
    if abs(grid.z_bot - depth.z_bot) > 1e-12:
        raise FlatteningError(
            f"strip z_bot={grid.z_bot} does not match depth mode ({depth.z_bot})"
        )
    if delta <= 0:
        raise FlatteningError(f"delta must be positive, got {delta}")
    fields = _map_fields(grid, depth, delta, f)
    m = FlatteningMap(grid, depth, delta, f, fields)
    floor = 0.0 if jac_floor is None else jac_floor
    if m.jac_min <= floor:
        i, j = np.unravel_index(np.argmin(m.drho_dz), m.drho_dz.shape)
        raise FlatteningError(
            f"Jacobian d rho/dz = {m.jac_min:.4g} <= floor {floor:.4g} at "
            f"(x, z) = ({grid.x_grid.x[i]:.4g}, {grid.z_nodes[j]:.4g}); "
            "surface too steep or too close to the bottom"
        )
    return m


def select_delta(
    f: SurfaceField,
    depth: DepthMode,
    grid: StripGrid,
    safety: float = 0.9,
    d_frak: Optional[float] = None,
    n_search: int = 40,
    delta_max: Optional[float] = None,
) -> float:
    """Largest admissible delta on a geometric search grid.

    Admissibility is verified directly: the analytic d rho/dz is evaluated on
    the strip grid and its minimum must stay above ``safety`` times the
    theoretical floor (1/2 for infinite depth, separation/2 for finite
    depth).  Finite depth requires the initial separation to exceed the
    separation bound.
    """
    if not 0 < safety < 1:
        raise ValueError("safety must lie in (0, 1)")
    if isinstance(depth, FiniteDepth):
        sep = f.values - depth.bottom_values(f.grid)
        sep_min = float(sep.min())
        if d_frak is None:
            d_frak = sep_min
        if sep_min < d_frak or sep_min <= 0:
            raise FlatteningError(
                f"surface-bottom separation {sep_min:.4g} below bound {d_frak:.4g}"
            )
        cap = min(1.0, d_frak) if delta_max is None else delta_max
    else:
        cap = 1.0 if delta_max is None else delta_max
    target = safety * jac_target(depth, d_frak)
    deltas = cap * (0.82 ** np.arange(n_search))
    worst = None
    for delta in deltas:
        fields = _map_fields(grid, depth, delta, f)
        jac = fields[1]
        jmin = float(jac.min())
        if jmin >= target:
            return float(delta)
        if worst is None:
            i, j = np.unravel_index(np.argmin(jac), jac.shape)
            worst = (jmin, grid.x_grid.x[i], grid.z_nodes[j])
    raise FlatteningError(
        f"no admissible delta in ({deltas[-1]:.3g}, {cap:.3g}]: "
        f"min d rho/dz = {worst[0]:.4g} at (x, z) = ({worst[1]:.4g}, {worst[2]:.4g})"
    )


def build_coeffs(m: FlatteningMap) -> EllipticCoeffs:
    """Divergence-form and expanded-form coefficients of the flattened operator.

    a11 = drho_dz, a12 = -grad_x_rho, a22 = (1 + grad_x_rho^2)/drho_dz;
    alpha = drho_dz^2 / (1 + grad_x_rho^2), beta = -2 drho_dz grad_x_rho /
    (1 + grad_x_rho^2), gamma_c = (d2z + alpha*dxx + beta*dxz) / drho_dz.
    """
    drz, drx = m.drho_dz, m.grad_x_rho
    denom = 1.0 + drx**2
    a11 = drz
    a12 = -drx
    a22 = denom / drz
    alpha = drz**2 / denom
    beta = -2.0 * drz * drx / denom
    gamma_c = (m.d2rho_dz2 + alpha * m.d2rho_dx2 + beta * m.d2rho_dxdz) / drz
    return EllipticCoeffs(a11=a11, a12=a12, a22=a22, alpha=alpha, beta=beta,
                          gamma_c=gamma_c)


def pushforward_sample(m: FlatteningMap, g_strip: StripField, points) -> np.ndarray:
    """Sample ``g o F^{-1}`` at physical points inside the fluid domain.

    For each (x, y): evaluate the columns rho(x, .) and g(x, .) at the query
    x by trigonometric interpolation, invert the monotone profile rho(x, .)
    linearly in z, and read g at the root.  Points outside the domain raise.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[1] != 2:
        raise ValueError("query points must be (x, y) pairs")
    xg = m.grid.x_grid
    out = np.empty(len(pts))
    rho_h = np.fft.rfft(m.rho, axis=0) / xg.n
    g_h = np.fft.rfft(g_strip.values, axis=0) / xg.n
    weights = np.full(xg.n // 2 + 1, 2.0)
    weights[0] = 1.0
    if xg.n % 2 == 0:
        weights[-1] = 1.0
    for idx, (x, y) in enumerate(pts):
        phase = np.exp(1j * xg.k_half * x) * weights
        rho_col = np.real(phase @ rho_h)
        g_col = np.real(phase @ g_h)
        if y > rho_col[-1] + 1e-12 or y < rho_col[0] - 1e-12:
            raise FlatteningError(
                f"point (x={x:.4g}, y={y:.4g}) outside the fluid domain "
                f"[{rho_col[0]:.4g}, {rho_col[-1]:.4g}]"
            )
        z_star = np.interp(y, rho_col, m.grid.z_nodes)
        out[idx] = np.interp(z_star, m.grid.z_nodes, g_col)
    return out
