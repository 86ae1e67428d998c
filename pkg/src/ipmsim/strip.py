"""The reference strip grid: Fourier in x, Chebyshev-Lobatto in z.

The vertical direction carries a boundary-value problem (surface Dirichlet,
bottom Neumann), so it is discretized by Chebyshev-Lobatto collocation with
Clenshaw-Curtis quadrature.  The nodes are cosine-clustered at both ends of
``[z_bot, 0]``, which also resolves the exponential boundary layers of the
harmonic extensions near the surface.  All z-differentiation in the package
goes through the dense differentiation matrix stored here.
"""

from __future__ import annotations

import numpy as np

from .spectral import FourierGrid

__all__ = ["StripGrid", "StripField", "make_strip_grid"]


class StripGridError(ValueError):
    pass


def _lobatto_nodes(n: int):
    """Chebyshev-Gauss-Lobatto nodes on [-1, 1], increasing."""
    return -np.cos(np.pi * np.arange(n) / (n - 1))


def _cheb_diff_matrix(t: np.ndarray) -> np.ndarray:
    """Differentiation matrix on Lobatto nodes, diagonal via negative-sum trick
    so that constants are annihilated exactly."""
    n = len(t)
    c = np.ones(n)
    c[0] = c[-1] = 2.0
    c = c * (-1.0) ** np.arange(n)
    dt = t[:, None] - t[None, :]
    D = (c[:, None] / c[None, :]) / (dt + np.eye(n))
    D -= np.diag(D.sum(axis=1))
    return D


def _clenshaw_curtis_weights(n: int) -> np.ndarray:
    """Quadrature weights on n Lobatto nodes of [-1, 1] (all positive)."""
    N = n - 1
    theta = np.pi * np.arange(n) / N
    v = np.ones(N - 1)
    for k in range(1, N // 2 + 1):
        factor = 2.0 if 2 * k != N else 1.0
        v -= factor * np.cos(2 * k * theta[1:-1]) / (4 * k * k - 1)
    w = np.zeros(n)
    w[1:-1] = 2.0 * v / N
    w[0] = w[-1] = 1.0 / (N * N - 1 + (N % 2))
    return w


class StripGrid:
    """Tensor grid on ``[0, L) x [z_bot, 0]``.

    Attributes
    ----------
    x_grid : FourierGrid
    z_nodes : ndarray
        Strictly increasing, ``z_nodes[0] = z_bot < 0``, ``z_nodes[-1] = 0``.
    Dz : ndarray
        Dense z-differentiation matrix (row i: derivative at node i).
    wz : ndarray
        z-quadrature weights (positive, sum to ``-z_bot``).
    """

    def __init__(self, x_grid: FourierGrid, n_z: int, z_bot: float):
        if n_z < 8:
            raise StripGridError(f"n_z must be >= 8, got {n_z}")
        if not (np.isfinite(z_bot) and z_bot < 0):
            raise StripGridError(f"z_bot must be negative, got {z_bot}")
        self.x_grid = x_grid
        self.n_z = int(n_z)
        self.z_bot = float(z_bot)
        span = -self.z_bot
        t = _lobatto_nodes(self.n_z)
        self.z_nodes = self.z_bot + (t + 1.0) * span / 2.0
        self.z_nodes[0] = self.z_bot
        self.z_nodes[-1] = 0.0
        self.Dz = _cheb_diff_matrix(t) * (2.0 / span)
        self.wz = _clenshaw_curtis_weights(self.n_z) * (span / 2.0)
        self._cache = {}

    @property
    def shape(self):
        return (self.x_grid.n, self.n_z)

    def dz(self, values: np.ndarray) -> np.ndarray:
        """z-derivative of a (n_x, n_z) array."""
        return values @ self.Dz.T

    def integrate(self, values: np.ndarray) -> float:
        """Quadrature of a (n_x, n_z) array over the strip."""
        return float(self.x_grid.dx * np.sum(values @ self.wz))

    def compatible(self, other: "StripGrid") -> bool:
        return (
            self.x_grid == other.x_grid
            and self.n_z == other.n_z
            and self.z_bot == other.z_bot
        )

    def __repr__(self):
        return (
            f"StripGrid(n_x={self.x_grid.n}, n_z={self.n_z}, "
            f"z_bot={self.z_bot:g}, L={self.x_grid.length:g})"
        )


def make_strip_grid(x_grid: FourierGrid, n_z: int, z_bot: float) -> StripGrid:
    return StripGrid(x_grid, n_z, z_bot)


class StripField:
    """Real scalar field on a strip grid, stored as a (n_x, n_z) array."""

    __slots__ = ("grid", "values")

    def __init__(self, grid: StripGrid, values):
        values = np.asarray(values, dtype=float)
        if values.shape != grid.shape:
            raise StripGridError(
                f"values shape {values.shape} != grid shape {grid.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise StripGridError("strip field contains NaN/inf")
        self.grid = grid
        self.values = values

    @classmethod
    def zeros(cls, grid: StripGrid) -> "StripField":
        return cls(grid, np.zeros(grid.shape))

    def top_row(self) -> np.ndarray:
        """Trace at z = 0."""
        return self.values[:, -1]

    def bottom_row(self) -> np.ndarray:
        return self.values[:, 0]

    def max_abs(self) -> float:
        return float(np.abs(self.values).max())

    def __repr__(self):
        return f"StripField({self.grid.shape}, max|g|={self.max_abs():.3g})"
