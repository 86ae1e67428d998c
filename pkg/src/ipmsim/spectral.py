"""Periodic Fourier collocation toolkit for surface fields.

Everything here is 1-D in the horizontal direction (the shipped solver has
d = 1); the interfaces carry no hidden assumptions that would block a later
d > 1 extension, but the kernels are 1-D.

Conventions (fixed once, used everywhere):

* Collocation points ``x_i = i * L / n`` on the periodic interval ``[0, L)``.
* Fourier coefficients are true series coefficients,
  ``u(x) = sum_k  u_hat_k exp(i k x)`` with ``u_hat = rfft(values) / n``,
  so a pure cosine ``cos(k x)`` has ``u_hat_k = 1/2``.
* The L2 norm is the trapezoid quadrature ``sqrt(dx * sum u_i^2)``; by
  Parseval it equals ``sqrt(L * sum_k' |u_hat_k|^2)`` where the primed sum
  counts every nonzero, non-Nyquist mode twice.
* Sobolev norms use the inhomogeneous weight ``(1 + k^2)^s``:
  ``||u||_{H^s}^2 = L * sum_k' (1 + k^2)^s |u_hat_k|^2``.
* The Nyquist mode is zeroed by every odd (derivative-like) multiplier so
  outputs stay real.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "FourierGrid",
    "SurfaceField",
    "SobolevIndex",
    "make_grid",
    "apply_multiplier",
    "sobolev_norm",
    "smoothing_layer",
    "dealias",
    "x_derivative",
    "deriv_x_values",
    "dealias_values",
]


class SpectralError(ValueError):
    """Invalid grid or field data."""


@dataclass(frozen=True)
class SobolevIndex:
    """A non-negative Sobolev regularity exponent."""

    s: float

    def __post_init__(self):
        if not np.isfinite(self.s) or self.s < 0:
            raise SpectralError(f"Sobolev index must be finite and >= 0, got {self.s}")

    def __float__(self):
        return float(self.s)


class FourierGrid:
    """Uniform periodic collocation grid on ``[0, L)``.

    Attributes
    ----------
    n : int
        Number of collocation points / modes (even, >= 4).
    length : float
        Period ``L``.
    x : ndarray
        Collocation points.
    wavenumbers : ndarray
        All wavenumbers ``2*pi*j/L`` for ``j = 0..n/2-1, -n/2..-1`` in FFT
        layout.
    k_half : ndarray
        Non-negative wavenumbers in rfft layout (length ``n//2 + 1``).
    """

    def __init__(self, n: int, length: float):
        if n % 2 != 0 or n < 4:
            raise SpectralError(f"n_modes must be even and >= 4, got {n}")
        if not (np.isfinite(length) and length > 0):
            raise SpectralError(f"period_length must be positive, got {length}")
        self.n = int(n)
        self.length = float(length)
        self.dx = self.length / self.n
        self.x = np.arange(self.n) * self.dx
        base = 2.0 * np.pi / self.length
        self.wavenumbers = base * np.fft.fftfreq(self.n, d=1.0 / self.n)
        self.k_half = base * np.arange(self.n // 2 + 1)

    def __eq__(self, other):
        return (
            isinstance(other, FourierGrid)
            and other.n == self.n
            and other.length == self.length
        )

    def __hash__(self):
        return hash((self.n, self.length))

    def __repr__(self):
        return f"FourierGrid(n={self.n}, length={self.length:g})"


def make_grid(n_modes: int, period_length: float) -> FourierGrid:
    """Build a periodic Fourier grid; rejects odd/tiny mode counts."""
    return FourierGrid(n_modes, period_length)


class SurfaceField:
    """Real periodic scalar field stored at collocation points.

    The Fourier coefficients (rfft layout, series normalization) are computed
    lazily and cached; instances are treated as immutable.
    """

    __slots__ = ("grid", "values", "_coeffs")

    def __init__(self, grid: FourierGrid, values):
        values = np.asarray(values, dtype=float)
        if values.shape != (grid.n,):
            raise SpectralError(
                f"values shape {values.shape} does not match grid n={grid.n}"
            )
        if not np.all(np.isfinite(values)):
            raise SpectralError("field values contain NaN/inf")
        self.grid = grid
        self.values = values
        self._coeffs = None

    @classmethod
    def from_coeffs(cls, grid: FourierGrid, coeffs) -> "SurfaceField":
        coeffs = np.asarray(coeffs, dtype=complex)
        if coeffs.shape != (grid.n // 2 + 1,):
            raise SpectralError("coefficient array has wrong length")
        values = np.fft.irfft(coeffs * grid.n, n=grid.n)
        field = cls(grid, values)
        field._coeffs = coeffs.copy()
        return field

    @classmethod
    def zeros(cls, grid: FourierGrid) -> "SurfaceField":
        return cls(grid, np.zeros(grid.n))

    @classmethod
    def constant(cls, grid: FourierGrid, c: float) -> "SurfaceField":
        return cls(grid, np.full(grid.n, float(c)))

    @property
    def coeffs(self) -> np.ndarray:
        """Fourier series coefficients on the non-negative modes."""
        if self._coeffs is None:
            self._coeffs = np.fft.rfft(self.values) / self.grid.n
        return self._coeffs

    def mean(self) -> float:
        return float(self.values.mean())

    # small arithmetic surface so steppers read naturally
    def __add__(self, other):
        if isinstance(other, SurfaceField):
            return SurfaceField(self.grid, self.values + other.values)
        return SurfaceField(self.grid, self.values + other)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, SurfaceField):
            return SurfaceField(self.grid, self.values - other.values)
        return SurfaceField(self.grid, self.values - other)

    def __mul__(self, c):
        return SurfaceField(self.grid, self.values * float(c))

    __rmul__ = __mul__

    def __neg__(self):
        return SurfaceField(self.grid, -self.values)

    def __repr__(self):
        return f"SurfaceField(n={self.grid.n}, max|u|={np.abs(self.values).max():.3g})"


def _mode_weights(grid: FourierGrid) -> np.ndarray:
    """Parseval multiplicity of each rfft mode (2 except k=0 and Nyquist)."""
    w = np.full(grid.n // 2 + 1, 2.0)
    w[0] = 1.0
    w[-1] = 1.0
    return w


def apply_multiplier(u: SurfaceField, m) -> SurfaceField:
    """Apply a Fourier multiplier ``m(k)`` mode-wise.

    ``m`` is a callable evaluated on the non-negative wavenumbers; reality of
    the output is preserved when the full symbol satisfies
    ``m(-k) = conj(m(k))``, which holds automatically for any symbol given on
    ``k >= 0`` through the rfft representation.
    """
    sym = np.asarray(m(u.grid.k_half), dtype=complex)
    if sym.shape != u.grid.k_half.shape:
        raise SpectralError("multiplier must evaluate elementwise on wavenumbers")
    if not np.all(np.isfinite(sym.view(float))):
        raise SpectralError("multiplier produced NaN/inf")
    return SurfaceField.from_coeffs(u.grid, u.coeffs * sym)


def sobolev_norm(u: SurfaceField, s) -> float:
    """Discrete inhomogeneous H^s norm (see module docstring for scaling)."""
    s = float(s)
    if s < 0:
        raise SpectralError("negative Sobolev index not supported")
    k = u.grid.k_half
    w = _mode_weights(u.grid)
    total = u.grid.length * np.sum(w * (1.0 + k * k) ** s * np.abs(u.coeffs) ** 2)
    return float(np.sqrt(total))


def smoothing_layer(h: SurfaceField, delta: float, z: float) -> SurfaceField:
    """Apply the Poisson-type smoothing multiplier ``exp(delta*z*sqrt(1+k^2))``.

    Requires ``delta >= 0`` and ``z <= 0`` (positive z would amplify modes).
    """
    if delta < 0:
        raise SpectralError(f"delta must be >= 0, got {delta}")
    if z > 0:
        raise SpectralError(f"smoothing layer needs z <= 0, got {z}")
    kappa = np.sqrt(1.0 + h.grid.k_half**2)
    return SurfaceField.from_coeffs(h.grid, h.coeffs * np.exp(delta * z * kappa))


def dealias(u: SurfaceField) -> SurfaceField:
    """2/3-rule truncation: zero all modes with index ``|j| > n/3``."""
    return SurfaceField(u.grid, dealias_values(u.values, u.grid))


def x_derivative(u: SurfaceField, order: int = 1) -> SurfaceField:
    """Spectral x-derivative; the Nyquist mode is zeroed for odd orders."""
    coeffs = u.coeffs * (1j * u.grid.k_half) ** order
    if order % 2 == 1:
        coeffs = coeffs.copy()
        coeffs[-1] = 0.0
    return SurfaceField.from_coeffs(u.grid, coeffs)


# ---------------------------------------------------------------------------
# Array-level helpers shared with strip fields (x along axis 0).


def deriv_x_values(a: np.ndarray, grid: FourierGrid, order: int = 1) -> np.ndarray:
    """Spectral x-derivative of an array with x along axis 0."""
    ah = np.fft.rfft(a, axis=0)
    shape = (-1,) + (1,) * (a.ndim - 1)
    ah *= (1j * grid.k_half.reshape(shape)) ** order
    if order % 2 == 1:
        ah[-1] = 0.0
    return np.fft.irfft(ah, n=grid.n, axis=0)


def dealias_values(a: np.ndarray, grid: FourierGrid) -> np.ndarray:
    """2/3-rule truncation along axis 0."""
    ah = np.fft.rfft(a, axis=0)
    j = np.arange(grid.n // 2 + 1)
    mask = j > grid.n / 3.0
    ah[mask] = 0.0
    return np.fft.irfft(ah, n=grid.n, axis=0)
