"""Background stratification profiles gamma(y).

A profile bundles the density law ``gamma``, its derivative, and the
antiderivative ``Gamma`` normalized by ``Gamma(0) = 0``.  Built-in kinds:

* ``constant``  gamma = c
* ``affine``    gamma = c0 + c1*y
* ``tanh``      gamma = a + b*tanh(y/ell)
* ``user``      caller supplies all three callables

Profiles are only ever evaluated on the realized height range of the fluid
domain, so no global growth conditions are imposed beyond finiteness.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "StratificationProfile",
    "constant_profile",
    "affine_profile",
    "tanh_profile",
    "user_profile",
    "eval_profile",
    "check_class_G",
    "ClassGReport",
]


class ProfileError(ValueError):
    pass


@dataclass(frozen=True)
class StratificationProfile:
    kind: str
    gamma: Callable
    gamma_prime: Callable
    Gamma: Callable
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        g0 = float(self.Gamma(0.0))
        if abs(g0) > 1e-14:
            raise ProfileError(f"Gamma(0) must vanish, got {g0}")


def constant_profile(c: float) -> StratificationProfile:
    c = float(c)
    return StratificationProfile(
        kind="constant",
        gamma=lambda y: np.full_like(np.asarray(y, dtype=float), c),
        gamma_prime=lambda y: np.zeros_like(np.asarray(y, dtype=float)),
        Gamma=lambda y: c * np.asarray(y, dtype=float),
        params={"c": c},
    )


def affine_profile(c0: float, c1: float) -> StratificationProfile:
    c0, c1 = float(c0), float(c1)
    return StratificationProfile(
        kind="affine",
        gamma=lambda y: c0 + c1 * np.asarray(y, dtype=float),
        gamma_prime=lambda y: np.full_like(np.asarray(y, dtype=float), c1),
        Gamma=lambda y: c0 * np.asarray(y, dtype=float)
        + 0.5 * c1 * np.asarray(y, dtype=float) ** 2,
        params={"c0": c0, "c1": c1},
    )


def tanh_profile(a: float, b: float, ell: float = 1.0) -> StratificationProfile:
    """gamma = a + b*tanh(y/ell); Gamma = a*y + b*ell*log(cosh(y/ell))."""
    a, b, ell = float(a), float(b), float(ell)
    if ell <= 0:
        raise ProfileError("tanh length scale must be positive")

    def gamma(y):
        return a + b * np.tanh(np.asarray(y, dtype=float) / ell)

    def gamma_prime(y):
        return (b / ell) / np.cosh(np.asarray(y, dtype=float) / ell) ** 2

    def Gamma(y):
        y = np.asarray(y, dtype=float)
        # log(cosh) computed stably for large |y|
        t = np.abs(y) / ell
        logcosh = t + np.log1p(np.exp(-2.0 * t)) - np.log(2.0)
        return a * y + b * ell * logcosh

    return StratificationProfile(
        kind="tanh", gamma=gamma, gamma_prime=gamma_prime, Gamma=Gamma,
        params={"a": a, "b": b, "ell": ell},
    )


def user_profile(gamma, gamma_prime, Gamma, check: bool = True) -> StratificationProfile:
    """Wrap user callables; optionally spot-check consistency by differences."""
    p = StratificationProfile(
        kind="user", gamma=gamma, gamma_prime=gamma_prime, Gamma=Gamma
    )
    if check:
        y = np.linspace(-2.0, 2.0, 9)
        h = 1e-5
        dG = (np.asarray(Gamma(y + h)) - np.asarray(Gamma(y - h))) / (2 * h)
        if np.max(np.abs(dG - np.asarray(gamma(y)))) > 1e-6 * (
            1 + np.max(np.abs(np.asarray(gamma(y))))
        ):
            raise ProfileError("Gamma' does not match gamma on the test sample")
        dg = (np.asarray(gamma(y + h)) - np.asarray(gamma(y - h))) / (2 * h)
        if np.max(np.abs(dg - np.asarray(gamma_prime(y)))) > 1e-6 * (
            1 + np.max(np.abs(dg))
        ):
            raise ProfileError("gamma' callable does not match gamma on the sample")
    return p


def eval_profile(p: StratificationProfile, y):
    """Evaluate (gamma, gamma', Gamma) elementwise; rejects non-finite output."""
    y = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y)):
        raise ProfileError("profile evaluated at non-finite heights")
    g = np.asarray(p.gamma(y), dtype=float)
    gp = np.asarray(p.gamma_prime(y), dtype=float)
    G = np.asarray(p.Gamma(y), dtype=float)
    for name, arr in (("gamma", g), ("gamma_prime", gp), ("Gamma", G)):
        if not np.all(np.isfinite(arr)):
            raise ProfileError(f"{name} produced NaN/inf")
    return g, gp, G


@dataclass(frozen=True)
class ClassGReport:
    """Boundedness scan of profile derivatives up to a given order."""

    order: int
    y_range: tuple
    derivative_max: tuple  # max |gamma^(j)|, j = 0..order
    bound: float
    passed: bool


def check_class_G(
    p: StratificationProfile,
    order: int,
    y_range=(-4.0, 4.0),
    n_samples: int = 4001,
    bound: float = 1e6,
) -> ClassGReport:
    """Scan max |gamma^(j)| for j <= order on a sampled interval.

    This is the numerical surrogate for the smooth-class membership
    condition: bounded derivatives of gamma' up to the needed order.  The
    class constant itself is not quantified, so the check is a qualitative
    pass/fail against a configurable bound.
    """
    if order < 1:
        raise ProfileError("order must be >= 1")
    y = np.linspace(y_range[0], y_range[1], n_samples)
    g = np.asarray(p.gamma(y), dtype=float)
    maxima = [float(np.max(np.abs(g)))]
    d = g
    for j in range(1, order + 1):
        d = np.gradient(d, y)
        # trim edges polluted by one-sided stencils
        trim = 3 * j
        core = d[trim:-trim] if trim * 2 < len(d) else d
        m = float(np.max(np.abs(core)))
        # iterated np.gradient noise floor: snap tiny values to zero
        if m < 1e-8 * max(1.0, maxima[0]):
            m = 0.0
        maxima.append(m)
    passed = all(m <= bound for m in maxima)
    return ClassGReport(
        order=order,
        y_range=(float(y_range[0]), float(y_range[1])),
        derivative_max=tuple(maxima),
        bound=float(bound),
        passed=passed,
    )
