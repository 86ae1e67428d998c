"""Tests for stratification profiles."""

import numpy as np
import pytest

from ipmsim.profiles import (
    ProfileError,
    affine_profile,
    check_class_G,
    constant_profile,
    eval_profile,
    tanh_profile,
    user_profile,
)

Y = np.linspace(-3.0, 1.5, 41)


class TestBuiltins:
    def test_constant(self):
        p = constant_profile(1.0)
        g, gp, G = eval_profile(p, Y)
        assert np.allclose(g, 1.0)
        assert np.allclose(gp, 0.0)
        assert np.allclose(G, Y)

    def test_affine(self):
        p = affine_profile(2.0, 1.0)
        g, gp, G = eval_profile(p, Y)
        assert np.allclose(g, 2.0 + Y)
        assert np.allclose(gp, 1.0)
        assert np.allclose(G, 2.0 * Y + 0.5 * Y**2)

    def test_tanh_at_origin(self):
        a, b, ell = 1.2, 0.3, 0.7
        p = tanh_profile(a, b, ell)
        g, gp, G = eval_profile(p, np.array([0.0]))
        assert g[0] == pytest.approx(a)
        assert gp[0] == pytest.approx(b / ell)
        assert G[0] == pytest.approx(0.0, abs=1e-14)

    def test_gamma_zero_at_origin_always(self):
        for p in (constant_profile(3.0), affine_profile(1.0, -0.5),
                  tanh_profile(2.0, 0.4, 1.3)):
            assert abs(float(p.Gamma(0.0))) < 1e-14


class TestConsistency:
    @pytest.mark.parametrize("p", [
        affine_profile(2.0, 0.5),
        tanh_profile(1.0, 0.1, 1.0),
        tanh_profile(2.0, -0.3, 0.5),
    ], ids=["affine", "tanh", "tanh-steep"])
    def test_Gamma_prime_is_gamma_second_order(self, p):
        # centered differences of Gamma converge to gamma at 2nd order
        y = np.linspace(-2.0, 2.0, 17)
        errs = []
        for h in (1e-2, 5e-3):
            d = (np.asarray(p.Gamma(y + h)) - np.asarray(p.Gamma(y - h))) / (2 * h)
            errs.append(np.abs(d - np.asarray(p.gamma(y))).max())
        if errs[0] < 1e-12:  # polynomial Gamma: centered differences are exact
            return
        rate = np.log2(errs[0] / errs[1])
        assert 1.8 < rate < 2.2

    @pytest.mark.parametrize("p", [
        affine_profile(2.0, 0.5),
        tanh_profile(1.0, 0.1, 1.0),
    ], ids=["affine", "tanh"])
    def test_gamma_prime_consistent(self, p):
        y = np.linspace(-2.0, 2.0, 17)
        errs = []
        for h in (1e-2, 5e-3):
            d = (np.asarray(p.gamma(y + h)) - np.asarray(p.gamma(y - h))) / (2 * h)
            errs.append(np.abs(d - np.asarray(p.gamma_prime(y))).max())
        if errs[0] < 1e-13:  # affine: differences are exact
            return
        rate = np.log2(errs[0] / errs[1])
        assert 1.8 < rate < 2.2

    def test_user_profile_checked(self):
        # Gamma inconsistent with gamma must be rejected
        with pytest.raises(ProfileError):
            user_profile(lambda y: np.asarray(y) * 0 + 1.0,
                         lambda y: np.asarray(y) * 0,
                         lambda y: 2.0 * np.asarray(y))

    def test_user_profile_accepted(self):
        p = user_profile(lambda y: np.exp(np.asarray(y) * 0.1),
                         lambda y: 0.1 * np.exp(np.asarray(y) * 0.1),
                         lambda y: 10 * (np.exp(np.asarray(y) * 0.1) - 1.0))
        g, gp, G = eval_profile(p, Y)
        assert np.all(np.isfinite(g))

    def test_nan_heights_rejected(self):
        p = constant_profile(1.0)
        with pytest.raises(ProfileError):
            eval_profile(p, np.array([0.0, np.nan]))


class TestClassG:
    def test_constant_all_derivatives_zero(self):
        rep = check_class_G(constant_profile(2.0), order=3)
        assert rep.passed
        assert all(m == 0.0 for m in rep.derivative_max[1:])

    def test_affine_higher_derivatives_zero(self):
        rep = check_class_G(affine_profile(1.0, 0.7), order=3)
        assert rep.passed
        assert rep.derivative_max[1] == pytest.approx(0.7, rel=1e-6)
        assert all(m == 0.0 for m in rep.derivative_max[2:])

    def test_tanh_finite_and_passes(self):
        rep = check_class_G(tanh_profile(1.0, 0.5, 1.0), order=3)
        assert rep.passed
        # closed-form maxima on the sample grid: |gamma'| peaks at b/ell
        assert rep.derivative_max[1] == pytest.approx(0.5, rel=1e-4)
        assert all(np.isfinite(m) for m in rep.derivative_max)

    def test_order_validation(self):
        with pytest.raises(ProfileError):
            check_class_G(constant_profile(1.0), order=0)
