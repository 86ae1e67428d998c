"""Tests for the strip elliptic solver and boundary operators.

Expected values come from independent oracles: separation of variables on
the flat strip, a per-mode two-point boundary-value solve for the source
problem, and a manufactured solution in physical coordinates for the
curved-map source problem (which also pins the bottom-flux sign).
"""

import numpy as np
import pytest

from ipmsim.elliptic import (
    EllipticError,
    EllipticProblem,
    StripSolver,
    compute_B_V,
    dirichlet_neumann,
    lambda_symbol,
    lambda_symbol_at,
    solve_phi1,
    solve_phi2,
    solver_for,
    surface_source_trace,
)
from ipmsim.flatten import FiniteDepth, InfiniteDepth, build_coeffs, build_map, select_delta
from ipmsim.profiles import constant_profile, tanh_profile
from ipmsim.spectral import SurfaceField, make_grid
from ipmsim.strip import StripField, make_strip_grid


def flat_map(n_x=32, n_z=48, depth=None):
    depth = depth or FiniteDepth(H=1.0)
    xg = make_grid(n_x, 2 * np.pi)
    z_bot = depth.z_bot if isinstance(depth, FiniteDepth) else -depth.z_max
    grid = make_strip_grid(xg, n_z, z_bot)
    f = SurfaceField.zeros(xg)
    return build_map(f, depth, 0.5, grid)


def curved_map(amplitude=0.15, n_x=48, n_z=32, depth=None):
    depth = depth or FiniteDepth(H=1.0)
    xg = make_grid(n_x, 2 * np.pi)
    z_bot = depth.z_bot if isinstance(depth, FiniteDepth) else -depth.z_max
    grid = make_strip_grid(xg, n_z, z_bot)
    f = SurfaceField(xg, amplitude * np.cos(xg.x))
    dfrak = 0.3 if isinstance(depth, FiniteDepth) else None
    delta = select_delta(f, depth, grid, d_frak=dfrak)
    return build_map(f, depth, delta, grid)


class TestPhi1:
    def test_constant_data(self):
        m = flat_map()
        res = solver_for(m).solve_phi1(SurfaceField.constant(m.grid.x_grid, 2.5))
        assert np.abs(res.solution.v.values - 2.5).max() < 1e-10
        assert np.abs(res.solution.grad_x.values).max() < 1e-9
        assert np.abs(res.dn).max() < 1e-9

    @pytest.mark.parametrize("H", [0.5, 1.0])
    def test_flat_finite_mode_profile(self, H):
        # separation of variables: v = cosh(kH(z+1))/cosh(kH) cos(kx)
        m = flat_map(depth=FiniteDepth(H=H))
        xg = m.grid.x_grid
        k = 2
        sol = solve_phi1(m, SurfaceField(xg, np.cos(k * xg.x)))
        expect = (
            np.cosh(k * H * (m.grid.z_nodes + 1)) / np.cosh(k * H)
        )[None, :] * np.cos(k * xg.x)[:, None]
        assert np.abs(sol.v.values - expect).max() < 1e-6

    def test_flat_infinite_mode_profile(self):
        # truncated strip: cosh(k(z+Z))/cosh(kZ), close to e^{kz} for kZ >> 1
        Z = 8.0
        m = flat_map(depth=InfiniteDepth(z_max=Z), n_z=64)
        xg = m.grid.x_grid
        k = 2
        sol = solve_phi1(m, SurfaceField(xg, np.cos(k * xg.x)))
        z = m.grid.z_nodes
        truncated = (np.cosh(k * (z + Z)) / np.cosh(k * Z))[None, :]
        expect = truncated * np.cos(k * xg.x)[:, None]
        assert np.abs(sol.v.values - expect).max() < 2e-5
        loose = np.exp(k * z)[None, :] * np.cos(k * xg.x)[:, None]
        assert np.abs(sol.v.values - loose).max() < 5e-5

    def test_flat_preconditioner_is_exact(self):
        m = flat_map()
        res = solver_for(m).solve_phi1(
            SurfaceField(m.grid.x_grid, np.cos(3 * m.grid.x_grid.x))
        )
        assert res.solution.iterations <= 2


class TestDirichletNeumann:
    def test_constant_annihilated(self):
        m = curved_map()
        g = dirichlet_neumann(m, SurfaceField.constant(m.grid.x_grid, 1.0))
        assert np.abs(g.values).max() < 1e-8

    @pytest.mark.parametrize("H,k", [(0.5, 1), (1.0, 2), (2.0, 4)])
    def test_flat_finite_symbol(self, H, k):
        m = flat_map(n_z=64, depth=FiniteDepth(H=H))
        xg = m.grid.x_grid
        g = dirichlet_neumann(m, SurfaceField(xg, np.cos(k * xg.x)))
        expect = k * np.tanh(k * H) * np.cos(k * xg.x)
        assert np.abs(g.values - expect).max() / np.abs(expect).max() < 1e-8

    def test_flat_infinite_symbol(self):
        m = flat_map(n_z=64, depth=InfiniteDepth(z_max=8.0))
        xg = m.grid.x_grid
        for k in (1, 2, 3):
            g = dirichlet_neumann(m, SurfaceField(xg, np.cos(k * xg.x)))
            assert np.abs(g.values - k * np.cos(k * xg.x)).max() / k < 1e-6

    def test_positive_symbol_every_mode(self):
        m = flat_map(n_x=16, n_z=32)
        xg = m.grid.x_grid
        for k in range(1, 8):
            g = dirichlet_neumann(m, SurfaceField(xg, np.cos(k * xg.x)))
            amp = 2 * np.real(g.coeffs[k])
            assert amp > 0

    def test_symmetry_on_curved_surface(self):
        m = curved_map()
        xg = m.grid.x_grid
        h1 = SurfaceField(xg, np.cos(xg.x) + 0.2 * np.sin(2 * xg.x))
        h2 = SurfaceField(xg, np.sin(3 * xg.x) - 0.1 * np.cos(2 * xg.x))
        g1 = dirichlet_neumann(m, h1)
        g2 = dirichlet_neumann(m, h2)
        ip1 = np.sum(g1.values * h2.values)
        ip2 = np.sum(h1.values * g2.values)
        assert abs(ip1 - ip2) < 1e-8 * max(abs(ip1), 1.0)

    def test_linearity(self):
        m = curved_map()
        xg = m.grid.x_grid
        h = SurfaceField(xg, np.cos(xg.x))
        g1 = dirichlet_neumann(m, h)
        g2 = dirichlet_neumann(m, 3.0 * h)
        assert np.abs(g2.values - 3.0 * g1.values).max() < 1e-9

    def test_mean_is_zero(self):
        # integral of the DN image vanishes: harmonic + zero bottom flux
        m = curved_map()
        xg = m.grid.x_grid
        g = dirichlet_neumann(m, SurfaceField(xg, np.cos(xg.x) + 0.3))
        assert abs(g.values.mean()) < 1e-9

    def test_truncation_tail(self):
        # doubling Z_max changes G[f]h by less than the tail tolerance
        vals = {}
        for Z in (4.0, 8.0):
            m = curved_map(amplitude=0.1, n_z=48, depth=InfiniteDepth(z_max=Z))
            xg = m.grid.x_grid
            vals[Z] = dirichlet_neumann(m, SurfaceField(xg, np.cos(xg.x))).values
        assert np.abs(vals[4.0] - vals[8.0]).max() < 1e-3


class TestPhi2:
    def test_zero_source(self):
        m = curved_map()
        res = solver_for(m).solve_phi2(StripField.zeros(m.grid))
        assert np.abs(res.solution.v.values).max() == 0.0
        assert res.solution.iterations == 0

    def test_flat_mode_ode_oracle(self):
        # independent oracle: solve the per-mode two-point BVP
        #   v'' - k^2 v = -kappa e^{kappa z},  v(0)=0,  v'(-Z) = -e^{-kappa Z}
        Z, k, kappa = 8.0, 2, 1.3
        m = flat_map(n_z=64, depth=InfiniteDepth(z_max=Z))
        xg = m.grid.x_grid
        z = m.grid.z_nodes
        kt = StripField(m.grid, np.cos(k * xg.x)[:, None] * np.exp(kappa * z)[None, :])
        res = solver_for(m).solve_phi2(kt)
        c = -kappa / (kappa**2 - k**2)
        M = np.array([[1.0, 1.0],
                      [k * np.exp(-k * Z), -k * np.exp(k * Z)]])
        rhs = np.array([-c, -np.exp(-kappa * Z) - c * kappa * np.exp(-kappa * Z)])
        A, B = np.linalg.solve(M, rhs)
        profile = A * np.exp(k * z) + B * np.exp(-k * z) + c * np.exp(kappa * z)
        expect = profile[None, :] * np.cos(k * xg.x)[:, None]
        assert np.abs(res.solution.v.values - expect).max() < 1e-6
        # surface flux from the same oracle
        flux = (k * A - k * B + c * kappa) * np.cos(k * xg.x)
        assert np.abs(res.n_trace - flux).max() < 1e-6

    def test_variational_bound_random_ensemble(self):
        m = curved_map(amplitude=0.2)
        rng = np.random.default_rng(11)
        solver = solver_for(m)
        z = m.grid.z_nodes
        x = m.grid.x_grid.x
        for _ in range(20):
            c = rng.normal(size=4)
            vals = (
                c[0] * np.cos(x)[:, None] * np.exp((1 + abs(c[1])) * z)[None, :]
                + c[2] * np.sin(2 * x)[:, None] * np.cos(np.pi * z / 2)[None, :]
                + 0.2 * c[3]
            )
            res = solver.solve_phi2(StripField(m.grid, vals))
            assert res.variational_lhs <= 1.01 * res.variational_rhs

    def test_manufactured_solution_curved_map(self):
        """Physical-space manufactured solution pins signs and the bottom flux.

        With f = a cos x, H flat bottom, phi* = (y - f) e^y satisfies the
        source problem for k(x, y) = -(1 + y) e^y + f(x) e^{-H}: the interior
        equation, the zero surface condition, and the inhomogeneous bottom
        Neumann condition all hold exactly.
        """
        a, H = 0.1, 1.0
        xg = make_grid(48, 2 * np.pi)
        grid = make_strip_grid(xg, 40, -1.0)
        f = SurfaceField(xg, a * np.cos(xg.x))
        m = build_map(f, FiniteDepth(H=H), 0.3, grid)
        kt = StripField(grid, -(1.0 + m.rho) * np.exp(m.rho)
                        + (f.values * np.exp(-H))[:, None])
        res = solver_for(m).solve_phi2(kt)
        expect = (m.rho - f.values[:, None]) * np.exp(m.rho)
        err = np.abs(res.solution.v.values - expect).max()
        assert err < 1e-7
        # surface trace of the gradient: grad phi* |_surface = (-f' e^f, e^f).
        # The chain-rule traces carry the collocation differentiation error;
        # the variationally recovered normal component superconverges.
        (sx, sy), ndot = surface_source_trace(m, kt)
        fx = -a * np.sin(xg.x)
        ef = np.exp(f.values)
        assert np.abs(sx.values - (-fx * ef)).max() < 1e-5
        assert np.abs(sy.values - ef).max() < 2e-4
        # N . grad phi* = f'^2 e^f + e^f
        assert np.abs(ndot.values - (fx**2 + 1.0) * ef).max() < 1e-9

    def test_self_adjointness_of_divergence_form(self):
        m = curved_map()
        solver = solver_for(m)
        rng = np.random.default_rng(3)
        nx, nz = m.grid.shape
        u = np.zeros((nx, nz))
        w = np.zeros((nx, nz))
        u[:, :-1] = rng.normal(size=(nx, nz - 1))
        w[:, :-1] = rng.normal(size=(nx, nz - 1))
        lhs = np.sum(solver.apply_divergence_form(u) * w)
        rhs = np.sum(u * solver.apply_divergence_form(w))
        assert abs(lhs - rhs) < 1e-9 * max(abs(lhs), 1.0)


class TestProblemRecord:
    def test_bottom_condition_validated(self):
        m = flat_map()
        coeffs = build_coeffs(m)
        with pytest.raises(EllipticError):
            EllipticProblem(coeffs, np.zeros(m.grid.x_grid.n), None, "bogus")


class TestLambdaSymbol:
    def test_one_dimensional_collapse(self):
        xg = make_grid(16, 2 * np.pi)
        f = SurfaceField(xg, 0.7 * np.sin(xg.x))
        xi = np.array([-3.0, -1.0, 0.0, 2.0])
        lam = lambda_symbol(f, xi)
        assert lam.shape == (16, 4)
        assert np.allclose(lam, np.abs(xi)[None, :])

    def test_flat_gradient(self):
        lam = lambda_symbol_at(np.array([0.0, 0.0]), np.array([3.0, 4.0]))
        assert lam == pytest.approx(5.0)

    def test_two_dimensional_sample(self):
        lam = lambda_symbol_at(np.array([1.0, 0.0]), np.array([0.0, 1.0]))
        assert lam == pytest.approx(np.sqrt(2.0))

    def test_elliptic_lower_bound(self):
        rng = np.random.default_rng(9)
        grads = rng.normal(size=(50, 2))
        xis = rng.normal(size=(50, 2))
        lam = lambda_symbol_at(grads, xis)
        assert np.all(lam >= np.linalg.norm(xis, axis=1) - 1e-12)


class TestBV:
    def test_flat_zero(self):
        m = flat_map()
        xg = m.grid.x_grid
        f = SurfaceField.zeros(xg)
        prof = constant_profile(1.0)
        Gval = dirichlet_neumann(m, SurfaceField(xg, prof.Gamma(f.values)))
        B, V = compute_B_V(f, prof, Gval)
        assert np.abs(B.values).max() < 1e-9
        assert np.abs(V.values).max() < 1e-9

    @pytest.mark.parametrize("prof", [constant_profile(1.3), tanh_profile(1.0, 0.1)],
                             ids=["constant", "tanh"])
    def test_taylor_identity(self, prof):
        # gamma(f) - B = T(f) / (1 + |f'|^2) pointwise
        m = curved_map(amplitude=0.12)
        xg = m.grid.x_grid
        f = m.f
        Gval = dirichlet_neumann(m, SurfaceField(xg, prof.Gamma(f.values)))
        B, V = compute_B_V(f, prof, Gval)
        from ipmsim.spectral import x_derivative

        fx = x_derivative(f).values
        gam = prof.gamma(f.values)
        taylor = gam - Gval.values
        lhs = gam - B.values
        rhs = taylor / (1 + fx * fx)
        assert np.abs(lhs - rhs).max() < 1e-10 * max(np.abs(lhs).max(), 1.0)
        # and V = (gamma(f) - B) grad f
        assert np.abs(V.values - lhs * fx).max() < 1e-12


class TestFailureReporting:
    def test_iteration_cap_reports_history(self):
        m = curved_map(amplitude=0.2)
        solver = StripSolver(m, tol=1e-13, max_iter=2)
        with pytest.raises(EllipticError, match="residual history"):
            solver.solve_phi1(SurfaceField(m.grid.x_grid,
                                           np.cos(m.grid.x_grid.x)))
