"""Tests for the strip grid (Chebyshev z-machinery)."""

import numpy as np
import pytest

from ipmsim.spectral import make_grid
from ipmsim.strip import StripField, StripGridError, make_strip_grid


@pytest.fixture
def grid():
    return make_strip_grid(make_grid(8, 2 * np.pi), 24, -1.0)


class TestStripGrid:
    def test_node_endpoints(self, grid):
        assert grid.z_nodes[0] == -1.0
        assert grid.z_nodes[-1] == 0.0
        assert np.all(np.diff(grid.z_nodes) > 0)

    def test_min_nz(self):
        with pytest.raises(StripGridError):
            make_strip_grid(make_grid(8, 1.0), 4, -1.0)

    def test_positive_zbot_rejected(self):
        with pytest.raises(StripGridError):
            make_strip_grid(make_grid(8, 1.0), 16, 1.0)

    def test_diff_matrix_exact_on_polynomials(self, grid):
        z = grid.z_nodes
        for coeffs in ([1.0], [0.0, 1.0], [2.0, -1.0, 3.0], [0, 0, 0, 1.0]):
            p = np.polynomial.Polynomial(coeffs)
            vals = np.tile(p(z), (grid.x_grid.n, 1))
            expect = np.tile(p.deriv()(z), (grid.x_grid.n, 1))
            assert np.abs(grid.dz(vals) - expect).max() < 1e-10

    def test_diff_matrix_annihilates_constants(self, grid):
        # negative-sum-trick diagonal: constants die to rounding level even
        # though the entries are O(n^2)
        ones = np.ones(grid.shape)
        assert np.abs(grid.dz(ones)).max() < 1e-11

    def test_quadrature_weights(self, grid):
        # positive weights summing to the span; spectrally exact on exp
        assert np.all(grid.wz > 0)
        assert grid.wz.sum() == pytest.approx(1.0, rel=1e-13)
        vals = np.tile(np.exp(grid.z_nodes), (grid.x_grid.n, 1))
        total = grid.integrate(vals)
        assert total == pytest.approx(2 * np.pi * (1 - np.exp(-1)), rel=1e-12)

    def test_spectral_accuracy_on_smooth(self, grid):
        z = grid.z_nodes
        vals = np.tile(np.sin(2 * z), (grid.x_grid.n, 1))
        expect = np.tile(2 * np.cos(2 * z), (grid.x_grid.n, 1))
        assert np.abs(grid.dz(vals) - expect).max() < 1e-10


class TestStripField:
    def test_shape_check(self, grid):
        with pytest.raises(StripGridError):
            StripField(grid, np.zeros((3, 3)))

    def test_nan_rejected(self, grid):
        vals = np.zeros(grid.shape)
        vals[0, 0] = np.inf
        with pytest.raises(StripGridError):
            StripField(grid, vals)

    def test_rows(self, grid):
        vals = np.outer(np.arange(grid.x_grid.n), np.ones(grid.n_z))
        field = StripField(grid, vals)
        assert np.allclose(field.top_row(), np.arange(grid.x_grid.n))
        assert np.allclose(field.bottom_row(), np.arange(grid.x_grid.n))
