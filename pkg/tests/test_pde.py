"""Degenerate-elliptic boundary solver: assembly, oracle checks, scaling."""

import numpy as np
import pytest

from contestlab.pde import (
    PdeGrid,
    PdeSolverError,
    ResolutionError,
    convergence_factors,
    corner_ratio,
    interpolate,
    pde_assemble,
    pde_solve,
    solve_pde,
    stencil_coefficients,
)


class TestStencil:
    def test_coefficients_at_center(self):
        cx, cy, cxy4 = stencil_coefficients(0.5, 0.5)
        assert cx == pytest.approx(0.125)
        assert cy == pytest.approx(0.125)
        assert cxy4 == pytest.approx(0.0625)

    def test_degeneracy_at_edges(self):
        # the operator loses its x second-derivative term on x = 0
        cx, cy, cxy4 = stencil_coefficients(0.0, 0.3)
        assert cx == 0.0
        assert cxy4 == 0.0
        assert cy == pytest.approx(0.5 * 0.3 * 0.7)

    def test_ellipticity_inside_triangle(self):
        # ab - c^2 = xy(1-x-y)/4 >= 0 wherever x + y <= 1
        for x, y in [(0.1, 0.2), (0.4, 0.4), (0.3, 0.69)]:
            cx, cy, cxy4 = stencil_coefficients(x, y)
            assert cx * cy >= cxy4**2 - 1e-15


class TestAssembly:
    def test_rejects_bad_arguments(self):
        for b, m in [(0.0, 15), (1.0, 15), (0.5, 2)]:
            with pytest.raises(ValueError):
                pde_assemble(b, m)

    def test_operator_annihilates_linear_functions(self):
        # rows whose full 9-point neighborhood is interior carry no
        # boundary fold, so they must kill alpha + beta x + gamma y exactly
        b, m = 0.5, 15
        system = pde_assemble(b, m)
        xi = np.linspace(0.0, b, m + 2)[1:-1]
        X, Y = np.meshgrid(xi, xi, indexing="ij")
        g = (0.25 + 0.9 * X - 0.4 * Y).ravel()
        r = system.matrix @ g
        inner = np.zeros((m, m), dtype=bool)
        inner[1:-1, 1:-1] = True
        assert np.abs(r[inner.ravel()]).max() < 1e-13

    def test_cross_stencil_exact_on_product_xy(self):
        # second differences of x*y vanish and the cross stencil gives
        # its mixed derivative with zero truncation error, so the matrix
        # (the negated operator scaled by d^2) maps x*y to d^2 * x * y
        b, m = 0.5, 15
        system = pde_assemble(b, m)
        d = b / (m + 1)
        xi = np.linspace(0.0, b, m + 2)[1:-1]
        X, Y = np.meshgrid(xi, xi, indexing="ij")
        g = (X * Y).ravel()
        r = system.matrix @ g
        inner = np.zeros((m, m), dtype=bool)
        inner[1:-1, 1:-1] = True
        expected = (d * d * X * Y).ravel()
        assert np.abs(r - expected)[inner.ravel()].max() < 1e-15

    def test_boundary_fold_hand_check(self):
        # node (i, j) = (0, m-1) sits next to the x = 0 and y = b edges;
        # folding moves -sum(w * g) for its three outside neighbors into
        # the RHS, and g vanishes on x = 0
        b, m = 0.5, 7
        system = pde_assemble(b, m)
        xs = np.linspace(0.0, b, m + 2)
        x, y = xs[1], xs[m]
        cx = 0.5 * x * (1.0 - x)
        cy = 0.5 * y * (1.0 - y)
        cxy4 = 0.25 * x * y
        # outside neighbors: (x, b) with weight -cy, (x + d, b) with
        # weight +cxy4, the x = 0 side contributes nothing
        expected = cy * (x / b) - cxy4 * (xs[2] / b)
        assert system.rhs[0 * m + (m - 1)] == pytest.approx(expected, rel=1e-12)

    def test_system_symmetric_under_axis_swap(self):
        b, m = 0.5, 7
        system = pde_assemble(b, m)
        A = system.matrix.toarray()
        perm = np.arange(m * m).reshape(m, m).T.ravel()
        assert np.allclose(A, A[np.ix_(perm, perm)], atol=1e-15)
        assert np.allclose(system.rhs, system.rhs[perm], atol=1e-15)


class TestSolve:
    GRID = None

    @classmethod
    def grid(cls):
        if cls.GRID is None:
            cls.GRID = solve_pde(0.5, 63)
        return cls.GRID

    def test_boundary_data_embedded(self):
        grid = self.grid()
        axis = grid.axis
        assert np.all(grid.values[0, :] == 0.0)
        assert np.all(grid.values[:, 0] == 0.0)
        assert np.allclose(grid.values[-1, :], axis / grid.b, atol=1e-15)
        assert np.allclose(grid.values[:, -1], axis / grid.b, atol=1e-15)

    def test_range_and_symmetry(self):
        grid = self.grid()
        assert grid.values.min() >= 0.0
        assert grid.values.max() <= 1.0
        assert grid.symmetry_defect < 1e-8
        assert grid.residual < 1e-10

    def test_monotone_in_each_argument(self):
        # raising either starting level can only help both hit b
        vals = self.grid().values
        assert np.all(np.diff(vals, axis=0) > -1e-12)
        assert np.all(np.diff(vals, axis=1) > -1e-12)

    def test_dominated_by_single_hit_probability(self):
        # hitting b jointly is rarer than component 1 alone: f <= x/b
        grid = self.grid()
        X = grid.axis[:, None] / grid.b
        assert np.all(grid.values <= X + 1e-12)

    def test_center_value_frozen(self):
        # frozen after cross-checking a diffusion estimate of the same
        # joint-hit probability (0.1202 +/- 0.0023) and grid refinement
        got = interpolate(self.grid(), 0.2, 0.2)
        assert got == pytest.approx(0.12310, abs=5e-4)

    def test_self_convergence_second_order(self):
        report = convergence_factors(0.5, [15, 31, 63])
        assert all(f >= 2.0 for f in report["factors"])

    def test_solver_failure_raises(self):
        system = pde_assemble(0.5, 31)
        with pytest.raises(PdeSolverError):
            pde_solve(system, tol=1e-14, max_iter=1)


class TestGridOps:
    def product_grid(self, b=0.5, m=15):
        axis = np.linspace(0.0, b, m + 2)
        vals = np.outer(axis, axis) / b**2
        return PdeGrid(b=b, m=m, values=vals)

    def test_interpolate_reproduces_nodes(self):
        grid = self.product_grid()
        axis = grid.axis
        assert interpolate(grid, axis[3], axis[5]) == pytest.approx(
            grid.values[3, 5], abs=1e-15
        )

    def test_interpolate_rejects_outside(self):
        with pytest.raises(ValueError):
            interpolate(self.product_grid(), 0.6, 0.1)

    def test_corner_ratio_one_on_product_reference(self):
        grid = self.product_grid()
        ratios = corner_ratio(grid, [grid.b / 8, grid.b / 4, grid.b / 2])
        assert np.allclose(ratios, 1.0, atol=1e-12)

    def test_corner_ratio_below_resolution(self):
        grid = self.product_grid()
        with pytest.raises(ResolutionError):
            corner_ratio(grid, [grid.spacing / 2])

    def test_corner_ratio_decreases_toward_corner(self):
        # joint hitting decays faster than the product profile near 0
        grid = TestSolve.grid()
        b = grid.b
        ratios = corner_ratio(grid, [b / 64, b / 32, b / 16, b / 8])
        assert np.all(np.diff(ratios) > 0.0)
        assert np.all(ratios < 1.0)

    def test_convergence_rejects_non_nested(self):
        with pytest.raises(ValueError):
            convergence_factors(0.5, [15, 30])
        with pytest.raises(ValueError):
            convergence_factors(0.5, [15])
