"""Finite-difference solver for the joint-hit boundary-value problem.

The unknown f(x, y) on the square [0, b]^2 satisfies

    (1/2) x (1 - x) f_xx + (1/2) y (1 - y) f_yy - x y f_xy = 0

with boundary data f(x, 0) = f(0, y) = 0, f(x, b) = x/b, f(b, y) = y/b.
f(x, y) is the probability that two components of a three-allele
diffusion started at (x, y) each ever reach b, which is why the square
of edge values x/b (the single-component hit probability) bounds it.

Discretization: uniform grid with m interior nodes per axis, spacing
d = b/(m+1); second-order central differences for f_xx and f_yy and the
four-point cross stencil for f_xy. Multiplying each interior equation
by d^2 gives the scale-free 9-point stencil assembled here, with
Dirichlet data folded into the right-hand side. The operator
degenerates on the axes (coefficients x(1-x) and xy vanish), which the
uniform grid tolerates: those terms simply drop out near the edges and
the boundary rows anchor the values.

Solution is iterative (ILU-preconditioned stabilized Krylov) to a
relative residual below the requested tolerance; non-convergence raises
with the achieved residual. The solved grid is checked against the
range [0, 1] and reported with its residual and its symmetry defect
(the true solution is symmetric in x and y because the operator and
the boundary data are).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix, csr_matrix
from scipy.sparse.linalg import LinearOperator, bicgstab, spilu

__all__ = [
    "PdeGrid",
    "PdeSystem",
    "PdeSolverError",
    "ResolutionError",
    "stencil_coefficients",
    "pde_assemble",
    "pde_solve",
    "solve_pde",
    "corner_ratio",
    "interpolate",
    "convergence_factors",
]


class PdeSolverError(RuntimeError):
    """Iterative solve failed to reach the requested residual."""


class ResolutionError(ValueError):
    """Requested evaluation point is below the grid resolution."""


@dataclass
class PdeGrid:
    """Solved values on the closed grid, boundary rows included.

    values[ix, iy] = f(x_ix, y_iy) on the (m+2) x (m+2) node set over
    [0, b]^2. residual is the relative solve residual, symmetry_defect
    the max absolute difference between the grid and its transpose.
    """

    b: float
    m: int
    values: np.ndarray
    residual: float = 0.0
    symmetry_defect: float = 0.0

    @property
    def spacing(self) -> float:
        return self.b / (self.m + 1)

    @property
    def axis(self) -> np.ndarray:
        return np.linspace(0.0, self.b, self.m + 2)


@dataclass
class PdeSystem:
    """Assembled interior equations A f = rhs plus grid metadata."""

    b: float
    m: int
    matrix: csr_matrix
    rhs: np.ndarray
    boundary: np.ndarray


def stencil_coefficients(x: float, y: float) -> tuple[float, float, float]:
    """(cx, cy, cxy4): d^2-scaled stencil weights at a node (x, y).

    cx multiplies the x-direction second difference, cy the
    y-direction one, cxy4 the cross stencil (already divided by 4).
    Both cx and cxy4 vanish at x = 0; likewise for y.
    """
    cx = 0.5 * x * (1.0 - x)
    cy = 0.5 * y * (1.0 - y)
    cxy4 = 0.25 * x * y
    return cx, cy, cxy4


def _boundary_values(b: float, m: int) -> np.ndarray:
    """(m+2) x (m+2) array holding the Dirichlet data, 0 inside."""
    xs = np.linspace(0.0, b, m + 2)
    g = np.zeros((m + 2, m + 2))
    g[:, m + 1] = xs / b  # y = b edge: f = x/b
    g[m + 1, :] = xs / b  # x = b edge: f = y/b
    g[:, 0] = 0.0
    g[0, :] = 0.0
    return g


def pde_assemble(b: float, m: int) -> PdeSystem:
    """Assemble the interior system with Dirichlet data in the RHS."""
    if not (0.0 < b < 1.0):
        raise ValueError("b must lie in (0, 1)")
    if m < 3:
        raise ValueError("m must be at least 3")
    xs = np.linspace(0.0, b, m + 2)
    xi = xs[1:-1]
    X, Y = np.meshgrid(xi, xi, indexing="ij")
    cx = 0.5 * X * (1.0 - X)
    cy = 0.5 * Y * (1.0 - Y)
    cxy4 = 0.25 * X * Y
    diag = 2.0 * (cx + cy)

    # negated operator: positive diagonal, neighbors enter with these signs
    stencil = [
        (0, 0, diag),
        (1, 0, -cx),
        (-1, 0, -cx),
        (0, 1, -cy),
        (0, -1, -cy),
        (1, 1, cxy4),
        (-1, -1, cxy4),
        (1, -1, -cxy4),
        (-1, 1, -cxy4),
    ]

    bnd = _boundary_values(b, m)
    I, J = np.meshgrid(np.arange(m), np.arange(m), indexing="ij")
    row_of = lambda i, j: i * m + j  # noqa: E731
    rows = []
    cols = []
    vals = []
    rhs = np.zeros(m * m)
    for dx, dy, w in stencil:
        ni = I + dx
        nj = J + dy
        inside = (ni >= 0) & (ni < m) & (nj >= 0) & (nj < m)
        rows.append(row_of(I[inside], J[inside]))
        cols.append(row_of(ni[inside], nj[inside]))
        vals.append(w[inside])
        if dx != 0 or dy != 0:
            out = ~inside
            # folded Dirichlet contribution; +1 shift maps to closed grid
            gvals = bnd[ni[out] + 1, nj[out] + 1]
            np.add.at(rhs, row_of(I[out], J[out]), -w[out] * gvals)
    A = coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(m * m, m * m),
    ).tocsr()
    return PdeSystem(b=b, m=m, matrix=A, rhs=rhs, boundary=bnd)


def pde_solve(system: PdeSystem, tol: float = 1e-10,
              max_iter: int = 20_000) -> PdeGrid:
    """Solve the assembled system to relative residual <= tol."""
    A = system.matrix
    rhs = system.rhs
    m = system.m
    ilu = spilu(A.tocsc(), drop_tol=1e-5, fill_factor=20.0)
    M = LinearOperator(A.shape, ilu.solve)
    x0 = np.zeros(m * m)
    f, info = bicgstab(A, rhs, x0=x0, rtol=tol, atol=0.0, M=M,
                       maxiter=max_iter)
    rnorm = float(np.linalg.norm(A @ f - rhs))
    bnorm = float(np.linalg.norm(rhs))
    rel = rnorm / bnorm if bnorm > 0.0 else rnorm
    if info != 0 or rel > tol:
        raise PdeSolverError(
            f"no convergence to {tol:g} within {max_iter} iterations "
            f"(relative residual {rel:.3e})"
        )
    values = system.boundary.copy()
    values[1:-1, 1:-1] = f.reshape(m, m)
    lo = float(values.min())
    hi = float(values.max())
    if lo < 0.0 or hi > 1.0:
        raise PdeSolverError(
            f"solution leaves [0, 1]: min {lo:.3e}, max {hi:.3e}"
        )
    defect = float(np.abs(values - values.T).max())
    return PdeGrid(b=system.b, m=m, values=values, residual=rel,
                   symmetry_defect=defect)


def solve_pde(b: float, m: int, tol: float = 1e-10) -> PdeGrid:
    """Assemble and solve in one call."""
    return pde_solve(pde_assemble(b, m), tol=tol)


def interpolate(grid: PdeGrid, x: float, y: float) -> float:
    """Bilinear interpolation of the solved grid at (x, y)."""
    if not (0.0 <= x <= grid.b and 0.0 <= y <= grid.b):
        raise ValueError("point outside the grid square")
    d = grid.spacing
    n = grid.m + 1
    ix = min(int(x / d), n - 1)
    iy = min(int(y / d), n - 1)
    tx = x / d - ix
    ty = y / d - iy
    v = grid.values
    return float(
        (1 - tx) * (1 - ty) * v[ix, iy]
        + tx * (1 - ty) * v[ix + 1, iy]
        + (1 - tx) * ty * v[ix, iy + 1]
        + tx * ty * v[ix + 1, iy + 1]
    )


def corner_ratio(grid: PdeGrid, points) -> np.ndarray:
    """Diagonal ratios r(x) = f(x, x) * b^2 / x^2 at the given abscissae.

    Normalized so the product reference f = x*y/b^2 gives r = 1
    identically; the sequence toward x = 0 probes the corner scaling.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 1 or pts.size == 0:
        raise ValueError("points must be a nonempty 1-d sequence")
    d = grid.spacing
    out = np.empty(pts.size)
    for i, x in enumerate(pts):
        if x < d:
            raise ResolutionError(
                f"abscissa {x:g} below grid spacing {d:g}; refine the grid"
            )
        if x > grid.b:
            raise ValueError("abscissa outside the grid square")
        out[i] = interpolate(grid, x, x) * grid.b**2 / x**2
    return out


def convergence_factors(b: float, ms, tol: float = 1e-10) -> dict:
    """Nested-grid self-convergence report.

    ms must be ascending with each m' = 2m + 1 so node sets nest; the
    report holds max differences on shared nodes between consecutive
    grids and the ratios of consecutive differences (the convergence
    factors; ~4 for a clean second-order scheme).
    """
    ms = list(ms)
    if len(ms) < 2:
        raise ValueError("need at least two grid sizes")
    for ma, mb in zip(ms[:-1], ms[1:]):
        if mb != 2 * ma + 1:
            raise ValueError("grid sizes must nest: next m = 2*m + 1")
    grids = [solve_pde(b, m, tol=tol) for m in ms]
    diffs = []
    for ga, gb in zip(grids[:-1], grids[1:]):
        coarse = ga.values
        fine = gb.values[::2, ::2]
        diffs.append(float(np.abs(coarse - fine).max()))
    factors = [
        diffs[i] / diffs[i + 1] if diffs[i + 1] > 0.0 else math.inf
        for i in range(len(diffs) - 1)
    ]
    return {
        "b": b,
        "ms": ms,
        "max_diffs": diffs,
        "factors": factors,
        "grids": grids,
    }
