"""Dense linear programming: a two-phase revised simplex and a vertex oracle.

Problems are stated in inequality form

    minimize c @ z  subject to  G @ z <= h,  z_i >= 0 or z_i free,

which is the shape both CLIME columns and the direct linear-coefficient
program take after splitting absolute values.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import blas

FEAS_TOL = 1e-8
PIVOT_TOL = 1e-10
OPT_TOL = 1e-9
REFACTOR_EVERY = 100


class Status(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


class IterationLimit(RuntimeError):
    pass


class TooLarge(ValueError):
    pass


@dataclass(frozen=True)
class LpProblem:
    objective: np.ndarray
    constraint_matrix: np.ndarray
    constraint_rhs: np.ndarray
    variable_lower_bounds: np.ndarray | None = None

    def __post_init__(self):
        c = np.asarray(self.objective, dtype=float).reshape(-1)
        g = np.asarray(self.constraint_matrix, dtype=float)
        h = np.asarray(self.constraint_rhs, dtype=float).reshape(-1)
        if g.size == 0:
            g = g.reshape(0, c.size)
        if g.ndim != 2 or g.shape[1] != c.size or g.shape[0] != h.size:
            raise ValueError(
                f"inconsistent LP dimensions: c {c.shape}, G {g.shape}, h {h.shape}"
            )
        lb = (
            np.zeros(c.size)
            if self.variable_lower_bounds is None
            else np.asarray(self.variable_lower_bounds, dtype=float).reshape(-1)
        )
        if lb.size != c.size or not np.all((lb == 0) | (lb == -np.inf)):
            raise ValueError("variable lower bounds must each be 0 or -inf")
        for name, arr in (("objective", c), ("constraint_matrix", g), ("constraint_rhs", h)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")
        object.__setattr__(self, "objective", c)
        object.__setattr__(self, "constraint_matrix", g)
        object.__setattr__(self, "constraint_rhs", h)
        object.__setattr__(self, "variable_lower_bounds", lb)

    @property
    def n(self) -> int:
        return self.objective.size

    @property
    def k(self) -> int:
        return self.constraint_rhs.size


@dataclass(frozen=True)
class LpSolution:
    status: Status
    solution: np.ndarray | None = None
    objective_value: float | None = None
    iterations: int = 0
    basis: tuple[int, ...] = field(default=(), repr=False)


def _rank_one_update(m, x, y):
    """m - x y^T, in place when ``m`` is Fortran-ordered."""
    return blas.dger(-1.0, x, y, a=m, overwrite_a=True)


class _Simplex:
    """Revised simplex on  A x = b, x >= 0  with an explicit basis inverse."""

    def __init__(self, a, b, basis, bland_after, max_pivots):
        self.a = a
        self.b = b
        self.basis = np.array(basis, dtype=int)
        self.bland_after = bland_after
        self.max_pivots = max_pivots
        self.pivots = 0
        # the starting basis is diagonal (signed slacks and artificials)
        # Fortran order lets the rank-one update run in place through BLAS
        self.b_inv = np.asfortranarray(np.diag(1.0 / np.diag(a[:, self.basis])))
        self._since_refactor = 0
        self.refresh()

    def _refactor(self):
        self.b_inv = np.asfortranarray(np.linalg.inv(self.a[:, self.basis]))
        self._since_refactor = 0
        self.refresh()

    def refresh(self):
        """Recompute basic values from the current inverse."""
        self.x_b = self.b_inv @ self.b
        self.x_b[np.abs(self.x_b) < 1e-13] = 0.0

    def _pivot(self, row, col, d):
        pr = d[row]
        self.b_inv[row] /= pr
        d = d.copy()
        d[row] = 0.0
        self.b_inv = _rank_one_update(self.b_inv, d, self.b_inv[row].copy())
        self.basis[row] = col
        self.pivots += 1
        self._since_refactor += 1
        if self._since_refactor >= REFACTOR_EVERY:
            self._refactor()

    def run(self, cost, allowed) -> Status:
        """Iterate to optimality for ``cost`` using only ``allowed`` entering columns."""
        a = self.a
        scale = max(1.0, float(np.max(np.abs(cost))))
        while True:
            bland = self.pivots >= self.bland_after
            y = cost[self.basis] @ self.b_inv
            r = cost - y @ a
            r[self.basis] = 0.0
            r[~allowed] = 0.0
            candidates = np.flatnonzero(r < -OPT_TOL * scale)
            if candidates.size == 0:
                return Status.OPTIMAL
            q = int(candidates[0]) if bland else int(candidates[np.argmin(r[candidates])])
            d = self.b_inv @ a[:, q]
            pos = np.flatnonzero(d > PIVOT_TOL)
            if pos.size == 0:
                return Status.UNBOUNDED
            ratios = np.maximum(self.x_b[pos], 0.0) / d[pos]
            best = ratios.min()
            ties = pos[ratios <= best + 1e-12 * max(1.0, best)]
            if bland:
                row = int(ties[np.argmin(self.basis[ties])])
            else:
                row = int(ties[np.argmax(d[ties])])
            theta = max(self.x_b[row], 0.0) / d[row]
            if self.pivots >= self.max_pivots:
                raise IterationLimit(f"simplex exceeded {self.max_pivots} pivots")
            self.x_b -= theta * d
            self.x_b[row] = theta
            self._pivot(row, q, d)

    def drive_out(self, banned):
        """Pivot basic columns in ``banned`` out of the basis where possible."""
        for row in range(self.basis.size):
            if not banned[self.basis[row]]:
                continue
            tableau_row = self.b_inv[row] @ self.a
            tableau_row[banned] = 0.0
            tableau_row[self.basis] = 0.0
            col = int(np.argmax(np.abs(tableau_row)))
            if abs(tableau_row[col]) > PIVOT_TOL:
                d = self.b_inv @ self.a[:, col]
                self.x_b[row] = 0.0
                self._pivot(row, col, d)


def _standard_form(problem: LpProblem):
    g, h, c = problem.constraint_matrix, problem.constraint_rhs, problem.objective
    free = np.flatnonzero(problem.variable_lower_bounds == -np.inf)
    cols = np.hstack([g, -g[:, free]])
    cost = np.concatenate([c, -c[free]])
    k = problem.k
    flip = h < 0
    sign = np.where(flip, -1.0, 1.0)
    n_struct = cols.shape[1]
    art_rows = np.flatnonzero(flip)
    art = np.zeros((k, art_rows.size))
    art[art_rows, np.arange(art_rows.size)] = 1.0
    a = np.hstack([sign[:, None] * cols, np.diag(sign), art])
    b = sign * h
    basis = np.arange(n_struct, n_struct + k)
    basis[art_rows] = n_struct + k + np.arange(art_rows.size)
    return a, b, basis, cost, n_struct, free


def solve(problem: LpProblem, max_pivots: int | None = None) -> LpSolution:
    """Solve an inequality-form LP by the two-phase revised simplex method.

    Dantzig pricing is used for the first 10*(n+k) pivots and Bland's rule
    afterwards, so degenerate cycling cannot prevent termination.
    """
    n, k = problem.n, problem.k
    if k == 0:
        neg = problem.objective < -OPT_TOL
        if np.any(neg & (problem.variable_lower_bounds == 0)) or np.any(
            np.abs(problem.objective[problem.variable_lower_bounds == -np.inf]) > OPT_TOL
        ):
            return LpSolution(Status.UNBOUNDED)
        return LpSolution(Status.OPTIMAL, np.zeros(n), 0.0)

    a, b, basis, cost, n_struct, free = _standard_form(problem)
    total = a.shape[1]
    n_art = total - n_struct - k
    is_art = np.zeros(total, dtype=bool)
    is_art[n_struct + k:] = True
    max_pivots = 50 * (n + k) if max_pivots is None else max_pivots
    sx = _Simplex(a, b, basis, bland_after=10 * (n + k), max_pivots=max_pivots)

    if n_art:
        phase1 = is_art.astype(float)
        sx.run(phase1, np.ones(total, dtype=bool))
        sx.refresh()
        infeas = float(np.sum(np.maximum(sx.x_b[is_art[sx.basis]], 0.0)))
        if infeas > FEAS_TOL * (1.0 + float(np.max(np.abs(b)))):
            return LpSolution(Status.INFEASIBLE, iterations=sx.pivots)
        sx.drive_out(is_art)

    full_cost = np.zeros(total)
    full_cost[:n_struct] = cost
    status = sx.run(full_cost, ~is_art)
    if status is Status.UNBOUNDED:
        return LpSolution(Status.UNBOUNDED, iterations=sx.pivots)

    sx.refresh()
    x = np.zeros(total)
    x[sx.basis] = np.maximum(sx.x_b, 0.0)
    z = x[:n].copy()
    z[free] -= x[n:n_struct]
    return LpSolution(
        Status.OPTIMAL,
        solution=z,
        objective_value=float(problem.objective @ z),
        iterations=sx.pivots,
        basis=tuple(int(i) for i in sx.basis),
    )


def check_solution(problem: LpProblem, sol: LpSolution, tol: float = FEAS_TOL) -> None:
    """Assert the feasibility and objective invariants of an optimal solution."""
    if sol.status is not Status.OPTIMAL:
        return
    z = sol.solution
    slack = problem.constraint_matrix @ z - problem.constraint_rhs
    if slack.size and slack.max() > tol * (1.0 + np.abs(problem.constraint_rhs).max()):
        raise AssertionError(f"constraint violated by {slack.max():.3g}")
    bounded = problem.variable_lower_bounds == 0
    if np.any(z[bounded] < -tol):
        raise AssertionError("lower bound violated")
    if abs(problem.objective @ z - sol.objective_value) > 1e-9 * (1.0 + abs(sol.objective_value)):
        raise AssertionError("objective value inconsistent with solution")


MAX_ORACLE_VARS = 8
MAX_ORACLE_ROWS = 12


def _nonsingular(stack: np.ndarray, rank: int) -> np.ndarray:
    s = np.linalg.svd(stack, compute_uv=False)
    return s[:, rank - 1] > 1e-10 * np.maximum(s[:, 0], 1.0)


def enumerate_vertices_oracle(problem: LpProblem) -> LpSolution:
    """Exact LP optimum by enumerating every basic feasible point.

    Each vertex is the solution of n linearly independent active rows drawn
    from the constraints and the finite lower bounds. Unboundedness is decided
    by enumerating the extreme rays of the recession cone. Only intended as an
    independent test oracle for small problems.
    """
    n, k = problem.n, problem.k
    if n > MAX_ORACLE_VARS or k > MAX_ORACLE_ROWS:
        raise TooLarge(f"oracle limited to n <= {MAX_ORACLE_VARS}, k <= {MAX_ORACLE_ROWS}")
    bounded = np.flatnonzero(problem.variable_lower_bounds == 0)
    # every candidate active row written as  row @ z <= rhs
    rows = np.vstack([problem.constraint_matrix, -np.eye(n)[bounded]])
    rhs = np.concatenate([problem.constraint_rhs, np.zeros(bounded.size)])
    if n > 0 and (rows.size == 0 or np.linalg.matrix_rank(rows) < n):
        raise TooLarge("oracle requires a pointed feasible region (full column rank)")

    tol = FEAS_TOL * (1.0 + (np.abs(rhs).max() if rhs.size else 0.0))
    c = problem.objective
    subsets = np.array(list(itertools.combinations(range(rows.shape[0]), n)), dtype=int)
    mats = rows[subsets]
    ok = _nonsingular(mats, n)
    best_z = None
    if ok.any():
        pts = np.linalg.solve(mats[ok], rhs[subsets[ok]][..., None])[..., 0]
        feasible = np.all(pts @ rows.T <= rhs + tol, axis=1)
        if feasible.any():
            vals = pts[feasible] @ c
            i = int(np.argmin(vals))
            best_z = pts[feasible][i]
    if best_z is None:
        return LpSolution(Status.INFEASIBLE)

    # extreme rays: n-1 active homogeneous rows leave a one-dimensional null space
    if n == 1:
        dirs = np.array([[1.0], [-1.0]])
    else:
        ray_sets = np.array(list(itertools.combinations(range(rows.shape[0]), n - 1)), dtype=int)
        sub = rows[ray_sets]
        _, s, vt = np.linalg.svd(sub)
        full_rank = s[:, -1] > 1e-10 * np.maximum(s[:, 0], 1.0)
        d = vt[full_rank, -1, :]
        dirs = np.vstack([d, -d]) if d.size else np.zeros((0, n))
    if dirs.size:
        in_cone = np.all(dirs @ rows.T <= 1e-10, axis=1)
        if np.any(dirs[in_cone] @ c < -1e-10):
            return LpSolution(Status.UNBOUNDED)
    return LpSolution(Status.OPTIMAL, solution=best_z, objective_value=float(c @ best_z))

