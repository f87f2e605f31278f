"""Small dense strictly convex QP: project u_p onto linear rows and a box.

    minimize    1/2 ||u_p - u||^2
    subject to  a_i @ u >= b_i   (stacked constraint rows)
                lower <= u <= upper

Solved by a primal active-set method.  Problems here are tiny (a few
controls, tens of rows), so exact termination and determinism matter more
than asymptotic speed: ties in the entering-constraint selection are broken
by the lowest constraint index, and identical inputs yield bit-identical
outputs.  Feasibility is decided by a separate min-max-violation pass.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linprog

from .errors import ParameterError
from .model import ControlPolytope

Array = np.ndarray
log = logging.getLogger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
SOLVER_FAILURE = "solver_failure"


@dataclass(frozen=True)
class QpSettings:
    """Solver tolerances; defaults are fixed for the whole package."""

    feas_tol: float = 1e-9
    mult_tol: float = 1e-10
    step_tol: float = 1e-12
    iter_factor: int = 100


@dataclass(frozen=True)
class QpProblem:
    """Projection target, constraint rows as (a, b) pairs, and the box."""

    u_p: Array
    rows: Tuple[Tuple[Array, float], ...]
    box: ControlPolytope

    def __post_init__(self):
        u_p = np.asarray(self.u_p, dtype=float)
        if u_p.shape != (self.box.dim,):
            raise ParameterError(
                f"u_p has shape {u_p.shape}, expected ({self.box.dim},)")
        rows = tuple(
            (np.asarray(a, dtype=float).reshape(self.box.dim), float(b))
            for a, b in self.rows)
        object.__setattr__(self, "u_p", u_p)
        object.__setattr__(self, "rows", rows)


@dataclass(frozen=True)
class QpSolution:
    """Solver outcome.

    ``active_set`` indexes the stacked constraint system: user rows come
    first, then the m box lower bounds, then the m box upper bounds.
    ``max_violation`` is the minimized maximum row violation when the
    problem is infeasible.
    """

    status: str
    u: Optional[Array]
    active_set: Tuple[int, ...]
    iterations: int
    max_violation: float = 0.0


def _stacked(problem: QpProblem) -> Tuple[Array, Array]:
    m = problem.box.dim
    n_rows = len(problem.rows)
    c_mat = np.zeros((n_rows + 2 * m, m))
    d_vec = np.zeros(n_rows + 2 * m)
    for i, (a, b) in enumerate(problem.rows):
        c_mat[i] = a
        d_vec[i] = b
    c_mat[n_rows:n_rows + m] = np.eye(m)
    d_vec[n_rows:n_rows + m] = problem.box.lower
    c_mat[n_rows + m:] = -np.eye(m)
    d_vec[n_rows + m:] = -problem.box.upper
    return c_mat, d_vec


def _min_max_violation(problem: QpProblem) -> Tuple[Optional[Array], float]:
    """Minimize the largest row violation over the box (LP).

    Returns a minimizing control and the minimized max violation, clamped
    at zero; rows are the only violation source since the box is kept as
    hard bounds.
    """
    m = problem.box.dim
    n_rows = len(problem.rows)
    if n_rows == 0:
        return problem.box.clip(problem.u_p), 0.0
    a_mat = np.stack([a for a, _ in problem.rows])
    b_vec = np.array([b for _, b in problem.rows])
    # variables (u, s): minimize s subject to a_i u + s >= b_i, u in box, s >= 0
    a_ub = np.hstack([-a_mat, -np.ones((n_rows, 1))])
    cost = np.zeros(m + 1)
    cost[-1] = 1.0
    bnds = [(lo, up) for lo, up in zip(problem.box.lower, problem.box.upper)]
    bnds.append((0.0, None))
    res = linprog(cost, A_ub=a_ub, b_ub=-b_vec, bounds=bnds, method="highs")
    if not res.success:
        log.warning("feasibility LP did not converge: %s", res.message)
        return None, float("inf")
    u = problem.box.clip(res.x[:m])
    return u, max(0.0, float(res.x[-1]))


def check_feasible(problem: QpProblem,
                   settings: QpSettings = QpSettings()) -> Tuple[bool, float]:
    """Whether some control in the box satisfies every row within tolerance."""
    _, violation = _min_max_violation(problem)
    return violation <= settings.feas_tol, violation


def solve_qp(problem: QpProblem, settings: QpSettings = QpSettings(),
             start_hint=None) -> QpSolution:
    """Solve the projection QP with a primal active-set iteration.

    ``start_hint`` is an optional candidate feasible point tried (after box
    clipping) before falling back to the feasibility LP; it cannot change
    the optimum, only the path to it.
    """
    box = problem.box
    m = box.dim
    u_p = problem.u_p
    n_rows = len(problem.rows)
    c_mat, d_vec = _stacked(problem)
    n_stacked = c_mat.shape[0]
    cap = settings.iter_factor * (n_rows + 2 * m)

    def row_violation(point: Array) -> float:
        if not n_rows:
            return 0.0
        return float(np.max(d_vec[:n_rows] - c_mat[:n_rows] @ point))

    u = box.clip(u_p)
    if row_violation(u) > settings.feas_tol:
        u = None
        if start_hint is not None:
            candidate = box.clip(start_hint)
            if row_violation(candidate) <= settings.feas_tol:
                u = candidate
        if u is None:
            start, violation = _min_max_violation(problem)
            if start is None or violation > settings.feas_tol:
                return QpSolution(INFEASIBLE, None, (), 0, max_violation=violation)
            u = start

    working: list[int] = []
    in_working = np.zeros(n_stacked, dtype=bool)
    iterations = 0
    while iterations < cap:
        iterations += 1
        if working:
            c_w = c_mat[working]
            gram = c_w @ c_w.T
            rhs = d_vec[working] - c_w @ u_p
            try:
                lam = np.linalg.solve(gram, rhs)
            except np.linalg.LinAlgError:
                lam = np.linalg.lstsq(gram, rhs, rcond=None)[0]
            u_new = u_p + c_w.T @ lam
        else:
            lam = np.zeros(0)
            u_new = u_p.copy()

        step = u_new - u
        if float(np.linalg.norm(step)) <= settings.step_tol * (1.0 + float(np.linalg.norm(u_new))):
            if lam.size == 0 or float(np.min(lam)) >= -settings.mult_tol:
                return QpSolution(OPTIMAL, u_new, tuple(sorted(working)), iterations)
            worst = float(np.min(lam))
            drop = min(working[i] for i in range(len(working))
                       if lam[i] <= worst + 1e-15)
            working.remove(drop)
            in_working[drop] = False
            continue

        # ratio test: largest alpha in [0, 1] keeping all other rows satisfied
        c_step = c_mat @ step
        decreasing = ~in_working & (c_step < -1e-13)
        alpha = 1.0
        blocker = -1
        if np.any(decreasing):
            ratios = np.full(n_stacked, np.inf)
            slack = d_vec - c_mat @ u
            ratios[decreasing] = np.maximum(slack[decreasing] / c_step[decreasing], 0.0)
            best = float(np.min(ratios))
            if best < 1.0:
                alpha = best
                # exact ties broken by the lowest constraint index
                blocker = int(np.flatnonzero(ratios == best)[0])
        u = u + alpha * step
        if blocker >= 0:
            working.append(blocker)
            in_working[blocker] = True

    log.warning("active-set iteration cap %d reached; treating as infeasible", cap)
    return QpSolution(SOLVER_FAILURE, None, tuple(sorted(working)), iterations)
