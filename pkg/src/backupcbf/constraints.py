"""Assembly of robustified linear control constraints along a backup flow.

Each grid point of the propagated flow contributes one affine row in the
control, and each terminal constraint function contributes one more.  With
w = grad_h(flow_point) @ stm, a row encodes

    w @ (f(x) + g(x) u) - eta  >=  -alpha(h(flow_point) - margins)

as a @ u >= b, where eta = xi * ||w|| dominates the worst-case effect of
the unknown disturbance through the sensitivity matrix.  With xi = 0 and
zero margins the rows reduce to the standard backup-CBF ones.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .bounds import TighteningTerms
from .errors import ParameterError
from .flow import FlowTrajectory
from .model import ClassKappa, ConstraintFunction, DisturbanceBound, SystemModel

Array = np.ndarray

TRAJECTORY = "trajectory"
TERMINAL = "terminal"


@dataclass(frozen=True)
class ConstraintRow:
    """One linear inequality a @ u >= b with its provenance.

    ``kind``/``index`` identify the grid point (trajectory rows, with
    ``tau`` the grid time) or the terminal constraint function.  ``slack``
    is the row residual at the backup control, kept as a diagnostic.
    """

    a: Array
    b: float
    kind: str
    index: int
    tau: Optional[float] = None
    slack: float = float("nan")

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        if not np.all(np.isfinite(a)) or not np.isfinite(self.b):
            raise ParameterError("constraint row has non-finite coefficients")
        object.__setattr__(self, "a", a)

    def residual(self, u) -> float:
        return float(self.a @ np.asarray(u, dtype=float) - self.b)


@dataclass(frozen=True)
class ConstraintSet:
    """All rows assembled at one state, trajectory rows first."""

    rows: Tuple[ConstraintRow, ...]
    x: Array

    def as_matrices(self) -> Tuple[Array, Array]:
        a = np.stack([row.a for row in self.rows])
        b = np.array([row.b for row in self.rows])
        return a, b

    def residuals(self, u) -> Array:
        a, b = self.as_matrices()
        return a @ np.asarray(u, dtype=float) - b


def robustness_term(grad_at_flow, stm, xi: DisturbanceBound) -> float:
    """xi times the Euclidean norm of grad @ stm."""
    w = np.asarray(grad_at_flow, dtype=float) @ np.asarray(stm, dtype=float)
    return xi.xi * float(np.linalg.norm(w))


def _row(flow_point, stm, fn: ConstraintFunction, alpha: ClassKappa,
         margin: float, xi: DisturbanceBound, drift_x: Array, g_x: Array,
         kind: str, index: int, tau, u_backup) -> ConstraintRow:
    w = np.asarray(fn.gradient(flow_point), dtype=float) @ stm
    a = g_x.T @ w
    eta = xi.xi * float(np.linalg.norm(w))
    b = -alpha(fn.value(flow_point) - margin) - float(w @ drift_x) + eta
    slack = float(a @ u_backup - b) if u_backup is not None else float("nan")
    return ConstraintRow(a=a, b=b, kind=kind, index=index, tau=tau, slack=slack)


def trajectory_constraint_row(x, flow_point, stm, h: ConstraintFunction,
                              alpha: ClassKappa, eps_tau_k: float,
                              eps_delta: float, xi: DisturbanceBound,
                              model: SystemModel, index: int = 0,
                              tau: Optional[float] = None,
                              u_backup=None) -> ConstraintRow:
    """Row enforcing the tightened trajectory condition at one grid point."""
    x = np.asarray(x, dtype=float)
    return _row(flow_point, stm, h, alpha, eps_tau_k + eps_delta, xi,
                np.asarray(model.drift(x), dtype=float),
                np.asarray(model.input_matrix(x), dtype=float),
                TRAJECTORY, index, tau, u_backup)


def terminal_constraint_row(x, flow_end, stm_end, h_b: ConstraintFunction,
                            alpha_b: ClassKappa, eps_b: float,
                            xi: DisturbanceBound, model: SystemModel,
                            index: int = 0, u_backup=None) -> ConstraintRow:
    """Row enforcing tightened reachability of one backup-set constraint."""
    x = np.asarray(x, dtype=float)
    return _row(flow_end, stm_end, h_b, alpha_b, eps_b, xi,
                np.asarray(model.drift(x), dtype=float),
                np.asarray(model.input_matrix(x), dtype=float),
                TERMINAL, index, None, u_backup)


def assemble_constraint_set(x, trajectory: FlowTrajectory,
                            terms: TighteningTerms, cfg) -> ConstraintSet:
    """Build the full stacked system for the state the flow started at.

    ``cfg`` provides model, policy, h, hb_list, alpha, alpha_b, and xi.
    Ordering is deterministic: trajectory rows by grid index ascending,
    then terminal rows in declaration order.
    """
    if trajectory.stms is None:
        raise ParameterError("constraint assembly needs sensitivity matrices")
    n_pts = trajectory.states.shape[0]
    if terms.eps_tau.shape[0] != n_pts:
        raise ParameterError("tightening terms and trajectory use different grids")
    if terms.eps_b.shape[0] != len(cfg.hb_list):
        raise ParameterError("one eps_b per terminal constraint is required")

    x = np.asarray(x, dtype=float)
    u_backup = np.asarray(cfg.policy.control(x), dtype=float)
    drift_x = np.asarray(cfg.model.drift(x), dtype=float)
    g_x = np.asarray(cfg.model.input_matrix(x), dtype=float)

    rows = []
    for k in range(n_pts):
        rows.append(_row(
            trajectory.states[k], trajectory.stms[k], cfg.h, cfg.alpha,
            float(terms.eps_tau[k]) + terms.eps_delta, cfg.xi, drift_x, g_x,
            TRAJECTORY, k, float(trajectory.times[k]), u_backup))
    for j, h_b in enumerate(cfg.hb_list):
        rows.append(_row(
            trajectory.states[-1], trajectory.stms[-1], h_b, cfg.alpha_b,
            float(terms.eps_b[j]), cfg.xi, drift_x, g_x, TERMINAL, j, None,
            u_backup))
    return ConstraintSet(rows=tuple(rows), x=x)
