"""One safety-filter evaluation: flow, robust rows, QP, fallback.

The filter is a pure function of (state, primary control, scenario,
config).  When the QP is infeasible the backup control is returned
unchanged; feasibility at every state is not guaranteed by the theory, so
infeasibility is a first-class outcome rather than an error.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .bounds import (CONTRACTION, GRONWALL, TighteningTerms,
                     contraction_delta_max, discretization_margin,
                     gronwall_delta_max, tightening_epsilons)
from .constraints import assemble_constraint_set
from .errors import ParameterError
from .flow import FlowGrid, FlowTrajectory, propagate_backup_flow
from .model import ClassKappa, DisturbanceBound
from .qp import OPTIMAL, QpProblem, QpSettings, QpSolution, solve_qp

Array = np.ndarray
log = logging.getLogger(__name__)

QP_OPTIMAL = "qp_optimal"
BACKUP_FALLBACK = "backup_fallback"

INSIDE = "inside_Ci"
OUTSIDE = "outside_Ci"


def compute_tightening(scenario, grid: FlowGrid, xi: DisturbanceBound,
                       bound_kind: str) -> TighteningTerms:
    """Precompute all tightening terms for a scenario on a grid."""
    if bound_kind == GRONWALL:
        delta = gronwall_delta_max(xi, scenario.policy.lipschitz_cl, grid)
    elif bound_kind == CONTRACTION:
        if scenario.policy.contraction_rate is None:
            raise ParameterError(
                "contraction bound requested but the backup policy declares "
                "no contraction rate")
        delta = contraction_delta_max(xi, scenario.policy.contraction_rate, grid)
    else:
        raise ParameterError(f"unknown bound kind: {bound_kind!r}")
    terms = tightening_epsilons(delta, scenario.h, scenario.hb_list)
    margin = discretization_margin(scenario.h, scenario.model, xi, grid)
    return TighteningTerms(eps_tau=terms.eps_tau, eps_b=terms.eps_b,
                           eps_delta=margin)


@dataclass(frozen=True)
class FilterConfig:
    """Per-run filter parameters with precomputed tightening terms."""

    grid: FlowGrid
    alpha: ClassKappa
    alpha_b: ClassKappa
    bound_kind: str
    xi: DisturbanceBound
    terms: TighteningTerms
    qp_settings: QpSettings = QpSettings()

    @classmethod
    def for_scenario(cls, scenario, grid: Optional[FlowGrid] = None,
                     xi: Optional[DisturbanceBound] = None,
                     alpha: Optional[ClassKappa] = None,
                     alpha_b: Optional[ClassKappa] = None) -> "FilterConfig":
        grid = grid if grid is not None else scenario.grid
        xi = xi if xi is not None else scenario.xi
        alpha = alpha if alpha is not None else scenario.alpha
        alpha_b = alpha_b if alpha_b is not None else scenario.alpha_b
        terms = compute_tightening(scenario, grid, xi, scenario.bound_kind)
        return cls(grid=grid, alpha=alpha, alpha_b=alpha_b,
                   bound_kind=scenario.bound_kind, xi=xi, terms=terms)

    def validate(self, scenario) -> None:
        """Recompute the tightening terms and compare against the stored ones."""
        fresh = compute_tightening(scenario, self.grid, self.xi, self.bound_kind)
        same = (np.allclose(fresh.eps_tau, self.terms.eps_tau, rtol=0, atol=1e-12)
                and np.allclose(fresh.eps_b, self.terms.eps_b, rtol=0, atol=1e-12)
                and abs(fresh.eps_delta - self.terms.eps_delta) <= 1e-12)
        if not same:
            raise ParameterError(
                "stored tightening terms are inconsistent with the "
                "(xi, bound kind, grid) they claim to derive from")


class _AssembleView:
    """Scenario + config bundle consumed by the constraint assembler."""

    __slots__ = ("model", "policy", "h", "hb_list", "alpha", "alpha_b", "xi")

    def __init__(self, scenario, cfg: FilterConfig):
        self.model = scenario.model
        self.policy = scenario.policy
        self.h = scenario.h
        self.hb_list = scenario.hb_list
        self.alpha = cfg.alpha
        self.alpha_b = cfg.alpha_b
        self.xi = cfg.xi


@dataclass(frozen=True)
class FilterOutput:
    """Filtered control plus diagnostics for one state."""

    u_safe: Array
    mode: str
    qp: QpSolution
    margins: Array
    flow: Optional[FlowTrajectory] = None


@dataclass(frozen=True)
class CertifyResult:
    """Membership verdict with the worst margins per constraint family."""

    inside: bool
    trajectory_margin: float
    terminal_margins: Array

    @property
    def status(self) -> str:
        return INSIDE if self.inside else OUTSIDE


def filter_control(x, u_p, scenario, cfg: FilterConfig,
                   keep_flow: bool = False) -> FilterOutput:
    """Filter one primary control through the robustified QP."""
    x = np.asarray(x, dtype=float)
    u_p = np.asarray(u_p, dtype=float)
    trajectory = propagate_backup_flow(scenario.model, scenario.policy, x,
                                       cfg.grid, with_stm=True)
    rows = assemble_constraint_set(x, trajectory, cfg.terms,
                                   _AssembleView(scenario, cfg))
    problem = QpProblem(u_p=u_p,
                        rows=tuple((r.a, r.b) for r in rows.rows),
                        box=scenario.box)
    u_backup = np.asarray(scenario.policy.control(x), dtype=float)
    solution = solve_qp(problem, cfg.qp_settings, start_hint=u_backup)
    if solution.status == OPTIMAL:
        u_safe = solution.u
        mode = QP_OPTIMAL
    else:
        u_safe = u_backup
        mode = BACKUP_FALLBACK
        if solution.status != "infeasible":
            log.warning("QP solver failure at state %s; applying backup control", x)
    margins = rows.residuals(u_safe)
    return FilterOutput(u_safe=u_safe, mode=mode, qp=solution, margins=margins,
                        flow=trajectory if keep_flow else None)


def membership_from_flow(trajectory: FlowTrajectory, scenario,
                         terms: TighteningTerms) -> CertifyResult:
    """Membership test reusing an already-propagated nominal flow."""
    h_vals = np.array([scenario.h.value(s) for s in trajectory.states])
    traj_margin = float(np.min(h_vals - terms.eps_tau - terms.eps_delta))
    end = trajectory.states[-1]
    terminal = np.array([hb.value(end) for hb in scenario.hb_list]) - terms.eps_b
    inside = traj_margin >= 0.0 and bool(np.all(terminal >= 0.0))
    return CertifyResult(inside=inside, trajectory_margin=traj_margin,
                         terminal_margins=terminal)


def certify_membership(x, scenario, cfg: FilterConfig) -> CertifyResult:
    """Certify whether the tightened flow conditions hold from x.

    Inside means h along the nominal backup flow clears eps_tau plus the
    inter-sample margin at every grid time and every terminal constraint
    clears its eps_b at the horizon.
    """
    trajectory = propagate_backup_flow(scenario.model, scenario.policy,
                                       np.asarray(x, dtype=float), cfg.grid,
                                       with_stm=False)
    return membership_from_flow(trajectory, scenario, cfg.terms)
