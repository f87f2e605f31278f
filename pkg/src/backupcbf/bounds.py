"""Flow-deviation bounds and the constraint-tightening terms built from them.

The deviation bound dominates the distance between the nominal backup flow
and any disturbed backup flow at each grid time.  Two forms are provided:
an exponential-growth bound valid for any Lipschitz closed loop, and a
saturating bound for strongly contracting closed loops.  Tightening terms
scale the bound by the constraint Lipschitz constants and are precomputed
once per scenario.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ParameterError
from .flow import FlowGrid
from .model import ConstraintFunction, DisturbanceBound, SystemModel

Array = np.ndarray

GRONWALL = "gronwall"
CONTRACTION = "contraction"


@dataclass(frozen=True)
class DeviationBound:
    """delta_max at each grid time: values[k] bounds the flow deviation at tau_k."""

    kind: str
    values: Array

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if self.kind not in (GRONWALL, CONTRACTION):
            raise ParameterError(f"unknown deviation bound kind: {self.kind!r}")
        if values.ndim != 1 or values.shape[0] < 1:
            raise ParameterError("values must be a 1-d array")
        if abs(values[0]) > 0.0:
            raise ParameterError("deviation bound must start at zero")
        if np.any(np.diff(values) < -1e-15):
            raise ParameterError("deviation bound must be nondecreasing")
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class TighteningTerms:
    """Margins subtracted from the constraint values in the filter.

    ``eps_tau[k]`` tightens the trajectory constraint at grid time tau_k,
    ``eps_b[j]`` tightens the j-th terminal constraint, and ``eps_delta``
    covers inter-sample violation between grid times.  All vanish when the
    disturbance bound is zero (eps_delta additionally needs dt -> 0).
    """

    eps_tau: Array
    eps_b: Array
    eps_delta: float

    def __post_init__(self):
        eps_tau = np.asarray(self.eps_tau, dtype=float)
        eps_b = np.atleast_1d(np.asarray(self.eps_b, dtype=float))
        if np.any(eps_tau < 0) or np.any(eps_b < 0) or self.eps_delta < 0:
            raise ParameterError("tightening terms must be nonnegative")
        object.__setattr__(self, "eps_tau", eps_tau)
        object.__setattr__(self, "eps_b", eps_b)


def gronwall_delta_max(xi: DisturbanceBound, lipschitz_cl: float,
                       grid: FlowGrid) -> DeviationBound:
    """Exponential deviation bound (xi/L)(e^{L tau} - 1) on the grid."""
    if not lipschitz_cl > 0:
        raise ParameterError("lipschitz_cl must be positive")
    values = (xi.xi / lipschitz_cl) * np.expm1(lipschitz_cl * grid.times)
    return DeviationBound(GRONWALL, values)


def contraction_delta_max(xi: DisturbanceBound, rate: float,
                          grid: FlowGrid) -> DeviationBound:
    """Saturating deviation bound (xi/c)(1 - e^{-c tau}), bounded by xi/c."""
    if rate is None or not rate > 0:
        raise ParameterError("contraction rate must be positive")
    values = (xi.xi / rate) * (-np.expm1(-rate * grid.times))
    return DeviationBound(CONTRACTION, values)


def tightening_epsilons(delta: DeviationBound, h: ConstraintFunction,
                        hb_list: Sequence[ConstraintFunction]) -> TighteningTerms:
    """Minimal admissible margins: eps_tau = L_h*delta, eps_b = L_hb*delta(T).

    The inter-sample margin is left at zero here; combine with
    :func:`discretization_margin` for the full set of terms.
    """
    eps_tau = h.lipschitz * delta.values
    eps_b = np.array([hb.lipschitz * delta.values[-1] for hb in hb_list])
    return TighteningTerms(eps_tau=eps_tau, eps_b=eps_b, eps_delta=0.0)


def discretization_margin(h: ConstraintFunction, model: SystemModel,
                          xi: DisturbanceBound, grid: FlowGrid) -> float:
    """Minimal inter-sample margin (dt/2) * L_h * (speed bound + xi)."""
    return 0.5 * grid.dt * h.lipschitz * (model.domain_speed_bound + xi.xi)
