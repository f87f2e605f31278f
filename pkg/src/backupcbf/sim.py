"""Closed-loop simulation of the disturbed plant under the filtered controller.

The plant integrates the true disturbed dynamics with RK4 and a zero-order
hold on the control between filter calls.  The disturbance is known to the
plant as a function of time but is never read by the filter, which only
sees the disturbance *bound* through its precomputed tightening terms.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from .bounds import CONTRACTION, GRONWALL
from .errors import ParameterError, PropagationError
from .filtering import (BACKUP_FALLBACK, FilterConfig, filter_control,
                        membership_from_flow)
from .flow import FlowGrid
from .model import (BackupPolicy, ClassKappa, ConstraintFunction,
                    ControlPolytope, DisturbanceBound, SystemModel)

Array = np.ndarray

CONSTANT_DIRECTION = "constant_direction"
SINUSOIDAL_DIRECTION = "sinusoidal_direction"
RANDOM_PIECEWISE = "random_piecewise"


@dataclass(frozen=True)
class DisturbanceSignal:
    """Time signal with Euclidean norm bounded by xi at every instant."""

    kind: str
    dim: int
    xi: float
    direction: Optional[Array] = None
    frequency: Optional[Array] = None
    phase: Optional[Array] = None
    seed: int = 0
    hold: float = 0.05

    def __post_init__(self):
        if self.xi < 0:
            raise ParameterError("xi must be nonnegative")
        if self.kind == CONSTANT_DIRECTION:
            v = np.asarray(self.direction, dtype=float)
            norm = float(np.linalg.norm(v))
            if v.shape != (self.dim,) or norm == 0.0:
                raise ParameterError("constant disturbance needs a nonzero direction")
            object.__setattr__(self, "direction", v / norm)
        elif self.kind == SINUSOIDAL_DIRECTION:
            freq = np.asarray(self.frequency, dtype=float)
            phase = np.asarray(self.phase, dtype=float)
            if freq.shape != (self.dim,) or phase.shape != (self.dim,):
                raise ParameterError("sinusoidal disturbance needs frequency and "
                                     "phase vectors of the state dimension")
            object.__setattr__(self, "frequency", freq)
            object.__setattr__(self, "phase", phase)
        elif self.kind == RANDOM_PIECEWISE:
            if not self.hold > 0:
                raise ParameterError("hold time must be positive")
        else:
            raise ParameterError(f"unknown disturbance kind: {self.kind!r}")

    def __call__(self, t: float) -> Array:
        return disturbance_signal(self, t)


def disturbance_signal(d: DisturbanceSignal, t: float) -> Array:
    """Evaluate the disturbance at time t >= 0."""
    if t < 0:
        raise ParameterError("disturbance time must be nonnegative")
    if d.xi == 0.0:
        return np.zeros(d.dim)
    if d.kind == CONSTANT_DIRECTION:
        return d.xi * d.direction
    if d.kind == SINUSOIDAL_DIRECTION:
        v = np.sin(d.frequency * t + d.phase)
        norm = float(np.linalg.norm(v))
        if norm == 0.0:
            return np.zeros(d.dim)
        return (d.xi / norm) * v
    # random piecewise-constant: deterministic random access per hold interval
    interval = int(t / d.hold + 1e-12)
    rng = np.random.default_rng([d.seed, interval])
    raw = rng.standard_normal(d.dim)
    norm = float(np.linalg.norm(raw))
    if norm == 0.0:
        return np.zeros(d.dim)
    radius = rng.random() ** (1.0 / d.dim)
    return (d.xi * radius / norm) * raw


@dataclass(frozen=True)
class GridAxis:
    """One swept state dimension of a certification grid."""

    dim: int
    lo: float
    hi: float
    num: int


@dataclass(frozen=True)
class Scenario:
    """Everything needed to filter and simulate one system."""

    name: str
    model: SystemModel
    box: ControlPolytope
    policy: BackupPolicy
    h: ConstraintFunction
    hb_list: Tuple[ConstraintFunction, ...]
    alpha: ClassKappa
    alpha_b: ClassKappa
    xi: DisturbanceBound
    bound_kind: str
    grid: FlowGrid
    disturbance: DisturbanceSignal
    primary: Callable[[float, Array], Array]
    x0: Array
    sim_horizon: float
    sim_dt: float
    certify_axes: Tuple[GridAxis, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float))
        if not self.sim_horizon > 0 or not self.sim_dt > 0:
            raise ParameterError("sim horizon and step must be positive")


@dataclass
class SimResult:
    """Uniform-grid time series of one closed-loop run."""

    scenario: str
    robust: bool
    sim_dt: float
    t: Array
    states: Array
    u_primary: Array
    u_safe: Array
    mode: List[str]
    h: Array
    min_margin: Array
    cert: List[str]
    qp_iterations: Array
    step_us: Array
    aborted: bool = False
    abort_step: Optional[int] = None

    def summary(self) -> Dict:
        solve = self.step_us
        return {
            "scenario": self.scenario,
            "robust": self.robust,
            "steps": int(self.t.shape[0]),
            "sim_dt": self.sim_dt,
            "min_h": float(np.min(self.h)),
            "violation_count": int(np.sum(self.h < 0.0)),
            "fallback_count": int(sum(m == BACKUP_FALLBACK for m in self.mode)),
            "outside_ci_count": int(sum(c == "outside_Ci" for c in self.cert)),
            "mean_solve_us": float(np.mean(solve)) if solve.size else 0.0,
            "p99_solve_us": float(np.percentile(solve, 99)) if solve.size else 0.0,
            "aborted": self.aborted,
        }


def _plant_rk4(model: SystemModel, x: Array, u: Array,
               disturbance: DisturbanceSignal, t: float, dt: float) -> Array:
    def xdot(ts: float, xs: Array) -> Array:
        return (model.drift(xs) + model.input_matrix(xs) @ u
                + disturbance_signal(disturbance, ts))

    k1 = xdot(t, x)
    k2 = xdot(t + 0.5 * dt, x + (0.5 * dt) * k1)
    k3 = xdot(t + 0.5 * dt, x + (0.5 * dt) * k2)
    k4 = xdot(t + dt, x + dt * k3)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def simulate_closed_loop(scenario: Scenario, robust: bool = True) -> SimResult:
    """Run the filtered, disturbed closed loop over the scenario horizon.

    ``robust=False`` zeroes the disturbance bound inside the filter only;
    the plant still sees the full disturbance.  The result has one row per
    filter call including a final, unapplied evaluation at the end state.
    """
    xi_filter = scenario.xi if robust else DisturbanceBound(0.0)
    cfg = FilterConfig.for_scenario(scenario, xi=xi_filter)
    steps = int(round(scenario.sim_horizon / scenario.sim_dt))
    if steps <= 0:
        raise ParameterError("simulation horizon shorter than one step")

    n, m = scenario.model.state_dim, scenario.model.control_dim
    t_grid = np.arange(steps + 1) * scenario.sim_dt
    states = np.empty((steps + 1, n))
    u_primary = np.empty((steps + 1, m))
    u_safe = np.empty((steps + 1, m))
    h_vals = np.empty(steps + 1)
    min_margin = np.empty(steps + 1)
    qp_iters = np.empty(steps + 1, dtype=int)
    step_us = np.empty(steps + 1)
    modes: List[str] = []
    certs: List[str] = []

    x = scenario.x0.copy()
    aborted = False
    abort_step = None
    k = 0
    for k in range(steps + 1):
        t = float(t_grid[k])
        u_p = np.asarray(scenario.primary(t, x), dtype=float)
        tic = time.perf_counter()
        try:
            out = filter_control(x, u_p, scenario, cfg, keep_flow=True)
        except PropagationError:
            aborted = True
            abort_step = k
            break
        step_us[k] = (time.perf_counter() - tic) * 1e6
        cert = membership_from_flow(out.flow, scenario, cfg.terms)

        states[k] = x
        u_primary[k] = u_p
        u_safe[k] = out.u_safe
        modes.append(out.mode)
        certs.append(cert.status)
        h_vals[k] = scenario.h.value(x)
        min_margin[k] = float(np.min(out.margins))
        qp_iters[k] = out.qp.iterations

        if k < steps:
            x = _plant_rk4(scenario.model, x, out.u_safe, scenario.disturbance,
                           t, scenario.sim_dt)
            if not np.all(np.isfinite(x)):
                aborted = True
                abort_step = k + 1
                break

    end = k if aborted else steps + 1
    return SimResult(
        scenario=scenario.name, robust=robust, sim_dt=scenario.sim_dt,
        t=t_grid[:end], states=states[:end], u_primary=u_primary[:end],
        u_safe=u_safe[:end], mode=modes[:end], h=h_vals[:end],
        min_margin=min_margin[:end], cert=certs[:end],
        qp_iterations=qp_iters[:end], step_us=step_us[:end],
        aborted=aborted, abort_step=abort_step)


def double_integrator_scenario(xi: float = 0.08, horizon: float = 1.25,
                               dt: float = 0.02, alpha: float = 5.0,
                               alpha_b: float = 5.0,
                               x0=(-1.0, 0.0), sim_horizon: float = 8.0,
                               sim_dt: Optional[float] = None,
                               seed: int = 0) -> Scenario:
    """Braking-before-a-wall benchmark.

    State (position, velocity), input acceleration in [-1, 1]; safe set is
    the left half-plane position <= 0.  The backup law is full braking
    u_b = -1, which reaches the backup set {position <= 0, velocity <= 0}.

    Documented constants (operating domain: position in [-5, 0], velocity
    in [-2, 2]):

    * closed-loop Jacobian [[0, 1], [0, 0]] has spectral norm 1, so the
      closed-loop Lipschitz constant is 1 (not contracting: growth bound).
    * grad h = [-1, 0] everywhere, so L_h = 1; both backup half-planes
      likewise have unit gradients.
    * speed bound sup ||(velocity, -1)|| = sqrt(2^2 + 1) = sqrt(5).

    The requested flow step is snapped downward when the horizon is not an
    integer multiple of it.  The default initial state and simulation
    horizon are benchmark choices, not externally mandated values.
    """
    drift = lambda x: np.array([x[1], 0.0])
    g_mat = np.array([[0.0], [1.0]])
    input_matrix = lambda x: g_mat
    model = SystemModel(state_dim=2, control_dim=1, drift=drift,
                        input_matrix=input_matrix,
                        domain_speed_bound=math.sqrt(5.0))
    box = ControlPolytope(lower=np.array([-1.0]), upper=np.array([1.0]))
    u_b = np.array([-1.0])
    f_cl_jac = np.array([[0.0, 1.0], [0.0, 0.0]])
    policy = BackupPolicy(control=lambda x: u_b,
                          closed_loop_jacobian=lambda x: f_cl_jac,
                          lipschitz_cl=1.0, contraction_rate=None)
    h = ConstraintFunction(value=lambda x: -x[0],
                           gradient=lambda x: np.array([-1.0, 0.0]),
                           lipschitz=1.0, name="position")
    hb_pos = ConstraintFunction(value=lambda x: -x[0],
                                gradient=lambda x: np.array([-1.0, 0.0]),
                                lipschitz=1.0, name="backup_position")
    hb_vel = ConstraintFunction(value=lambda x: -x[1],
                                gradient=lambda x: np.array([0.0, -1.0]),
                                lipschitz=1.0, name="backup_velocity")
    grid = FlowGrid.fit(horizon, dt)
    disturbance = DisturbanceSignal(kind=CONSTANT_DIRECTION, dim=2, xi=xi,
                                    direction=np.array([1.0, 1.0]), seed=seed)
    return Scenario(
        name="double_integrator", model=model, box=box, policy=policy, h=h,
        hb_list=(hb_pos, hb_vel), alpha=ClassKappa(alpha),
        alpha_b=ClassKappa(alpha_b), xi=DisturbanceBound(xi),
        bound_kind=GRONWALL, grid=grid, disturbance=disturbance,
        primary=lambda t, x: np.array([1.0]),
        x0=np.asarray(x0, dtype=float), sim_horizon=sim_horizon,
        sim_dt=sim_dt if sim_dt is not None else grid.dt,
        certify_axes=(GridAxis(0, -5.0, 0.0, 41), GridAxis(1, -2.0, 2.0, 33)))


def spacecraft_scenario(k_b: float = 1.0, xi: float = 0.1,
                        omega_max: float = 1.0, gamma: float = 2.0,
                        horizon: float = 1.75, dt: float = 0.05,
                        alpha: float = 2.0, alpha_b: float = 2.0,
                        x0=(0.0, 0.0, 0.0), sim_horizon: float = 60.0,
                        sim_dt: Optional[float] = None,
                        seed: int = 0) -> Scenario:
    """Rigid-body rate limiting with gyroscopic dynamics.

    State: body angular velocity; input: torque in [-1, 1]^3 Nm; inertia
    diag(12, 12, 5) kg m^2.  Safe set: rate norm at most omega_max.  The
    backup law cancels the gyroscopic torque and adds rate damping, giving
    a closed loop of pure decay at rate k_b toward the origin, inside the
    rotational-energy backup set {1/2 w' J w <= gamma}.

    Documented constants (operating domain: the ball ||w|| <= omega_max,
    which the contracting backup flow never leaves):

    * closed loop -k_b * w: Lipschitz constant and contraction rate k_b
      (log norm of -k_b I); speed bound k_b * omega_max.
    * grad h = -2 w', so L_h = 2 * omega_max.
    * grad h_b = -(J w)', so L_hb = max inertia * omega_max = 12.
    * damping gains k_b > (max inertia * xi) / sqrt(2 * gamma * min inertia)
      = 0.2683 keep the backup set invariant under any admissible
      disturbance; the default k_b = 1 satisfies this with margin.

    Note the backup torque exceeds the box away from the origin with these
    inertias (||J w|| is large already at moderate rates); the filter's QP
    output is always box-feasible, but a direct fallback application of the
    backup law is physically saturated.  Initial state and simulation
    horizon are benchmark choices.
    """
    inertia_diag = np.array([12.0, 12.0, 5.0])
    inertia = np.diag(inertia_diag)
    inertia_inv = np.diag(1.0 / inertia_diag)

    def gyroscopic(w):
        # w x (J w), written out: np.cross is slow for single 3-vectors
        jw = inertia_diag * w
        return np.array([w[1] * jw[2] - w[2] * jw[1],
                         w[2] * jw[0] - w[0] * jw[2],
                         w[0] * jw[1] - w[1] * jw[0]])

    drift = lambda w: -inertia_inv @ gyroscopic(w)
    input_matrix = lambda w: inertia_inv
    model = SystemModel(state_dim=3, control_dim=3, drift=drift,
                        input_matrix=input_matrix,
                        domain_speed_bound=k_b * omega_max)
    box = ControlPolytope(lower=-np.ones(3), upper=np.ones(3))
    jac_cl = -k_b * np.eye(3)
    policy = BackupPolicy(
        control=lambda w: -k_b * (inertia @ w) + gyroscopic(w),
        closed_loop_jacobian=lambda w: jac_cl,
        lipschitz_cl=k_b, contraction_rate=k_b)
    h = ConstraintFunction(value=lambda w: omega_max ** 2 - float(w @ w),
                           gradient=lambda w: -2.0 * w,
                           lipschitz=2.0 * omega_max, name="rate_norm")
    h_b = ConstraintFunction(
        value=lambda w: gamma - 0.5 * float(w @ (inertia @ w)),
        gradient=lambda w: -(inertia @ w),
        lipschitz=12.0 * omega_max, name="rotational_energy")
    grid = FlowGrid.fit(horizon, dt)
    disturbance = DisturbanceSignal(
        kind=SINUSOIDAL_DIRECTION, dim=3, xi=xi,
        frequency=np.array([0.5, 0.5, 0.5]),
        phase=np.array([math.pi / 2.0, 0.0, -math.pi / 2.0]), seed=seed)
    primary = lambda t, x: np.sin(np.array(
        [t / 2.0, t / 2.0 - math.pi / 4.0, t / 4.0 + math.pi / 4.0]))
    return Scenario(
        name="spacecraft", model=model, box=box, policy=policy, h=h,
        hb_list=(h_b,), alpha=ClassKappa(alpha), alpha_b=ClassKappa(alpha_b),
        xi=DisturbanceBound(xi), bound_kind=CONTRACTION, grid=grid,
        disturbance=disturbance, primary=primary,
        x0=np.asarray(x0, dtype=float), sim_horizon=sim_horizon,
        sim_dt=sim_dt if sim_dt is not None else grid.dt,
        certify_axes=(GridAxis(0, -1.2, 1.2, 25), GridAxis(2, -1.2, 1.2, 25)))


def builtin_scenarios() -> Dict[str, Scenario]:
    """Fresh instances of the two bundled scenarios with default parameters."""
    return {
        "double_integrator": double_integrator_scenario(),
        "spacecraft": spacecraft_scenario(),
    }
