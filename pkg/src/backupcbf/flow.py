"""Propagation of the backup flow and its sensitivity matrix.

The backup horizon is discretized on a fixed grid.  The state and the
sensitivity (state-transition) matrix are advanced jointly by classical
RK4, each stage evaluating the closed-loop Jacobian at that stage's state;
this makes the propagated sensitivity the exact Jacobian of the discrete
flow map, up to roundoff.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ParameterError, PropagationError
from .model import BackupPolicy, SystemModel

Array = np.ndarray


@dataclass(frozen=True)
class FlowGrid:
    """Uniform time grid 0, dt, 2*dt, ..., horizon with horizon = steps*dt."""

    horizon: float
    dt: float
    steps: int

    def __post_init__(self):
        if not self.horizon > 0 or not self.dt > 0 or self.steps <= 0:
            raise ParameterError("horizon, dt, and steps must be positive")
        if abs(self.steps * self.dt - self.horizon) > 1e-12 * max(1.0, self.horizon):
            raise ParameterError(
                f"steps*dt = {self.steps * self.dt!r} does not equal horizon "
                f"{self.horizon!r}"
            )

    @classmethod
    def from_horizon(cls, horizon: float, dt: float) -> "FlowGrid":
        """Strict constructor: horizon/dt must be an integer."""
        if not horizon > 0 or not dt > 0:
            raise ParameterError("horizon and dt must be positive")
        ratio = horizon / dt
        steps = int(round(ratio))
        if steps == 0 or abs(ratio - steps) > 1e-9 * max(1.0, ratio):
            raise ParameterError(
                f"backup horizon T={horizon} is not an integer multiple of "
                f"the step dt={dt} (T/dt={ratio})"
            )
        return cls(horizon, horizon / steps, steps)

    @classmethod
    def fit(cls, horizon: float, dt_max: float) -> "FlowGrid":
        """Snap the step downward so the horizon divides exactly.

        The realized step is horizon/ceil(horizon/dt_max), never coarser
        than the requested one.
        """
        if not horizon > 0 or not dt_max > 0:
            raise ParameterError("horizon and dt_max must be positive")
        steps = max(1, math.ceil(horizon / dt_max - 1e-9))
        return cls(horizon, horizon / steps, steps)

    @property
    def times(self) -> Array:
        return np.linspace(0.0, self.horizon, self.steps + 1)


@dataclass(frozen=True)
class FlowTrajectory:
    """Backup flow samples with paired sensitivity matrices.

    ``states[k]`` is the flow at ``times[k]`` from ``states[0]``;
    ``stms[k]`` is its Jacobian with respect to the initial state
    (``stms`` is None when propagated without sensitivities).
    """

    times: Array
    states: Array
    stms: Optional[Array]

    def __post_init__(self):
        n_pts = self.times.shape[0]
        if self.states.shape[0] != n_pts:
            raise ParameterError("states and times length mismatch")
        if self.stms is not None and self.stms.shape[0] != n_pts:
            raise ParameterError("stms and times length mismatch")


def _closed_loop(model: SystemModel, policy: BackupPolicy, x: Array) -> Array:
    return model.drift(x) + model.input_matrix(x) @ policy.control(x)


def rk4_step_augmented(model, policy, x, stm, dt):
    """One classical RK4 step of the augmented state/sensitivity system.

    Advances xdot = f_cl(x) and Mdot = F_cl(x) M jointly; each stage
    evaluates F_cl at that stage's state.  Pass ``stm=None`` to skip the
    sensitivity work.
    """
    if not dt > 0:
        raise ParameterError("dt must be positive")
    x = np.asarray(x, dtype=float)

    k1 = _closed_loop(model, policy, x)
    x2 = x + (0.5 * dt) * k1
    k2 = _closed_loop(model, policy, x2)
    x3 = x + (0.5 * dt) * k2
    k3 = _closed_loop(model, policy, x3)
    x4 = x + dt * k3
    k4 = _closed_loop(model, policy, x4)
    x_next = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    if not np.all(np.isfinite(x_next)):
        raise PropagationError("flow state became non-finite")

    if stm is None:
        return x_next, None

    stm = np.asarray(stm, dtype=float)
    m1 = policy.closed_loop_jacobian(x) @ stm
    m2 = policy.closed_loop_jacobian(x2) @ (stm + (0.5 * dt) * m1)
    m3 = policy.closed_loop_jacobian(x3) @ (stm + (0.5 * dt) * m2)
    m4 = policy.closed_loop_jacobian(x4) @ (stm + dt * m3)
    stm_next = stm + (dt / 6.0) * (m1 + 2.0 * m2 + 2.0 * m3 + m4)
    return x_next, stm_next


def propagate_backup_flow(model, policy, x0, grid: FlowGrid,
                          with_stm: bool = True) -> FlowTrajectory:
    """Propagate the backup flow (and sensitivities) over the whole grid."""
    x0 = np.asarray(x0, dtype=float)
    if not np.all(np.isfinite(x0)):
        raise PropagationError("initial state is not finite", step=0)
    n = x0.shape[0]

    states = np.empty((grid.steps + 1, n))
    states[0] = x0
    stms = None
    stm = None
    if with_stm:
        stms = np.empty((grid.steps + 1, n, n))
        stms[0] = np.eye(n)
        stm = stms[0]

    x = x0
    for k in range(grid.steps):
        try:
            x, stm = rk4_step_augmented(model, policy, x, stm, grid.dt)
        except PropagationError as err:
            raise PropagationError(
                f"flow propagation failed at step {k + 1}: {err}", step=k + 1
            ) from err
        states[k + 1] = x
        if with_stm:
            stms[k + 1] = stm

    return FlowTrajectory(times=grid.times, states=states, stms=stms)
