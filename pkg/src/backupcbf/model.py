"""System, control-set, backup-policy, and constraint-function abstractions.

Everything here is a plain immutable value object wrapping user-supplied
callables.  All evaluators are pure functions of their inputs, so instances
are safe to share between threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DimensionMismatchError, ParameterError

Array = np.ndarray


def _as_vector(x, dim: int, what: str) -> Array:
    x = np.asarray(x, dtype=float)
    if x.shape != (dim,):
        raise DimensionMismatchError(f"{what} has shape {x.shape}, expected ({dim},)")
    return x


@dataclass(frozen=True)
class SystemModel:
    """Control-affine dynamics  xdot = drift(x) + input_matrix(x) @ u.

    ``domain_speed_bound`` is the supremum of the closed-loop backup speed
    over the scenario's operating domain; it feeds the inter-sample
    constraint margin and must be supplied (with its derivation documented)
    by the scenario.
    """

    state_dim: int
    control_dim: int
    drift: Callable[[Array], Array]
    input_matrix: Callable[[Array], Array]
    domain_speed_bound: float

    def __post_init__(self):
        if self.state_dim <= 0 or self.control_dim <= 0:
            raise ParameterError("state_dim and control_dim must be positive")
        if not np.isfinite(self.domain_speed_bound) or self.domain_speed_bound < 0:
            raise ParameterError("domain_speed_bound must be finite and nonnegative")


@dataclass(frozen=True)
class ControlPolytope:
    """Axis-aligned control box  lower <= u <= upper  (componentwise)."""

    lower: Array
    upper: Array

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lower.shape != upper.shape or lower.ndim != 1:
            raise ParameterError("lower/upper must be 1-d arrays of equal length")
        if np.any(lower > upper):
            raise ParameterError("empty control box: lower > upper")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def contains(self, u, tol: float = 0.0) -> bool:
        u = np.asarray(u, dtype=float)
        return bool(np.all(u >= self.lower - tol) and np.all(u <= self.upper + tol))

    def clip(self, u) -> Array:
        return np.clip(np.asarray(u, dtype=float), self.lower, self.upper)


@dataclass(frozen=True)
class BackupPolicy:
    """Backup control law together with its closed-loop metadata.

    ``closed_loop_jacobian(x)`` must be the Jacobian of
    ``drift(x) + input_matrix(x) @ control(x)`` at x.  ``lipschitz_cl``
    bounds that closed loop over the operating domain; ``contraction_rate``
    is present only when the closed loop is strongly contracting.
    """

    control: Callable[[Array], Array]
    closed_loop_jacobian: Callable[[Array], Array]
    lipschitz_cl: float
    contraction_rate: Optional[float] = None

    def __post_init__(self):
        if not self.lipschitz_cl > 0:
            raise ParameterError("lipschitz_cl must be positive")
        if self.contraction_rate is not None and not self.contraction_rate > 0:
            raise ParameterError("contraction_rate must be positive when given")


@dataclass(frozen=True)
class ConstraintFunction:
    """Scalar constraint with gradient and a Lipschitz constant.

    The safe region of the constraint is ``value(x) >= 0``.  ``lipschitz``
    is with respect to the Euclidean norm over the operating domain.
    """

    value: Callable[[Array], float]
    gradient: Callable[[Array], Array]
    lipschitz: float
    name: str = ""

    def __post_init__(self):
        if not self.lipschitz > 0:
            raise ParameterError("lipschitz must be positive")


@dataclass(frozen=True)
class ClassKappa:
    """Linear extended class-K function  s -> gain * s."""

    gain: float
    kind: str = "linear"

    def __post_init__(self):
        if self.kind != "linear":
            raise ParameterError(f"unsupported class-K kind: {self.kind!r}")
        if not self.gain > 0:
            raise ParameterError("gain must be positive")

    def __call__(self, s: float) -> float:
        return self.gain * s


@dataclass(frozen=True)
class DisturbanceBound:
    """Euclidean bound on the additive process disturbance; 0 disables it."""

    xi: float = 0.0

    def __post_init__(self):
        if not np.isfinite(self.xi) or self.xi < 0:
            raise ParameterError("xi must be finite and nonnegative")


def eval_dynamics(model: SystemModel, x, u) -> Array:
    """Evaluate drift(x) + input_matrix(x) @ u with dimension checks."""
    x = _as_vector(x, model.state_dim, "state")
    u = _as_vector(u, model.control_dim, "control")
    f = _as_vector(model.drift(x), model.state_dim, "drift output")
    g = np.asarray(model.input_matrix(x), dtype=float)
    if g.shape != (model.state_dim, model.control_dim):
        raise DimensionMismatchError(
            f"input matrix has shape {g.shape}, expected "
            f"({model.state_dim}, {model.control_dim})"
        )
    return f + g @ u


def eval_backup_closed_loop(model: SystemModel, policy: BackupPolicy, x) -> Array:
    """Evaluate the closed-loop vector field under the backup law."""
    x = _as_vector(x, model.state_dim, "state")
    return eval_dynamics(model, x, policy.control(x))


def eval_class_kappa(alpha: ClassKappa, s: float) -> float:
    """Apply the (extended) class-K function to a real argument."""
    return alpha(s)
