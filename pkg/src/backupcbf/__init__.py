"""Safety filtering with disturbance-robust backup control barrier functions.

Builds a forward-invariant set online by propagating the backup flow and
its sensitivity matrix, tightens the resulting constraints by worst-case
flow-deviation bounds, and projects an arbitrary primary control onto the
robustified constraint set through a small QP.
"""

from .bounds import (CONTRACTION, GRONWALL, DeviationBound, TighteningTerms,
                     contraction_delta_max, discretization_margin,
                     gronwall_delta_max, tightening_epsilons)
from .constraints import (ConstraintRow, ConstraintSet, assemble_constraint_set,
                          robustness_term, terminal_constraint_row,
                          trajectory_constraint_row)
from .errors import (BackupCbfError, ConfigError, DimensionMismatchError,
                     ParameterError, PropagationError)
from .filtering import (BACKUP_FALLBACK, QP_OPTIMAL, CertifyResult,
                        FilterConfig, FilterOutput, certify_membership,
                        compute_tightening, filter_control,
                        membership_from_flow)
from .flow import (FlowGrid, FlowTrajectory, propagate_backup_flow,
                   rk4_step_augmented)
from .model import (BackupPolicy, ClassKappa, ConstraintFunction,
                    ControlPolytope, DisturbanceBound, SystemModel,
                    eval_backup_closed_loop, eval_class_kappa, eval_dynamics)
from .qp import (INFEASIBLE, OPTIMAL, SOLVER_FAILURE, QpProblem, QpSettings,
                 QpSolution, check_feasible, solve_qp)
from .sim import (DisturbanceSignal, GridAxis, Scenario, SimResult,
                  builtin_scenarios, disturbance_signal,
                  double_integrator_scenario, simulate_closed_loop,
                  spacecraft_scenario)

__version__ = "0.1.0"
