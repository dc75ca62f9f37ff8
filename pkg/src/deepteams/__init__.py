"""Linear-quadratic deep structured teams.

Model definition and aggregation, gauge decomposition, decoupled Riccati
solvers, exact policy gradients (risk-sensitive and risk-neutral), Monte-
Carlo simulation, and model-free sphere-smoothing learning.
"""

from .errors import (ConfigError, DeepTeamsError, FeasibilityLost, MGFOverflow,
                     ModelDimensionError, NoConvergence, NotWeaklyCoupled,
                     NumericOverflow, SingularCovariance,
                     TooManyUnstableSamples, UnstablePolicy)
from .gauge import (deep_project, expand_policy, gauge_residual,
                    noise_covariance, team_cost)
from .model import (AggregatedModel, DeltaBlock, Policy, SubPopulationSpec,
                    TeamModel, ValidationReport, aggregate, closed_loop_radii,
                    is_stable_policy, is_weakly_coupled, policy_distance,
                    validate_model, zero_policy)
from .modelfile import (parse_model, parse_policy, serialize_model,
                        serialize_policy)
from .pg_exact import (GradientBundle, PolicyEvaluation, evaluate, gradient,
                       npg_step, pg_step, random_stable_policy, run)
from .pg_zeroth import (EmpiricalGradient, PerturbationSample,
                        empirical_gradient, learn, sample_sphere)
from .presets import default_params, example1, example2, preset
from .riccati import (RiccatiSolution, optimal_policy, solve,
                      solve_deep_riccati, solve_delta_riccati,
                      solve_weakly_coupled)
from .sim import (ObjectiveEstimate, Trajectory, deep_trajectory,
                  estimate_risk_neutral, estimate_risk_sensitive,
                  recompute_costs, rollout)
from .trace import RunTrace, TraceRow

__version__ = "0.1.0"
