"""Optimal production-rate control for the M/M/1 production-inventory CTMDP."""

from ._kernels import BACKEND
from .average import (AverageSolveReport, GainBias, acoe_residual, gain, poisson_solve,
                      policy_improvement_average, policy_iteration_average)
from .discounted import (DiscountedSolveReport, bellman_backup, hjb_residual_discounted,
                         policy_evaluation_discounted, policy_improvement_discounted,
                         policy_iteration_discounted, value_iteration)
from .model import (ActionGrid, ModelParams, State, build_action_grid, check_irreducibility,
                    constant_policy, stage_cost, transition_rates, uniformized_row,
                    validate_params)
from .pac_sim import pac_certify, pathwise_average_cost, simulate_trajectory
from .steady_state import (inventory_dist_analytic, invariant_measure_numeric,
                           joint_dist_analytic, stability_check)

__version__ = "0.1.0"
