"""Inner-problem solvers and optimality verifiers."""

from .qp import InnerProblem, QPResult, SolverError, default_grid, solve_retention_qp
from .quantile import (AssumptionViolation, PsiSolution, QuantileGrid, psi_from_retention,
                       quantile_grid, retention_from_psi, solve_nodes_by_qp, solve_quantile_ode,
                       solve_single_obstacle_concave)
from .verify import PhiMismatch, directional_values, phi_eval, verify_condition_I, verify_oide

__all__ = ["InnerProblem", "QPResult", "SolverError", "default_grid", "solve_retention_qp",
           "AssumptionViolation", "PsiSolution", "QuantileGrid", "psi_from_retention",
           "quantile_grid", "retention_from_psi", "solve_nodes_by_qp", "solve_quantile_ode",
           "solve_single_obstacle_concave", "PhiMismatch", "directional_values", "phi_eval",
           "verify_condition_I", "verify_oide"]
