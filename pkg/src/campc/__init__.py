"""Constraint-adaptive linear MPC toolkit.

Condenses a finite-horizon linear MPC problem into a multiparametric QP,
computes an explicit Lipschitz constant of its solution map, and uses
closed-loop history to drop provably redundant constraint rows before
each solve while keeping the trajectory identical to the full problem.
"""

from .engine import (
    CaMpcEngine,
    EquivalenceReport,
    FullMpc,
    HistoryRecord,
    HistoryStore,
    RemovalReport,
    certify_equivalence,
    linear_plant,
    removal_set,
    run_closed_loop,
    seeded_store,
)
from .lipschitz import (
    LipschitzCertificate,
    kappa_max,
    kappa_max_scaled,
    row_norm_scaling,
    validate_bound,
)
from .model import MpcProblem, MpQp, check_feasible, condense, evaluate_cost
from .qp import ActiveSetSolver, QpSolution, Status, kkt_residuals, solve, solve_oracle

__all__ = [
    "ActiveSetSolver",
    "CaMpcEngine",
    "EquivalenceReport",
    "FullMpc",
    "HistoryRecord",
    "HistoryStore",
    "LipschitzCertificate",
    "MpQp",
    "MpcProblem",
    "QpSolution",
    "RemovalReport",
    "Status",
    "certify_equivalence",
    "check_feasible",
    "condense",
    "evaluate_cost",
    "kappa_max",
    "kappa_max_scaled",
    "kkt_residuals",
    "linear_plant",
    "removal_set",
    "row_norm_scaling",
    "run_closed_loop",
    "seeded_store",
    "solve",
    "solve_oracle",
    "validate_bound",
]

__version__ = "0.1.0"
