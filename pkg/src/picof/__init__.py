"""Physics-informed correction factors for surrogate-based optimization."""

from .gp import (
    Dataset,
    GpHyperparams,
    GpModel,
    SurrogateBundle,
    bundle_predict,
    fit,
    log_marginal_likelihood,
    optimize_hyperparams,
    predict,
)
from .outer import OuterProblem, RtoLoop, SolverConfig, evaluate, solve_outer
from .physics import PhysicsSystem, jacobian_wrt_outputs, residuals
from .reconcile import (
    CorrectionMode,
    ReconciliationResult,
    WeightMode,
    WeightPolicy,
    compute_weights,
    reconcile,
    solve_affine,
    solve_gauss_newton,
)

__version__ = "0.1.0"
