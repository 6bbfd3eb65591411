"""Deep BSDE losses, approximators and policy iteration for control-affine SDEs."""

from .approximators import Adam, LinearFamily, MlpBN, PolynomialFeedback, ZeroFn
from .estimators import BSDEEstimator, PolicyIterationController
from .losses import deep_bsde_loss, martingale_loss, measurability_loss
from .policy_iteration import PIConfig, run_policy_iteration
from .problems import example1_problem, lq_problem, make_problem, pendulum_problem
from .sde import NoiseScheme, TrajectoryBatch, make_grid, simulate_model_based, simulate_model_free

__version__ = "0.1.0"

__all__ = [
    "Adam", "BSDEEstimator", "LinearFamily", "MlpBN", "NoiseScheme", "PIConfig", "PolicyIterationController",
    "PolynomialFeedback", "TrajectoryBatch", "ZeroFn", "deep_bsde_loss", "example1_problem", "lq_problem",
    "make_grid", "make_problem", "martingale_loss", "measurability_loss", "pendulum_problem",
    "run_policy_iteration", "simulate_model_based", "simulate_model_free",
]
