"""Penalised Follow-The-Regularized-Leader for online convex optimisation under time-varying constraints."""

from .algorithms import (
    AlgorithmConfig,
    exact_penalty_static_solve,
    ftl_penalty_only,
    run,
    run_penalized_ftrl,
    run_primal_dual,
    run_primal_dual_averaged,
)
from .functions import Affine, BoxDomain, Constant, QuadraticDiag, evaluate, lipschitz_on_box, subgrad
from .generators import ActivationRate, FamilySpec, FamilyStream, IID, Periodic, Perturbed
from .model import FixedStream, ProblemInstance, RunTrace, ScaledSqNorm
from .penalty import PenaltyState, eval_h, eval_prefix_penalty, gamma_certificate, gamma_threshold

__version__ = "0.1.0"

__all__ = [
    "Affine",
    "ActivationRate",
    "AlgorithmConfig",
    "BoxDomain",
    "Constant",
    "FamilySpec",
    "FamilyStream",
    "FixedStream",
    "IID",
    "PenaltyState",
    "Periodic",
    "Perturbed",
    "ProblemInstance",
    "QuadraticDiag",
    "RunTrace",
    "ScaledSqNorm",
    "eval_h",
    "eval_prefix_penalty",
    "evaluate",
    "exact_penalty_static_solve",
    "ftl_penalty_only",
    "gamma_certificate",
    "gamma_threshold",
    "lipschitz_on_box",
    "run",
    "run_penalized_ftrl",
    "run_primal_dual",
    "run_primal_dual_averaged",
    "subgrad",
]
