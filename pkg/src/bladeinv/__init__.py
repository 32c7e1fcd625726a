"""Derivative-free Bayesian inversion with split-Gibbs ensembles and diffusion-style priors."""

__version__ = "0.1.0"

from bladeinv.ensemble import (
    Ensemble,
    EnsembleSqrt,
    SpanTracker,
    apply_sqrt_noise,
    ensemble_cov,
    ensemble_mean,
    ensemble_sqrt,
    span_update,
)
from bladeinv.forward import (
    AbsLinearModel,
    ForwardModel,
    LinearModel,
    Observation,
    QuadraticModel,
    TestInstance,
    likelihood_potential,
    make_test_instance,
)
from bladeinv.gibbs import GibbsConfig, EksConfig, RunRecord, initialize, rho_schedule, run_blade, run_eks
from bladeinv.likelihood import LikelihoodConfig, coupling_drift, data_drift, likelihood_step, resample
from bladeinv.priors import GaussianPrior, GmmPrior, PriorScore, score_self_test
from bladeinv.prior_step import PriorStepConfig, entry_index, karras_grid, prior_step, sample_prior
from bladeinv.errors import NumericalAbort, ConfigError

__all__ = [
    "AbsLinearModel",
    "ConfigError",
    "EksConfig",
    "Ensemble",
    "EnsembleSqrt",
    "ForwardModel",
    "GaussianPrior",
    "GibbsConfig",
    "GmmPrior",
    "LikelihoodConfig",
    "LinearModel",
    "NumericalAbort",
    "Observation",
    "PriorScore",
    "PriorStepConfig",
    "QuadraticModel",
    "RunRecord",
    "SpanTracker",
    "TestInstance",
    "apply_sqrt_noise",
    "coupling_drift",
    "data_drift",
    "ensemble_cov",
    "ensemble_mean",
    "ensemble_sqrt",
    "entry_index",
    "initialize",
    "karras_grid",
    "likelihood_potential",
    "likelihood_step",
    "make_test_instance",
    "prior_step",
    "resample",
    "rho_schedule",
    "run_blade",
    "run_eks",
    "sample_prior",
    "score_self_test",
    "span_update",
]
