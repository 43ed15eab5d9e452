"""Bayesian change point detection with Dirichlet-process segment classes."""

from .errors import InvalidArgumentError, NumericalDomainError
from .marginal import PosteriorEvaluator, log_marginal_class, log_posterior_tau_k, log_prior_tau
from .model import ClassAssignment, ClassParams, Hyperparameters, Segmentation, TimeSeries
from .sampler import ChangePointSampler, PosteriorSummary, run_chain, summarize

__all__ = [
    "ChangePointSampler",
    "ClassAssignment",
    "ClassParams",
    "Hyperparameters",
    "InvalidArgumentError",
    "NumericalDomainError",
    "PosteriorEvaluator",
    "PosteriorSummary",
    "Segmentation",
    "TimeSeries",
    "log_marginal_class",
    "log_posterior_tau_k",
    "log_prior_tau",
    "run_chain",
    "summarize",
]
