"""Nonparametrically perturbed parametric Bayesian inference and its generalized-Bayes approximation."""

from .core import Component, Dataset, FunctionalPosterior, SeededRng, mix_posteriors, weighted_quantile
from .divergence import Kernel, KernelKind, ksd_u, median_heuristic, mmd2_u, mmd2_v, wasserstein_pp
from .gbf import Divergence, GbfConfig, MixtureWeight, generalized_bayes_factor, xi
from .parametric import ConjugateGaussianModel, SkewNormalTruth, gaussian_posterior, matched_skew_normal
from .polyatree import PolyaTreeConfig, PolyaTreeFit, pt_exact_mixing_weight, pt_log_marginal, pt_perturbation_evidence
from .npfunctional import (
    Mean,
    Median,
    Quantile,
    bayesian_bootstrap_posterior,
    dp_perturbation_weight,
    gnpp_functional_posterior,
    weighted_median,
)

__version__ = "0.1.0"
