"""Bayesian-bootstrap functional posteriors and their gNPP mixtures."""

from __future__ import annotations

import abc
import math

import numpy as np

from .core import Component, Dataset, FunctionalPosterior, WEIGHT_TOL, as_generator, mix_posteriors
from .gbf import GbfConfig, MixtureWeight, generalized_bayes_factor
from .parametric import ConjugateGaussianModel, ParametricModel

DEFAULT_DRAWS = 2000


def _check_weights(weights: np.ndarray) -> None:
    if np.any(weights < 0) or abs(weights.sum() - 1.0) > WEIGHT_TOL:
        raise ValueError("weights must be nonnegative and sum to 1")


def weighted_median(points, weights) -> float:
    """Left-continuous weighted 0.5-quantile; minimizes the weighted absolute loss."""
    x = np.asarray(points, dtype=float).ravel()
    w = np.asarray(weights, dtype=float).ravel()
    if x.size == 0 or x.shape != w.shape:
        raise ValueError("points and weights must be nonempty and of equal length")
    _check_weights(w)
    order = np.argsort(x, kind="stable")
    cum = np.cumsum(w[order])
    k = int(np.searchsorted(cum, 0.5 - WEIGHT_TOL, side="left"))
    return float(x[order[min(k, x.size - 1)]])


def _weighted_quantiles_sorted(xs: np.ndarray, w_sorted: np.ndarray, q: float) -> np.ndarray:
    """Row-wise left-continuous quantile for weight rows already aligned with sorted ``xs``."""
    cum = np.cumsum(w_sorted, axis=1)
    k = np.argmax(cum >= q - WEIGHT_TOL, axis=1)
    return xs[k]


class Functional(abc.ABC):
    """A real functional of a weighted empirical measure on the real line."""

    @abc.abstractmethod
    def evaluate(self, points: np.ndarray, weights: np.ndarray) -> float:
        ...

    def evaluate_many(self, points: np.ndarray, weight_rows: np.ndarray) -> np.ndarray:
        """One value per row of ``weight_rows``."""
        return np.array([self.evaluate(points, w) for w in weight_rows])

    def parametric(self, theta: np.ndarray, model: ParametricModel) -> np.ndarray:
        """Functional of ``p_theta`` for each parameter draw."""
        raise NotImplementedError(f"{type(self).__name__} has no parametric pushforward for {type(model).__name__}")


class Mean(Functional):
    def evaluate(self, points, weights):
        return float(np.dot(weights, np.asarray(points, dtype=float).ravel()))

    def evaluate_many(self, points, weight_rows):
        return weight_rows @ np.asarray(points, dtype=float).ravel()

    def parametric(self, theta, model):
        if isinstance(model, ConjugateGaussianModel):
            return np.asarray(theta, dtype=float)
        return super().parametric(theta, model)


class Quantile(Functional):
    def __init__(self, q: float):
        if not 0.0 <= q <= 1.0:
            raise ValueError("q must lie in [0, 1]")
        self.q = q

    def evaluate(self, points, weights):
        x = np.asarray(points, dtype=float).ravel()
        w = np.asarray(weights, dtype=float)
        _check_weights(w)
        order = np.argsort(x, kind="stable")
        return float(_weighted_quantiles_sorted(x[order], w[order][None, :], self.q)[0])

    def evaluate_many(self, points, weight_rows):
        x = np.asarray(points, dtype=float).ravel()
        order = np.argsort(x, kind="stable")
        return _weighted_quantiles_sorted(x[order], weight_rows[:, order], self.q)

    def parametric(self, theta, model):
        if isinstance(model, ConjugateGaussianModel):
            from scipy.special import ndtri

            return np.asarray(theta, dtype=float) + math.sqrt(model.obs_var) * ndtri(self.q)
        return super().parametric(theta, model)


class Median(Quantile):
    """``argmin_a sum_i w_i |x_i - a|`` with the left tie convention."""

    def __init__(self):
        super().__init__(0.5)

    def evaluate(self, points, weights):
        return weighted_median(points, weights)


def bayesian_bootstrap_weights(n: int, n_draws: int, rng) -> np.ndarray:
    """``n_draws`` rows of Dirichlet(1, ..., 1) weights over ``n`` points."""
    if n < 1:
        raise ValueError("Bayesian bootstrap needs at least one observation")
    rng = as_generator(rng)
    g = rng.standard_exponential((n_draws, n))
    return g / g.sum(axis=1, keepdims=True)


def bayesian_bootstrap_posterior(data: Dataset, functional: Functional, n_draws: int = DEFAULT_DRAWS,
                                 rng=None) -> FunctionalPosterior:
    """Posterior of ``functional(p)`` under the Bayesian bootstrap."""
    if data.n == 0:
        raise ValueError("empty data")
    w = bayesian_bootstrap_weights(data.n, n_draws, rng)
    vals = functional.evaluate_many(data.values(), w)
    return FunctionalPosterior.from_draws(vals, Component.NONPARAMETRIC)


def parametric_functional_posterior(data: Dataset, model: ParametricModel, functional: Functional,
                                    n_draws: int = DEFAULT_DRAWS, rng=None) -> FunctionalPosterior:
    theta = model.posterior_sample(data, as_generator(rng), n_draws)
    return FunctionalPosterior.from_draws(functional.parametric(theta, model), Component.PARAMETRIC)


def dp_perturbation_weight(n: int, h: float, eta: float) -> float:
    """Posterior weight of the parametric branch under a DP perturbation with distinct observations.

    The weight ignores the data values entirely, so it tends to 1 whether or
    not the parametric model is correct.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if not h > 0:
        raise ValueError("h must be positive")
    if not 0.0 < eta < 1.0:
        raise ValueError("eta must lie in (0, 1)")
    if n == 1:
        return eta
    log_odds = math.log(eta) - math.log1p(-eta) + (n - 1) * math.log1p(h)
    return 1.0 / (1.0 + math.exp(-log_odds)) if log_odds > -700 else 0.0


def gnpp_functional_posterior(data: Dataset, model: ParametricModel, functional: Functional,
                              cfg: GbfConfig = GbfConfig(), n_draws: int = DEFAULT_DRAWS, rng=None,
                              weight: MixtureWeight | float | None = None):
    """gNPP posterior of a functional.

    Returns the mixed :class:`FunctionalPosterior` and the :class:`MixtureWeight`.
    ``weight`` overrides the generalized Bayes factor (a float is used as
    ``eta_hat`` directly). Draws for the three stages use independent child
    streams of ``rng``.
    """
    if data.n < 1:
        raise ValueError("empty data")
    gen = as_generator(rng)
    r_gbf, r_pm, r_np = gen.spawn(3)
    if weight is None:
        weight = generalized_bayes_factor(model, data, cfg, r_gbf)
    eta_hat = float(weight) if isinstance(weight, (int, float)) else weight.eta_hat
    pm = parametric_functional_posterior(data, model, functional, n_draws, r_pm)
    bb = bayesian_bootstrap_posterior(data, functional, n_draws, r_np)
    return mix_posteriors(pm, bb, eta_hat), weight
