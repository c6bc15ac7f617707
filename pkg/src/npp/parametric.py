"""Parametric models and the truth distributions of the synthetic study."""

from __future__ import annotations

import abc
import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, special

from .core import Dataset, as_generator

LOG_2PI = math.log(2.0 * math.pi)


class ParametricModel(abc.ABC):
    """Behaviour a parametric model needs to take part in a generalized Bayes factor.

    ``theta`` is whatever parameter representation the model uses; draws of
    several parameters come back stacked along the first axis.
    """

    @abc.abstractmethod
    def log_density(self, theta, x: np.ndarray) -> np.ndarray:
        """Log density of the rows of ``x`` (shape ``(m, dim)``) under ``p_theta``."""

    @abc.abstractmethod
    def sample(self, theta, m: int, rng) -> np.ndarray:
        """``m`` draws from ``p_theta`` as an ``(m, dim)`` array."""

    def score(self, theta, x: np.ndarray) -> np.ndarray:
        """Gradient of ``log p_theta`` with respect to ``x``."""
        raise NotImplementedError(f"{type(self).__name__} does not provide a score")

    @abc.abstractmethod
    def prior_sample(self, rng, size: int) -> np.ndarray:
        ...

    @abc.abstractmethod
    def posterior_sample(self, data: Dataset, rng, size: int) -> np.ndarray:
        ...

    @abc.abstractmethod
    def mle(self, data: Dataset):
        ...

    def predictive_log_density(self, data: Dataset, x) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class GaussianPosterior:
    mean: float
    var: float
    mle: float | None = None


@dataclass(frozen=True)
class ConjugateGaussianModel(ParametricModel):
    """``theta ~ N(prior_mean, prior_var)``, ``x | theta ~ N(theta, obs_var)``."""

    prior_mean: float = 0.0
    prior_var: float = 1.0
    obs_var: float = 1.0

    def __post_init__(self):
        if not (self.prior_var > 0 and self.obs_var > 0):
            raise ValueError("prior_var and obs_var must be positive")

    def log_density(self, theta, x):
        x = np.asarray(x, dtype=float)
        z = x - theta
        return -0.5 * (LOG_2PI + math.log(self.obs_var)) - 0.5 * z**2 / self.obs_var

    def sample(self, theta, m, rng):
        rng = as_generator(rng)
        return (theta + math.sqrt(self.obs_var) * rng.standard_normal(m))[:, None]

    def score(self, theta, x):
        return -(np.asarray(x, dtype=float) - theta) / self.obs_var

    def prior_sample(self, rng, size):
        rng = as_generator(rng)
        return self.prior_mean + math.sqrt(self.prior_var) * rng.standard_normal(size)

    def posterior(self, data: Dataset) -> GaussianPosterior:
        return gaussian_posterior(self, data)

    def posterior_sample(self, data, rng, size):
        post = self.posterior(data)
        rng = as_generator(rng)
        return post.mean + math.sqrt(post.var) * rng.standard_normal(size)

    def mle(self, data):
        x = data.values()
        if x.size == 0:
            raise ValueError("maximum likelihood estimate needs at least one observation")
        return float(x.mean())

    def log_evidence(self, data: Dataset) -> float:
        """Closed-form log marginal likelihood of the data."""
        x = data.values()
        n = x.size
        if n == 0:
            return 0.0
        s2, v0, m0 = self.obs_var, self.prior_var, self.prior_mean
        xbar = x.mean()
        ss = float(np.sum((x - xbar) ** 2))
        return float(
            -0.5 * n * (LOG_2PI + math.log(s2))
            - 0.5 * ss / s2
            - 0.5 * math.log1p(n * v0 / s2)
            - 0.5 * n * (xbar - m0) ** 2 / (s2 + n * v0)
        )

    def predictive_log_density(self, data, x):
        return gaussian_predictive_logpdf(self.posterior(data), x, self.obs_var)


def gaussian_posterior(model: ConjugateGaussianModel, data: Dataset) -> GaussianPosterior:
    """Conjugate update of the Gaussian mean."""
    if data.dim != 1:
        raise ValueError(f"expected 1-dimensional data, got dim={data.dim}")
    x = data.values()
    n = x.size
    precision = 1.0 / model.prior_var + n / model.obs_var
    mean = (model.prior_mean / model.prior_var + x.sum() / model.obs_var) / precision
    return GaussianPosterior(float(mean), 1.0 / precision, float(x.mean()) if n else None)


def gaussian_predictive_logpdf(post: GaussianPosterior, x, obs_var: float = 1.0):
    """Log density of ``N(post.mean, post.var + obs_var)`` at ``x``."""
    var = post.var + obs_var
    x = np.asarray(x, dtype=float)
    out = -0.5 * (LOG_2PI + np.log(var)) - 0.5 * (x - post.mean) ** 2 / var
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class SkewNormalTruth:
    """Skew normal with shape ``alpha``, location ``xi`` and scale ``omega``."""

    alpha: float = 10.0
    xi: float = 0.0
    omega: float = 1.0

    def __post_init__(self):
        if not self.omega > 0:
            raise ValueError("omega must be positive")

    @property
    def delta(self) -> float:
        return self.alpha / math.sqrt(1.0 + self.alpha**2)

    def mean(self) -> float:
        return self.xi + self.omega * self.delta * math.sqrt(2.0 / math.pi)

    def var(self) -> float:
        return self.omega**2 * (1.0 - 2.0 * self.delta**2 / math.pi)

    def skewness(self) -> float:
        b = self.delta * math.sqrt(2.0 / math.pi)
        return (4.0 - math.pi) / 2.0 * b**3 / (1.0 - b**2) ** 1.5

    def logpdf(self, x):
        z = (np.asarray(x, dtype=float) - self.xi) / self.omega
        return math.log(2.0) - 0.5 * LOG_2PI - 0.5 * z**2 + special.log_ndtr(self.alpha * z) - math.log(self.omega)

    def cdf(self, x):
        z = (np.asarray(x, dtype=float) - self.xi) / self.omega
        return special.ndtr(z) - 2.0 * special.owens_t(z, self.alpha)

    def quantile(self, q: float) -> float:
        lo, hi = self.xi - 10 * self.omega, self.xi + 10 * self.omega
        return float(optimize.brentq(lambda t: self.cdf(t) - q, lo, hi, xtol=1e-14, rtol=1e-15))

    def median(self) -> float:
        return self.quantile(0.5)

    def sample(self, n: int, rng) -> np.ndarray:
        return skew_normal_sample(self, n, rng).values()


def matched_skew_normal(alpha: float) -> SkewNormalTruth:
    """Skew normal of shape ``alpha`` standardized to mean 0 and variance 1."""
    if not math.isfinite(alpha):
        raise ValueError("alpha must be finite")
    delta = alpha / math.sqrt(1.0 + alpha**2)
    omega = 1.0 / math.sqrt(1.0 - 2.0 * delta**2 / math.pi)
    xi = -omega * delta * math.sqrt(2.0 / math.pi)
    return SkewNormalTruth(alpha=float(alpha), xi=xi, omega=omega)


def skew_normal_sample(truth: SkewNormalTruth, n: int, rng) -> Dataset:
    """Draws via ``Z = delta |U| + sqrt(1 - delta^2) V`` with independent standard normals."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    rng = as_generator(rng)
    uv = rng.standard_normal((2, n))
    d = truth.delta
    z = d * np.abs(uv[0]) + math.sqrt(1.0 - d * d) * uv[1]
    return Dataset((truth.xi + truth.omega * z)[:, None])
