"""Generalized Bayes factor between a parametric model and a nonparametric alternative.

The factor compares the expected divergence between model and data under the
prior with the same expectation under the posterior, rescaled by
``(n + 1)^(-r)`` and passed through ``xi(x) = x exp(1 - 1/x)``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit

from .core import Dataset, as_generator
from .divergence import (
    Kernel,
    KernelKind,
    kernel_self_sum,
    ksd_u_from_terms,
    median_heuristic,
    mmd2_u_terms,
    mmd2_v,
    stein_kernel_terms,
    wasserstein_pp,
)
from .parametric import ParametricModel

DEFAULT_RATES = {"mmd": 0.49, "mmd_v": 0.49, "ksd": 0.49, "wasserstein": 0.1}


class Divergence(str, enum.Enum):
    WASSERSTEIN = "wasserstein"
    MMD = "mmd"
    MMD_V = "mmd_v"
    KSD = "ksd"


@dataclass(frozen=True)
class GbfConfig:
    """Settings for a generalized Bayes factor.

    ``bandwidth=None`` selects the median heuristic on the observed data, and
    ``rate=None`` the per-divergence default (0.49 for kernel divergences, 0.1
    for Wasserstein). With ``wasserstein_power=False`` the Wasserstein
    divergence is the distance ``W_p``; otherwise the plug-in ``W_p^p``.
    ``m_model_samples=None`` draws as many model points as there are data.
    """

    divergence: Divergence = Divergence.MMD
    kernel_kind: KernelKind = KernelKind.IMQ
    bandwidth: float | None = None
    kernel_amplitude: float = 1.0
    p: float = 2.0
    wasserstein_power: bool = False
    rate: float | None = None
    eta_prior: float = 0.1
    n_prior_draws: int = 200
    n_posterior_draws: int = 200
    m_model_samples: int | None = None
    split_data: bool = False

    def __post_init__(self):
        object.__setattr__(self, "divergence", Divergence(self.divergence))
        object.__setattr__(self, "kernel_kind", KernelKind(self.kernel_kind))
        if self.rate is None:
            object.__setattr__(self, "rate", DEFAULT_RATES[self.divergence.value])
        if not self.rate > 0:
            raise ValueError("rate must be positive")
        if not 0.0 < self.eta_prior < 1.0:
            raise ValueError("eta_prior must lie in (0, 1)")
        if self.n_prior_draws < 1 or self.n_posterior_draws < 1:
            raise ValueError("draw counts must be at least 1")
        if self.m_model_samples is not None and self.m_model_samples < 1:
            raise ValueError("m_model_samples must be at least 1")
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")

    def with_(self, **changes) -> "GbfConfig":
        return replace(self, **changes)


@dataclass(frozen=True)
class MixtureWeight:
    gbf: float
    log_gbf: float
    eta_hat: float
    prior_div: float
    post_div: float
    rate: float
    n: int


def xi(x: float) -> float:
    """``x * exp(1 - 1/x)``, increasing from 0 at ``0+`` to infinity."""
    if not x > 0:
        raise ValueError(f"xi is defined for positive arguments, got {x}")
    return x * math.exp(1.0 - 1.0 / x)


def log_xi(x: float) -> float:
    if not x > 0:
        raise ValueError(f"xi is defined for positive arguments, got {x}")
    return math.log(x) + 1.0 - 1.0 / x


class _Evaluator:
    """Divergence between model samples and a fixed data sample, with data-only work cached."""

    def __init__(self, model: ParametricModel, data: Dataset, cfg: GbfConfig, kernel: Kernel | None):
        self.model = model
        self.data = data
        self.cfg = cfg
        self.kernel = kernel
        self.m = cfg.m_model_samples or data.n
        kind = cfg.divergence
        if kind is Divergence.MMD:
            if data.n < 2 or self.m < 2:
                raise ValueError("MMD U-statistic needs at least two data and model points")
            self._y_term = kernel_self_sum(data.points, kernel) / (data.n * (data.n - 1))
        elif kind is Divergence.KSD:
            if data.n < 2:
                raise ValueError("KSD U-statistic needs at least two points")
            self._terms = stein_kernel_terms(data.points, kernel)

    def __call__(self, theta, rng) -> float:
        kind = self.cfg.divergence
        if kind is Divergence.KSD:
            s = np.asarray(self.model.score(theta, self.data.points), dtype=float)
            s = s.reshape(self.data.n, self.data.dim)
            if not np.all(np.isfinite(s)):
                raise ValueError("score is not finite at every data point")
            return ksd_u_from_terms(self._terms, s)
        x = self.model.sample(theta, self.m, rng)
        if kind is Divergence.MMD:
            return mmd2_u_terms(x, self.data.points, self.kernel, y_term=self._y_term)
        if kind is Divergence.MMD_V:
            return mmd2_v(Dataset(x), self.data, self.kernel).value
        wpp = wasserstein_pp(Dataset(x), self.data, self.cfg.p).value
        return wpp if self.cfg.wasserstein_power else wpp ** (1.0 / self.cfg.p)


def resolve_kernel(data: Dataset, cfg: GbfConfig) -> Kernel | None:
    """Kernel used for both expectations; the bandwidth is frozen from the observed data."""
    if cfg.divergence is Divergence.WASSERSTEIN:
        return None
    c = cfg.bandwidth if cfg.bandwidth is not None else median_heuristic(data)
    return Kernel(cfg.kernel_kind, c, cfg.kernel_amplitude)


def _split(data: Dataset, rng):
    perm = rng.permutation(data.n)
    half = data.n // 2
    if half < 1 or data.n - half < 1:
        raise ValueError("sample splitting needs at least two observations")
    return data.subset(np.sort(perm[:half])), data.subset(np.sort(perm[half:]))


def _average(evaluate: _Evaluator, thetas, rng) -> float:
    vals = np.array([evaluate(t, rng) for t in thetas])
    return float(vals.mean())


def expected_prior_divergence(model: ParametricModel, data: Dataset, cfg: GbfConfig, rng,
                              kernel: Kernel | None = None) -> float:
    """Monte Carlo mean of the divergence between ``p_theta`` and the data, ``theta`` from the prior."""
    if data.n == 0:
        raise ValueError("expected divergence needs data")
    rng = as_generator(rng)
    kernel = kernel if kernel is not None else resolve_kernel(data, cfg)
    evaluate = _Evaluator(model, data, cfg, kernel)
    thetas = model.prior_sample(rng, cfg.n_prior_draws)
    return _average(evaluate, thetas, rng)


def expected_posterior_divergence(model: ParametricModel, data: Dataset, cfg: GbfConfig, rng,
                                  kernel: Kernel | None = None, fit_data: Dataset | None = None) -> float:
    """As :func:`expected_prior_divergence` with ``theta`` from the posterior given ``fit_data``.

    ``fit_data`` defaults to ``data``; sample splitting passes the held-in half.
    """
    if data.n == 0:
        raise ValueError("expected divergence needs data")
    rng = as_generator(rng)
    kernel = kernel if kernel is not None else resolve_kernel(data, cfg)
    evaluate = _Evaluator(model, data, cfg, kernel)
    thetas = model.posterior_sample(fit_data if fit_data is not None else data, rng, cfg.n_posterior_draws)
    return _average(evaluate, thetas, rng)


def weight_from_divergences(prior_div: float, post_div: float, n: int, cfg: GbfConfig) -> MixtureWeight:
    """Mixing weight from the two expected divergences."""
    if not prior_div > 0:
        raise ValueError("degenerate prior divergence")
    # relative floor keeps the weight invariant to rescaling the divergence
    floor = 1e-12 * prior_div
    post = max(post_div, floor)
    arg = prior_div / post * (n + 1.0) ** (-cfg.rate)
    log_gbf = log_xi(arg) + math.log(cfg.eta_prior) - math.log1p(-cfg.eta_prior)
    gbf = math.exp(log_gbf) if log_gbf < 700 else math.inf
    return MixtureWeight(gbf, log_gbf, float(expit(log_gbf)), prior_div, post_div, cfg.rate, n)


def generalized_bayes_factor(model: ParametricModel, data: Dataset, cfg: GbfConfig, rng) -> MixtureWeight:
    """Generalized Bayes factor and the mixing weight ``1 / (1 + 1/gbf)``."""
    if data.n < 1:
        raise ValueError("generalized Bayes factor needs at least one observation")
    rng = as_generator(rng)
    kernel = resolve_kernel(data, cfg)
    if cfg.split_data:
        fit, held = _split(data, rng)
    else:
        fit, held = data, data
    prior_div = expected_prior_divergence(model, held, cfg, rng, kernel=kernel)
    post_div = expected_posterior_divergence(model, held, cfg, rng, kernel=kernel, fit_data=fit)
    return weight_from_divergences(prior_div, post_div, data.n, cfg)
