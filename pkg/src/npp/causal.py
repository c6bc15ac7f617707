"""Average treatment effect under backdoor adjustment, with parametric, flexible and gNPP posteriors.

The estimand contrasts ``do(a = a_hi)`` with ``do(a = 0)`` where ``a_hi`` is
the empirical 98th percentile of the treatment. The parametric model is the
flat-prior linear regression ``y = c + tau a + w gamma + eps``; the flexible
model swaps ``w gamma`` for a random-Fourier-feature expansion and
optionally works on the Yeo-Johnson scale of ``y``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .core import Component, Dataset, FunctionalPosterior, as_generator, mix_posteriors
from .gbf import GbfConfig, MixtureWeight, generalized_bayes_factor
from .parametric import LOG_2PI, ParametricModel

CONTRAST_Q = 0.98
COND_LIMIT = 1e10
PRIOR_BOX = 100.0


class DegenerateContrastWarning(UserWarning):
    pass


@dataclass(frozen=True)
class CausalDataset:
    """Treatment ``a`` (n,), outcome ``y`` (n,) and confounders ``w`` (n, d), ``d >= 0``."""

    a: np.ndarray
    y: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float).ravel()
        y = np.asarray(self.y, dtype=float).ravel()
        w = np.asarray(self.w, dtype=float)
        if w.ndim == 1:
            w = w[:, None] if w.size else np.empty((a.size, 0))
        if w.ndim != 2 or not (a.size == y.size == w.shape[0]):
            raise ValueError("a, y and w must have consistent lengths")
        for arr in (a, y, w):
            if not np.all(np.isfinite(arr)):
                raise ValueError("causal data must be finite")
            arr.setflags(write=False)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "w", np.ascontiguousarray(w))

    @classmethod
    def from_arrays(cls, a, y, w=None) -> "CausalDataset":
        a = np.asarray(a, dtype=float).ravel()
        return cls(a, y, np.empty((a.size, 0)) if w is None else w)

    @property
    def n(self) -> int:
        return self.a.size

    @property
    def d(self) -> int:
        return self.w.shape[1]

    def joint(self) -> Dataset:
        """Rows ``(a, y, w)`` as a Dataset, the sample the generalized Bayes factor compares against."""
        return Dataset(np.column_stack([self.a, self.y, self.w]))

    def subset(self, idx) -> "CausalDataset":
        return CausalDataset(self.a[idx], self.y[idx], self.w[idx])


@dataclass(frozen=True)
class AteContrast:
    a_hi: float
    a_lo: float = 0.0
    degenerate: bool = False

    @property
    def delta(self) -> float:
        return self.a_hi - self.a_lo


def _upper_quantile(sorted_a: np.ndarray, cum: np.ndarray, q: float) -> np.ndarray:
    # first index whose cumulative weight exceeds q
    k = np.argmax(cum > q + 1e-12, axis=-1)
    return sorted_a[np.minimum(k, sorted_a.size - 1)]


def ate_contrast(a) -> AteContrast:
    """``(a_hi, a_lo)``: the 98th percentile order statistic and 0.

    ``a_hi`` is the smallest value whose empirical CDF exceeds 0.98, i.e.
    ``sorted(a)[floor(0.98 n)]``. A constant treatment is flagged as degenerate.
    """
    a = np.asarray(a, dtype=float).ravel()
    if a.size < 2:
        raise ValueError("contrast needs at least two treatment values")
    s = np.sort(a)
    a_hi = float(s[min(int(math.floor(CONTRAST_Q * a.size + 1e-9)), a.size - 1)])
    degenerate = bool(s[0] == s[-1])
    if degenerate:
        warnings.warn("treatment is constant; the ATE contrast is degenerate", DegenerateContrastWarning, stacklevel=2)
    return AteContrast(a_hi, 0.0, degenerate)


# -- Yeo-Johnson -----------------------------------------------------------------

def yeo_johnson(y, lam: float):
    """Yeo-Johnson transform ``T_lambda``."""
    y = np.asarray(y, dtype=float)
    out = np.empty_like(y)
    pos = y >= 0
    yp, yn = y[pos], y[~pos]
    if lam == 0.0:
        out[pos] = np.log1p(yp)
    else:
        out[pos] = np.expm1(lam * np.log1p(yp)) / lam
    if lam == 2.0:
        out[~pos] = -np.log1p(-yn)
    else:
        out[~pos] = -np.expm1((2.0 - lam) * np.log1p(-yn)) / (2.0 - lam)
    return out if out.ndim else float(out)


def yeo_johnson_inverse(t, lam: float):
    """Inverse of :func:`yeo_johnson`; values beyond the transform's range are clipped to its edge."""
    t = np.asarray(t, dtype=float)
    out = np.empty_like(t)
    pos = t >= 0
    tp, tn = t[pos], t[~pos]
    if lam == 0.0:
        out[pos] = np.expm1(tp)
    else:
        arg = np.maximum(lam * tp, -1.0 + 1e-15)  # lam < 0 bounds the range above by -1/lam
        out[pos] = np.expm1(np.log1p(arg) / lam)
    if lam == 2.0:
        out[~pos] = -np.expm1(-tn)
    else:
        arg = np.maximum(-(2.0 - lam) * tn, -1.0 + 1e-15)
        out[~pos] = -np.expm1(np.log1p(arg) / (2.0 - lam))
    return out if out.ndim else float(out)


def yeo_johnson_llf(y, lam: float) -> float:
    """Gaussian profile log-likelihood of the transformed data plus the log-Jacobian."""
    y = np.asarray(y, dtype=float)
    t = yeo_johnson(y, lam)
    var = t.var()
    if var <= 0:
        return -math.inf
    return float(-0.5 * y.size * math.log(var) + (lam - 1.0) * np.sum(np.sign(y) * np.log1p(np.abs(y))))


def fit_lambda(y, bounds=(-2.0, 4.0)) -> float:
    """Maximum-likelihood ``lambda`` by bounded scalar search."""
    y = np.asarray(y, dtype=float)
    if y.size < 2 or np.ptp(y) == 0:
        return 1.0
    res = optimize.minimize_scalar(lambda lam: -yeo_johnson_llf(y, lam), bounds=bounds, method="bounded",
                                   options={"xatol": 1e-10})
    return float(res.x)


# -- conjugate regression ----------------------------------------------------------

@dataclass(frozen=True)
class LinearCausalPosterior:
    theta_hat: np.ndarray
    V_hat: np.ndarray
    rss: float
    dof: int
    sigma: np.ndarray | None = None
    sigma_weights: np.ndarray | None = None


def _collinear_columns(X: np.ndarray, names) -> list[str]:
    bad = []
    for j in range(1, X.shape[1]):
        prev = X[:, :j]
        coef, *_ = np.linalg.lstsq(prev, X[:, j], rcond=None)
        resid = X[:, j] - prev @ coef
        if np.linalg.norm(resid) <= 1e-6 * max(np.linalg.norm(X[:, j]), 1e-300):
            bad.append(names[j])
    return bad


def _design(data: CausalDataset) -> tuple[np.ndarray, list[str]]:
    X = np.column_stack([np.ones(data.n), data.a, data.w])
    names = ["intercept", "a"] + [f"w{j}" for j in range(data.d)]
    return X, names


def _sigma_draws(rss: float, dof: int, n_draws: int, gen) -> tuple[np.ndarray, np.ndarray]:
    """Flat-prior ``sigma`` draws, reweighted toward the HalfNormal(0, 1) prior.

    ``sigma^2 = rss / chi2_dof`` is the posterior under ``p(sigma) ~ 1/sigma``;
    the HalfNormal prior enters through importance weights proportional to
    ``sigma exp(-sigma^2 / 2)``.
    """
    if dof < 1:
        raise ValueError("regression has no residual degrees of freedom")
    chi2 = gen.chisquare(dof, n_draws)
    if rss <= 0.0:
        return np.zeros(n_draws), np.full(n_draws, 1.0 / n_draws)
    sigma = np.sqrt(rss / chi2)
    logw = np.log(sigma) - 0.5 * sigma**2
    logw -= logw.max()
    w = np.exp(logw)
    return sigma, w / w.sum()


def _regression(X, y, prior_prec, n_flat, n_draws, gen):
    """Coefficient and noise draws of the conjugate regression with a partially flat prior."""
    A = X.T @ X + np.diag(prior_prec)
    cho = np.linalg.cholesky(A)
    V = np.linalg.inv(A)
    V = 0.5 * (V + V.T)
    beta = np.linalg.solve(A, X.T @ y)
    resid = y - X @ beta
    rss = float(resid @ resid + beta @ (prior_prec * beta))
    if rss < 1e-24 * max(float(y @ y), 1e-300):
        rss = 0.0  # exact fit
    dof = X.shape[0] - n_flat
    sigma, sw = _sigma_draws(rss, dof, n_draws, gen)
    z = gen.standard_normal((n_draws, X.shape[1]))
    # beta + sigma L^-T z has covariance sigma^2 A^-1
    coef = beta + sigma[:, None] * np.linalg.solve(cho.T, z.T).T
    return LinearCausalPosterior(beta, V, rss, dof, sigma, sw), coef


def linear_regression_posterior(data: CausalDataset, n_draws: int, rng):
    X, names = _design(data)
    XtX = X.T @ X
    if np.linalg.cond(XtX) >= COND_LIMIT:
        cols = _collinear_columns(X, names)
        raise ValueError(f"singular design; collinear columns: {', '.join(cols) or 'unknown'}")
    return _regression(X, data.y, np.zeros(X.shape[1]), X.shape[1], n_draws, as_generator(rng))


def _zero_posterior(n_draws: int, component: Component) -> FunctionalPosterior:
    return FunctionalPosterior.from_draws(np.zeros(n_draws), component)


def linear_ate_posterior(data: CausalDataset, contrast: AteContrast | None = None, n_draws: int = 2000,
                         rng=None) -> FunctionalPosterior:
    """Posterior of ``tau * delta_a`` under the flat-prior linear model; component Parametric."""
    contrast = contrast or ate_contrast(data.a)
    if contrast.degenerate:
        return _zero_posterior(n_draws, Component.PARAMETRIC)
    post, coef = linear_regression_posterior(data, n_draws, rng)
    return FunctionalPosterior(coef[:, 1] * contrast.delta, post.sigma_weights, np.full(n_draws, Component.PARAMETRIC))


# -- flexible regression -----------------------------------------------------------

@dataclass(frozen=True)
class FlexibleConfig:
    """Random-Fourier-feature outcome model.

    ``length_scale=None`` uses the median pairwise distance of the
    standardized confounders. ``ridge`` is the prior precision (relative to
    ``sigma^-2``) of the feature coefficients; intercept and treatment slope
    have flat priors.
    """

    n_features: int = 100
    length_scale: float | None = None
    ridge: float = 1.0
    yeo_johnson: bool = True
    bootstrap_contrast: bool = True
    noise_nodes: int = 8

    def __post_init__(self):
        if self.n_features < 0:
            raise ValueError("n_features must be nonnegative")
        if self.length_scale is not None and not self.length_scale > 0:
            raise ValueError("length_scale must be positive")
        if not self.ridge > 0:
            raise ValueError("ridge must be positive")


def random_fourier_features(w: np.ndarray, n_features: int, length_scale: float | None, rng) -> np.ndarray:
    """``sqrt(2/D) cos(w Omega + b)`` approximating a Gaussian kernel on standardized ``w``."""
    n, d = w.shape
    if n_features == 0 or d == 0:
        return np.empty((n, 0))
    sd = w.std(axis=0)
    ws = (w - w.mean(axis=0)) / np.where(sd > 0, sd, 1.0)
    if length_scale is None:
        from scipy.spatial.distance import pdist

        sub = ws if n <= 1000 else ws[np.linspace(0, n - 1, 1000).astype(int)]
        dist = pdist(sub)
        length_scale = float(np.median(dist)) if dist.size and np.median(dist) > 0 else 1.0
    gen = as_generator(rng)
    omega = gen.standard_normal((d, n_features)) / length_scale
    b = gen.uniform(0.0, 2.0 * math.pi, n_features)
    phi = math.sqrt(2.0 / n_features) * np.cos(ws @ omega + b)
    if not np.all(np.isfinite(phi)):
        raise ValueError("non-finite random features")
    return phi


def flexible_ate_posterior(data: CausalDataset, contrast: AteContrast | None = None,
                           cfg: FlexibleConfig = FlexibleConfig(), n_draws: int = 2000,
                           rng=None) -> FunctionalPosterior:
    """ATE posterior under the random-feature regression, combined with a covariate Bayesian bootstrap.

    On the identity scale the ATE draw is ``tau * delta_a`` with ``a_hi``
    recomputed from each draw's bootstrap weights. On the Yeo-Johnson scale the
    effect is pushed back through ``T^-1`` and averaged over the bootstrap
    weights and the noise (Gauss-Hermite). Component Nonparametric.
    """
    if data.n <= cfg.n_features / 5:
        raise ValueError(f"n={data.n} too small for {cfg.n_features} random features")
    contrast = contrast or ate_contrast(data.a)
    if contrast.degenerate:
        return _zero_posterior(n_draws, Component.NONPARAMETRIC)
    gen = as_generator(rng)
    r_feat, r_boot = gen.spawn(2)
    lam = fit_lambda(data.y) if cfg.yeo_johnson else 1.0
    yt = yeo_johnson(data.y, lam) if cfg.yeo_johnson else data.y
    phi = random_fourier_features(data.w, cfg.n_features, cfg.length_scale, r_feat)
    X = np.column_stack([np.ones(data.n), data.a, phi])
    names = ["intercept", "a"] + [f"rff{j}" for j in range(phi.shape[1])]
    if np.linalg.cond(X[:, :2].T @ X[:, :2]) >= COND_LIMIT:
        raise ValueError(f"singular design; collinear columns: {', '.join(_collinear_columns(X[:, :2], names))}")
    prior_prec = np.concatenate([[0.0, 0.0], np.full(phi.shape[1], cfg.ridge)])
    post, coef = _regression(X, yt, prior_prec, 2, n_draws, gen)
    tau = coef[:, 1]

    if cfg.bootstrap_contrast:
        bw = r_boot.standard_exponential((n_draws, data.n))
        bw /= bw.sum(axis=1, keepdims=True)
    else:
        bw = None
    if not cfg.yeo_johnson:
        if bw is None:
            delta = np.full(n_draws, contrast.delta)
        else:
            order = np.argsort(data.a, kind="stable")
            a_hi = _upper_quantile(data.a[order], np.cumsum(bw[:, order], axis=1), CONTRAST_Q)
            delta = a_hi - contrast.a_lo
        return FunctionalPosterior(tau * delta, post.sigma_weights, np.full(n_draws, Component.NONPARAMETRIC))

    if bw is None:
        bw = np.full((n_draws, data.n), 1.0 / data.n)
        a_hi = np.full(n_draws, contrast.a_hi)
    else:
        order = np.argsort(data.a, kind="stable")
        a_hi = _upper_quantile(data.a[order], np.cumsum(bw[:, order], axis=1), CONTRAST_Q)
    nodes, wts = np.polynomial.hermite_e.hermegauss(cfg.noise_nodes)
    wts = wts / wts.sum()
    base = coef[:, [0]] + coef[:, 2:] @ phi.T  # (draws, n) baseline without treatment
    ate = np.zeros(n_draws)
    for e, we in zip(nodes, wts):
        eps = post.sigma[:, None] * e
        hi = yeo_johnson_inverse(base + (tau * a_hi)[:, None] + eps, lam)
        lo = yeo_johnson_inverse(base + (tau * contrast.a_lo)[:, None] + eps, lam)
        ate += we * np.sum(bw * (hi - lo), axis=1)
    return FunctionalPosterior(ate, post.sigma_weights, np.full(n_draws, Component.NONPARAMETRIC))


# -- gNPP -------------------------------------------------------------------------

class LinearCausalModel(ParametricModel):
    """The linear outcome model as a simulator of joint ``(a, y, w)`` rows.

    ``theta = (c, tau, gamma..., sigma)``. ``(a, w)`` are resampled from the
    observed rows (the concentration-zero limit of a DP on their law) and
    ``y`` is drawn from the regression. The improper prior is replaced by a
    uniform on ``[-100, 100]`` per coefficient, ``sigma ~ HalfNormal(0, 1)``.
    """

    def __init__(self, data: CausalDataset, box: float = PRIOR_BOX):
        self.data = data
        self.box = box
        self._aw = np.column_stack([data.a, data.w])

    @staticmethod
    def _split(points: np.ndarray, d: int):
        return points[:, 0], points[:, 1], points[:, 2:2 + d]

    def log_density(self, theta, x):
        theta = np.asarray(theta, dtype=float)
        a, y, w = self._split(np.atleast_2d(x), self.data.d)
        sigma = theta[-1]
        mu = theta[0] + theta[1] * a + w @ theta[2:-1]
        return -0.5 * LOG_2PI - np.log(sigma) - 0.5 * ((y - mu) / sigma) ** 2

    def sample(self, theta, m, rng):
        gen = as_generator(rng)
        theta = np.asarray(theta, dtype=float)
        rows = self._aw[gen.integers(0, self.data.n, m)]
        a, w = rows[:, 0], rows[:, 1:]
        y = theta[0] + theta[1] * a + w @ theta[2:-1] + theta[-1] * gen.standard_normal(m)
        return np.column_stack([a, y, w])

    def prior_sample(self, rng, size):
        gen = as_generator(rng)
        k = 2 + self.data.d
        coef = gen.uniform(-self.box, self.box, (size, k))
        sigma = np.abs(gen.standard_normal(size))
        return np.column_stack([coef, sigma])

    def _causal(self, data: Dataset) -> CausalDataset:
        a, y, w = self._split(data.points, self.data.d)
        return CausalDataset(a, y, w)

    def posterior_sample(self, data, rng, size):
        gen = as_generator(rng)
        post, coef = linear_regression_posterior(self._causal(data), size, gen)
        # importance resampling turns the HalfNormal reweighting into equal-weight draws
        idx = gen.choice(size, size, replace=True, p=post.sigma_weights)
        return np.column_stack([coef[idx], post.sigma[idx]])

    def mle(self, data):
        cd = self._causal(data)
        X, _ = _design(cd)
        beta, *_ = np.linalg.lstsq(X, cd.y, rcond=None)
        resid = cd.y - X @ beta
        return np.concatenate([beta, [math.sqrt(float(resid @ resid) / cd.n)]])


@dataclass(frozen=True)
class AteResult:
    posterior: FunctionalPosterior
    eta_hat: float
    p_positive: float
    parametric: FunctionalPosterior
    flexible: FunctionalPosterior
    weight: MixtureWeight | None
    contrast: AteContrast

    def summary(self, levels=(0.025, 0.5, 0.975)) -> dict:
        out = {"eta_hat": self.eta_hat, "a_hi": self.contrast.a_hi, "a_lo": self.contrast.a_lo}
        for name, post in (("parametric", self.parametric), ("flexible", self.flexible), ("gnpp", self.posterior)):
            out[name] = {
                "p_positive": post.prob_positive(),
                "mean": float(post.mean()[0]),
                "quantiles": {str(q): post.quantile(q) for q in levels},
            }
        return out


def gnpp_ate(data: CausalDataset, gbf_cfg: GbfConfig = GbfConfig(), flex_cfg: FlexibleConfig = FlexibleConfig(),
             n_draws: int = 2000, rng=None, eta_hat: float | None = None) -> AteResult:
    """gNPP ATE posterior: mixture of the linear and flexible posteriors weighted by the gBF.

    ``eta_hat`` overrides the generalized Bayes factor.
    """
    gen = as_generator(rng)
    r_gbf, r_pm, r_np = gen.spawn(3)
    contrast = ate_contrast(data.a)
    pm = linear_ate_posterior(data, contrast, n_draws, r_pm)
    npost = flexible_ate_posterior(data, contrast, flex_cfg, n_draws, r_np)
    weight = None
    if eta_hat is None:
        weight = generalized_bayes_factor(LinearCausalModel(data), data.joint(), gbf_cfg, r_gbf)
        eta_hat = weight.eta_hat
    post = mix_posteriors(pm, npost, eta_hat)
    return AteResult(post, float(eta_hat), post.prob_positive(), pm, npost, weight, contrast)


__all__ = [
    "AteContrast",
    "AteResult",
    "CausalDataset",
    "DegenerateContrastWarning",
    "FlexibleConfig",
    "LinearCausalModel",
    "LinearCausalPosterior",
    "ate_contrast",
    "fit_lambda",
    "flexible_ate_posterior",
    "gnpp_ate",
    "linear_ate_posterior",
    "linear_regression_posterior",
    "random_fourier_features",
    "yeo_johnson",
    "yeo_johnson_inverse",
    "yeo_johnson_llf",
]
