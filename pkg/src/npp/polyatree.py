"""Polya-tree perturbation of the conjugate Gaussian model.

The tree is centred at ``N(theta, obs_var)``: level-``j`` sets are the
intervals between the centring quantiles at probabilities ``k / 2^j``, and
each split carries a symmetric ``Beta(alpha_j, alpha_j)`` branch probability
with ``alpha_j = h j^2``. The scale ``h`` has an ``Exponential(1)`` prior.

Given ``(theta, h)`` the marginal likelihood is the centring likelihood times
one Beta-Binomial correction per split. Those corrections are piecewise
constant in ``theta`` (they only change when a data point crosses a
partition boundary), while the centring likelihood times the Gaussian prior
is a Gaussian in ``theta``. The ``theta`` integral is therefore computed
exactly, interval by interval; ``h`` is integrated by Gauss-Legendre
quadrature in ``log h``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import cached_property

import numba
import numpy as np
from numpy.polynomial.laguerre import laggauss
from scipy import special

from .core import Dataset, as_generator
from .parametric import ConjugateGaussianModel, gaussian_posterior, gaussian_predictive_logpdf

LOG2 = math.log(2.0)


@dataclass(frozen=True)
class PolyaTreeConfig:
    """Tree depth, ``h`` quadrature size and the ``theta`` integration window.

    ``theta_window`` is the half-width of the exactly integrated region in
    units of the parametric posterior standard deviation; the mass left
    outside it is checked and the window widened when needed. Predictive
    densities aggregate the ``theta`` posterior into ``theta_bins`` bins.
    """

    depth: int = 10
    n_h_nodes: int = 48
    h_rule: str = "log-legendre"
    h_range: tuple[float, float] = (1e-5, 60.0)
    theta_window: float = 8.0
    theta_bins: int = 400

    def __post_init__(self):
        if self.depth < 0:
            raise ValueError("depth must be nonnegative")
        if self.n_h_nodes < 1 or self.theta_bins < 1:
            raise ValueError("quadrature sizes must be positive")
        if self.depth > 20:
            raise ValueError("depth above 20 is not supported")
        if self.h_rule not in ("log-legendre", "laguerre"):
            raise ValueError(f"unknown h_rule {self.h_rule!r}")
        if not 0 < self.h_range[0] < self.h_range[1]:
            raise ValueError("h_range must satisfy 0 < lo < hi")

    @cached_property
    def h_quadrature(self) -> tuple[np.ndarray, np.ndarray]:
        """Nodes and weights for ``h ~ Exponential(1)``; weights sum to 1.

        ``log-legendre`` applies Gauss-Legendre in ``log h`` over ``h_range``
        plus one node for each tail; ``laguerre`` is plain Gauss-Laguerre,
        which converges slowly here because the integrand varies on the
        ``log h`` scale.
        """
        if self.h_rule == "laguerre":
            nodes, weights = laggauss(self.n_h_nodes)
            return nodes, weights / weights.sum()
        lo, hi = np.log(self.h_range)
        t, w = np.polynomial.legendre.leggauss(self.n_h_nodes)
        u = 0.5 * (hi - lo) * t + 0.5 * (hi + lo)
        h = np.exp(u)
        wh = 0.5 * (hi - lo) * w * h * np.exp(-h)
        # tails: [0, h_lo] and [h_hi, inf) with one representative node each
        h_lo, h_hi = self.h_range
        nodes = np.concatenate([[0.5 * h_lo], h, [h_hi + 1.0]])
        weights = np.concatenate([[-np.expm1(-h_lo)], wh, [np.exp(-h_hi)]])
        return nodes, weights / weights.sum()

    def alphas(self, h) -> np.ndarray:
        """``alpha[j, k] = h_k j^2`` for levels ``j = 0..depth``."""
        h = np.atleast_1d(np.asarray(h, dtype=float))
        j = np.arange(self.depth + 1, dtype=float)
        return h[None, :] * (j**2)[:, None]


def _boundaries(depth: int) -> np.ndarray:
    k = np.arange(1, 2**depth)
    return special.ndtri(k / 2.0**depth)


def _fine_index(u: np.ndarray, depth: int) -> np.ndarray:
    """Index of the finest-level set containing each standardized point."""
    return np.searchsorted(_boundaries(depth), u, side="right").astype(np.int64)


def level_counts(idx: np.ndarray, depth: int) -> list[np.ndarray]:
    """Observation counts of every set at levels ``0..depth``."""
    return [np.bincount(idx >> (depth - j), minlength=2**j) for j in range(depth + 1)]


def _log_rising(alpha: np.ndarray, nmax: int) -> np.ndarray:
    """``out[..., c] = log Gamma(alpha + c) - log Gamma(alpha)`` for ``c = 0..nmax``."""
    t = np.arange(nmax, dtype=float)
    terms = np.log(alpha[..., None] + t)
    out = np.zeros(alpha.shape + (nmax + 1,))
    np.cumsum(terms, axis=-1, out=out[..., 1:])
    return out


def _branch_tables(cfg: PolyaTreeConfig, h: np.ndarray, nmax: int):
    """Tables indexed ``[level, count, h]`` for the Beta-Binomial split corrections."""
    alpha = cfg.alphas(h)
    alpha[0] = 1.0  # the root is never split
    lg1 = np.moveaxis(_log_rising(alpha, nmax), -1, 1)
    lg2 = np.moveaxis(_log_rising(2.0 * alpha, nmax), -1, 1)
    return np.ascontiguousarray(lg1), np.ascontiguousarray(lg2)


def _split_correction(a: int, b: int, lg1: np.ndarray, lg2: np.ndarray, level: int) -> np.ndarray:
    if a + b <= 1:
        return np.zeros(lg1.shape[-1])
    return lg1[level, a] + lg1[level, b] - lg2[level, a + b] + (a + b) * LOG2


def pt_log_marginal(theta: float, h: float, data: Dataset, cfg: PolyaTreeConfig = PolyaTreeConfig(),
                    model: ConjugateGaussianModel = ConjugateGaussianModel()) -> float:
    """``log p(x_1:n | theta, h)`` under the Polya tree centred at ``N(theta, obs_var)``."""
    if not h > 0:
        raise ValueError("h must be positive")
    if data.dim != 1:
        raise ValueError(f"expected 1-dimensional data, got dim={data.dim}")
    x = data.values()
    sigma = math.sqrt(model.obs_var)
    base = float(np.sum(model.log_density(theta, x)))
    if x.size < 2 or cfg.depth == 0:
        return base
    counts = level_counts(_fine_index((x - theta) / sigma, cfg.depth), cfg.depth)
    lg1, lg2 = _branch_tables(cfg, np.array([h]), x.size)
    total = 0.0
    for j in range(1, cfg.depth + 1):
        c = counts[j]
        for q in np.flatnonzero(counts[j - 1] >= 2):
            total += _split_correction(int(c[2 * q]), int(c[2 * q + 1]), lg1, lg2, j)[0]
    return base + total


def _log_ndtr_diff(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``log(Phi(b) - Phi(a))`` for ``a <= b``, stable in both tails."""
    a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    # mirror to the lower tail where log_ndtr is accurate
    flip = a > 0
    lo = np.where(flip, -b, a)
    hi = np.where(flip, -a, b)
    lhi = special.log_ndtr(hi)
    llo = special.log_ndtr(lo)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = lhi + np.log1p(-np.exp(llo - lhi))
    return np.where(hi > lo, out, -np.inf)


@numba.njit(cache=True)
def _parent_correction(cnt, level, parent, lg1, lg2, sign, acc):
    a = cnt[level, 2 * parent]
    b = cnt[level, 2 * parent + 1]
    if a + b <= 1:
        return
    nh = acc.shape[0]
    for k in range(nh):
        acc[k] += sign * (lg1[level, a, k] + lg1[level, b, k] - lg2[level, a + b, k] + (a + b) * 0.6931471805599453)


@numba.njit(cache=True)
def _sweep(idx0, ev_point, ev_idx, log_p, bins, nbins, lg1, lg2, depth):
    """Accumulate ``log sum P_int exp(C_int(h))`` per theta bin along the breakpoint sweep."""
    nh = lg1.shape[2]
    n = idx0.shape[0]
    width = 1 << depth
    cnt = np.zeros((depth + 1, width), dtype=np.int64)
    idx = idx0.copy()
    for i in range(n):
        for j in range(depth + 1):
            cnt[j, idx[i] >> (depth - j)] += 1
    corr = np.zeros(nh)
    for j in range(1, depth + 1):
        for q in range(1 << (j - 1)):
            _parent_correction(cnt, j, q, lg1, lg2, 1.0, corr)

    mx = np.full((nbins, nh), -np.inf)
    acc = np.zeros((nbins, nh))
    n_int = log_p.shape[0]
    for t in range(n_int):
        i = ev_point[t - 1] if t > 0 else -1
        if i >= 0:
            old = idx[i]
            new = ev_idx[t - 1]
            js = depth + 1
            for j in range(1, depth + 1):
                if (old >> (depth - j)) != (new >> (depth - j)):
                    js = j
                    break
            for j in range(js, depth + 1):
                po = old >> (depth - j + 1)
                pn = new >> (depth - j + 1)
                _parent_correction(cnt, j, po, lg1, lg2, -1.0, corr)
                if pn != po:
                    _parent_correction(cnt, j, pn, lg1, lg2, -1.0, corr)
                cnt[j, old >> (depth - j)] -= 1
                cnt[j, new >> (depth - j)] += 1
                _parent_correction(cnt, j, po, lg1, lg2, 1.0, corr)
                if pn != po:
                    _parent_correction(cnt, j, pn, lg1, lg2, 1.0, corr)
            idx[i] = new
        lp = log_p[t]
        if lp == -np.inf:
            continue
        b = bins[t]
        for k in range(nh):
            v = lp + corr[k]
            if v > mx[b, k]:
                acc[b, k] = acc[b, k] * math.exp(mx[b, k] - v) + 1.0
                mx[b, k] = v
            else:
                acc[b, k] += math.exp(v - mx[b, k])
    out = np.full((nbins, nh), -np.inf)
    for b in range(nbins):
        for k in range(nh):
            if acc[b, k] > 0:
                out[b, k] = mx[b, k] + math.log(acc[b, k])
    return out


@numba.njit(cache=True)
def _tree_predictive(x, reps, sigma, bnd, z, lg, logw, lc, l2, depth):
    """``log sum_{b,h} w[b,h] G[b](z) T_{theta_b,h}(z)`` with the tree factor at each bin's representative theta."""
    nb, nz = lg.shape
    nh = logw.shape[1]
    cnt = np.zeros((depth + 1, 1 << depth), dtype=np.int64)
    mx = np.full(nz, -np.inf)
    acc = np.zeros(nz)
    tf = np.zeros(nh)
    for b in range(nb):
        cnt[:, :] = 0
        xi = np.searchsorted(bnd, (x - reps[b]) / sigma, side="right")
        for i in range(x.shape[0]):
            for j in range(depth + 1):
                cnt[j, xi[i] >> (depth - j)] += 1
        zi = np.searchsorted(bnd, (z - reps[b]) / sigma, side="right")
        for t in range(nz):
            tf[:] = 0.0
            for j in range(1, depth + 1):
                par = cnt[j - 1, zi[t] >> (depth - j + 1)]
                if par == 0:
                    break
                ch = cnt[j, zi[t] >> (depth - j)]
                for k in range(nh):
                    tf[k] += 0.6931471805599453 + lc[j, ch, k] - l2[j, par, k]
            for k in range(nh):
                v = logw[b, k] + lg[b, t] + tf[k]
                if v == -np.inf:
                    continue
                if v > mx[t]:
                    acc[t] = acc[t] * math.exp(mx[t] - v) + 1.0
                    mx[t] = v
                else:
                    acc[t] += math.exp(v - mx[t])
    out = np.empty(nz)
    for t in range(nz):
        out[t] = mx[t] + math.log(acc[t]) if acc[t] > 0 else -np.inf
    return out


def _logsumexp(a, axis=None):
    return special.logsumexp(a, axis=axis)


class PolyaTreeFit:
    """Polya-tree NPP quantities for one 1-dimensional dataset.

    Computes the perturbation evidence, the exact Bayes factor against the
    conjugate model and the posterior over ``(theta bin, h)`` used by the
    predictive densities.
    """

    def __init__(self, data: Dataset, model: ConjugateGaussianModel = ConjugateGaussianModel(),
                 cfg: PolyaTreeConfig = PolyaTreeConfig()):
        if data.dim != 1:
            raise ValueError(f"expected 1-dimensional data, got dim={data.dim}")
        self.data = data
        self.model = model
        self.cfg = cfg
        self.x = np.sort(data.values())
        self.sigma = math.sqrt(model.obs_var)
        post = gaussian_posterior(model, data)
        self.mu, self.s = post.mean, math.sqrt(post.var)
        self.parametric_posterior = post
        self.log_evidence_pm = model.log_evidence(data)
        self.h_nodes, self.h_weights = cfg.h_quadrature
        window = cfg.theta_window
        for _ in range(4):
            if self._integrate(window):
                break
            window *= 4.0
        else:
            warnings.warn("theta posterior mass remains at the integration window edge", RuntimeWarning, stacklevel=2)

    # theta posterior under the Gaussian part is N(mu, s^2); the tree corrections reweight it
    def _integrate(self, window: float) -> bool:
        cfg, x, sigma = self.cfg, self.x, self.sigma
        depth = cfg.depth
        lo, hi = self.mu - window * self.s, self.mu + window * self.s
        n = x.size
        if depth > 0 and n >= 2:
            b = _boundaries(depth)
            idx0 = _fine_index((x - lo) / sigma, depth)
            # point i crosses boundary k at theta = x_i - sigma b_k; its index drops to k - 1
            # crossed boundaries are b_k with k_lo < k <= idx0 (1-based)
            k_lo = np.searchsorted(b, (x - hi) / sigma, side="left")
            n_ev = np.maximum(idx0 - k_lo, 0)
            pts = np.repeat(np.arange(n), n_ev)
            first = np.cumsum(n_ev) - n_ev
            ks = np.repeat(idx0, n_ev) - (np.arange(pts.size) - np.repeat(first, n_ev))
            thetas = x[pts] - sigma * b[ks - 1]
            keep = (thetas > lo) & (thetas <= hi)
            pts, ks, thetas = pts[keep], ks[keep], thetas[keep]
            order = np.lexsort((-ks, thetas))
            pts, new_idx, thetas = pts[order], ks[order] - 1, thetas[order]
        else:
            idx0 = np.zeros(n, dtype=np.int64)
            pts = new_idx = np.zeros(0, dtype=np.int64)
            thetas = np.zeros(0)
        nb = cfg.theta_bins
        bin_edges = np.linspace(lo, hi, nb + 1)
        inner = bin_edges[1:-1]
        # bin edges enter the sweep as no-op events so that no interval straddles two bins
        thetas = np.concatenate([thetas, inner])
        pts = np.concatenate([pts, np.full(inner.size, -1, dtype=np.int64)])
        new_idx = np.concatenate([new_idx, np.zeros(inner.size, dtype=np.int64)])
        order = np.argsort(thetas, kind="stable")
        thetas, pts, new_idx = thetas[order], pts[order], new_idx[order]
        edges = np.concatenate([[-np.inf], thetas, [np.inf]])
        log_p = _log_ndtr_diff((edges[:-1] - self.mu) / self.s, (edges[1:] - self.mu) / self.s)
        bins = np.searchsorted(inner, edges[:-1], side="right")
        lg1, lg2 = _branch_tables(cfg, self.h_nodes, max(n, 1))
        logw = _sweep(idx0.astype(np.int64), pts.astype(np.int64), new_idx.astype(np.int64),
                      log_p, bins.astype(np.int64), nb, lg1, lg2, depth)
        logw = logw + np.log(self.h_weights)[None, :]
        total = _logsumexp(logw)
        edge_mass = _logsumexp(np.concatenate([logw[0], logw[-1]])) - total
        self.window = window
        self.bin_edges = bin_edges
        self.log_post = logw - total  # posterior over (theta bin, h)
        self.log_evidence_pert = self.log_evidence_pm + float(total)
        return bool(edge_mass < -30.0) or n < 2 or depth == 0

    @property
    def log_bayes_factor(self) -> float:
        """``log Pi_pm(x) - log Pi_pert(x)`` (prior odds not included)."""
        return self.log_evidence_pm - self.log_evidence_pert

    def mixing_weight(self, eta: float) -> float:
        if not 0.0 < eta < 1.0:
            raise ValueError("eta must lie in (0, 1)")
        return float(special.expit(self.log_bayes_factor + math.log(eta) - math.log1p(-eta)))

    def h_posterior(self) -> tuple[np.ndarray, np.ndarray]:
        return self.h_nodes, np.exp(_logsumexp(self.log_post, axis=0))

    def parametric_logpdf(self, z) -> np.ndarray:
        return gaussian_predictive_logpdf(self.parametric_posterior, z, self.model.obs_var)

    def predictive_logpdf(self, z, min_mass: float = 1e-12) -> np.ndarray:
        """Log posterior-predictive density of the Polya-tree component."""
        z = np.atleast_1d(np.asarray(z, dtype=float))
        cfg, sigma, mu, s = self.cfg, self.sigma, self.mu, self.s
        depth = cfg.depth
        post = np.exp(self.log_post)
        keep_b = np.flatnonzero(post.sum(axis=1) > min_mass)
        keep_h = np.flatnonzero(post.sum(axis=0) > min_mass)
        # Gaussian part integrated exactly over each theta bin
        var = sigma**2 + s**2
        mz = (mu * sigma**2 + z * s**2) / var
        vz = math.sqrt(sigma**2 * s**2 / var)
        log_marg = -0.5 * (math.log(2 * math.pi * var) + (z - mu) ** 2 / var)
        edges = self.bin_edges.copy()
        edges[0], edges[-1] = -np.inf, np.inf
        lbin_prob = _log_ndtr_diff((edges[:-1] - mu) / s, (edges[1:] - mu) / s)
        lo, hi = edges[keep_b], edges[keep_b + 1]
        lg = (_log_ndtr_diff((lo[:, None] - mz) / vz, (hi[:, None] - mz) / vz)
              + log_marg - lbin_prob[keep_b][:, None])
        logw = self.log_post[np.ix_(keep_b, keep_h)]
        reps = 0.5 * (self.bin_edges[keep_b] + self.bin_edges[keep_b + 1])
        if depth == 0 or self.x.size == 0:
            out = _logsumexp(logw, axis=1)[:, None] + lg
            return _logsumexp(out, axis=0) - _logsumexp(logw)
        alpha = cfg.alphas(self.h_nodes[keep_h])
        alpha[0] = 1.0
        c = np.arange(self.x.size + 1, dtype=float)
        lc = np.ascontiguousarray(np.log(alpha[:, None, :] + c[None, :, None]))
        l2 = np.ascontiguousarray(np.log(2.0 * alpha[:, None, :] + c[None, :, None]))
        out = _tree_predictive(self.x, reps, sigma, _boundaries(depth), z, np.ascontiguousarray(lg),
                               np.ascontiguousarray(logw), lc, l2, depth)
        return out - _logsumexp(logw)

    def npp_predictive_logpdf(self, z, eta: float | None = None, eta_n: float | None = None) -> np.ndarray:
        """Mixture of the parametric and Polya-tree predictives with the exact weight."""
        if eta_n is None:
            eta_n = self.mixing_weight(0.1 if eta is None else eta)
        lp = self.parametric_logpdf(np.atleast_1d(z))
        if eta_n >= 1.0:
            return lp
        lt = self.predictive_logpdf(z)
        if eta_n <= 0.0:
            return lt
        return np.logaddexp(math.log(eta_n) + lp, math.log1p(-eta_n) + lt)


def pt_perturbation_evidence(data: Dataset, model: ConjugateGaussianModel = ConjugateGaussianModel(),
                             cfg: PolyaTreeConfig = PolyaTreeConfig()) -> float:
    """Log marginal likelihood of the data under the Polya-tree perturbation."""
    return PolyaTreeFit(data, model, cfg).log_evidence_pert


def pt_exact_mixing_weight(data: Dataset, model: ConjugateGaussianModel = ConjugateGaussianModel(),
                           eta: float = 0.1, cfg: PolyaTreeConfig = PolyaTreeConfig()) -> float:
    """Posterior probability of the unperturbed branch."""
    if not 0.0 < eta < 1.0:
        raise ValueError("eta must lie in (0, 1)")
    if data.n == 0:
        return eta
    return PolyaTreeFit(data, model, cfg).mixing_weight(eta)


def pt_posterior_predictive_logpdf(data: Dataset, model: ConjugateGaussianModel, cfg: PolyaTreeConfig, x):
    return PolyaTreeFit(data, model, cfg).predictive_logpdf(x)


def npp_predictive_logpdf(data: Dataset, model: ConjugateGaussianModel, cfg: PolyaTreeConfig, x,
                          eta: float = 0.1):
    return PolyaTreeFit(data, model, cfg).npp_predictive_logpdf(x, eta=eta)


def kl_to_truth(truth, predictive_logpdf, n_holdout: int = 1000, rng=None) -> float:
    """Monte Carlo ``KL(p0 || predictive)`` from held-out draws of the truth.

    ``truth`` needs ``sample(n, rng)`` and ``logpdf(x)``.
    """
    rng = as_generator(rng)
    z = np.asarray(truth.sample(n_holdout, rng), dtype=float).ravel()
    return kl_from_log_densities(z, truth.logpdf(z), predictive_logpdf(z))


def kl_from_log_densities(z, log_p0, log_q) -> float:
    """Mean of ``log p0 - log q`` over draws ``z`` of the truth."""
    lp0 = np.asarray(log_p0, dtype=float)
    lq = np.asarray(log_q, dtype=float)
    bad = ~np.isfinite(lq) | ~np.isfinite(lp0)
    if np.any(bad):
        raise ValueError(f"non-finite log density at z={float(np.ravel(z)[np.argmax(bad)])!r}")
    return float(np.mean(lp0 - lq))
