"""Empirical divergences between a model sample and data.

Wasserstein plug-in (``W_p^p``), MMD V- and U-statistics and the KSD
U-statistic, with IMQ and Gaussian kernels.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numba
import numpy as np
from scipy import optimize
from scipy.spatial.distance import cdist, pdist

from .core import Dataset

MAX_OT_SIZE = 10**6


class KernelKind(enum.Enum):
    IMQ = "imq"
    GAUSSIAN = "gaussian"


@dataclass(frozen=True)
class Kernel:
    """IMQ ``amplitude * (c^2 + r^2)^(-1/2)`` or Gaussian ``amplitude * exp(-r^2 / c^2)``."""

    kind: KernelKind = KernelKind.IMQ
    bandwidth: float = 1.0
    amplitude: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", KernelKind(self.kind))
        if not (self.bandwidth > 0 and self.amplitude > 0):
            raise ValueError("kernel bandwidth and amplitude must be positive")

    def scaled(self, factor: float) -> "Kernel":
        return Kernel(self.kind, self.bandwidth, self.amplitude * factor)

    @property
    def sup(self) -> float:
        """Supremum of the kernel, attained on the diagonal."""
        if self.kind is KernelKind.IMQ:
            return self.amplitude / self.bandwidth
        return self.amplitude

    def from_sqdist(self, r2):
        c2 = self.bandwidth**2
        if self.kind is KernelKind.IMQ:
            return self.amplitude / np.sqrt(c2 + r2)
        return self.amplitude * np.exp(-r2 / c2)

    def __call__(self, x, y):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = np.atleast_2d(np.asarray(y, dtype=float))
        return self.from_sqdist(cdist(x, y, "sqeuclidean"))

    def grad_x(self, x, y):
        """``d k(x, y) / dx`` for single points ``x``, ``y``."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        diff = x - y
        r2 = float(diff @ diff)
        c2 = self.bandwidth**2
        if self.kind is KernelKind.IMQ:
            return -self.amplitude * (c2 + r2) ** -1.5 * diff
        return -2.0 / c2 * self.amplitude * math.exp(-r2 / c2) * diff

    def grad_y(self, x, y):
        return -self.grad_x(x, y)

    def trace_grad_xy(self, x, y):
        """``tr(d^2 k(x, y) / dx dy)`` for single points."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        d = x.size
        diff = x - y
        r2 = float(diff @ diff)
        c2 = self.bandwidth**2
        if self.kind is KernelKind.IMQ:
            return self.amplitude * (d * (c2 + r2) ** -1.5 - 3.0 * r2 * (c2 + r2) ** -2.5)
        return self.amplitude * math.exp(-r2 / c2) * (2.0 * d / c2 - 4.0 * r2 / c2**2)


class DivergenceKind(enum.Enum):
    WASSERSTEIN_PP = "wasserstein_pp"
    MMD_V = "mmd_v"
    MMD_U = "mmd_u"
    KSD_U = "ksd_u"


@dataclass(frozen=True)
class DivergenceEstimate:
    kind: DivergenceKind
    value: float
    m: int
    n: int
    p: float | None = None
    kernel: Kernel | None = None

    def __float__(self):
        return self.value


def _check_pair(xs: Dataset, ys: Dataset):
    if xs.dim != ys.dim:
        raise ValueError(f"dimension mismatch: {xs.dim} vs {ys.dim}")
    if xs.n == 0 or ys.n == 0:
        raise ValueError("divergence needs nonempty samples")


def _canonical(xs: Dataset, ys: Dataset):
    """Order the pair so that swapped calls perform identical arithmetic."""
    kx = (xs.n, xs.points.tobytes())
    ky = (ys.n, ys.points.tobytes())
    return (ys, xs) if ky < kx else (xs, ys)


def median_heuristic(data: Dataset) -> float:
    """Median pairwise Euclidean distance, with fallbacks for degenerate data."""
    if data.n < 2:
        raise ValueError("median heuristic needs at least two points")
    d = pdist(data.points)
    med = float(np.median(d))
    if med > 0:
        return med
    nz = d[d > 0]
    return float(nz.min()) if nz.size else 1.0


# --- Wasserstein -----------------------------------------------------------------


def _w1d(x: np.ndarray, y: np.ndarray, p: float) -> float:
    x = np.sort(x)
    y = np.sort(y)
    m, n = x.size, y.size
    if m == n:
        return float(np.mean(np.abs(x - y) ** p))
    # quantile coupling on the merged grid of cumulative levels
    levels = np.union1d(np.arange(1, m + 1) / m, np.arange(1, n + 1) / n)
    widths = np.diff(np.concatenate([[0.0], levels]))
    mids = levels - widths / 2
    xi = np.minimum((mids * m).astype(np.int64), m - 1)
    yi = np.minimum((mids * n).astype(np.int64), n - 1)
    return float(np.sum(widths * np.abs(x[xi] - y[yi]) ** p))


def _ot_exact(x: np.ndarray, y: np.ndarray, p: float) -> float:
    m, n = x.shape[0], y.shape[0]
    if m * n > MAX_OT_SIZE:
        raise ValueError(f"exact optimal transport limited to m*n <= {MAX_OT_SIZE}, got {m * n}")
    cost = cdist(x, y, "euclidean") ** p
    if m == n:
        # uniform weights of equal count: an optimal plan is a permutation
        rows, cols = optimize.linear_sum_assignment(cost)
        return float(cost[rows, cols].sum() / m)
    a_eq = np.zeros((m + n, m * n))
    for i in range(m):
        a_eq[i, i * n:(i + 1) * n] = 1.0
    for j in range(n):
        a_eq[m + j, j::n] = 1.0
    b_eq = np.concatenate([np.full(m, 1.0 / m), np.full(n, 1.0 / n)])
    res = optimize.linprog(cost.ravel(), A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if not res.success:
        raise RuntimeError(f"optimal transport solve failed: {res.message}")
    return float(res.fun)


def wasserstein_pp(xs: Dataset, ys: Dataset, p: float = 2.0) -> DivergenceEstimate:
    """``W_p^p`` between the empirical measures of two samples.

    One-dimensional samples use the sorted quantile coupling; higher
    dimensions solve the discrete transport problem exactly.
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    _check_pair(xs, ys)
    a, b = _canonical(xs, ys)
    if a.dim == 1:
        value = _w1d(a.values(), b.values(), p)
    else:
        value = _ot_exact(a.points, b.points, p)
    return DivergenceEstimate(DivergenceKind.WASSERSTEIN_PP, value, xs.n, ys.n, p=p)


# --- MMD ---------------------------------------------------------------------------


@numba.njit(cache=True)
def _pair_sum(x, y, imq, c2, skip_diag):
    m, d = x.shape
    n = y.shape[0]
    total = 0.0
    for i in range(m):
        row = 0.0
        for j in range(n):
            if skip_diag and i == j:
                continue
            r2 = 0.0
            for k in range(d):
                t = x[i, k] - y[j, k]
                r2 += t * t
            if imq:
                row += 1.0 / math.sqrt(c2 + r2)
            else:
                row += math.exp(-r2 / c2)
        total += row
    return total


@numba.njit(cache=True)
def _self_sum(x, imq, c2):
    # sum over i != j of k(x_i, x_j), using symmetry
    m, d = x.shape
    total = 0.0
    for i in range(m):
        row = 0.0
        for j in range(i + 1, m):
            r2 = 0.0
            for k in range(d):
                t = x[i, k] - x[j, k]
                r2 += t * t
            if imq:
                row += 1.0 / math.sqrt(c2 + r2)
            else:
                row += math.exp(-r2 / c2)
        total += row
    return 2.0 * total


def _kernel_args(kernel: Kernel):
    return kernel.kind is KernelKind.IMQ, float(kernel.bandwidth**2)


def kernel_self_sum(x: np.ndarray, kernel: Kernel) -> float:
    """``sum_{i != j} k(x_i, x_j)``."""
    imq, c2 = _kernel_args(kernel)
    return kernel.amplitude * _self_sum(np.ascontiguousarray(x, dtype=float), imq, c2)


def kernel_cross_sum(x: np.ndarray, y: np.ndarray, kernel: Kernel) -> float:
    """``sum_{i, j} k(x_i, y_j)``."""
    imq, c2 = _kernel_args(kernel)
    return kernel.amplitude * _pair_sum(
        np.ascontiguousarray(x, dtype=float), np.ascontiguousarray(y, dtype=float), imq, c2, False
    )


def mmd2_v(xs: Dataset, ys: Dataset, kernel: Kernel) -> DivergenceEstimate:
    """Plug-in (V-statistic) squared MMD between the empirical measures."""
    _check_pair(xs, ys)
    a, b = _canonical(xs, ys)
    m, n = a.n, b.n
    diag = kernel.sup
    kaa = (kernel_self_sum(a.points, kernel) + m * diag) / m**2
    kbb = (kernel_self_sum(b.points, kernel) + n * diag) / n**2
    kab = kernel_cross_sum(a.points, b.points, kernel) / (m * n)
    return DivergenceEstimate(DivergenceKind.MMD_V, kaa + kbb - 2.0 * kab, xs.n, ys.n, kernel=kernel)


def mmd2_u_terms(x: np.ndarray, y: np.ndarray, kernel: Kernel, y_term: float | None = None) -> float:
    """Unbiased squared MMD from raw arrays; ``y_term`` reuses a precomputed data term."""
    m, n = x.shape[0], y.shape[0]
    if m < 2 or n < 2:
        raise ValueError("MMD U-statistic needs at least two points in each sample")
    kxx = kernel_self_sum(x, kernel) / (m * (m - 1))
    kyy = kernel_self_sum(y, kernel) / (n * (n - 1)) if y_term is None else y_term
    kxy = kernel_cross_sum(x, y, kernel) / (m * n)
    return kxx + kyy - 2.0 * kxy


def mmd2_u(xs: Dataset, ys: Dataset, kernel: Kernel) -> DivergenceEstimate:
    """Unbiased (U-statistic) squared MMD; may be negative."""
    _check_pair(xs, ys)
    a, b = _canonical(xs, ys)
    value = mmd2_u_terms(a.points, b.points, kernel)
    return DivergenceEstimate(DivergenceKind.MMD_U, value, xs.n, ys.n, kernel=kernel)


# --- KSD ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SteinKernelTerms:
    """Score-independent pieces of the Stein kernel on a fixed sample."""

    k: np.ndarray  # (n, n)
    grad_x: np.ndarray  # (n, n, d): d k(x_i, x_j) / d x_i
    trace: np.ndarray  # (n, n)


def stein_kernel_terms(x: np.ndarray, kernel: Kernel) -> SteinKernelTerms:
    x = np.asarray(x, dtype=float)
    d = x.shape[1]
    diff = x[:, None, :] - x[None, :, :]
    r2 = np.einsum("ijk,ijk->ij", diff, diff)
    c2 = kernel.bandwidth**2
    amp = kernel.amplitude
    if kernel.kind is KernelKind.IMQ:
        base = c2 + r2
        k = amp * base**-0.5
        gx = -amp * (base**-1.5)[:, :, None] * diff
        tr = amp * (d * base**-1.5 - 3.0 * r2 * base**-2.5)
    else:
        e = np.exp(-r2 / c2)
        k = amp * e
        gx = (-2.0 / c2 * amp * e)[:, :, None] * diff
        tr = amp * e * (2.0 * d / c2 - 4.0 * r2 / c2**2)
    return SteinKernelTerms(k, gx, tr)


def ksd_u_from_terms(terms: SteinKernelTerms, s: np.ndarray) -> float:
    """U-statistic KSD for score values ``s`` (shape ``(n, d)``) at the sample points."""
    n = s.shape[0]
    # u(x_i, x_j) = s_i.s_j k + s_i.grad_{x_j} k + s_j.grad_{x_i} k + tr;
    # grad_x is antisymmetric, so s_i.grad_{x_j} k(x_i, x_j) = sg[j, i]
    u = (s @ s.T) * terms.k
    sg = np.einsum("jd,ijd->ij", s, terms.grad_x)
    u += sg + sg.T + terms.trace
    return float((u.sum() - np.trace(u)) / (n * (n - 1)))


def ksd_u(xs: Dataset, score, kernel: Kernel) -> DivergenceEstimate:
    """Kernelized Stein discrepancy U-statistic of ``xs`` against a model given by its score.

    ``score`` maps an ``(n, d)`` array to the gradient of the model log density
    at each row; no model samples are needed.
    """
    if xs.n < 2:
        raise ValueError("KSD U-statistic needs at least two points")
    s = np.asarray(score(xs.points), dtype=float).reshape(xs.n, xs.dim)
    if not np.all(np.isfinite(s)):
        raise ValueError("score is not finite at every sample point")
    value = ksd_u_from_terms(stein_kernel_terms(xs.points, kernel), s)
    return DivergenceEstimate(DivergenceKind.KSD_U, value, 0, xs.n, kernel=kernel)
