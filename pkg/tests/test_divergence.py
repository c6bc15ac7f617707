import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from npp.core import Dataset, SeededRng
from npp.divergence import (
    Kernel,
    KernelKind,
    ksd_u,
    median_heuristic,
    mmd2_u,
    mmd2_v,
    wasserstein_pp,
)


def brute_w1d(x, y, p):
    """Exhaustive assignment oracle for equal-size samples."""
    return min(np.mean(np.abs(x - y[list(perm)]) ** p) for perm in itertools.permutations(range(len(y))))


def hand_mmd(x, y, k, unbiased):
    m, n = len(x), len(y)
    kxx = sum(k(x[i], x[j]) for i in range(m) for j in range(m) if not (unbiased and i == j))
    kyy = sum(k(y[i], y[j]) for i in range(n) for j in range(n) if not (unbiased and i == j))
    kxy = sum(k(x[i], y[j]) for i in range(m) for j in range(n))
    if unbiased:
        return kxx / (m * (m - 1)) + kyy / (n * (n - 1)) - 2 * kxy / (m * n)
    return kxx / m**2 + kyy / n**2 - 2 * kxy / (m * n)


def imq(c):
    return lambda a, b: 1.0 / math.sqrt(c * c + float(np.sum((np.asarray(a) - np.asarray(b)) ** 2)))


# -- median heuristic --

def test_median_heuristic_examples():
    assert median_heuristic(Dataset([0.0, 2.0])) == 2.0
    assert median_heuristic(Dataset([0.0, 1.0, 3.0])) == 2.0
    with pytest.raises(ValueError):
        median_heuristic(Dataset([1.0]))


def test_median_heuristic_fallbacks():
    # six zero distances out of ten: the median is 0, so the smallest nonzero one is used
    assert median_heuristic(Dataset([1.0, 1.0, 1.0, 1.0, 4.0])) == 3.0
    assert median_heuristic(Dataset([2.0, 2.0])) == 1.0


def test_median_heuristic_normal():
    x = SeededRng(0).generator().standard_normal(500)
    # |X - X'| with X - X' ~ N(0, 2) has median sqrt(2) * Phi^-1(0.75)
    assert median_heuristic(Dataset(x)) == pytest.approx(math.sqrt(2) * stats.norm.ppf(0.75), abs=0.1)


# -- Wasserstein --

def test_wasserstein_examples():
    assert wasserstein_pp(Dataset([0.0]), Dataset([3.0]), 2).value == 9.0
    for p in (1, 2, 3.5):
        assert wasserstein_pp(Dataset([0.0, 1.0]), Dataset([0.0, 1.0]), p).value == 0.0
    assert wasserstein_pp(Dataset([0.0, 2.0]), Dataset([1.0, 3.0]), 1).value == 1.0


def test_wasserstein_errors():
    with pytest.raises(ValueError):
        wasserstein_pp(Dataset([0.0]), Dataset(np.zeros((1, 2))))
    with pytest.raises(ValueError):
        wasserstein_pp(Dataset.empty(), Dataset([1.0]))
    big = Dataset(np.zeros((1001, 2)))
    with pytest.raises(ValueError):
        wasserstein_pp(big, big)


def test_wasserstein_exhaustive_oracle():
    g = SeededRng(1).generator()
    for _ in range(200):
        n = int(g.integers(1, 7))
        x, y = g.normal(size=n), g.normal(size=n)
        p = float(g.choice([1.0, 2.0, 3.0]))
        assert wasserstein_pp(Dataset(x), Dataset(y), p).value == pytest.approx(brute_w1d(x, y, p), rel=1e-12, abs=1e-14)


def test_wasserstein_unequal_sizes_against_scipy():
    g = SeededRng(2).generator()
    x, y = g.normal(size=7), g.normal(1.0, 2.0, size=11)
    assert wasserstein_pp(Dataset(x), Dataset(y), 1).value == pytest.approx(stats.wasserstein_distance(x, y), rel=1e-12)


def test_wasserstein_multivariate_matches_assignment():
    g = SeededRng(3).generator()
    x, y = g.normal(size=(5, 2)), g.normal(size=(5, 2))
    cost = ((x[:, None] - y[None]) ** 2).sum(-1)
    best = min(np.mean(cost[np.arange(5), list(perm)]) for perm in itertools.permutations(range(5)))
    assert wasserstein_pp(Dataset(x), Dataset(y), 2).value == pytest.approx(best, rel=1e-12)


def test_wasserstein_multivariate_unequal_sizes_lp():
    # 2 vs 4 points: each x atom (mass 1/2) is split over two y atoms (mass 1/4)
    x = np.array([[0.0, 0.0], [10.0, 0.0]])
    y = np.array([[0.0, 1.0], [0.0, -1.0], [10.0, 1.0], [10.0, -1.0]])
    assert wasserstein_pp(Dataset(x), Dataset(y), 2).value == pytest.approx(1.0, abs=1e-9)


def test_wasserstein_rate_in_1d():
    ns = np.array([25, 50, 100, 200, 400, 800])
    means = []
    for n in ns:
        v = [wasserstein_pp(Dataset(SeededRng(4, r).generator().standard_normal(n)),
                            Dataset(SeededRng(5, r).generator().standard_normal(n)), 2).value for r in range(100)]
        means.append(np.mean(v))
    assert np.all(np.diff(means) < 0)
    assert np.polyfit(np.log(ns), np.log(means), 1)[0] < -0.4


# -- MMD --

def test_mmd_v_examples():
    x = Dataset(SeededRng(6).generator().normal(size=(9, 2)))
    assert abs(mmd2_v(x, x, Kernel(KernelKind.IMQ, 1.3)).value) <= 1e-12
    k = Kernel(KernelKind.GAUSSIAN, math.sqrt(2))
    assert mmd2_v(Dataset([0.0]), Dataset([1.0]), k).value == pytest.approx(2 - 2 * math.exp(-0.5), abs=1e-15)
    assert mmd2_v(Dataset([0.0]), Dataset([1.0]), k).value == pytest.approx(0.786939, abs=1e-6)


def test_mmd_u_zero_on_constant():
    k = Kernel(KernelKind.IMQ, 1.0)
    assert mmd2_u(Dataset([0.0, 0.0]), Dataset([0.0, 0.0]), k).value == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(ValueError):
        mmd2_u(Dataset([0.0]), Dataset([0.0, 1.0]), k)


def test_mmd_hand_sums_three_points():
    g = SeededRng(7).generator()
    for kind in KernelKind:
        for _ in range(10):
            x, y = g.normal(size=(3, 2)), g.normal(size=(3, 2))
            c = float(g.uniform(0.3, 3))
            k = Kernel(kind, c)
            kf = imq(c) if kind is KernelKind.IMQ else (lambda a, b, c=c: math.exp(-float(np.sum((a - b) ** 2)) / c**2))
            assert mmd2_v(Dataset(x), Dataset(y), k).value == pytest.approx(hand_mmd(x, y, kf, False), abs=1e-12)
            assert mmd2_u(Dataset(x), Dataset(y), k).value == pytest.approx(hand_mmd(x, y, kf, True), abs=1e-12)


def gaussian_population_mmd(mu, c):
    """Population MMD^2 of N(0,1) vs N(mu,1) under exp(-r^2/c^2).

    For Z ~ N(m, v), E exp(-Z^2/c^2) = c / sqrt(c^2 + 2v) exp(-m^2 / (c^2 + 2v));
    all three differences have v = 2.
    """
    e = lambda m: c / math.sqrt(c * c + 4.0) * math.exp(-m * m / (c * c + 4.0))
    return 2 * e(0.0) - 2 * e(mu)


def test_population_mmd_closed_form_by_integration():
    from scipy import integrate

    c, mu = 1.5, 1.0
    # E exp(-(X - Y)^2 / c^2) with X - Y ~ N(mu, 2), integrated numerically
    f = lambda d: math.exp(-d * d / c**2) * stats.norm(mu, math.sqrt(2)).pdf(d)
    num = integrate.quad(f, -np.inf, np.inf)[0]
    g = lambda d: math.exp(-d * d / c**2) * stats.norm(0, math.sqrt(2)).pdf(d)
    ref = 2 * integrate.quad(g, -np.inf, np.inf)[0] - 2 * num
    # and a 2D integration of the same expectation
    h = lambda y, x: math.exp(-(x - y) ** 2 / c**2) * stats.norm.pdf(x) * stats.norm.pdf(y, mu)
    two_d = integrate.dblquad(h, -9, 9, -9, 10)[0]
    assert num == pytest.approx(two_d, abs=1e-7)
    assert gaussian_population_mmd(mu, c) == pytest.approx(ref, abs=1e-10)


def test_mmd_u_unbiased():
    c, mu = 1.5, 1.0
    k = Kernel(KernelKind.GAUSSIAN, c)
    vals = np.array([mmd2_u(Dataset(SeededRng(8, r).generator().normal(0, 1, 50)),
                            Dataset(SeededRng(9, r).generator().normal(mu, 1, 50)), k).value for r in range(2000)])
    se = vals.std(ddof=1) / math.sqrt(vals.size)
    assert abs(vals.mean() - gaussian_population_mmd(mu, c)) < 3 * se


def test_mmd_u_mean_zero_well_specified():
    k = Kernel(KernelKind.IMQ, 1.0)
    for n in (25, 50, 100, 200, 400, 800):
        reps = 200 if n <= 200 else 60
        vals = np.array([mmd2_u(Dataset(SeededRng(10, r).generator().standard_normal(n)),
                                Dataset(SeededRng(11, r).generator().standard_normal(n)), k).value
                         for r in range(reps)])
        assert abs(vals.mean()) < 3 * vals.std(ddof=1) / math.sqrt(reps)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 12), st.integers(2, 12), st.integers(0, 10**6), st.sampled_from(list(KernelKind)))
def test_mmd_v_minus_u_bound(m, n, seed, kind):
    g = np.random.default_rng(seed)
    x, y = Dataset(g.normal(size=m)), Dataset(g.normal(size=n) * 2)
    k = Kernel(kind, float(g.uniform(0.2, 3)))
    gap = abs(mmd2_v(x, y, k).value - mmd2_u(x, y, k).value)
    assert gap <= 2 * k.sup * (1 / m + 1 / n) + 1e-12
    assert mmd2_v(x, y, k).value >= -1e-12


def test_symmetry_bit_identical():
    g = SeededRng(12).generator()
    for i in range(50):
        m, n = int(g.integers(2, 20)), int(g.integers(2, 20))
        x, y = Dataset(g.normal(size=m)), Dataset(g.normal(size=n))
        k = Kernel(KernelKind.IMQ, 1.0)
        assert wasserstein_pp(x, y, 2).value == wasserstein_pp(y, x, 2).value
        assert mmd2_v(x, y, k).value == mmd2_v(y, x, k).value
        assert mmd2_u(x, y, k).value == mmd2_u(y, x, k).value


def test_kernel_scaling():
    g = SeededRng(13).generator()
    x, y = Dataset(g.normal(size=30)), Dataset(g.normal(size=40))
    k = Kernel(KernelKind.IMQ, 0.8)
    assert mmd2_u(x, y, k.scaled(3.0)).value == pytest.approx(3.0 * mmd2_u(x, y, k).value, rel=1e-12)


# -- KSD --

def u_stein_reference(x, y, s, c):
    """Stein kernel from numerical derivatives of the IMQ kernel (independent of the closed forms)."""
    k = lambda a, b: (c * c + np.sum((a - b) ** 2)) ** -0.5
    h = 1e-5
    d = x.size
    ex = np.eye(d) * h
    gx = np.array([(k(x + ex[i], y) - k(x - ex[i], y)) / (2 * h) for i in range(d)])
    gy = np.array([(k(x, y + ex[i]) - k(x, y - ex[i])) / (2 * h) for i in range(d)])
    tr = sum((k(x + ex[i], y + ex[i]) - k(x + ex[i], y - ex[i]) - k(x - ex[i], y + ex[i]) + k(x - ex[i], y - ex[i]))
             / (4 * h * h) for i in range(d))
    return s(x) @ s(y) * k(x, y) + s(x) @ gy + s(y) @ gx + tr


def test_ksd_two_points_closed_formula():
    x = np.array([[0.0], [1.0]])
    score = lambda p: -p
    got = ksd_u(Dataset(x), score, Kernel(KernelKind.IMQ, 1.0)).value
    # u(0,1) by hand: s(0)=0, s(1)=-1; k=2^-1/2; d/dx k(0,1) = 2^-1.5; tr = 2^-1.5 - 3 * 2^-2.5
    hand = 0.0 + 0.0 + (-1.0) * 2**-1.5 + (2**-1.5 - 3 * 2**-2.5)
    assert got == pytest.approx(hand, abs=1e-14)
    assert got == pytest.approx(u_stein_reference(x[0], x[1], lambda p: -p, 1.0), abs=1e-6)


@pytest.mark.parametrize("kind", list(KernelKind))
def test_kernel_derivatives_finite_differences(kind):
    g = SeededRng(14).generator()
    h = 1e-5
    for _ in range(20):
        d = int(g.integers(1, 4))
        x, y = g.normal(size=d), g.normal(size=d)
        k = Kernel(kind, float(g.uniform(0.5, 2.0)))
        f = lambda a, b: float(k(a, b)[0, 0])
        e = np.eye(d) * h
        gx = np.array([(f(x + e[i], y) - f(x - e[i], y)) / (2 * h) for i in range(d)])
        gy = np.array([(f(x, y + e[i]) - f(x, y - e[i])) / (2 * h) for i in range(d)])
        tr = sum((f(x + e[i], y + e[i]) - f(x + e[i], y - e[i]) - f(x - e[i], y + e[i]) + f(x - e[i], y - e[i]))
                 / (4 * h * h) for i in range(d))
        assert np.allclose(k.grad_x(x, y), gx, rtol=1e-6, atol=1e-9)
        assert np.allclose(k.grad_y(x, y), gy, rtol=1e-6, atol=1e-9)
        assert k.trace_grad_xy(x, y) == pytest.approx(tr, rel=1e-5, abs=1e-6)


def test_ksd_matches_pairwise_reference_2d():
    g = SeededRng(15).generator()
    x = g.normal(size=(6, 2))
    score = lambda p: -p
    ref = np.mean([u_stein_reference(x[i], x[j], lambda p: -p, 1.3) for i in range(6) for j in range(6) if i != j])
    assert ksd_u(Dataset(x), score, Kernel(KernelKind.IMQ, 1.3)).value == pytest.approx(ref, abs=1e-6)


def test_ksd_unbiased_under_model():
    k = Kernel(KernelKind.IMQ, 1.0)
    vals = np.array([ksd_u(Dataset(SeededRng(16, r).generator().standard_normal(100)), lambda p: -p, k).value
                     for r in range(500)])
    assert abs(vals.mean()) < 3 * vals.std(ddof=1) / math.sqrt(vals.size)


def test_ksd_errors():
    k = Kernel(KernelKind.IMQ, 1.0)
    with pytest.raises(ValueError):
        ksd_u(Dataset([0.0]), lambda p: -p, k)
    with pytest.raises(ValueError):
        ksd_u(Dataset([0.0, 1.0]), lambda p: np.full_like(p, np.inf), k)


def test_ksd_signature_needs_no_model_samples():
    import inspect

    assert list(inspect.signature(ksd_u).parameters) == ["xs", "score", "kernel"]
