"""Synthetic experiments: Bayes-factor curves, KL curves and the median study.

Every replicate ``r`` draws from ``SeededRng(seed, stream=r)``; sub-streams of
that replicate are fixed by ``(scenario, n, purpose)`` so results do not
depend on scheduling or on which metrics are requested.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from functools import lru_cache
from typing import Iterable

import numpy as np

from ..core import Dataset, SeededRng, mix_posteriors
from ..gbf import DEFAULT_RATES, Divergence, GbfConfig, MixtureWeight, generalized_bayes_factor
from ..npfunctional import Median, bayesian_bootstrap_posterior, parametric_functional_posterior
from ..parametric import ConjugateGaussianModel, matched_skew_normal
from ..polyatree import PolyaTreeConfig, PolyaTreeFit, kl_from_log_densities

HEADER = ("scenario", "n", "replicate", "metric", "value")
SCENARIOS = ("well_specified", "misspecified")
DIVERGENCES = tuple(d.value for d in Divergence if d is not Divergence.MMD_V)

# sub-stream purposes within a replicate
_DATA, _GBF, _HOLDOUT, _MEDIAN = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class ResultRow:
    scenario: str
    n: int
    replicate: int
    metric: str
    value: float

    def key(self):
        return (self.scenario, self.n, self.replicate, self.metric)


@dataclass(frozen=True)
class ExperimentConfig:
    """Settings shared by the synthetic experiments.

    ``rates`` overrides the per-divergence default rate; ``divergences``
    selects which generalized Bayes factors ``bf-curves`` reports and
    ``median_divergence`` the one used by the median study.
    """

    scenarios: tuple[str, ...] = SCENARIOS
    alpha: float = 10.0
    n_grid: tuple[int, ...] = (5, 50, 500)
    replicates: int = 100
    divergences: tuple[str, ...] = DIVERGENCES
    median_divergence: str = "mmd"
    rates: dict = field(default_factory=dict)
    eta: float = 0.1
    n_prior_draws: int = 200
    n_posterior_draws: int = 200
    n_draws: int = 2000
    n_holdout: int = 1000
    depth: int = 10
    seed: int = 0

    def __post_init__(self):
        for name in ("scenarios", "n_grid", "divergences"):
            val = getattr(self, name)
            object.__setattr__(self, name, tuple(val) if not isinstance(val, str) else (val,))
        if not self.n_grid:
            raise ConfigError("n_grid must be nonempty")
        if any(int(n) != n or n < 1 for n in self.n_grid):
            raise ConfigError("n_grid entries must be positive integers")
        object.__setattr__(self, "n_grid", tuple(int(n) for n in self.n_grid))
        if list(self.n_grid) != sorted(set(self.n_grid)):
            raise ConfigError("n_grid must be strictly ascending")
        if self.replicates < 1:
            raise ConfigError("replicates must be at least 1")
        bad = [s for s in self.scenarios if s not in SCENARIOS]
        if bad or not self.scenarios:
            raise ConfigError(f"unknown scenarios {bad}; expected a subset of {SCENARIOS}")
        bad = [d for d in (*self.divergences, self.median_divergence) if d not in DEFAULT_RATES]
        if bad:
            raise ConfigError(f"unknown divergences {bad}")
        bad = [d for d in self.rates if d not in DEFAULT_RATES]
        if bad:
            raise ConfigError(f"rates given for unknown divergences {bad}")
        if not 0.0 < self.eta < 1.0:
            raise ConfigError("eta must lie in (0, 1)")
        if min(self.n_prior_draws, self.n_posterior_draws, self.n_draws, self.n_holdout) < 1:
            raise ConfigError("draw counts must be at least 1")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")

    @classmethod
    def from_mapping(cls, mapping: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(mapping) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        try:
            return cls(**mapping)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def gbf_config(self, divergence: str) -> GbfConfig:
        return GbfConfig(divergence=divergence, rate=self.rates.get(divergence), eta_prior=self.eta,
                         n_prior_draws=self.n_prior_draws, n_posterior_draws=self.n_posterior_draws)

    def to_dict(self) -> dict:
        return asdict(self)


MODEL = ConjugateGaussianModel()


@lru_cache(maxsize=8)
def _truth(scenario: str, alpha: float):
    return None if scenario == "well_specified" else matched_skew_normal(alpha)


class _StandardNormal:
    def sample(self, n, rng):
        return rng.standard_normal(n)

    def logpdf(self, x):
        return -0.5 * math.log(2 * math.pi) - 0.5 * np.asarray(x) ** 2

    def median(self):
        return 0.0


def truth_distribution(scenario: str, alpha: float = 10.0):
    t = _truth(scenario, alpha)
    return _StandardNormal() if t is None else t


def _stream(cfg: ExperimentConfig, scenario: str, n: int, replicate: int, purpose: int, *extra) -> SeededRng:
    return SeededRng(cfg.seed, replicate).child(SCENARIOS.index(scenario), n, purpose, *extra)


def replicate_data(cfg: ExperimentConfig, scenario: str, n: int, replicate: int) -> Dataset:
    gen = _stream(cfg, scenario, n, replicate, _DATA).generator()
    return Dataset(truth_distribution(scenario, cfg.alpha).sample(n, gen))


def _gbf_metrics(cfg, scenario, n, r, data, divergences, cache):
    out = {}
    for div in divergences:
        if div not in cache:
            k = list(DEFAULT_RATES).index(div)
            gcfg = cfg.gbf_config(div)
            try:
                cache[div] = generalized_bayes_factor(MODEL, data, gcfg, _stream(cfg, scenario, n, r, _GBF, k))
            except ValueError as exc:
                if "degenerate prior divergence" not in str(exc):
                    raise
                # no detectable discrepancy even under the prior: fall back to the prior odds
                odds = cfg.eta / (1.0 - cfg.eta)
                cache[div] = MixtureWeight(odds, math.log(odds), cfg.eta, math.nan, math.nan, gcfg.rate, n)
        w = cache[div]
        out[f"log_gbf_{div}"] = w.log_gbf
        out[f"eta_hat_{div}"] = w.eta_hat
        out[f"gbf_degenerate_{div}"] = float(math.isnan(w.prior_div))
    return out


def _gbf_feasible(div: str, n: int) -> bool:
    # U-statistics need two data points
    return n >= 2 or div == "wasserstein"


def replicate_metrics(cfg: ExperimentConfig, scenario: str, n: int, replicate: int,
                      parts: Iterable[str] = ("bf", "kl", "median")) -> dict[str, float]:
    """All requested metrics of one replicate, sharing the dataset and intermediate fits."""
    parts = set(parts)
    data = replicate_data(cfg, scenario, n, replicate)
    truth = truth_distribution(scenario, cfg.alpha)
    metrics: dict[str, float] = {}
    gbf_cache: dict = {}
    fit = None
    if parts & {"bf", "kl"}:
        fit = PolyaTreeFit(data, MODEL, PolyaTreeConfig(depth=cfg.depth))
    if "bf" in parts:
        eta_n = fit.mixing_weight(cfg.eta)
        metrics["log_bf_exact"] = fit.log_bayes_factor + math.log(cfg.eta) - math.log1p(-cfg.eta)
        metrics["eta_exact"] = eta_n
        divs = [d for d in cfg.divergences if _gbf_feasible(d, n)]
        metrics.update(_gbf_metrics(cfg, scenario, n, replicate, data, divs, gbf_cache))
    if "kl" in parts:
        gen = _stream(cfg, scenario, n, replicate, _HOLDOUT).generator()
        z = np.asarray(truth.sample(cfg.n_holdout, gen), dtype=float)
        lp0 = truth.logpdf(z)
        lpm = fit.parametric_logpdf(z)
        lpt = fit.predictive_logpdf(z)
        eta_n = fit.mixing_weight(cfg.eta)
        if eta_n >= 1.0:
            lnpp = lpm
        elif eta_n <= 0.0:
            lnpp = lpt
        else:
            lnpp = np.logaddexp(math.log(eta_n) + lpm, math.log1p(-eta_n) + lpt)
        for name, lq in (("kl_parametric", lpm), ("kl_pt", lpt), ("kl_npp", lnpp)):
            metrics[name] = kl_from_log_densities(z, lp0, lq)
    if "median" in parts:
        div = cfg.median_divergence
        if _gbf_feasible(div, n):
            _gbf_metrics(cfg, scenario, n, replicate, data, [div], gbf_cache)
            eta_hat = gbf_cache[div].eta_hat
        else:
            eta_hat = cfg.eta
        gen = _stream(cfg, scenario, n, replicate, _MEDIAN).generator()
        r_pm, r_np = gen.spawn(2)
        fun = Median()
        pm = parametric_functional_posterior(data, MODEL, fun, cfg.n_draws, r_pm)
        bb = bayesian_bootstrap_posterior(data, fun, cfg.n_draws, r_np)
        posts = {"pm": pm, "np": bb, "gnpp": mix_posteriors(pm, bb, eta_hat)}
        target = truth.median()
        metrics["eta_hat_median"] = eta_hat
        for key, post in posts.items():
            metrics[f"median_abs_err_{key}"] = abs(float(post.mean()[0]) - target)
            for level in (90, 95):
                lo, hi = post.interval(level / 100.0)
                metrics[f"covered_{level}_{key}"] = float(lo <= target <= hi)
    return metrics


def _task(args):
    cfg, scenario, n, r, parts = args
    m = replicate_metrics(cfg, scenario, n, r, parts)
    return [ResultRow(scenario, n, r, k, float(v)) for k, v in m.items()]


def run_experiment(cfg: ExperimentConfig, parts: Iterable[str], threads: int = 1) -> list[ResultRow]:
    """Rows for every (scenario, n, replicate), sorted by (scenario, n, replicate, metric)."""
    parts = tuple(parts)
    tasks = [(cfg, s, n, r, parts) for s in cfg.scenarios for n in cfg.n_grid for r in range(cfg.replicates)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(_task, tasks, chunksize=max(1, len(tasks) // (4 * threads))))
    else:
        chunks = [_task(t) for t in tasks]
    rows = [row for chunk in chunks for row in chunk]
    return sorted(rows, key=ResultRow.key)


def run_bf_curves(cfg: ExperimentConfig, threads: int = 1) -> list[ResultRow]:
    return run_experiment(cfg, ("bf",), threads)


def run_kl_curves(cfg: ExperimentConfig, threads: int = 1) -> list[ResultRow]:
    return run_experiment(cfg, ("kl",), threads)


def run_median_experiment(cfg: ExperimentConfig, threads: int = 1) -> list[ResultRow]:
    return run_experiment(cfg, ("median",), threads)


def write_rows(path, rows: Iterable[ResultRow]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(HEADER)
        for row in sorted(rows, key=ResultRow.key):
            writer.writerow([row.scenario, row.n, row.replicate, row.metric, repr(float(row.value))])


def read_rows(path) -> list[ResultRow]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != HEADER:
            raise DataError(f"unexpected header {header}")
        return [ResultRow(s, int(n), int(r), m, float(v)) for s, n, r, m, v in reader]


def summarize(rows: Iterable[ResultRow]) -> dict:
    """Median of every metric per scenario and n: ``{scenario: {n: {metric: median}}}``."""
    groups: dict = {}
    for row in rows:
        groups.setdefault(row.scenario, {}).setdefault(str(row.n), {}).setdefault(row.metric, []).append(row.value)
    return {s: {n: {m: float(np.median(v)) for m, v in sorted(ms.items())} for n, ms in by_n.items()}
            for s, by_n in groups.items()}


def summary_line(command: str, rows: Iterable[ResultRow]) -> str:
    return json.dumps({"command": command, "medians": summarize(rows)}, sort_keys=True, separators=(",", ":"))


def metric_values(rows: Iterable[ResultRow], scenario: str, n: int, metric: str) -> np.ndarray:
    return np.array([r.value for r in rows if r.scenario == scenario and r.n == n and r.metric == metric])
