"""Sample containers, seeded randomness and weighted-draw posteriors."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

WEIGHT_TOL = 1e-12


class Component(enum.IntEnum):
    PARAMETRIC = 0
    NONPARAMETRIC = 1


@dataclass(frozen=True)
class Dataset:
    """An ordered collection of ``n`` points in ``R^dim``, stored as an ``(n, dim)`` array."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[1] < 1:
            raise ValueError("points must be an (n, dim) array with dim >= 1")
        pts = np.ascontiguousarray(pts)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def empty(cls, dim: int = 1) -> "Dataset":
        return cls(np.empty((0, dim)))

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.n

    def values(self) -> np.ndarray:
        """The points of a 1-dimensional dataset as a flat vector."""
        if self.dim != 1:
            raise ValueError(f"expected 1-dimensional data, got dim={self.dim}")
        return self.points[:, 0]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.points[idx])


@dataclass(frozen=True)
class SeededRng:
    """A reproducible random stream identified by ``(seed, stream)``.

    Streams are derived with :class:`numpy.random.SeedSequence` spawn keys, so
    distinct stream ids give independent generators and replicate ``r`` of an
    experiment can simply use ``stream=r``.
    """

    seed: int
    stream: int = 0
    path: tuple = field(default=())

    def __post_init__(self):
        if not (0 <= self.seed < 2**64 and 0 <= self.stream < 2**64):
            raise ValueError("seed and stream must be unsigned 64-bit integers")

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream, *self.path))
        return np.random.Generator(np.random.PCG64(ss))

    def child(self, *keys: int) -> "SeededRng":
        return SeededRng(self.seed, self.stream, self.path + tuple(int(k) for k in keys))


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, SeededRng):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError(f"expected SeededRng or numpy Generator, got {type(rng).__name__}")


@dataclass(frozen=True)
class FunctionalPosterior:
    """Weighted draws of a (vector-valued) functional, each tagged with its component."""

    values: np.ndarray
    weights: np.ndarray
    components: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        w = np.asarray(self.weights, dtype=float)
        comp = np.asarray(self.components, dtype=np.int8)
        if comp.ndim == 0:
            comp = np.full(w.shape, comp, dtype=np.int8)
        if vals.shape[0] != w.shape[0] or comp.shape != w.shape:
            raise ValueError("values, weights and components must have matching length")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and nonnegative")
        if w.size and abs(w.sum() - 1.0) > WEIGHT_TOL:
            raise ValueError(f"weights sum to {w.sum()!r}, expected 1")
        for arr in (vals, w, comp):
            arr.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "components", comp)

    @classmethod
    def from_draws(cls, values, component: Component, weights=None) -> "FunctionalPosterior":
        """Equal-weight (or normalized user-weight) draws from a single component."""
        vals = np.asarray(values, dtype=float)
        n = vals.shape[0]
        if weights is None:
            w = np.full(n, 1.0 / n) if n else np.empty(0)
        else:
            w = np.asarray(weights, dtype=float)
            w = w / w.sum()
        return cls(vals, w, np.full(n, int(component), dtype=np.int8))

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def __len__(self) -> int:
        return self.weights.shape[0]

    def component_weight(self, component: Component) -> float:
        return float(self.weights[self.components == int(component)].sum())

    def mean(self) -> np.ndarray:
        return self.weights @ self.values

    def prob_positive(self, coord: int = 0) -> float:
        return float(self.weights[self.values[:, coord] > 0].sum())

    def quantile(self, q: float, coord: int = 0) -> float:
        return weighted_quantile(self, q, coord)

    def interval(self, level: float, coord: int = 0) -> tuple[float, float]:
        """Equal-tailed credible interval at the given level."""
        tail = (1.0 - level) / 2.0
        return weighted_quantile(self, tail, coord), weighted_quantile(self, 1.0 - tail, coord)


def _left_quantile(values: np.ndarray, weights: np.ndarray, q: float) -> float:
    order = np.argsort(values, kind="stable")
    cum = np.cumsum(weights[order])
    # tolerance absorbs rounding in the cumulative sum, e.g. 0.1 + 0.2 + 0.2 < 0.5
    k = int(np.searchsorted(cum, q - WEIGHT_TOL, side="left"))
    return float(values[order[min(k, len(order) - 1)]])


def weighted_quantile(post: FunctionalPosterior, q: float, coord: int = 0) -> float:
    """Left-continuous inverse CDF: smallest draw whose cumulative weight reaches ``q``."""
    if len(post) == 0:
        raise ValueError("empty posterior")
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"q must lie in [0, 1], got {q}")
    return _left_quantile(post.values[:, coord], post.weights, q)


def mix_posteriors(pm: FunctionalPosterior, np_: FunctionalPosterior, eta: float) -> FunctionalPosterior:
    """Mixture ``eta * pm + (1 - eta) * np_`` of two normalized draw sets."""
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"eta must lie in [0, 1], got {eta}")
    if eta == 1.0:
        return pm
    if eta == 0.0:
        return np_
    if pm.dim != np_.dim:
        raise ValueError("posteriors have different output dimension")
    w = np.concatenate([eta * pm.weights, (1.0 - eta) * np_.weights])
    w = w / w.sum()
    return FunctionalPosterior(
        np.concatenate([pm.values, np_.values]),
        w,
        np.concatenate([pm.components, np_.components]),
    )
