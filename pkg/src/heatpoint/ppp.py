"""Poisson point processes on the square: sampling, thinning, marking, superposition.

Points are ``(n, 2)`` arrays.  Every random operation takes a seed or a
``numpy.random.Generator``; replications meant to be independent must use
independent streams.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
from scipy import stats

from .geometry import ConfigurationError, Domain

SeedLike = Union[None, int, np.random.SeedSequence, np.random.Generator]


def _rng(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class IntensityFn:
    """Intensity ``evaluator(points) -> (n,)`` bounded above by ``lam_max``."""

    evaluator: Callable[[np.ndarray], np.ndarray]
    lam_max: float

    def __post_init__(self):
        if not (np.isfinite(self.lam_max) and self.lam_max >= 0):
            raise ConfigurationError(f"lam_max must be finite and non-negative, got {self.lam_max}")

    @classmethod
    def homogeneous(cls, lam: float) -> "IntensityFn":
        return cls(lambda p: np.full(len(p), float(lam)), float(lam))

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(self.evaluator(np.atleast_2d(points)), dtype=float)


@dataclass(frozen=True, eq=False)
class MarkedPointSet:
    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    marks: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __len__(self) -> int:
        return len(self.marks)


def sample_ppp(lam: IntensityFn, domain: Domain, seed: SeedLike = None) -> np.ndarray:
    """Rejection construction from a homogeneous process at ``lam_max``."""
    rng = _rng(seed)
    a = domain.half_width
    if lam.lam_max == 0:
        return np.zeros((0, 2))
    n = rng.poisson(lam.lam_max * domain.area)
    pts = rng.uniform(-a, a, size=(n, 2))
    if n == 0:
        return pts
    vals = lam(pts)
    if np.any(vals < 0) or np.any(vals > lam.lam_max * (1 + 1e-12)):
        raise ConfigurationError("intensity leaves [0, lam_max]")
    keep = rng.uniform(size=n) * lam.lam_max < vals
    return pts[keep]


def _retention(points: np.ndarray, t) -> np.ndarray:
    p = np.full(len(points), float(t)) if np.isscalar(t) else np.asarray(t(points), dtype=float)
    if np.any(p < 0) or np.any(p > 1) or not np.all(np.isfinite(p)):
        raise ConfigurationError("retention probabilities must lie in [0, 1]")
    return p


def thin_ppp(points: np.ndarray, t, seed: SeedLike = None) -> np.ndarray:
    """Keep each point independently with probability ``t(x)`` (callable or constant)."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    p = _retention(points, t)
    rng = _rng(seed)
    return points[rng.uniform(size=len(points)) < p]


def mark_ppp(
    points: np.ndarray,
    kernel: Callable[[np.ndarray, np.random.Generator], float],
    seed: SeedLike = None,
) -> MarkedPointSet:
    """Attach one independent mark per point, drawn from ``kernel(location, rng)``."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    rng = _rng(seed)
    marks = np.array([kernel(p, rng) for p in points], dtype=float)
    if not np.all(np.isfinite(marks)):
        raise ValueError("mark kernel produced non-finite marks")
    return MarkedPointSet(points=points, marks=marks)


def superpose(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float).reshape(-1, 2)
    b = np.asarray(b, dtype=float).reshape(-1, 2)
    return np.vstack([a, b])


# --- diagnostics -------------------------------------------------------------


def count_in(points: np.ndarray, rect) -> int:
    """Number of points in the half-open rectangle ``(x0, x1, y0, y1)``."""
    x0, x1, y0, y1 = rect
    p = np.asarray(points).reshape(-1, 2)
    return int(np.sum((p[:, 0] >= x0) & (p[:, 0] < x1) & (p[:, 1] >= y0) & (p[:, 1] < y1)))


def poisson_chisquare(counts, mean: float, min_expected: float = 5.0):
    """Chi-square goodness of fit of integer ``counts`` against ``Poisson(mean)``.

    Cells are consecutive integers, merged from both tails until each
    expected count reaches ``min_expected``.  Returns ``(statistic, p_value)``.
    """
    counts = np.asarray(counts, dtype=int)
    n = len(counts)
    hi = int(max(counts.max(), stats.poisson.ppf(1 - 1e-12, mean)))
    ks = np.arange(hi + 1)
    expected = stats.poisson.pmf(ks, mean) * n
    expected[-1] += stats.poisson.sf(hi, mean) * n
    observed = np.bincount(counts, minlength=hi + 1).astype(float)

    edges = []  # list of (start, stop) index ranges
    start, acc = 0, 0.0
    for k in range(hi + 1):
        acc += expected[k]
        if acc >= min_expected:
            edges.append((start, k + 1))
            start, acc = k + 1, 0.0
    if start <= hi:
        if edges:
            edges[-1] = (edges[-1][0], hi + 1)
        else:
            edges.append((0, hi + 1))
    obs = np.array([observed[s:e].sum() for s, e in edges])
    exp = np.array([expected[s:e].sum() for s, e in edges])
    if len(obs) < 2:
        return 0.0, 1.0
    res = stats.chisquare(obs, exp * obs.sum() / exp.sum())
    return float(res.statistic), float(res.pvalue)


def replicate_counts(
    sampler: Callable[[np.random.Generator], np.ndarray],
    rects,
    n_rep: int,
    seed: SeedLike = None,
) -> np.ndarray:
    """Counts per rectangle over ``n_rep`` independent replications, ``(n_rep, n_rects)``."""
    children = np.random.SeedSequence(seed if not isinstance(seed, np.random.Generator) else None)
    if isinstance(seed, np.random.Generator):
        children = np.random.SeedSequence(int(seed.integers(2**63)))
    streams = children.spawn(n_rep)
    out = np.empty((n_rep, len(rects)), dtype=int)
    for i, s in enumerate(streams):
        pts = sampler(np.random.default_rng(s))
        out[i] = [count_in(pts, r) for r in rects]
    return out
