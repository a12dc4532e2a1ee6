"""Gaussian random field prior on the mesh nodes and the pCN proposal."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .geometry import ConfigurationError, Mesh


@dataclass(frozen=True)
class CovarianceSpec:
    """Squared-exponential kernel ``variance * exp(-r^2 / (2 length_scale^2))``."""

    variance: float = 1.0
    length_scale: float = 0.2
    nugget: float = 1e-8

    def __post_init__(self):
        if not self.variance > 0:
            raise ConfigurationError(f"prior variance must be positive, got {self.variance}")
        if not self.length_scale > 0:
            raise ConfigurationError(f"length scale must be positive, got {self.length_scale}")
        if not self.nugget >= 0:
            raise ConfigurationError(f"nugget must be non-negative, got {self.nugget}")

    def kernel(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        d2 = cdist(np.atleast_2d(x), np.atleast_2d(y), "sqeuclidean")
        return self.variance * np.exp(-d2 / (2.0 * self.length_scale**2))


@dataclass(eq=False)
class PriorSampler:
    """Cholesky factor of the prior covariance plus its random stream.

    ``covariance`` excludes the nugget; ``factor @ factor.T`` equals
    ``covariance + nugget * I``.
    """

    spec: CovarianceSpec
    covariance: np.ndarray = field(repr=False)
    factor: np.ndarray = field(repr=False)
    rng: np.random.Generator = field(repr=False)

    @property
    def dim(self) -> int:
        return self.factor.shape[0]

    def draw(self, size=None) -> np.ndarray:
        """``size`` independent fields as rows; a single field when ``size`` is None.

        Row ``k`` of ``draw(size)`` consumes the stream exactly like the
        ``k``-th of ``size`` consecutive single draws.
        """
        if size is None:
            return self.factor @ self.rng.standard_normal(self.dim)
        z = self.rng.standard_normal((size, self.dim))
        return z @ self.factor.T


def build_prior(mesh: Mesh, spec: CovarianceSpec, rng=None) -> PriorSampler:
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    C = spec.kernel(mesh.nodes, mesh.nodes)
    C.setflags(write=False)
    try:
        L = np.linalg.cholesky(C + spec.nugget * np.eye(len(C)))
    except np.linalg.LinAlgError as exc:
        cond = np.linalg.cond(C + spec.nugget * np.eye(len(C)))
        raise ConfigurationError(
            f"prior covariance is not positive definite (condition number ~{cond:.3e}); "
            f"increase the nugget above {spec.nugget:g}"
        ) from exc
    L.setflags(write=False)
    return PriorSampler(spec=spec, covariance=C, factor=L, rng=rng)


def sample_prior(sampler: PriorSampler) -> np.ndarray:
    return sampler.draw()


def pcn_propose(
    current: np.ndarray, beta: float, sampler: PriorSampler, xi: np.ndarray = None
) -> np.ndarray:
    """``sqrt(1 - beta^2) * current + beta * xi`` with ``xi`` a prior draw.

    ``xi`` may be supplied when draws are made in blocks; otherwise a
    fresh one is taken from ``sampler``.
    """
    if not 0 < beta <= 1:
        raise ConfigurationError(f"pCN step size must lie in (0, 1], got {beta}")
    if xi is None:
        xi = sampler.draw()
    return np.sqrt(1.0 - beta * beta) * current + beta * xi
