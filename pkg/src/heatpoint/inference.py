"""Likelihood, pCN level-set updates and leave-one-out thinning.

The outer loop alternates a fixed number of pCN steps on the latent field
with one sequential thinning sweep over the current point sources.  Each
sweep visits the points in node order and removes point ``j`` when

    min(1, exp(Phi(f) - Phi(f without j)) * prior_factor) > U,  U ~ Uniform(0, 1)

Removals take effect immediately: later points in the same sweep see the
reduced set.  A removed node's field value is clamped just below the
threshold so that the field and the source set stay consistent.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np

from .forward import ObservationMatrix, PointSourceSet
from .geometry import ConfigurationError, Mesh
from .levelset import ThresholdSpec, superlevel, suppress_node
from .prior import PriorSampler, pcn_propose

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class NoiseModel:
    """Independent Gaussian noise with standard deviation ``sigma`` per component."""

    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ConfigurationError(f"noise standard deviation must be positive, got {self.sigma}")


@dataclass(frozen=True, eq=False)
class FluxData:
    g: np.ndarray
    sigma: float
    plan: object = None

    def __post_init__(self):
        g = np.asarray(self.g, dtype=float)
        if self.plan is not None and len(g) != self.plan.obs_count:
            raise ValueError(f"data length {len(g)} != plan obs_count {self.plan.obs_count}")
        object.__setattr__(self, "g", g)

    @property
    def noise(self) -> NoiseModel:
        return NoiseModel(self.sigma)


@dataclass(frozen=True)
class PosteriorEval:
    potential: float
    data_misfit: float


def potential(
    f: PointSourceSet, g, noise: NoiseModel, A: ObservationMatrix
) -> PosteriorEval:
    """``Phi = |K f - g|^2 / (2 sigma^2)`` and the relative misfit ``|K f - g| / |g|``."""
    g = g.g if isinstance(g, FluxData) else np.asarray(g, dtype=float)
    if len(g) != A.entries.shape[0]:
        raise ValueError(f"data length {len(g)} != observation count {A.entries.shape[0]}")
    if f.count:
        nodes = np.array([A.mesh.index_of(p) for p in f.locations])
        r = A.apply_support(nodes, f.intensities) - g
    else:
        r = -g
    ss = float(r @ r)
    gnorm = float(np.linalg.norm(g))
    return PosteriorEval(
        potential=ss / (2.0 * noise.sigma**2),
        data_misfit=math.sqrt(ss) / gnorm if gnorm > 0 else math.sqrt(ss),
    )


class Likelihood:
    """Potential evaluated on the support representation ``(nodes, weights)``.

    ``data_weight`` scales the potential; ``0`` gives ``Phi == 0`` (prior
    sampling), used to check prior invariance of the chain.
    """

    def __init__(self, A: ObservationMatrix, data: FluxData, data_weight: float = 1.0):
        self.A = A
        self.data = data
        self.g = data.g
        self._scale = data_weight / (2.0 * data.sigma**2)
        self._gnorm = float(np.linalg.norm(self.g))

    def residual(self, nodes: np.ndarray, weights: np.ndarray) -> np.ndarray:
        return self.A.apply_support(nodes, weights) - self.g

    def potential_of_residual(self, r: np.ndarray) -> float:
        return self._scale * float(r @ r)

    def __call__(self, nodes: np.ndarray, weights: np.ndarray) -> float:
        return self.potential_of_residual(self.residual(nodes, weights))

    def misfit(self, nodes: np.ndarray, weights: np.ndarray) -> float:
        r = self.residual(nodes, weights)
        return float(np.linalg.norm(r)) / self._gnorm


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    relative_error: float
    count: int
    potential: float
    acceptance_rate: float
    misfit: float


@dataclass(frozen=True, eq=False)
class ThinningState:
    """Latent field plus the point sources it currently encodes."""

    phi: np.ndarray
    nodes: np.ndarray
    weights: np.ndarray
    potential: float
    iteration: int = 0
    accepted: int = 0
    proposed: int = 0
    trace: tuple = ()

    @property
    def count(self) -> int:
        return len(self.nodes)

    def theta(self, mesh: Mesh) -> PointSourceSet:
        return PointSourceSet(mesh.nodes[self.nodes], self.weights)


def initial_state(phi: np.ndarray, like: Likelihood, spec: ThresholdSpec) -> ThinningState:
    nodes, w = superlevel(phi, spec)
    return ThinningState(phi=phi, nodes=nodes, weights=w, potential=like(nodes, w))


def check_consistency(state: ThinningState, like: Likelihood, spec: ThresholdSpec) -> None:
    nodes, w = superlevel(state.phi, spec)
    if not (np.array_equal(nodes, state.nodes) and np.array_equal(w, state.weights)):
        raise AssertionError("source set is out of sync with the level-set field")
    if not math.isclose(like(nodes, w), state.potential, rel_tol=1e-9, abs_tol=1e-12):
        raise AssertionError("cached potential is stale")


def pcn_step(
    state: ThinningState,
    beta: float,
    prior: PriorSampler,
    like: Likelihood,
    spec: ThresholdSpec,
    rng: np.random.Generator,
    xi: Optional[np.ndarray] = None,
) -> ThinningState:
    """One pCN update of the level-set field.

    The acceptance probability uses only the potential difference; the
    prior enters through the proposal alone.  ``xi`` is an optional
    pre-drawn prior sample.
    """
    phi_new = pcn_propose(state.phi, beta, prior, xi)
    nodes, w = superlevel(phi_new, spec)
    pot_new = like(nodes, w)
    log_a = state.potential - pot_new
    u = rng.random()
    if log_a >= 0 or u < math.exp(log_a):
        return replace(
            state,
            phi=phi_new,
            nodes=nodes,
            weights=w,
            potential=pot_new,
            accepted=state.accepted + 1,
            proposed=state.proposed + 1,
        )
    return replace(state, proposed=state.proposed + 1)


def thinning_pass(
    state: ThinningState,
    like: Likelihood,
    spec: ThresholdSpec,
    rng: np.random.Generator,
    prior_factor: float = 1.0,
) -> ThinningState:
    """Sequential leave-one-out sweep over the current points (node order)."""
    if state.count == 0:
        return state
    phi = state.phi
    keep = np.ones(state.count, dtype=bool)
    r = like.residual(state.nodes, state.weights)
    pot = state.potential
    log_pf = math.log(prior_factor)
    for j in range(state.count):
        r_loo = r - state.weights[j] * like.A.entries[:, state.nodes[j]]
        pot_loo = like.potential_of_residual(r_loo)
        log_alpha = min(0.0, pot - pot_loo + log_pf)
        u = rng.random()
        if math.exp(log_alpha) > u:
            keep[j] = False
            r, pot = r_loo, pot_loo
            phi = suppress_node(phi, int(state.nodes[j]), spec)
    if keep.all():
        return state
    return replace(
        state,
        phi=phi,
        nodes=state.nodes[keep],
        weights=state.weights[keep],
        potential=like(state.nodes[keep], state.weights[keep]),
    )


def relative_error(f_est: PointSourceSet, f_true: PointSourceSet, mesh: Mesh) -> float:
    """``|w_est - w_true| / |w_true|`` on the mesh (sources snapped to nodes)."""
    if f_true.count == 0:
        raise ValueError("relative error is undefined for an empty true source set")
    w_true = f_true.node_weights(mesh, snap=True)
    w_est = f_est.node_weights(mesh, snap=True)
    return float(np.linalg.norm(w_est - w_true) / np.linalg.norm(w_true))


@dataclass(frozen=True)
class SamplerSettings:
    beta: float = 0.1
    k_pcn: int = 50
    n_max: int = 200
    thinning: bool = True
    prior_factor: float = 1.0
    check_invariants: bool = False

    def __post_init__(self):
        if not 0 < self.beta <= 1:
            raise ConfigurationError(f"beta must lie in (0, 1], got {self.beta}")
        if self.k_pcn < 0 or self.n_max < 0:
            raise ConfigurationError("k_pcn and n_max must be non-negative")
        if not self.prior_factor > 0:
            raise ConfigurationError("prior_factor must be positive")


@dataclass(frozen=True)
class RandomStreams:
    """Independent generators split from one root seed."""

    prior: np.random.Generator
    accept: np.random.Generator
    thinning: np.random.Generator
    noise: np.random.Generator

    @classmethod
    def from_seed(cls, seed: int) -> "RandomStreams":
        children = np.random.SeedSequence(seed).spawn(4)
        return cls(*(np.random.default_rng(s) for s in children))


def bayesian_thinning_run(
    prior: PriorSampler,
    like: Likelihood,
    spec: ThresholdSpec,
    settings: SamplerSettings,
    streams: RandomStreams,
    truth: Optional[PointSourceSet] = None,
    phi0: Optional[np.ndarray] = None,
) -> ThinningState:
    """Alternate ``k_pcn`` pCN steps and one thinning sweep, ``n_max`` times.

    ``prior.rng`` should be ``streams.prior`` for a replayable run.  The
    returned state carries one trace row per outer iteration (row 0 is the
    initial state).
    """
    mesh = like.A.mesh
    if phi0 is None:
        phi0 = prior.draw()
    state = initial_state(phi0, like, spec)

    def row(st: ThinningState, n: int, acc: float) -> TraceRow:
        err = relative_error(st.theta(mesh), truth, mesh) if truth is not None else math.nan
        return TraceRow(n, err, st.count, st.potential, acc, like.misfit(st.nodes, st.weights))

    trace: List[TraceRow] = [row(state, 0, math.nan)]
    for n in range(1, settings.n_max + 1):
        before = state.accepted
        # one block of prior draws per outer iteration, same stream order
        xis = prior.draw(settings.k_pcn) if settings.k_pcn else ()
        for xi in xis:
            state = pcn_step(state, settings.beta, prior, like, spec, streams.accept, xi)
        if settings.check_invariants:
            check_consistency(state, like, spec)
        if settings.thinning:
            state = thinning_pass(state, like, spec, streams.thinning, settings.prior_factor)
            if settings.check_invariants:
                check_consistency(state, like, spec)
        acc = (state.accepted - before) / settings.k_pcn if settings.k_pcn else math.nan
        state = replace(state, iteration=n)
        trace.append(row(state, n, acc))
    return replace(state, trace=tuple(trace))
