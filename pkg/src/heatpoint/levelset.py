"""Threshold map from the latent field to point sources."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .forward import PointSourceSet
from .geometry import ConfigurationError, Mesh

logger = logging.getLogger(__name__)

WEIGHTED = "weighted"
CONSTANT = "constant"


@dataclass(frozen=True)
class ThresholdSpec:
    """Threshold ``c`` and intensity variant.

    ``weighted``: each node above ``c`` carries its field value as intensity.
    ``constant``: each node above ``c`` carries intensity 1.
    ``clearance`` is how far below ``c`` a suppressed node is clamped.
    """

    c: float = 0.3
    variant: str = WEIGHTED
    clearance: float = 0.01

    def __post_init__(self):
        if not self.c > 0:
            raise ConfigurationError(f"threshold must be positive, got {self.c}")
        if self.variant not in (WEIGHTED, CONSTANT):
            raise ConfigurationError(f"unknown intensity variant {self.variant!r}")
        if not self.clearance > 0:
            raise ConfigurationError("clearance must be positive")


def superlevel(phi: np.ndarray, spec: ThresholdSpec):
    """Node indices strictly above threshold and their intensities."""
    nodes = np.flatnonzero(phi > spec.c)
    if spec.variant == WEIGHTED:
        return nodes, phi[nodes]
    return nodes, np.ones(len(nodes))


def threshold_map(phi: np.ndarray, mesh: Mesh, spec: ThresholdSpec) -> PointSourceSet:
    if len(phi) != mesh.node_count:
        raise ValueError(f"field has {len(phi)} values, mesh has {mesh.node_count} nodes")
    nodes, w = superlevel(phi, spec)
    return PointSourceSet(mesh.nodes[nodes], w)


def suppress_node(phi: np.ndarray, node_index: int, spec: ThresholdSpec) -> np.ndarray:
    """Copy of ``phi`` with one node clamped to ``c - clearance``."""
    if not phi[node_index] > spec.c:
        logger.warning("node %d is already at or below the threshold; left unchanged", node_index)
        return phi.copy()
    out = phi.copy()
    out[node_index] = spec.c - spec.clearance
    return out
