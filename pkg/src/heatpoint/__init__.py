"""Point-source reconstruction for the heat equation from boundary flux.

Spectral forward solver on the square, Gaussian level-set prior, pCN
sampling with leave-one-out thinning, and Poisson point process tools.
"""

from .forward import PointSourceSet, assemble_observation_matrix, forward_flux
from .geometry import ConfigurationError, Domain, build_mesh, make_observation_plan
from .inference import SamplerSettings, bayesian_thinning_run
from .levelset import ThresholdSpec, threshold_map
from .prior import CovarianceSpec, build_prior

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError",
    "CovarianceSpec",
    "Domain",
    "PointSourceSet",
    "SamplerSettings",
    "ThresholdSpec",
    "assemble_observation_matrix",
    "bayesian_thinning_run",
    "build_mesh",
    "build_prior",
    "forward_flux",
    "make_observation_plan",
    "threshold_map",
]
