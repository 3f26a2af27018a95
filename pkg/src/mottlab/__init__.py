"""mottlab: simulation and verification lab for one-dimensional
variable-range hopping walks, their resistance networks, and the
sub-diffusive scaling limits built from heavy-tail subordinators.
"""

from . import env, limit, network, resistance, stats, walk
from .errors import (
    ConfigError,
    DomainError,
    GridError,
    MottlabError,
    ParameterError,
    PreconditionError,
    ProvenanceError,
    ThresholdBreach,
)

__version__ = "0.1.0"

__all__ = [
    "env",
    "network",
    "resistance",
    "walk",
    "limit",
    "stats",
    "MottlabError",
    "ParameterError",
    "DomainError",
    "PreconditionError",
    "ProvenanceError",
    "GridError",
    "ConfigError",
    "ThresholdBreach",
    "__version__",
]
