"""Bohmian trajectories and weak-measurement simulation for path-entangled photon pairs
in a double double-slit."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    BinMismatch,
    BohmPairError,
    GridTooCoarse,
    NodeRegion,
    NodeStall,
    ResolutionError,
    Saturation,
)
from .wavefield import (  # noqa: E402
    ParaxialMap,
    Side,
    Slit,
    SlitParams,
    SpacetimePoint,
    StateConfig,
    StateKind,
)
