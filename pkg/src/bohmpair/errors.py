"""Exception types shared across the package."""


class BohmPairError(Exception):
    """Base class for all package errors."""


class NodeRegion(BohmPairError):
    """Velocity or weak value requested where the wavefunction (nearly) vanishes."""

    def __init__(self, message: str, n_points: int = 1):
        super().__init__(message)
        self.n_points = n_points


class NodeStall(BohmPairError):
    """A trajectory could not step past a node even after the allowed step halvings."""

    def __init__(self, message: str, last_time: float, index: int | None = None):
        super().__init__(message)
        self.last_time = last_time
        self.index = index


class Saturation(BohmPairError):
    """Pointer coupling times weak value exceeds the linear-response range."""


class GridTooCoarse(BohmPairError):
    """Simpson estimate at full and half resolution disagree."""


class BinMismatch(BohmPairError):
    """Histograms with different binning were compared."""


class ResolutionError(BohmPairError):
    """Grid handed to the numerical propagator cannot represent the packet."""
