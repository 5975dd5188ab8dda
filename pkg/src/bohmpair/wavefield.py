"""Closed-form two-photon wavefield for the path-entangled double double-slit.

Natural units hbar = m = 1 throughout. Each photon keeps one transverse
coordinate; longitudinal propagation plays the role of time.

Every function accepts scalars or broadcastable numpy arrays.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import NodeRegion

__all__ = [
    "Slit",
    "Side",
    "StateKind",
    "SlitParams",
    "StateConfig",
    "SpacetimePoint",
    "ParaxialMap",
    "DEFAULT_EPS_NODE",
    "packet_amplitude",
    "packet_gradient",
    "packet_width",
    "two_photon_amplitude",
    "two_photon_gradient",
    "velocity",
    "velocities",
    "weak_momentum",
    "joint_density",
    "incoherent_density",
    "marginal_density",
    "peak_density",
    "node_mask",
    "paraxial_time",
]

DEFAULT_EPS_NODE = 1e-12


class Slit(enum.Enum):
    UPPER = 1
    LOWER = -1


class Side(enum.Enum):
    A = "A"
    B = "B"

    @classmethod
    def parse(cls, value: "Side | str") -> "Side":
        if isinstance(value, Side):
            return value
        return cls(str(value).upper())


class StateKind(enum.Enum):
    ENTANGLED = "entangled"
    PRODUCT_UPPER = "product_upper"

    @classmethod
    def parse(cls, value: "StateKind | str") -> "StateKind":
        if isinstance(value, StateKind):
            return value
        return cls(str(value).lower().replace("-", "_"))


@dataclass(frozen=True)
class SlitParams:
    """Gaussian double slit on one side.

    ``sigma`` is the rms width of the t=0 intensity of each packet and
    ``half_sep`` is half the center-to-center separation.
    """

    sigma: float = 0.1
    half_sep: float = 0.5

    def __post_init__(self):
        if not (math.isfinite(self.sigma) and self.sigma > 0):
            raise ValueError(f"sigma must be positive, got {self.sigma!r}")
        if not (math.isfinite(self.half_sep) and self.half_sep > 0):
            raise ValueError(f"half_sep must be positive, got {self.half_sep!r}")

    @property
    def separation(self) -> float:
        return 2.0 * self.half_sep

    @property
    def overlap(self) -> float:
        """<g_u|g_d>, real and conserved by free evolution."""
        return math.exp(-self.separation**2 / (8.0 * self.sigma**2))

    def center(self, slit: Slit) -> float:
        return slit.value * self.half_sep


@dataclass(frozen=True)
class StateConfig:
    slits_a: SlitParams = SlitParams()
    slits_b: SlitParams = SlitParams()
    phi: float = 0.0
    kind: StateKind = StateKind.ENTANGLED

    def __post_init__(self):
        if not (0.0 <= self.phi < 2.0 * math.pi):
            raise ValueError(f"phi must lie in [0, 2*pi), got {self.phi!r}")
        object.__setattr__(self, "kind", StateKind.parse(self.kind))

    @property
    def norm(self) -> float:
        if self.kind is StateKind.PRODUCT_UPPER:
            return 1.0
        s = self.slits_a.overlap * self.slits_b.overlap
        return 1.0 / math.sqrt(1.0 + s * math.cos(self.phi))

    def slits(self, side: Side) -> SlitParams:
        return self.slits_a if Side.parse(side) is Side.A else self.slits_b

    def with_phi(self, phi: float) -> "StateConfig":
        return replace(self, phi=float(phi) % (2.0 * math.pi))


@dataclass(frozen=True)
class SpacetimePoint:
    x_a: float | np.ndarray
    x_b: float | np.ndarray
    t: float | np.ndarray

    def __post_init__(self):
        if np.any(np.asarray(self.t) < 0):
            raise ValueError("t must be >= 0")
        for name in ("x_a", "x_b", "t"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} must be finite")


@dataclass(frozen=True)
class ParaxialMap:
    """Lab geometry: central wavevector k0 [1/m] and lab length of one natural unit [m]."""

    k0: float
    length_scale: float

    def __post_init__(self):
        if not self.k0 > 0:
            raise ValueError(f"k0 must be positive, got {self.k0!r}")
        if not self.length_scale > 0:
            raise ValueError(f"length_scale must be positive, got {self.length_scale!r}")


def _complex_width(t, p: SlitParams):
    return p.sigma * (1.0 + 1j * np.asarray(t, dtype=float) / (2.0 * p.sigma**2))


def packet_amplitude(slit: Slit, x, t, p: SlitParams):
    """Freely evolved Gaussian slit packet g(x, t), unit L2 norm at every t."""
    st = _complex_width(t, p)
    dx = np.asarray(x, dtype=float) - p.center(slit)
    return (2.0 * np.pi) ** -0.25 * st**-0.5 * np.exp(-(dx**2) / (4.0 * p.sigma * st))


def packet_gradient(slit: Slit, x, t, p: SlitParams):
    st = _complex_width(t, p)
    dx = np.asarray(x, dtype=float) - p.center(slit)
    return -dx / (2.0 * p.sigma * st) * packet_amplitude(slit, x, t, p)


def packet_width(t, p: SlitParams):
    """rms width of |g(x, t)|^2."""
    t = np.asarray(t, dtype=float)
    return p.sigma * np.sqrt(1.0 + (t / (2.0 * p.sigma**2)) ** 2)


def _branches(x_a, x_b, t, c: StateConfig):
    """Unnormalised upper-upper and (phase-weighted) lower-lower products plus gradients.

    Returns ``(amp_u, amp_d, dA_u, dA_d, dB_u, dB_d)`` where ``amp_d`` already
    carries e^{i phi}; for a product state the lower branch is identically zero.
    """
    pa, pb = c.slits_a, c.slits_b
    ua = packet_amplitude(Slit.UPPER, x_a, t, pa)
    ub = packet_amplitude(Slit.UPPER, x_b, t, pb)
    sa = _complex_width(t, pa)
    sb = _complex_width(t, pb)
    ka_u = -(np.asarray(x_a, dtype=float) - pa.half_sep) / (2.0 * pa.sigma * sa)
    kb_u = -(np.asarray(x_b, dtype=float) - pb.half_sep) / (2.0 * pb.sigma * sb)
    amp_u = ua * ub
    if c.kind is StateKind.PRODUCT_UPPER:
        zero = np.zeros_like(amp_u)
        return amp_u, zero, ka_u * amp_u, zero, kb_u * amp_u, zero
    da = packet_amplitude(Slit.LOWER, x_a, t, pa)
    db = packet_amplitude(Slit.LOWER, x_b, t, pb)
    ka_d = -(np.asarray(x_a, dtype=float) + pa.half_sep) / (2.0 * pa.sigma * sa)
    kb_d = -(np.asarray(x_b, dtype=float) + pb.half_sep) / (2.0 * pb.sigma * sb)
    amp_d = np.exp(1j * c.phi) * da * db
    return amp_u, amp_d, ka_u * amp_u, ka_d * amp_d, kb_u * amp_u, kb_d * amp_d


def _amplitude(x_a, x_b, t, c: StateConfig):
    amp_u, amp_d, *_ = _branches(x_a, x_b, t, c)
    if c.kind is StateKind.PRODUCT_UPPER:
        return amp_u
    return c.norm / math.sqrt(2.0) * (amp_u + amp_d)


def two_photon_amplitude(pt: SpacetimePoint, c: StateConfig):
    return _amplitude(pt.x_a, pt.x_b, pt.t, c)


def _gradients(x_a, x_b, t, c: StateConfig):
    amp_u, amp_d, ga_u, ga_d, gb_u, gb_d = _branches(x_a, x_b, t, c)
    if c.kind is StateKind.PRODUCT_UPPER:
        return amp_u, ga_u, gb_u
    k = c.norm / math.sqrt(2.0)
    return k * (amp_u + amp_d), k * (ga_u + ga_d), k * (gb_u + gb_d)


def two_photon_gradient(side: Side | str, pt: SpacetimePoint, c: StateConfig):
    """Exact partial derivative of psi with respect to x_A or x_B."""
    _, grad_a, grad_b = _gradients(pt.x_a, pt.x_b, pt.t, c)
    return grad_a if Side.parse(side) is Side.A else grad_b


def peak_density(t, c: StateConfig):
    """Supremum of |psi|^2 at time t (attained when both branches coincide in phase)."""
    pa = 1.0 / (math.sqrt(2.0 * math.pi) * packet_width(t, c.slits_a))
    pb = 1.0 / (math.sqrt(2.0 * math.pi) * packet_width(t, c.slits_b))
    if c.kind is StateKind.PRODUCT_UPPER:
        return pa * pb
    return 2.0 * c.norm**2 * pa * pb


def node_mask(x_a, x_b, t, c: StateConfig, eps_node: float = DEFAULT_EPS_NODE):
    """True where the density drops below ``eps_node`` times the instantaneous peak."""
    rho = np.abs(_amplitude(x_a, x_b, t, c)) ** 2
    return rho < eps_node * peak_density(t, c)


def _log_derivatives(x_a, x_b, t, c: StateConfig, eps_node: float):
    if not eps_node > 0:
        raise ValueError("eps_node must be positive")
    if c.kind is StateKind.PRODUCT_UPPER:
        # factorised state: each log-derivative depends on its own coordinate only,
        # and the node test runs in log space so far tails do not underflow
        pa, pb = c.slits_a, c.slits_b
        sa, sb = _complex_width(t, pa), _complex_width(t, pb)
        dxa = np.asarray(x_a, dtype=float) - pa.half_sep
        dxb = np.asarray(x_b, dtype=float) - pb.half_sep
        log_ratio = -0.5 * (dxa / packet_width(t, pa)) ** 2 - 0.5 * (dxb / packet_width(t, pb)) ** 2
        bad = log_ratio < math.log(eps_node)
        if np.any(bad):
            n = int(np.count_nonzero(bad))
            raise NodeRegion(f"velocity undefined at {n} point(s) within the node threshold", n)
        return np.broadcast_arrays(-dxa / (2.0 * pa.sigma * sa), -dxb / (2.0 * pb.sigma * sb))
    amp_u, amp_d, ga_u, ga_d, gb_u, gb_d = _branches(x_a, x_b, t, c)
    psi = amp_u + amp_d
    rho = np.abs(psi) ** 2 * (0.5 * c.norm**2)
    bad = rho < eps_node * peak_density(t, c)
    if np.any(bad):
        n = int(np.count_nonzero(bad))
        raise NodeRegion(f"velocity undefined at {n} point(s) within the node threshold", n)
    return (ga_u + ga_d) / psi, (gb_u + gb_d) / psi


def velocities(x_a, x_b, t, c: StateConfig, eps_node: float = DEFAULT_EPS_NODE):
    """Both Bohmian velocities (v_A, v_B) = Im(grad psi / psi); raises NodeRegion at nodes."""
    la, lb = _log_derivatives(x_a, x_b, t, c, eps_node)
    return np.imag(la), np.imag(lb)


def velocity(side: Side | str, pt: SpacetimePoint, c: StateConfig, eps_node: float = DEFAULT_EPS_NODE):
    """Guidance velocity j/rho for one particle.

    With hbar = m = 1 this is Im(d_side psi / psi); the other particle's
    position enters through psi whenever the state is entangled.
    """
    va, vb = velocities(pt.x_a, pt.x_b, pt.t, c, eps_node)
    return va if Side.parse(side) is Side.A else vb


def weak_momentum(side: Side | str, pt: SpacetimePoint, c: StateConfig, eps_node: float = DEFAULT_EPS_NODE):
    """Weak value of the momentum post-selected on the joint position eigenstate.

    <x_A, x_B| p_side |psi> / <x_A, x_B|psi> = -i d_side psi / psi. Its real part
    is the Bohmian velocity, its imaginary part is -1/2 d_side ln|psi|^2.
    """
    la, lb = _log_derivatives(pt.x_a, pt.x_b, pt.t, c, eps_node)
    return -1j * (la if Side.parse(side) is Side.A else lb)


def joint_density(pt: SpacetimePoint, c: StateConfig):
    return np.abs(_amplitude(pt.x_a, pt.x_b, pt.t, c)) ** 2


def incoherent_density(pt: SpacetimePoint, c: StateConfig):
    """Branch-wise sum without interference, (|g_u g_u|^2 + |g_d g_d|^2) / 2."""
    amp_u, amp_d, *_ = _branches(pt.x_a, pt.x_b, pt.t, c)
    if c.kind is StateKind.PRODUCT_UPPER:
        return np.abs(amp_u) ** 2
    return 0.5 * (np.abs(amp_u) ** 2 + np.abs(amp_d) ** 2)


def marginal_density(side: Side | str, x, t, c: StateConfig):
    """Single-photon detection density, integrated analytically over the partner."""
    side = Side.parse(side)
    here = c.slits(side)
    other = c.slits_b if side is Side.A else c.slits_a
    gu = packet_amplitude(Slit.UPPER, x, t, here)
    if c.kind is StateKind.PRODUCT_UPPER:
        return np.abs(gu) ** 2
    gd = packet_amplitude(Slit.LOWER, x, t, here)
    cross = other.overlap * np.real(np.exp(1j * c.phi) * np.conj(gu) * gd)
    return c.norm**2 * (0.5 * (np.abs(gu) ** 2 + np.abs(gd) ** 2) + cross)


def paraxial_time(z, pmap: ParaxialMap):
    """Natural-unit time for propagation distance z [m]: hbar t / m = z / k0.

    One natural length equals ``length_scale`` metres, so t = z / (k0 L^2).
    """
    z = np.asarray(z, dtype=float)
    if np.any(z < 0):
        raise ValueError("z must be >= 0")
    out = z / (pmap.k0 * pmap.length_scale**2)
    return float(out) if out.ndim == 0 else out
