"""Quadrature, histograms, distances, the free-particle numerical oracle and
the headline no-signaling / fringe checks."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import simpson
from scipy.signal import argrelextrema

from . import wavefield as wf
from .errors import BinMismatch, GridTooCoarse, ResolutionError

__all__ = [
    "Grid1D",
    "Grid2D",
    "Metric",
    "DistanceReport",
    "simpson_1d",
    "quadrature_2d",
    "numeric_evolve_oracle",
    "histogram_2d",
    "cell_probabilities",
    "distribution_distance",
    "no_signaling_gap",
    "no_signaling_bound",
    "fringe_shift_check",
    "fringe_visibility",
    "fringe_period",
]


@dataclass(frozen=True)
class Grid1D:
    lo: float
    hi: float
    n: int

    def __post_init__(self):
        if self.n < 3:
            raise ValueError(f"grid needs at least 3 points, got {self.n}")
        if not self.hi > self.lo:
            raise ValueError(f"grid range must be increasing, got [{self.lo}, {self.hi}]")

    @property
    def points(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.n)

    @property
    def spacing(self) -> float:
        return (self.hi - self.lo) / (self.n - 1)


@dataclass(frozen=True)
class Grid2D:
    a: Grid1D
    b: Grid1D

    @classmethod
    def square(cls, lo: float, hi: float, n: int) -> "Grid2D":
        g = Grid1D(lo, hi, n)
        return cls(g, g)

    def mesh(self):
        return np.meshgrid(self.a.points, self.b.points, indexing="ij")


def _simpson_uniform(y: np.ndarray, h: float, axis: int = -1) -> np.ndarray:
    return simpson(y, dx=h, axis=axis)


def simpson_1d(y, grid: Grid1D, check: bool = True, rtol: float = 1e-6) -> float:
    """Composite Simpson rule on a uniform grid (error O(h^4))."""
    y = np.asarray(y, dtype=float)
    full = float(_simpson_uniform(y, grid.spacing))
    if check and (grid.n - 1) % 4 == 0:
        half = float(_simpson_uniform(y[::2], 2 * grid.spacing))
        _richardson_guard(full, half, np.max(np.abs(y)) * (grid.hi - grid.lo), rtol)
    return full


def _richardson_guard(full: float, half: float, scale: float, rtol: float) -> None:
    ref = max(abs(full), 1e-300 + 1e-12 * scale)
    if abs(full - half) > rtol * ref:
        raise GridTooCoarse(
            f"Simpson full/half resolution disagree: {full!r} vs {half!r} (rtol {rtol:g})"
        )


def quadrature_2d(f, grid: Grid2D, check: bool = True, rtol: float = 1e-6) -> float:
    """Tensor-product composite Simpson integral of sampled values ``f[i_a, i_b]``.

    When both point counts satisfy (n - 1) % 4 == 0 the estimate is compared
    against the half-resolution rule and GridTooCoarse is raised on a relative
    mismatch above ``rtol``.
    """
    f = np.asarray(f, dtype=float)
    if f.shape != (grid.a.n, grid.b.n):
        raise ValueError(f"field shape {f.shape} does not match grid {(grid.a.n, grid.b.n)}")
    full = float(_simpson_uniform(_simpson_uniform(f, grid.b.spacing, axis=1), grid.a.spacing))
    if check and (grid.a.n - 1) % 4 == 0 and (grid.b.n - 1) % 4 == 0:
        g = f[::2, ::2]
        half = float(
            _simpson_uniform(_simpson_uniform(g, 2 * grid.b.spacing, axis=1), 2 * grid.a.spacing)
        )
        area = (grid.a.hi - grid.a.lo) * (grid.b.hi - grid.b.lo)
        _richardson_guard(full, half, np.max(np.abs(f)) * area, rtol)
    return full


def numeric_evolve_oracle(initial, t: float, grid: Grid1D, sigma: float | None = None,
                          edge_tol: float = 1e-10):
    """Propagate sampled psi(x, 0) under i d_t psi = -1/2 d_x^2 psi by the spectral method.

    The free propagator is diagonal in momentum, so one FFT round trip is exact
    up to sampling and periodic wrap-around. Used only to check the closed
    forms. ``sigma`` (the narrowest feature) enables the >=16 points-per-width
    resolution check; the wrap-around check demands the evolved field be
    below ``edge_tol`` of its peak at the grid edges.
    """
    psi0 = np.asarray(initial, dtype=complex)
    if psi0.shape != (grid.n,):
        raise ValueError("initial samples must match the grid")
    if t < 0:
        raise ValueError("t must be >= 0")
    h = grid.spacing
    if sigma is not None and sigma / h < 16:
        raise ResolutionError(f"{sigma / h:.1f} points per width; need >= 16")
    if t == 0:
        return psi0.copy()
    k = 2.0 * np.pi * np.fft.fftfreq(grid.n, d=h)
    psi_t = np.fft.ifft(np.exp(-0.5j * k**2 * t) * np.fft.fft(psi0))
    peak = np.max(np.abs(psi_t))
    edge = max(np.max(np.abs(psi_t[:8])), np.max(np.abs(psi_t[-8:])))
    if edge > edge_tol * peak:
        raise ResolutionError(
            f"evolved field reaches the grid edge ({edge / peak:.2e} of peak); widen the grid"
        )
    return psi_t


class Metric(enum.Enum):
    TOTAL_VARIATION = "total_variation"
    CHI_SQUARE = "chi_square"
    SUP_NORM = "sup_norm"


@dataclass(frozen=True)
class DistanceReport:
    metric: Metric
    value: float
    n_cells: int


def histogram_2d(x_a, x_b, edges_a, edges_b) -> np.ndarray:
    """Normalised 2D histogram (probability per cell); out-of-range samples count towards the total."""
    counts, _, _ = np.histogram2d(x_a, x_b, bins=[edges_a, edges_b])
    return counts / max(len(x_a), 1)


def cell_probabilities(density, edges_a, edges_b, sub: int = 16) -> np.ndarray:
    """Integrate ``density(x_a, x_b)`` over every histogram cell with Simpson sub-grids."""
    if sub % 2:
        raise ValueError("sub must be even")
    edges_a = np.asarray(edges_a, float)
    edges_b = np.asarray(edges_b, float)
    na, nb = len(edges_a) - 1, len(edges_b) - 1
    out = np.empty((na, nb))
    u = np.linspace(0.0, 1.0, sub + 1)
    for i in range(na):
        xa = edges_a[i] + (edges_a[i + 1] - edges_a[i]) * u
        xb = (edges_b[:-1, None] + np.diff(edges_b)[:, None] * u[None, :]).ravel()
        vals = density(xa[:, None], xb[None, :]).reshape(sub + 1, nb, sub + 1)
        inner = simpson(vals, dx=1.0 / sub, axis=2) * np.diff(edges_b)[None, :]
        out[i] = simpson(inner, dx=1.0 / sub, axis=0) * (edges_a[i + 1] - edges_a[i])
    return out


def distribution_distance(hist_a, hist_b, metric: Metric | str = Metric.TOTAL_VARIATION,
                          pseudo_count: float = 0.5) -> DistanceReport:
    """Distance between two histograms over identical bins.

    Inputs are normalised to unit mass first. For chi-square the inputs are
    treated as counts and regularised by ``pseudo_count`` per cell.
    """
    p = np.asarray(hist_a, dtype=float)
    q = np.asarray(hist_b, dtype=float)
    if p.shape != q.shape:
        raise BinMismatch(f"histogram shapes differ: {p.shape} vs {q.shape}")
    metric = Metric(metric) if not isinstance(metric, Metric) else metric
    if metric is Metric.CHI_SQUARE:
        pe, qe = p + pseudo_count, q + pseudo_count
        pe, qe = pe / pe.sum(), qe / qe.sum()
        value = float(np.sum((pe - qe) ** 2 / (pe + qe)))
    else:
        ps, qs = p.sum(), q.sum()
        pn = p / ps if ps > 0 else p
        qn = q / qs if qs > 0 else q
        if metric is Metric.TOTAL_VARIATION:
            value = float(0.5 * np.sum(np.abs(pn - qn)))
        else:
            value = float(np.max(np.abs(pn - qn)))
    return DistanceReport(metric, value, p.size)


def _marginal_grid_check(c: wf.StateConfig, side, t: float, grid: Grid1D) -> None:
    mass = simpson_1d(wf.marginal_density(side, grid.points, t, c), grid)
    if abs(mass - 1.0) > 1e-6:
        raise GridTooCoarse(f"grid holds marginal mass {mass:.9f}; it must cover the support")


def no_signaling_gap(c_base: wf.StateConfig, phi1: float, phi2: float, side, t: float,
                     grid: Grid1D) -> float:
    """sup_x |p_phi1(x) - p_phi2(x)| for one photon's marginal."""
    c1, c2 = c_base.with_phi(phi1), c_base.with_phi(phi2)
    _marginal_grid_check(c1, side, t, grid)
    _marginal_grid_check(c2, side, t, grid)
    x = grid.points
    return float(np.max(np.abs(wf.marginal_density(side, x, t, c1) - wf.marginal_density(side, x, t, c2))))


def no_signaling_bound(c_base: wf.StateConfig, phi1: float, phi2: float, side, t: float,
                       grid: Grid1D) -> float:
    """Analytic ceiling on the marginal gap.

    p_phi(x) = N_phi^2 [D(x) + s_other Re(e^{i phi} g_u* g_d)], so the gap is at
    most |N1^2 - N2^2| sup D + (N1^2 + N2^2) s_other sup|g_u g_d|.
    """
    side = wf.Side.parse(side)
    if c_base.kind is wf.StateKind.PRODUCT_UPPER:
        return 0.0
    here = c_base.slits(side)
    other = c_base.slits_b if side is wf.Side.A else c_base.slits_a
    x = grid.points
    gu = wf.packet_amplitude(wf.Slit.UPPER, x, t, here)
    gd = wf.packet_amplitude(wf.Slit.LOWER, x, t, here)
    n1 = c_base.with_phi(phi1).norm ** 2
    n2 = c_base.with_phi(phi2).norm ** 2
    d = 0.5 * (np.abs(gu) ** 2 + np.abs(gd) ** 2)
    return float(abs(n1 - n2) * d.max() + (n1 + n2) * other.overlap * np.max(np.abs(gu * gd)))


def fringe_shift_check(c_base: wf.StateConfig, t: float, grid: Grid2D) -> float:
    """sup |p_0 + p_pi - 2 p_incoherent| over the grid.

    A small residual certifies that the phi = 0 and phi = pi fringe patterns
    are exact complements of each other.
    """
    xa, xb = grid.mesh()
    pt = wf.SpacetimePoint(xa, xb, t)
    c0, cpi = c_base.with_phi(0.0), c_base.with_phi(math.pi)
    p0 = wf.joint_density(pt, c0)
    ppi = wf.joint_density(pt, cpi)
    inc = wf.incoherent_density(pt, c_base)
    quadrature_2d(p0, grid)
    return float(np.max(np.abs(p0 + ppi - 2.0 * inc)))


def fringe_period(c: wf.StateConfig, t: float, h: float = 1e-4, at: float = 0.0) -> float:
    """Fringe period along x_A + x_B, from a finite-difference phase gradient of the cross term.

    The cross term is conj(g_u g_u) g_d g_d evaluated on the diagonal x_A = x_B = u,
    where x_A + x_B = 2u.
    """
    def phase(u):
        pt = wf.SpacetimePoint(u, u, t)
        amp_u, amp_d, *_ = wf._branches(pt.x_a, pt.x_b, pt.t, c.with_phi(0.0))
        return np.angle(np.conj(amp_u) * amp_d)

    dphase = np.angle(np.exp(1j * (phase(at + h) - phase(at - h)))) / (2 * h)
    return float(2.0 * np.pi / abs(dphase / 2.0))


def fringe_visibility(c: wf.StateConfig, t: float, half_width: float | None = None,
                      n: int = 20001) -> float:
    """(max - min) / (max + min) of the central fringe on the diagonal x_A = x_B.

    The diagonal runs perpendicular to the fringes, which are lines of constant
    x_A + x_B. The central maximum and minimum are the local extrema closest to
    the origin.
    """
    if half_width is None:
        half_width = 1.5 * fringe_period(c, t)
    u = np.linspace(-half_width, half_width, n)
    rho = wf.joint_density(wf.SpacetimePoint(u, u, t), c)
    imax = argrelextrema(rho, np.greater_equal, order=5)[0]
    imin = argrelextrema(rho, np.less_equal, order=5)[0]
    imax = imax[(imax > 0) & (imax < n - 1)]
    imin = imin[(imin > 0) & (imin < n - 1)]
    if len(imax) == 0 or len(imin) == 0:
        return 0.0
    hi = rho[imax[np.argmin(np.abs(u[imax]))]]
    lo = rho[imin[np.argmin(np.abs(u[imin]))]]
    return float((hi - lo) / (hi + lo))
