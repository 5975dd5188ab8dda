"""Monte Carlo model of the weak-measurement experiment and its time budget.

The calcite/polarisation pointer is reduced to a binary readout whose bias
is linear in the real part of the momentum weak value of the measured photon.
"""

from __future__ import annotations

import logging
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import simpson

from . import wavefield as wf
from .analysis import Grid1D, simpson_1d
from .errors import Saturation
from .trajectories import substream
from .wavefield import Side, StateConfig

log = logging.getLogger(__name__)

__all__ = [
    "PointerModel",
    "BinningSpec",
    "DetectionEvent",
    "EventBatch",
    "BudgetSpec",
    "PlaneSampler",
    "ProfileRow",
    "UnderfilledBin",
    "ProfileResult",
    "EVENT_CHUNK",
    "simulate_event",
    "simulate_events",
    "estimate_profile",
    "budget",
]

EVENT_CHUNK = 65536


@dataclass(frozen=True)
class PointerModel:
    kappa: float = 0.1
    side: Side = Side.B

    def __post_init__(self):
        object.__setattr__(self, "side", Side.parse(self.side))
        if not (math.isfinite(self.kappa) and self.kappa > 0):
            raise ValueError(f"kappa must be positive, got {self.kappa!r}")


@dataclass(frozen=True)
class BinningSpec:
    t_plane: float
    range_a: tuple[float, float]
    range_b: tuple[float, float]
    n_bins_a: int = 40
    n_bins_b: int = 40

    def __post_init__(self):
        if self.t_plane < 0:
            raise ValueError("t_plane must be >= 0")
        for name in ("n_bins_a", "n_bins_b"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        for name in ("range_a", "range_b"):
            lo, hi = getattr(self, name)
            if not hi > lo:
                raise ValueError(f"{name} must be an increasing interval, got {(lo, hi)}")

    @property
    def edges_a(self) -> np.ndarray:
        return np.linspace(*self.range_a, self.n_bins_a + 1)

    @property
    def edges_b(self) -> np.ndarray:
        return np.linspace(*self.range_b, self.n_bins_b + 1)

    @property
    def centers_a(self) -> np.ndarray:
        e = self.edges_a
        return 0.5 * (e[1:] + e[:-1])

    @property
    def centers_b(self) -> np.ndarray:
        e = self.edges_b
        return 0.5 * (e[1:] + e[:-1])

    def bin_index(self, side: Side | str, x) -> np.ndarray:
        """Bin index per position, -1 when outside the declared range."""
        side = Side.parse(side)
        lo, hi = self.range_a if side is Side.A else self.range_b
        n = self.n_bins_a if side is Side.A else self.n_bins_b
        x = np.asarray(x, dtype=float)
        idx = np.floor((x - lo) / (hi - lo) * n).astype(np.int64)
        return np.where((x >= lo) & (x < hi) & (idx < n), idx, -1)

    def coverage(self, c: StateConfig) -> tuple[float, float]:
        """Marginal probability inside range_a and range_b at the detection plane."""
        out = []
        for side, (lo, hi) in ((Side.A, self.range_a), (Side.B, self.range_b)):
            grid = Grid1D(lo, hi, 4097)
            out.append(simpson_1d(wf.marginal_density(side, grid.points, self.t_plane, c), grid, check=False))
        return out[0], out[1]

    def check_coverage(self, c: StateConfig, minimum: float = 0.999) -> None:
        for name, cov in zip(("range_a", "range_b"), self.coverage(c)):
            if cov < minimum:
                raise ValueError(f"{name} covers only {cov:.5f} of the marginal (need {minimum})")

    @classmethod
    def covering(cls, c: StateConfig, t_plane: float, n_bins_a: int = 40, n_bins_b: int = 40,
                 center_a: float | None = None, coverage: float = 0.999) -> "BinningSpec":
        """Symmetric ranges just wide enough to hold ``coverage`` of each marginal.

        With ``center_a`` the A range is shifted (and widened if needed) so
        that one A bin is centred exactly on that position.
        """
        ra = _covering_half_width(c, Side.A, t_plane, coverage)
        rb = _covering_half_width(c, Side.B, t_plane, coverage)
        range_a = (-ra, ra)
        if center_a is not None:
            # one bin of slack lets the grid shift so a bin centre lands on center_a
            w = 2 * ra / (n_bins_a - 1) if n_bins_a > 1 else 2 * ra
            k = math.ceil((center_a + ra) / w - 0.5)
            lo = center_a - (k + 0.5) * w
            range_a = (lo, lo + n_bins_a * w)
        return cls(t_plane, range_a, (-rb, rb), n_bins_a, n_bins_b)


def _covering_half_width(c: StateConfig, side: Side, t: float, coverage: float) -> float:
    p = c.slits(side)
    w = float(wf.packet_width(t, p))
    r = p.half_sep + 3.0 * w
    while True:
        grid = Grid1D(-r, r, 4097)
        if simpson_1d(wf.marginal_density(side, grid.points, t, c), grid, check=False) >= coverage:
            return r
        r += 0.05 * w


@dataclass(frozen=True)
class DetectionEvent:
    x_a: float
    x_b: float
    bin_a: int
    bin_b: int
    outcome: int
    out_of_range: bool = False


@dataclass
class EventBatch:
    x_a: np.ndarray
    x_b: np.ndarray
    bin_a: np.ndarray
    bin_b: np.ndarray
    outcome: np.ndarray  # +1 / -1, 0 where saturated
    re_pw: np.ndarray
    out_of_range: np.ndarray
    saturated: np.ndarray

    def __len__(self):
        return len(self.x_a)


@dataclass(frozen=True)
class BudgetSpec:
    n_planes: int = 25
    n_bins: int = 40
    pairs_per_bin: int = 1000
    pair_rate: float = 1e6

    def __post_init__(self):
        for name in ("n_planes", "n_bins", "pairs_per_bin", "pair_rate"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)!r}")


def budget(b: BudgetSpec) -> float:
    """Seconds needed to collect ``pairs_per_bin`` coincidences in every bin pair of every plane.

    The coincidence rate into one bin pair is pair_rate / n_bins^2 and there
    are n_bins^2 such pairs per plane.
    """
    combos = b.n_bins**2
    return b.n_planes * combos * b.pairs_per_bin * combos / b.pair_rate


class PlaneSampler:
    """Draws (x_A, x_B) from |psi(t)|^2 at one detection plane.

    A piecewise-constant envelope is tabulated on a grid fine enough to resolve
    both the packet width and the two-photon fringe period; cells are picked
    by inverse CDF and the draw is polished by rejection against the exact
    density, so accepted points follow |psi|^2 exactly wherever the envelope
    dominates (violations are counted in ``envelope_violations``).
    """

    def __init__(self, c: StateConfig, t: float, cells_per_feature: int = 16,
                 extent_widths: float = 8.0, safety: float = 1.25):
        self.c = c
        self.t = float(t)
        self.envelope_violations = 0
        self._lock = threading.Lock()
        self.edges = []
        for p in (c.slits_a, c.slits_b):
            w = float(wf.packet_width(t, p))
            tau = t / (2 * p.sigma**2)
            k_fringe = p.half_sep * tau / (p.sigma**2 * (1 + tau**2))
            feature = w if k_fringe == 0 else min(w, 2 * math.pi / k_fringe)
            half = p.half_sep + extent_widths * w
            n = int(math.ceil(2 * half / (feature / cells_per_feature)))
            self.edges.append(np.linspace(-half, half, n + 1))
        ea, eb = self.edges
        # density on a grid with 2 sub-intervals per cell (corners, midpoints, centre)
        fa = np.linspace(ea[0], ea[-1], 2 * (len(ea) - 1) + 1)
        fb = np.linspace(eb[0], eb[-1], 2 * (len(eb) - 1) + 1)
        rho = wf.joint_density(wf.SpacetimePoint(fa[:, None], fb[None, :], t), c)
        na, nb = len(ea) - 1, len(eb) - 1
        m = np.zeros((na, nb))
        for i in range(3):
            for j in range(3):
                m = np.maximum(m, rho[i:i + 2 * na:2, j:j + 2 * nb:2])
        peak = wf.peak_density(t, c)
        self.envelope = safety * m + 1e-9 * peak
        area = np.outer(np.diff(ea), np.diff(eb))
        cdf = np.cumsum((self.envelope * area).ravel())
        self.cdf = cdf / cdf[-1]

    def sample(self, rng: np.random.Generator, n: int):
        ea, eb = self.edges
        nb = len(eb) - 1
        out_a, out_b = [], []
        got = 0
        while got < n:
            m = int(1.3 * (n - got)) + 64
            cell = np.minimum(np.searchsorted(self.cdf, rng.random(m), side="right"), len(self.cdf) - 1)
            i, j = np.divmod(cell, nb)
            xa = ea[i] + (ea[i + 1] - ea[i]) * rng.random(m)
            xb = eb[j] + (eb[j + 1] - eb[j]) * rng.random(m)
            rho = wf.joint_density(wf.SpacetimePoint(xa, xb, self.t), self.c)
            env = self.envelope[i, j]
            with self._lock:
                self.envelope_violations += int(np.count_nonzero(rho > env))
            keep = rng.random(m) * env < rho
            out_a.append(xa[keep])
            out_b.append(xb[keep])
            got += int(np.count_nonzero(keep))
        return np.concatenate(out_a)[:n], np.concatenate(out_b)[:n]


def _pointer_readout(xa, xb, c: StateConfig, pm: PointerModel, t: float, rng: np.random.Generator):
    psi, ga, gb = wf._gradients(xa, xb, t, c)
    with np.errstate(divide="ignore", invalid="ignore"):
        re_pw = np.imag((ga if pm.side is Side.A else gb) / psi)
    bias = pm.kappa * re_pw
    saturated = ~(np.abs(bias) <= 1.0)
    u = rng.random(len(xa))
    outcome = np.where(u < 0.5 * (1.0 + bias), 1, -1).astype(np.int8)
    outcome[saturated] = 0
    return re_pw, outcome, saturated


def simulate_events(c: StateConfig, pm: PointerModel, bs: BinningSpec, rng: np.random.Generator,
                    n: int, sampler: PlaneSampler | None = None) -> EventBatch:
    """``n`` coincidences: joint position detection at ``bs.t_plane`` plus the pointer bit.

    Saturated events (kappa |Re p_w| > 1) are flagged and carry outcome 0.
    """
    if sampler is None:
        sampler = PlaneSampler(c, bs.t_plane)
    xa, xb = sampler.sample(rng, n)
    re_pw, outcome, saturated = _pointer_readout(xa, xb, c, pm, bs.t_plane, rng)
    ba = bs.bin_index(Side.A, xa)
    bb = bs.bin_index(Side.B, xb)
    return EventBatch(xa, xb, ba, bb, outcome, re_pw, (ba < 0) | (bb < 0), saturated)


def simulate_event(c: StateConfig, pm: PointerModel, bs: BinningSpec, stream: np.random.Generator,
                   sampler: PlaneSampler | None = None) -> DetectionEvent:
    """One coincidence; raises Saturation where the linear pointer model breaks down."""
    ev = simulate_events(c, pm, bs, stream, 1, sampler)
    if ev.saturated[0]:
        raise Saturation(
            f"kappa * Re p_w = {pm.kappa * ev.re_pw[0]:.3g} at (x_A, x_B) = ({ev.x_a[0]:.4g}, {ev.x_b[0]:.4g})"
        )
    return DetectionEvent(float(ev.x_a[0]), float(ev.x_b[0]), int(ev.bin_a[0]), int(ev.bin_b[0]),
                          int(ev.outcome[0]), bool(ev.out_of_range[0]))


@dataclass(frozen=True)
class ProfileRow:
    x_b_center: float
    v_hat: float
    stderr: float
    n_used: int
    v_analytic: float
    v_bin_avg: float


@dataclass(frozen=True)
class UnderfilledBin:
    bin_b: int
    n_used: int
    needed: int


@dataclass
class ProfileResult:
    rows: list[ProfileRow]
    x_a_center: float
    n_events: int
    n_saturated: int
    n_out_of_range: int
    n_in_bin_a: int
    underfilled: list[UnderfilledBin] = field(default_factory=list)
    envelope_violations: int = 0

    @property
    def typical_stderr(self) -> float:
        s = np.array([r.stderr for r in self.rows])
        return float(np.median(s[np.isfinite(s)])) if np.any(np.isfinite(s)) else math.nan


def bin_averaged_velocity(c: StateConfig, side: Side, t: float, a_edges, b_edges, sub: int = 32):
    """Density-weighted mean of Re p_w over each (A bin x B bin) cell: integral of j over integral of rho."""
    a_edges = np.asarray(a_edges, float)
    b_edges = np.asarray(b_edges, float)
    u = np.linspace(0.0, 1.0, sub + 1)
    xa = a_edges[0] + (a_edges[1] - a_edges[0]) * u
    out = np.empty(len(b_edges) - 1)
    for k in range(len(b_edges) - 1):
        xb = b_edges[k] + (b_edges[k + 1] - b_edges[k]) * u
        psi, ga, gb = wf._gradients(xa[:, None], xb[None, :], t, c)
        grad = ga if side is Side.A else gb
        j = np.imag(np.conj(psi) * grad)
        rho = np.abs(psi) ** 2
        num = simpson(simpson(j, dx=1.0, axis=1), dx=1.0)
        den = simpson(simpson(rho, dx=1.0, axis=1), dx=1.0)
        out[k] = num / den if den > 0 else math.nan
    return out


def estimate_profile(c: StateConfig, pm: PointerModel, bs: BinningSpec, fixed_bin_a: int,
                     pairs_per_bin: int = 1000, seed: int = 20120917, max_events: int = 20_000_000,
                     workers: int = 1, check_coverage: bool = True) -> ProfileResult:
    """Reconstruct the velocity profile along x_B for events detected in one A bin.

    Events are generated in fixed chunks of EVENT_CHUNK, chunk k drawing from
    its own substream; each B bin keeps its first ``pairs_per_bin`` valid
    events in chunk order. Generation stops after the first chunk at which
    every bin is full, or once ``max_events`` have been simulated, in which
    case the short bins are listed as underfilled. The result does not depend
    on ``workers``.
    """
    if pairs_per_bin < 1:
        raise ValueError("pairs_per_bin must be >= 1")
    if not 0 <= fixed_bin_a < bs.n_bins_a:
        raise ValueError(f"fixed_bin_a must be in [0, {bs.n_bins_a}), got {fixed_bin_a}")
    if check_coverage:
        bs.check_coverage(c)
    sampler = PlaneSampler(c, bs.t_plane)
    nb = bs.n_bins_b
    n_chunks = -(-max_events // EVENT_CHUNK)

    def run(k):
        ev = simulate_events(c, pm, bs, substream(seed, 1, k), EVENT_CHUNK, sampler)
        sel = (ev.bin_a == fixed_bin_a) & (ev.bin_b >= 0)
        return ev, sel

    sums = np.zeros(nb)
    sq = np.zeros(nb)
    counts = np.zeros(nb, dtype=np.int64)
    n_events = n_sat = n_oor = n_in_a = 0
    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    try:
        k = 0
        done = False
        while k < n_chunks and not done:
            batch = list(range(k, min(k + max(workers, 1), n_chunks)))
            results = list(pool.map(run, batch)) if pool else [run(i) for i in batch]
            for ev, sel in results:
                n_events += len(ev)
                n_oor += int(np.count_nonzero(ev.out_of_range))
                in_a = sel
                n_in_a += int(np.count_nonzero(in_a))
                n_sat += int(np.count_nonzero(ev.saturated & in_a))
                valid = in_a & ~ev.saturated
                bins = ev.bin_b[valid]
                out = ev.outcome[valid].astype(float)
                # rank of each event within its bin, in chunk order
                order = np.argsort(bins, kind="stable")
                b_sorted = bins[order]
                first = np.searchsorted(b_sorted, b_sorted, side="left")
                rank = np.empty_like(order)
                rank[order] = np.arange(len(order)) - first
                take = rank + counts[bins] < pairs_per_bin
                np.add.at(sums, bins[take], out[take])
                np.add.at(sq, bins[take], out[take] ** 2)
                counts += np.bincount(bins[take], minlength=nb)
                if np.all(counts >= pairs_per_bin):
                    done = True
                    break
            k = batch[-1] + 1
    finally:
        if pool:
            pool.shutdown()

    x_a_center = float(bs.centers_a[fixed_bin_a])
    centers = bs.centers_b
    v_an = wf.velocities(np.full(nb, x_a_center), centers, bs.t_plane, c)
    v_an = v_an[0] if pm.side is Side.A else v_an[1]
    ea = bs.edges_a[fixed_bin_a:fixed_bin_a + 2]
    v_avg = bin_averaged_velocity(c, pm.side, bs.t_plane, ea, bs.edges_b)
    rows = []
    underfilled = []
    for b in range(nb):
        n = int(counts[b])
        if n > 0:
            mean = sums[b] / n
            v_hat = mean / pm.kappa
        else:
            v_hat = math.nan
        if n > 1:
            var = max(sq[b] - n * mean**2, 0.0) / (n - 1)
            stderr = math.sqrt(var) / (pm.kappa * math.sqrt(n))
        else:
            stderr = math.nan
        rows.append(ProfileRow(float(centers[b]), float(v_hat), float(stderr), n, float(v_an[b]), float(v_avg[b])))
        if n < pairs_per_bin:
            underfilled.append(UnderfilledBin(b, n, pairs_per_bin))
    if underfilled:
        log.warning("%d of %d bins underfilled after %d events", len(underfilled), nb, n_events)
    return ProfileResult(rows, x_a_center, n_events, n_sat, n_oor, n_in_a, underfilled,
                         sampler.envelope_violations)
