"""Bohmian configuration-space trajectories for the two-photon state."""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import wavefield as wf
from .errors import NodeRegion, NodeStall
from .wavefield import StateConfig, StateKind

__all__ = [
    "Method",
    "IntegratorConfig",
    "Trajectory",
    "EnsembleSpec",
    "EnsembleResult",
    "BLOCK_SIZE",
    "substream",
    "sample_initial",
    "integrate_pair",
    "integrate_ensemble",
    "propagate",
    "divergence_metric",
]

# Samples per independent random substream; fixed so results never depend on worker count.
BLOCK_SIZE = 4096


class Method(enum.Enum):
    RK4 = "rk4"
    EULER = "euler"


@dataclass(frozen=True)
class IntegratorConfig:
    dt: float = 0.0025
    t_end: float = 4.0
    method: Method = Method.RK4
    eps_node: float = wf.DEFAULT_EPS_NODE
    max_step_shrink: int = 8
    save_stride: int = 1

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt!r}")
        if not self.t_end > 0:
            raise ValueError(f"t_end must be positive, got {self.t_end!r}")
        if not self.eps_node > 0:
            raise ValueError(f"eps_node must be positive, got {self.eps_node!r}")
        if self.max_step_shrink < 0:
            raise ValueError("max_step_shrink must be >= 0")
        if self.save_stride < 1:
            raise ValueError("save_stride must be >= 1")

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.t_end / self.dt)))

    @property
    def step(self) -> float:
        """Actual step; t_end is always hit exactly."""
        return self.t_end / self.n_steps

    def sample_steps(self) -> np.ndarray:
        idx = np.arange(0, self.n_steps + 1, self.save_stride)
        if idx[-1] != self.n_steps:
            idx = np.append(idx, self.n_steps)
        return idx


@dataclass
class Trajectory:
    t: np.ndarray
    x_a: np.ndarray
    x_b: np.ndarray
    v_a: np.ndarray
    v_b: np.ndarray
    stalled_at: float | None = None

    @property
    def samples(self):
        return list(zip(self.t, self.x_a, self.x_b, self.v_a, self.v_b))

    @property
    def complete(self) -> bool:
        return self.stalled_at is None

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return self.stalled_at == other.stalled_at and all(
            np.array_equal(getattr(self, k), getattr(other, k)) for k in ("t", "x_a", "x_b", "v_a", "v_b")
        )


@dataclass(frozen=True)
class EnsembleSpec:
    n: int
    seed: int = 20120917

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"ensemble size must be >= 1, got {self.n}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")


@dataclass
class EnsembleResult:
    trajectories: list[Trajectory]
    stalls: list[NodeStall] = field(default_factory=list)


def substream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for a (seed, key...) pair."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


def _sample_block(c: StateConfig, n: int, rng: np.random.Generator):
    pa, pb = c.slits_a, c.slits_b
    if c.kind is StateKind.PRODUCT_UPPER:
        return (pa.half_sep + pa.sigma * rng.standard_normal(n),
                pb.half_sep + pb.sigma * rng.standard_normal(n))
    # Proposal: equal mixture of the two branch densities. At t = 0 the cross
    # term is 2 cos(phi) g_u g_d g_u g_d, bounded by |cos phi| times the proposal.
    bound = 1.0 + abs(math.cos(c.phi))
    out_a = np.empty(0)
    out_b = np.empty(0)
    while len(out_a) < n:
        m = 2 * (n - len(out_a)) + 16
        sign = np.where(rng.random(m) < 0.5, 1.0, -1.0)
        xa = sign * pa.half_sep + pa.sigma * rng.standard_normal(m)
        xb = sign * pb.half_sep + pb.sigma * rng.standard_normal(m)
        u = rng.random(m)
        lu = -((xa - pa.half_sep) ** 2) / (2 * pa.sigma**2) - (xb - pb.half_sep) ** 2 / (2 * pb.sigma**2)
        ld = -((xa + pa.half_sep) ** 2) / (2 * pa.sigma**2) - (xb + pb.half_sep) ** 2 / (2 * pb.sigma**2)
        # 2 g_u g_d / (g_u^2 + g_d^2) for the products, computed in log space
        ratio = 1.0 / np.cosh(0.5 * (lu - ld))
        accept = u * bound < 1.0 + math.cos(c.phi) * ratio
        out_a = np.concatenate([out_a, xa[accept]])
        out_b = np.concatenate([out_b, xb[accept]])
    return out_a[:n], out_b[:n]


def sample_initial(c: StateConfig, spec: EnsembleSpec) -> np.ndarray:
    """Draw ``spec.n`` configurations from |psi(x_A, x_B, 0)|^2; returns shape (n, 2).

    Exact mixture-plus-rejection sampling. Block ``k`` of BLOCK_SIZE samples
    uses its own substream, so the output is fixed by the seed alone.
    """
    blocks = []
    n_blocks = -(-spec.n // BLOCK_SIZE)
    for k in range(n_blocks):
        m = min(BLOCK_SIZE, spec.n - k * BLOCK_SIZE)
        xa, xb = _sample_block(c, m, substream(spec.seed, 0, k))
        blocks.append(np.column_stack([xa, xb]))
    return np.concatenate(blocks)


def _field(xa, xb, t, c, eps):
    """Velocities plus a mask of points inside the node region (velocities there are garbage)."""
    psi, ga, gb = wf._gradients(xa, xb, t, c)
    rho = psi.real**2 + psi.imag**2
    bad = ~(rho >= eps * wf.peak_density(t, c))
    with np.errstate(divide="ignore", invalid="ignore"):
        va = np.imag(ga / psi)
        vb = np.imag(gb / psi)
    return va, vb, bad


def _raw_step(xa, xb, t, h, c, ic: IntegratorConfig):
    eps = ic.eps_node
    ka, kb, bad = _field(xa, xb, t, c, eps)
    if ic.method is Method.EULER:
        return xa + h * ka, xb + h * kb, bad
    la, lb, b2 = _field(xa + 0.5 * h * ka, xb + 0.5 * h * kb, t + 0.5 * h, c, eps)
    ma, mb, b3 = _field(xa + 0.5 * h * la, xb + 0.5 * h * lb, t + 0.5 * h, c, eps)
    na, nb, b4 = _field(xa + h * ma, xb + h * mb, t + h, c, eps)
    xa1 = xa + h / 6.0 * (ka + 2.0 * la + 2.0 * ma + na)
    xb1 = xb + h / 6.0 * (kb + 2.0 * lb + 2.0 * mb + nb)
    return xa1, xb1, bad | b2 | b3 | b4


def _advance(xa, xb, t, h, c, ic, depth):
    """One step of size h; points that touch the node region retry with two half steps."""
    xa1, xb1, bad = _raw_step(xa, xb, t, h, c, ic)
    stalled = np.zeros(xa.shape, dtype=bool)
    if np.any(bad):
        if depth >= ic.max_step_shrink:
            stalled = bad
        else:
            idx = np.flatnonzero(bad)
            ha = 0.5 * h
            ya, yb, s1 = _advance(xa[idx], xb[idx], t, ha, c, ic, depth + 1)
            za, zb, s2 = _advance(ya, yb, t + ha, ha, c, ic, depth + 1)
            xa1[idx] = za
            xb1[idx] = zb
            stalled[idx] = s1 | s2
    return xa1, xb1, stalled


def propagate(x0_a, x0_b, c: StateConfig, ic: IntegratorConfig):
    """Vectorised integration of many trajectories on the fixed step grid.

    Returns ``(t, xa, xb, va, vb, stalled_step)`` with position/velocity arrays
    of shape (n_samples, n_traj). ``stalled_step[j]`` is the last base-grid
    step index reached by trajectory j, or -1 if it completed. Positions after
    a stall are NaN.
    """
    xa = np.array(x0_a, dtype=float, ndmin=1)
    xb = np.array(x0_b, dtype=float, ndmin=1)
    n_traj = xa.shape[0]
    h = ic.step
    save = ic.sample_steps()
    save_pos = {int(k): i for i, k in enumerate(save)}
    out_xa = np.full((len(save), n_traj), np.nan)
    out_xb = np.full_like(out_xa, np.nan)
    out_va = np.full_like(out_xa, np.nan)
    out_vb = np.full_like(out_xa, np.nan)
    stalled_step = np.full(n_traj, -1, dtype=np.int64)
    alive = np.ones(n_traj, dtype=bool)

    def record(step, t):
        i = save_pos[step]
        va, vb, bad = _field(xa, xb, t, c, ic.eps_node)
        out_xa[i] = np.where(alive, xa, np.nan)
        out_xb[i] = np.where(alive, xb, np.nan)
        out_va[i] = np.where(alive & ~bad, va, np.nan)
        out_vb[i] = np.where(alive & ~bad, vb, np.nan)

    record(0, 0.0)
    for step in range(ic.n_steps):
        t = step * h
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        ya, yb, st = _advance(xa[idx], xb[idx], t, h, c, ic, 0)
        xa[idx] = ya
        xb[idx] = yb
        if np.any(st):
            dead = idx[st]
            alive[dead] = False
            stalled_step[dead] = step
            xa[dead] = np.nan
            xb[dead] = np.nan
        if step + 1 in save_pos:
            record(step + 1, (step + 1) * h)
    return save * h, out_xa, out_xb, out_va, out_vb, stalled_step


def _check_start(xa, xb, c, ic):
    bad = wf.node_mask(np.asarray(xa), np.asarray(xb), 0.0, c, ic.eps_node)
    if np.any(bad):
        raise NodeRegion("initial configuration lies in the node region", int(np.count_nonzero(bad)))


def _to_trajectories(t, xa, xb, va, vb, stalled_step, h, offset=0):
    out, stalls = [], []
    for j in range(xa.shape[1]):
        if stalled_step[j] < 0:
            out.append(Trajectory(t.copy(), xa[:, j].copy(), xb[:, j].copy(), va[:, j].copy(), vb[:, j].copy()))
            continue
        last = float(stalled_step[j] * h)
        keep = t <= last
        out.append(Trajectory(t[keep].copy(), xa[keep, j].copy(), xb[keep, j].copy(),
                              va[keep, j].copy(), vb[keep, j].copy(), stalled_at=last))
        stalls.append(NodeStall(f"trajectory {offset + j} stalled at a node after t={last:g}",
                                last, offset + j))
    return out, stalls


def integrate_pair(x0, c: StateConfig, ic: IntegratorConfig = IntegratorConfig()) -> Trajectory:
    """Integrate dx_A/dt = v_A, dx_B/dt = v_B from ``x0 = (x_A, x_B)`` at t = 0.

    Raises NodeStall when the node-avoiding step halving is exhausted.
    """
    _check_start(x0[0], x0[1], c, ic)
    res = propagate([x0[0]], [x0[1]], c, ic)
    trajs, stalls = _to_trajectories(*res, ic.step)
    if stalls:
        raise stalls[0]
    return trajs[0]


def integrate_ensemble(c: StateConfig, spec: EnsembleSpec, ic: IntegratorConfig = IntegratorConfig(),
                       workers: int = 1) -> EnsembleResult:
    """Sample |psi(0)|^2 starts and integrate each one.

    Work is split into fixed blocks of BLOCK_SIZE; with ``workers > 1`` blocks
    run on a thread pool but are reassembled in input order, so the result is
    independent of the worker count. Stalled trajectories are kept (truncated)
    and listed in ``stalls``.
    """
    starts = sample_initial(c, spec)
    _check_start(starts[:, 0], starts[:, 1], c, ic)
    chunks = [(k, starts[k:k + BLOCK_SIZE]) for k in range(0, len(starts), BLOCK_SIZE)]

    def run(chunk):
        k, block = chunk
        res = propagate(block[:, 0], block[:, 1], c, ic)
        return _to_trajectories(*res, ic.step, offset=k)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(run, chunks))
    else:
        parts = [run(ch) for ch in chunks]
    result = EnsembleResult([])
    for trajs, stalls in parts:
        result.trajectories.extend(trajs)
        result.stalls.extend(stalls)
    return result


def divergence_metric(x0, c_base: StateConfig, phi1: float, phi2: float,
                      ic: IntegratorConfig = IntegratorConfig()) -> float:
    """|x_B(t_end; phi1) - x_B(t_end; phi2)| for identical starting positions."""
    xb = []
    for phi in (phi1, phi2):
        traj = integrate_pair(x0, c_base.with_phi(phi), ic)
        xb.append(traj.x_b[-1])
    return float(abs(xb[0] - xb[1]))
