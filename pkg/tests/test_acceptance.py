"""End-to-end acceptance criteria, one test each, each printing a PASS/FAIL line.

Run on their own with ``pytest tests/test_acceptance.py -s``; the lines are
also collected into a summary section at the end of any pytest run.
"""

import math
import time

import numpy as np
import pytest

from bohmpair import wavefield as wf
from bohmpair.analysis import (
    Grid1D,
    Grid2D,
    cell_probabilities,
    distribution_distance,
    fringe_shift_check,
    fringe_visibility,
    histogram_2d,
    no_signaling_bound,
    no_signaling_gap,
    numeric_evolve_oracle,
)
from bohmpair.experiment import BinningSpec, BudgetSpec, PointerModel, budget, estimate_profile
from bohmpair.trajectories import EnsembleSpec, IntegratorConfig, divergence_metric, integrate_ensemble
from bohmpair.wavefield import Side, Slit, SlitParams, SpacetimePoint, StateConfig
from conftest import ACCEPTANCE_LINES
from oracles import euler_endpoints, five_point

pytestmark = pytest.mark.acceptance

MARGINAL_GRID = Grid1D(-150.0, 150.0, 8193)


def report(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} | {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def off_node_points(c, n, seed, floor=1e-4):
    rng = np.random.default_rng(seed)
    xa_all, xb_all, t_all = [], [], []
    got = 0
    while got < n:
        t = rng.uniform(0.0, 6.0, 2 * n)
        w = wf.packet_width(t, c.slits_a)
        xa = rng.normal(0, 1, 2 * n) * w + rng.choice([-0.5, 0.5], 2 * n)
        xb = rng.normal(0, 1, 2 * n) * w + rng.choice([-0.5, 0.5], 2 * n)
        keep = ~wf.node_mask(xa, xb, t, c, floor)
        xa_all.append(xa[keep])
        xb_all.append(xb[keep])
        t_all.append(t[keep])
        got += int(keep.sum())
    return (np.concatenate(xa_all)[:n], np.concatenate(xb_all)[:n], np.concatenate(t_all)[:n])


def test_criterion_1_budget():
    seconds = budget(BudgetSpec(25, 40, 1000, 1e6))
    ok = seconds == 64000.0
    report(1, "feasibility budget", ok, f"{seconds:.17g} s = {seconds / 3600:.2f} h (exact 64000)")
    assert ok


def _no_signaling():
    c = StateConfig()
    gap = no_signaling_gap(c, 0.0, math.pi, Side.B, 4.0, MARGINAL_GRID)
    sweep = []
    for sigma in np.linspace(0.1, 0.3, 9):
        p = SlitParams(float(sigma), 0.5)
        cs = StateConfig(p, p)
        g = no_signaling_gap(cs, 0.0, math.pi, Side.B, 4.0, MARGINAL_GRID)
        b = no_signaling_bound(cs, 0.0, math.pi, Side.B, 4.0, MARGINAL_GRID)
        sweep.append((float(sigma), g, b))
    return gap, sweep


def test_criterion_2_no_signaling():
    gap, sweep = _no_signaling()
    within = all(g <= b * (1 + 1e-12) for _, g, b in sweep)
    ok = gap < 1e-4 and within
    worst = max(g / b for _, g, b in sweep)
    report(2, "no-signaling", ok, f"gap {gap:.3e} (< 1e-4), sigma sweep 0.1..0.3 gap/bound max {worst:.3f} (<= 1)")
    assert ok


def test_criterion_3_remote_divergence():
    c = StateConfig()
    div = divergence_metric((0.5, 0.5), c, 0.0, math.pi)
    _, b0 = euler_endpoints(0.5, 0.5, 0.0)
    _, bpi = euler_endpoints(0.5, 0.5, math.pi)
    oracle = abs(b0[0] - bpi[0])
    gap, _ = _no_signaling()
    half_sep = c.slits_b.half_sep
    ok = div > half_sep and abs(div - oracle) < 1e-3 and gap < 1e-4
    report(3, "remote trajectory divergence", ok,
           f"|dx_B(4)| = {div:.6f} (> d/2 = {half_sep}), Euler oracle {oracle:.6f}, marginal gap {gap:.2e}")
    assert ok


def test_criterion_4_weak_value_identity():
    worst = 0.0
    for phi in (0.0, 1.0, math.pi):
        c = StateConfig(phi=phi)
        xa, xb, t = off_node_points(c, 1000, seed=40)
        pt = SpacetimePoint(xa, xb, t)
        for side in Side:
            pw = wf.weak_momentum(side, pt, c)
            v = wf.velocity(side, pt, c)
            worst = max(worst, float(np.max(np.abs(pw.real - v) / np.maximum(1.0, np.abs(v)))))
    ok = worst <= 1e-12
    report(4, "weak-value identity", ok, f"max |Re p_w - v| = {worst:.1e} over 3x1000 points x 2 sides (<= 1e-12)")
    assert ok


def test_criterion_5_analytic_correctness():
    grad_err = 0.0
    cont_err = 0.0
    for phi in (0.0, 1.0, math.pi):
        c = StateConfig(phi=phi)
        xa, xb, t = off_node_points(c, 1000, seed=50)
        pt = SpacetimePoint(xa, xb, t)
        w = wf.packet_width(t, c.slits_a)
        h = 3e-5 * w
        amp = wf.two_photon_amplitude(pt, c)
        scale = np.abs(amp) / w
        for side in Side:
            an = wf.two_photon_gradient(side, pt, c)
            if side is Side.A:
                fd = five_point(lambda y: wf.two_photon_amplitude(SpacetimePoint(y, xb, t), c), xa, h)
            else:
                fd = five_point(lambda y: wf.two_photon_amplitude(SpacetimePoint(xa, y, t), c), xb, h)
            grad_err = max(grad_err, float(np.max(np.abs(an - fd) / np.maximum(np.abs(an), scale))))

        # continuity d_t rho + d_A j_A + d_B j_B = 0, relative to the largest term
        tt = np.maximum(t, 0.05)
        ht = 1e-3 * tt

        def flux(side, a, b):
            psi, ga, gb = wf._gradients(a, b, tt, c)
            return np.imag(np.conj(psi) * (ga if side is Side.A else gb))

        hx = 1e-3 * wf.packet_width(tt, c.slits_a)
        drho = five_point(lambda s: wf.joint_density(SpacetimePoint(xa, xb, s), c), tt, ht)
        dja = five_point(lambda a: flux(Side.A, a, xb), xa, hx)
        djb = five_point(lambda b: flux(Side.B, xa, b), xb, hx)
        local = np.maximum.reduce([np.abs(drho), np.abs(dja), np.abs(djb)])
        cont_err = max(cont_err, float(np.max(np.abs(drho + dja + djb) / local)))

    grid = Grid1D(-250.0, 250.0, 2**17 + 1)
    oracle_err = 0.0
    for slit in Slit:
        psi0 = wf.packet_amplitude(slit, grid.points, 0.0, SlitParams())
        num = numeric_evolve_oracle(psi0, 4.0, grid, sigma=0.1)
        exact = wf.packet_amplitude(slit, grid.points, 4.0, SlitParams())
        oracle_err = max(oracle_err, float(np.max(np.abs(num - exact))))
    ok = grad_err < 1e-6 and oracle_err < 1e-6 and cont_err < 1e-5
    report(5, "analytic correctness", ok,
           f"gradient rel err {grad_err:.1e} (< 1e-6), oracle sup err {oracle_err:.1e} (< 1e-6), "
           f"continuity residual {cont_err:.1e} (< 1e-5)")
    assert ok


def test_criterion_6_equivariance():
    c = StateConfig()
    start = time.perf_counter()
    res = integrate_ensemble(c, EnsembleSpec(100_000), IntegratorConfig(save_stride=10**9), workers=1)
    elapsed = time.perf_counter() - start
    done = [tr for tr in res.trajectories if tr.complete]
    xa = np.array([tr.x_a[-1] for tr in done])
    xb = np.array([tr.x_b[-1] for tr in done])
    edges = np.linspace(-150.0, 150.0, 41)
    hist = histogram_2d(xa, xb, edges, edges)
    quad = cell_probabilities(lambda a, b: wf.joint_density(SpacetimePoint(a, b, 4.0), c), edges, edges)
    tv = distribution_distance(hist, quad).value
    ok = tv < 0.02
    report(6, "equivariance", ok,
           f"TV {tv:.4f} (< 0.02) on 40x40 bins over [-150, 150]^2, {len(done)} complete, "
           f"{len(res.stalls)} stalled, {elapsed:.0f} s single-threaded")
    assert ok


def test_criterion_7_weak_measurement_reconstruction():
    c0 = StateConfig()
    pm = PointerModel(kappa=0.1, side=Side.B)
    bs = BinningSpec.covering(c0, 4.0, 40, 40, center_a=4.0)
    k = int(bs.bin_index(Side.A, 4.0))
    profiles = {}
    for phi in (0.0, math.pi):
        profiles[phi] = estimate_profile(c0.with_phi(phi), pm, bs, k, pairs_per_bin=1000, seed=20120917,
                                         max_events=20_000_000, workers=1)
    p0, ppi = profiles[0.0], profiles[math.pi]
    hits = [abs(r.v_hat - r.v_analytic) < 3 * r.stderr for r in p0.rows]
    frac = sum(hits) / len(hits)
    v0 = np.array([r.v_hat for r in p0.rows])
    vpi = np.array([r.v_hat for r in ppi.rows])
    both = np.isfinite(v0) & np.isfinite(vpi)
    sep = float(np.max(np.abs(v0[both] - vpi[both]))) if both.any() else math.nan
    typical = float(np.nanmedian([r.stderr for r in p0.rows + ppi.rows]))
    ok = frac >= 0.9 and sep > 10 * typical
    report(7, "weak-measurement reconstruction", ok,
           f"{sum(hits)}/40 bins within 3 stderr ({frac:.0%}, need >= 90%; "
           f"{len(p0.underfilled)} underfilled, {p0.n_saturated} saturated events); "
           f"max |v0 - v_pi| {sep:.3f} vs 10 x stderr {10 * typical:.3f}")
    assert ok


def test_criterion_8_fringe_structure():
    c = StateConfig()
    residual = fringe_shift_check(c, 4.0, Grid2D.square(-120.0, 120.0, 1025))
    vis = fringe_visibility(c, 4.0)
    vis_pi = fringe_visibility(c.with_phi(math.pi), 4.0)
    ok = residual < 1e-5 and vis > 0.9 and vis_pi > 0.9
    report(8, "fringe structure", ok,
           f"shift residual {residual:.1e} (< 1e-5), visibility {vis:.4f} / {vis_pi:.4f} at phi = 0 / pi (> 0.9)")
    assert ok
