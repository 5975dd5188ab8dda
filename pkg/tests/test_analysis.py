import math

import numpy as np
import pytest

from bohmpair import wavefield as wf
from bohmpair.analysis import (
    Grid1D,
    Grid2D,
    Metric,
    cell_probabilities,
    distribution_distance,
    fringe_period,
    fringe_shift_check,
    fringe_visibility,
    histogram_2d,
    no_signaling_bound,
    no_signaling_gap,
    numeric_evolve_oracle,
    quadrature_2d,
    simpson_1d,
)
from bohmpair.errors import BinMismatch, GridTooCoarse, ResolutionError
from bohmpair.experiment import PlaneSampler
from bohmpair.trajectories import substream
from bohmpair.wavefield import Side, Slit, SlitParams, SpacetimePoint, StateConfig, StateKind
from oracles import cell_mass_gauss

MARGINAL_GRID = Grid1D(-150.0, 150.0, 8193)


class TestGrids:
    def test_validation(self):
        with pytest.raises(ValueError):
            Grid1D(0.0, 1.0, 2)
        with pytest.raises(ValueError):
            Grid1D(1.0, 1.0, 5)

    def test_mesh_orientation(self):
        g = Grid2D(Grid1D(0, 1, 3), Grid1D(0, 2, 5))
        xa, xb = g.mesh()
        assert xa.shape == (3, 5)
        assert xa[2, 0] == 1.0 and xb[0, 4] == 2.0
        assert g.b.spacing == 0.5


class TestQuadrature:
    def test_unit_gaussian(self):
        s = 0.3
        g = Grid2D.square(-8 * s, 8 * s, 257)
        xa, xb = g.mesh()
        f = np.exp(-(xa**2 + xb**2) / (2 * s**2)) / (2 * np.pi * s**2)
        # the +-8 sigma window itself holds 1 - 2.5e-15 of the mass
        assert quadrature_2d(f, g) == pytest.approx(1.0, abs=1e-8)

    def test_constant(self):
        g = Grid2D(Grid1D(-1, 2, 9), Grid1D(0, 0.5, 5))
        assert quadrature_2d(np.full((9, 5), 2.5), g) == pytest.approx(2.5 * 3 * 0.5, rel=1e-14)

    def test_normalisation_at_t4(self):
        g = Grid2D.square(-150, 150, 2049)
        xa, xb = g.mesh()
        rho = wf.joint_density(SpacetimePoint(xa, xb, 4.0), StateConfig())
        assert quadrature_2d(rho, g) == pytest.approx(1.0, abs=1e-6)

    def test_too_coarse(self):
        g = Grid2D.square(-1, 1, 9)
        xa, xb = g.mesh()
        with pytest.raises(GridTooCoarse):
            quadrature_2d(np.exp(-(xa**2 + xb**2) / 0.02), g)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            quadrature_2d(np.zeros((3, 4)), Grid2D.square(0, 1, 3))

    def test_simpson_fourth_order(self):
        f = lambda x: np.exp(np.sin(3 * x))
        ref = simpson_1d(f(Grid1D(0, 2, 20001).points), Grid1D(0, 2, 20001), check=False)
        ns = [17, 33, 65, 129]
        err = [abs(simpson_1d(f(Grid1D(0, 2, n).points), Grid1D(0, 2, n), check=False) - ref) for n in ns]
        h = [2.0 / (n - 1) for n in ns]
        order = np.polyfit(np.log(h), np.log(err), 1)[0]
        assert order >= 3.8


class TestOracle:
    grid = Grid1D(-250.0, 250.0, 2**17 + 1)

    def initial(self, slit=Slit.UPPER, p=SlitParams()):
        return wf.packet_amplitude(slit, self.grid.points, 0.0, p)

    def test_identity_at_t0(self):
        psi0 = self.initial()
        assert np.array_equal(numeric_evolve_oracle(psi0, 0.0, self.grid, sigma=0.1), psi0)

    def test_norm_conserved(self):
        psi0 = self.initial()
        h = self.grid.spacing
        psi = numeric_evolve_oracle(psi0, 4.0, self.grid, sigma=0.1)
        assert np.sum(np.abs(psi) ** 2) * h == pytest.approx(np.sum(np.abs(psi0) ** 2) * h, abs=1e-10)

    @pytest.mark.parametrize("slit", list(Slit))
    def test_matches_closed_form(self, slit):
        psi = numeric_evolve_oracle(self.initial(slit), 4.0, self.grid, sigma=0.1)
        exact = wf.packet_amplitude(slit, self.grid.points, 4.0, SlitParams())
        assert np.max(np.abs(psi - exact)) < 1e-6

    def test_resolution_checks(self):
        coarse = Grid1D(-120.0, 120.0, 4097)
        with pytest.raises(ResolutionError):
            numeric_evolve_oracle(wf.packet_amplitude(Slit.UPPER, coarse.points, 0, SlitParams()), 1.0, coarse,
                                  sigma=0.1)
        narrow = Grid1D(-10.0, 10.0, 2**13 + 1)
        with pytest.raises(ResolutionError):
            numeric_evolve_oracle(wf.packet_amplitude(Slit.UPPER, narrow.points, 0, SlitParams()), 4.0, narrow,
                                  sigma=0.1)

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            numeric_evolve_oracle(np.zeros(5), 1.0, self.grid)
        with pytest.raises(ValueError):
            numeric_evolve_oracle(self.initial(), -1.0, self.grid)


class TestDistances:
    def test_identical(self):
        p = np.random.default_rng(0).random((6, 6))
        for m in Metric:
            assert distribution_distance(p, p, m).value == pytest.approx(0.0, abs=1e-15)

    def test_disjoint(self):
        p = np.zeros((2, 2))
        q = np.zeros((2, 2))
        p[0, 0] = 1.0
        q[1, 1] = 1.0
        rep = distribution_distance(p, q)
        assert rep.value == 1.0 and rep.n_cells == 4 and rep.metric is Metric.TOTAL_VARIATION
        assert distribution_distance(p, q, "sup_norm").value == 1.0

    def test_chi_square_is_regularised(self):
        p = np.array([10.0, 0.0, 5.0])
        q = np.array([0.0, 10.0, 5.0])
        v = distribution_distance(p, q, Metric.CHI_SQUARE).value
        assert math.isfinite(v) and v > 0

    def test_bin_mismatch(self):
        with pytest.raises(BinMismatch):
            distribution_distance(np.zeros((2, 3)), np.zeros((3, 2)))

    def test_histogram_normalisation_counts_outliers(self):
        edges = np.array([0.0, 1.0, 2.0])
        h = histogram_2d(np.array([0.5, 1.5, 5.0, 0.5]), np.array([0.5, 1.5, 0.5, 0.5]), edges, edges)
        assert h.sum() == pytest.approx(0.75)
        assert h[0, 0] == 0.5

    def test_cell_probabilities_gaussian(self):
        edges = np.linspace(-1, 1, 5)
        s = 0.4
        dens = lambda a, b: np.exp(-(a**2 + b**2) / (2 * s**2)) / (2 * np.pi * s**2)
        cells = cell_probabilities(dens, edges, edges, sub=64)
        exact = np.array([[cell_mass_gauss(edges[i], edges[i + 1], 0, s) * cell_mass_gauss(edges[j], edges[j + 1], 0, s)
                           for j in range(4)] for i in range(4)])
        assert np.allclose(cells, exact, rtol=1e-7, atol=0)

    def test_two_draw_self_consistency(self):
        """Two 1e5 draws from |psi(4)|^2 differ by the predicted sampling-noise TV, which exceeds 0.02."""
        c = StateConfig()
        edges = np.linspace(-150, 150, 41)
        sampler = PlaneSampler(c, 4.0)
        n = 100_000
        a = sampler.sample(substream(5, 0), n)
        b = sampler.sample(substream(5, 1), n)
        tv = distribution_distance(histogram_2d(*a, edges, edges), histogram_2d(*b, edges, edges)).value
        p = cell_probabilities(lambda x, y: wf.joint_density(SpacetimePoint(x, y, 4.0), c), edges, edges)
        predicted = 0.5 * np.sum(np.sqrt(4 * p * (1 - p) / (math.pi * n)))
        assert tv == pytest.approx(predicted, rel=0.25)
        # one draw against the exact cell masses sits a factor sqrt(2) lower
        assert distribution_distance(histogram_2d(*a, edges, edges), p).value < 0.02


class TestNoSignaling:
    def test_equal_phases(self):
        assert no_signaling_gap(StateConfig(), 1.0, 1.0, Side.B, 4.0, MARGINAL_GRID) == 0.0

    def test_defaults(self):
        gap = no_signaling_gap(StateConfig(), 0.0, math.pi, Side.B, 4.0, MARGINAL_GRID)
        assert gap < 1e-4
        assert gap <= no_signaling_bound(StateConfig(), 0.0, math.pi, Side.B, 4.0, MARGINAL_GRID)

    def test_product_state_has_no_gap(self):
        c = StateConfig(kind=StateKind.PRODUCT_UPPER)
        assert no_signaling_gap(c, 0.0, math.pi, Side.A, 4.0, MARGINAL_GRID) == 0.0

    def test_grid_must_cover_support(self):
        with pytest.raises(GridTooCoarse):
            no_signaling_gap(StateConfig(), 0.0, math.pi, Side.B, 4.0, Grid1D(-5, 5, 1025))

    def test_sigma_sweep(self):
        gaps = []
        for sigma in np.linspace(0.1, 0.3, 9):
            p = SlitParams(float(sigma), 0.5)
            c = StateConfig(p, p)
            for side in Side:
                gap = no_signaling_gap(c, 0.0, math.pi, side, 4.0, MARGINAL_GRID)
                assert gap <= no_signaling_bound(c, 0.0, math.pi, side, 4.0, MARGINAL_GRID) * (1 + 1e-12)
            gaps.append(gap)
        assert np.all(np.diff(gaps) > 0)
        assert gaps[-1] > 1e3 * gaps[0]


class TestFringes:
    def test_shift_residual(self):
        g = Grid2D.square(-120, 120, 1025)
        assert fringe_shift_check(StateConfig(), 4.0, g) < 1e-5

    def test_product_state_residual_vanishes(self):
        g = Grid2D.square(-120, 120, 1025)
        assert fringe_shift_check(StateConfig(kind=StateKind.PRODUCT_UPPER), 4.0, g) == pytest.approx(0.0, abs=1e-15)

    def test_patterns_are_opposed(self):
        u = np.linspace(-10, 10, 201)
        pt = SpacetimePoint(u, u, 4.0)
        p0 = wf.joint_density(pt, StateConfig())
        ppi = wf.joint_density(pt, StateConfig(phi=math.pi))
        inc = wf.incoherent_density(pt, StateConfig())
        assert np.corrcoef(p0 - inc, ppi - inc)[0, 1] < -0.999

    def test_period(self):
        assert fringe_period(StateConfig(), 4.0) == pytest.approx(2 * math.pi * 4.0, rel=1e-3)

    def test_visibility(self):
        assert fringe_visibility(StateConfig(), 4.0) > 0.9
        assert fringe_visibility(StateConfig(phi=math.pi), 4.0) > 0.9

    def test_visibility_grows_as_packets_overlap(self):
        assert fringe_visibility(StateConfig(), 0.5) < fringe_visibility(StateConfig(), 4.0)
