"""Stable density engine: quadrature oracles, tails, and the odd evolution."""

import math

import numpy as np
import pytest
from scipy.integrate import quad

from kinprof import stable
from kinprof.errors import FormatError, ParameterError


@pytest.fixture(scope="module")
def table_half():
    return stable.build_table(0.5)


@pytest.fixture(scope="module")
def table_one():
    return stable.build_table(1.0)


@pytest.fixture(scope="module")
def table_three_halves():
    return stable.build_table(1.5)


@pytest.fixture(scope="module")
def table_one_wide():
    # core wide enough that evolve_odd at t=0.1 never leaves interpolation
    return stable.build_table(1.0, core_z_max=1000.0)


class TestScaleConstant:
    def test_alpha_one_is_pi(self):
        assert stable.c_alpha(1.0) == math.pi

    def test_alpha_half_closed_form(self):
        # Gamma(-1/2) = -2 sqrt(pi), cos(pi/4) = sqrt(2)/2, so c = 2 sqrt(2 pi)
        assert stable.c_alpha(0.5) == pytest.approx(2.0 * math.sqrt(2.0 * math.pi), rel=1e-14)

    def test_alpha_three_halves_closed_form(self):
        # Gamma(-3/2) = 4 sqrt(pi)/3, cos(3 pi/4) = -sqrt(2)/2, so c = (4/3) sqrt(2 pi)
        assert stable.c_alpha(1.5) == pytest.approx(4.0 / 3.0 * math.sqrt(2.0 * math.pi), rel=1e-14)

    def test_continuous_through_alpha_one(self):
        # the Gamma pole at -1 cancels against the cosine zero
        for a in (1.0 - 1e-4, 1.0 + 1e-4):
            assert abs(stable.c_alpha(a) - math.pi) < 2e-3

    @pytest.mark.parametrize("bad", [0.0, 2.0, -0.3, 2.5])
    def test_range_checked(self, bad):
        with pytest.raises(ParameterError):
            stable.c_alpha(bad)


class TestCauchyOracle:
    def test_pointwise_closed_form(self, table_one):
        z = np.linspace(0.0, 10.0, 401)
        v = stable.v_alpha_eval(table_one, z)
        exact = 1.0 / (math.pi**2 + z**2)
        assert np.max(np.abs(v - exact)) <= 1e-8

    def test_at_zero(self, table_one):
        assert stable.v_alpha_eval(table_one, 0.0) == pytest.approx(1.0 / math.pi**2, abs=1e-12)


class TestDensityShape:
    def test_symmetric(self, table_three_halves):
        z = np.array([0.3, 1.7, 9.0, 60.0])
        assert np.array_equal(
            stable.v_alpha_eval(table_three_halves, z),
            stable.v_alpha_eval(table_three_halves, -z),
        )

    @pytest.mark.parametrize("fix", ["table_half", "table_one", "table_three_halves"])
    def test_samples_positive_and_strictly_decreasing(self, fix, request):
        tab = request.getfixturevalue(fix)
        assert np.all(tab.v_samples > 0.0)
        assert np.all(np.diff(tab.v_samples) < 0.0)

    def test_scipy_cross_check(self, table_half, table_three_halves):
        # independent evaluation route: scipy's stable pdf with the scale
        # sigma = c^(1/alpha) matching exp(-c|k|^alpha)
        levy_stable = pytest.importorskip("scipy.stats").levy_stable
        for tab in (table_half, table_three_halves):
            sigma = tab.c_alpha ** (1.0 / tab.alpha)
            for z in (0.0, 1.0, 5.0, 20.0):
                mine = stable.v_alpha_eval(tab, z)
                ref = levy_stable.pdf(z, tab.alpha, 0.0, loc=0.0, scale=sigma)
                assert mine == pytest.approx(ref, rel=1e-6)


class TestTailHandoff:
    def test_scan_results_are_alpha_ordered(self, table_half, table_one, table_three_halves):
        # slower tail convergence for smaller alpha: the 2% scale explodes
        # as alpha decreases (leading correction is O(z^-alpha) relative)
        assert table_half.tail_switch > 1e4
        assert 15.0 < table_one.tail_switch < 40.0
        assert 40.0 < table_three_halves.tail_switch < 100.0

    def test_deviation_small_at_handoff(self, table_one):
        z = table_one.tail_switch * 1.02
        v = stable._cos_transform(1.0, math.pi, z)
        assert abs(z**2 * v - 1.0) < 0.02

    def test_asymptote_limit_alpha_half(self, table_half):
        # z^(3/2) v(z) -> 1 but only like 1 - 4 z^(-1/2); at z = 1e4 the
        # series gives 0.96063
        z = 1.0e4
        ratio = z**1.5 * stable.v_alpha_eval(table_half, z)
        assert ratio == pytest.approx(0.96063, rel=1e-3)

    def test_midrange_uses_direct_quadrature(self, table_half):
        # between core and handoff the evaluator recomputes, not the asymptote
        z = 500.0
        direct = stable._cos_transform(0.5, table_half.c_alpha, z)
        assert stable.v_alpha_eval(table_half, z) == pytest.approx(direct, rel=1e-12)

    def test_far_field_is_power_law(self, table_half):
        z = 1.0e5
        assert stable.v_alpha_eval(table_half, z) == z ** (-1.5)


class TestMass:
    @pytest.mark.parametrize("fix", ["table_half", "table_one", "table_three_halves"])
    def test_two_routes_agree(self, fix, request):
        tab = request.getfixturevalue(fix)
        z_route, k_route = stable.density_mass_two_routes(tab)
        # total mass is 1 exactly (characteristic function at 0), and the
        # tail beyond the window is only accessible on the transform side;
        # the window integral must agree between the two routes
        assert abs(z_route - k_route) <= 1e-6


class TestSelfSimilarEvaluation:
    def test_scaling_identity(self, table_three_halves):
        t, x = 0.7, 2.3
        s = t ** (-1.0 / 1.5)
        assert stable.u_alpha_eval(table_three_halves, t, x) == pytest.approx(
            s * stable.v_alpha_eval(table_three_halves, x * s), rel=1e-14
        )

    def test_mass_invariant_in_time(self, table_one):
        # substitution z = x t^(-1/alpha) maps the t-slice integral to the
        # profile integral exactly; check the discretized version
        z = np.linspace(-50.0, 50.0, 20001)
        v = stable.v_alpha_eval(table_one, z)
        base = np.trapezoid(v, z)
        for t in (0.1, 1.0, 10.0):
            x = z * t ** (1.0 / 1.0)
            u = stable.u_alpha_eval(table_one, t, x)
            assert np.trapezoid(u, x) == pytest.approx(base, rel=1e-12)

    def test_time_positivity_checked(self, table_one):
        with pytest.raises(ParameterError):
            stable.u_alpha_eval(table_one, 0.0, 1.0)


class TestEvolveOdd:
    def test_against_exact_kernel_quadrature(self, table_one_wide):
        # alpha = 1 kernel in closed form gives an independent reference
        t, y_max = 0.1, 60.0
        x_grid = np.linspace(0.0, 8.0, 33)
        cases = [
            (lambda y: min(y, 1.0), (1.0,)),
            (lambda y: max(0.0, 1.0 - abs(y - 2.0)), (1.0, 2.0, 3.0)),
        ]
        for u0, kinks in cases:
            got = stable.evolve_odd(u0, table_one_wide, t, x_grid, y_max=y_max, kinks=kinks)
            for i in (0, 1, 7, 16, 31, 32):
                x = x_grid[i]
                f = lambda y: u0(y) * (
                    t / ((math.pi * t) ** 2 + (x - y) ** 2)
                    - t / ((math.pi * t) ** 2 + (x + y) ** 2)
                )
                ref, _ = quad(f, 0.0, y_max, points=sorted(set(kinks) | {x}), limit=400)
                assert got[i] == pytest.approx(ref, abs=1e-8)

    def test_sign_preserved(self, table_one_wide):
        x_grid = np.linspace(0.0, 5.0, 41)
        out = stable.evolve_odd(
            lambda y: y * math.exp(-(y**2)), table_one_wide, 0.1, x_grid, y_max=40.0
        )
        assert out.min() >= -1e-10

    def test_concavity_preserved(self, table_one_wide):
        x_grid = np.linspace(0.0, 5.0, 81)
        out = stable.evolve_odd(lambda y: math.tanh(y), table_one_wide, 0.1, x_grid, y_max=60.0)
        d2 = out[:-2] + out[2:] - 2.0 * out[1:-1]
        assert d2.max() <= 1e-8

    def test_alpha_three_halves_battery(self, table_three_halves):
        # arguments (x + y_max) t^(-2/3) stay inside the default core
        x_grid = np.linspace(0.0, 5.0, 41)
        out = stable.evolve_odd(
            lambda y: min(y, 1.0), table_three_halves, 0.5, x_grid, y_max=40.0, kinks=(1.0,)
        )
        assert out.min() >= -1e-10
        d2 = out[:-2] + out[2:] - 2.0 * out[1:-1]
        assert d2.max() <= 1e-8

    def test_zero_is_fixed(self, table_one_wide):
        out = stable.evolve_odd(
            lambda y: min(y, 1.0), table_one_wide, 1.0, np.array([0.0]), y_max=60.0, kinks=(1.0,)
        )
        assert out[0] == 0.0


class TestTableRoundTrip:
    def test_csv_round_trip(self, table_one, tmp_path):
        p = tmp_path / "v1.csv"
        stable.write_table_csv(table_one, p)
        back = stable.read_table_csv(p)
        assert back.alpha == table_one.alpha
        assert back.c_alpha == table_one.c_alpha
        assert back.tail_switch == table_one.tail_switch
        assert np.array_equal(back.z_samples, table_one.z_samples)
        assert np.array_equal(back.v_samples, table_one.v_samples)
        z = np.array([0.5, 7.0, 42.0])
        assert np.array_equal(
            stable.v_alpha_eval(back, z), stable.v_alpha_eval(table_one, z)
        )

    def test_rejects_missing_metadata(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("z,v\n0,0.1\n1,0.05\n", encoding="utf-8")
        with pytest.raises(FormatError):
            stable.read_table_csv(p)

    def test_rejects_malformed_row(self, table_one, tmp_path):
        p = tmp_path / "v1.csv"
        stable.write_table_csv(table_one, p)
        content = p.read_text(encoding="utf-8")
        p.write_text(content + "not,a,row\n", encoding="utf-8")
        with pytest.raises(FormatError):
            stable.read_table_csv(p)


class TestBuildValidation:
    def test_small_sample_count_rejected(self):
        with pytest.raises(ParameterError):
            stable.build_table(1.0, n_samples=64)

    def test_core_window_checked(self):
        with pytest.raises(ParameterError):
            stable.build_table(1.0, core_z_max=0.005)
