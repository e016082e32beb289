"""Second-difference identities.

The capped weight theta_R(z) = 1 ^ R/z and the hinge (r-z)_+ differ from
the cap z ^ r by affine functions, which second differences annihilate;
that is why the same closed form shows up with opposite signs below.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kinprof.secdiff import (
    D2,
    D2star,
    D2star_capped_closed_form,
    delta2,
    delta2_kernel_identity_check,
)


class TestDelta2:
    def test_affine_killed(self):
        f = lambda z: 3.0 * z + 1.0
        assert delta2(f, 5.0, 2.0) == 0.0
        assert delta2(f, -1.0, 0.3) == 0.0

    def test_square(self):
        # (x+y)^2 + (x-y)^2 - 2x^2 = 2y^2
        assert delta2(lambda z: z * z, 5.0, 2.0) == pytest.approx(8.0, abs=1e-12)

    def test_cube(self):
        # expansion gives 6 x y^2
        assert delta2(lambda z: z**3, 2.0, 1.0) == pytest.approx(12.0, abs=1e-12)


class TestD2:
    def test_constants_and_identity(self):
        assert D2(lambda z: 1.0, 0.3, 0.9) == 0.0
        # (x+y) + |x-y| = 2 max(x,y), the conservation mechanism
        for x, y in [(0.3, 0.9), (2.0, 2.0), (5.0, 0.0)]:
            assert D2(lambda z: z, x, y) == pytest.approx(0.0, abs=1e-15)

    def test_cap_matches_closed_form(self):
        # D2 of z ^ r equals the nonpositive closed form; the hinge
        # (r-z)_+ = r - z ^ r therefore gives the same value negated
        r, x, y = 1.0, 0.7, 0.6
        cap = lambda z: min(z, r)
        hinge = lambda z: max(r - z, 0.0)
        assert D2(cap, x, y) == pytest.approx(-0.3, abs=1e-14)
        assert D2(hinge, x, y) == pytest.approx(0.3, abs=1e-14)

    @given(st.floats(0.0, 10.0), st.floats(0.0, 10.0))
    @settings(max_examples=200, deadline=None)
    def test_symmetric(self, x, y):
        phi = lambda z: math.sqrt(z) / (1.0 + z)
        assert D2(phi, x, y) == D2(phi, y, x)

    @given(st.floats(0.0, 20.0), st.floats(0.0, 20.0), st.integers(0, 3))
    @settings(max_examples=300, deadline=None)
    def test_concave_gives_nonpositive(self, x, y, which):
        phi = [
            lambda z: math.sqrt(z),
            lambda z: math.log1p(z),
            lambda z: z / (1.0 + z),
            lambda z: 1.0 - math.exp(-z),
        ][which]
        assert D2(phi, x, y) <= 1e-12


class TestD2star:
    def test_constant_theta(self):
        assert D2star(lambda z: 1.0, 0.7, 0.6) == pytest.approx(0.0, abs=1e-15)

    def test_capped_example(self):
        R = 1.0
        theta = lambda z: min(1.0, R / z)
        assert D2star(theta, 0.7, 0.6) == pytest.approx(-0.3, abs=1e-14)

    def test_support_boundary(self):
        R = 1.0
        theta = lambda z: min(1.0, R / z)
        # x = y = 0.5: (x+y-R)_+ = 0, so the closed form vanishes
        assert D2star(theta, 0.5, 0.5) == pytest.approx(0.0, abs=1e-15)

    def test_closed_form_bulk(self):
        # three-point evaluation against the closed form on 10^4 samples
        rng = np.random.default_rng(2024)
        n = 10_000
        x = 3.0 * rng.random(n)
        y = 3.0 * rng.random(n)
        R = 0.5 + 1.5 * rng.random(n)
        got = np.empty(n)
        for i in range(n):
            theta = lambda z, Ri=R[i]: min(1.0, Ri / z)
            got[i] = D2star(theta, x[i], y[i])
        want = np.array(
            [D2star_capped_closed_form(R[i], x[i], y[i]) for i in range(n)]
        )
        assert np.max(np.abs(got - want)) <= 1e-14

    def test_uniform_and_lipschitz_bounds(self):
        # |D2star[theta]| <= 4 sup|theta| and <= 2 Lip(z theta) (x ^ y)
        rng = np.random.default_rng(5)
        for _ in range(200):
            x, y = 5.0 * rng.random(2)
            R = 0.3 + 2.0 * rng.random()
            v = abs(float(D2star_capped_closed_form(R, x, y)))
            assert v <= 4.0 + 1e-12          # sup of theta_R is 1
            assert v <= 2.0 * min(x, y) + 1e-12  # z theta_R has slope 1


class TestKernelIdentity:
    def test_square(self):
        f = lambda z: z * z
        d2f = lambda z: 2.0
        assert delta2_kernel_identity_check(f, d2f, 3.0, 1.0) <= 1e-10

    def test_sine(self):
        assert delta2_kernel_identity_check(math.sin, lambda z: -math.sin(z), 1.0, 0.5) <= 1e-8

    def test_affine(self):
        f = lambda z: 2.0 * z - 5.0
        d2f = lambda z: 0.0
        assert delta2_kernel_identity_check(f, d2f, 0.2, 0.8) <= 1e-14

    def test_random_points_batch(self):
        rng = np.random.default_rng(99)
        for f, d2f in [
            (lambda z: z * z, lambda z: 2.0),
            (lambda z: z**3, lambda z: 6.0 * z),
            (math.sin, lambda z: -math.sin(z)),
        ]:
            x = rng.uniform(-2.0, 2.0, 100)
            y = rng.uniform(0.0, 2.0, 100)
            worst = max(
                delta2_kernel_identity_check(f, d2f, xi, yi) for xi, yi in zip(x, y)
            )
            assert worst <= 1e-8
