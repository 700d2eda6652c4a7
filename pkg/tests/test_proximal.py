"""Tests for the proximal activations, anchored on a brute-force grid oracle."""

import numpy as np
import pytest

from unfoldsr.errors import InvalidParameterError
from unfoldsr.proximal import (
    ProxParams,
    lesita_prox,
    lesita_prox_grads,
    lesita_prox_margin,
    soft_threshold,
    soft_threshold_grad,
)


def grid_minimizer(u, side, mu, step=1e-4):
    """Independent oracle: dense 1-D search of 0.5*(v-u)^2 + mu*(|v|+|v-side|)."""
    lo = min(u, side, 0.0) - 1.0
    hi = max(u, side, 0.0) + 1.0
    v = np.arange(lo, hi, step)
    f = 0.5 * (v - u) ** 2 + mu * (np.abs(v) + np.abs(v - side))
    return v[np.argmin(f)]


class TestSoftThreshold:
    def test_shrinks_above_threshold(self):
        assert soft_threshold(0.5, 0.15) == pytest.approx(0.35)

    def test_dead_zone(self):
        assert soft_threshold(0.1, 0.15) == 0.0

    def test_sign_symmetry(self):
        assert soft_threshold(-1.0, 0.15) == pytest.approx(-0.85)

    def test_rejects_negative_gamma(self):
        with pytest.raises(InvalidParameterError):
            soft_threshold(1.0, -0.1)

    def test_odd_and_contractive(self):
        rng = np.random.default_rng(7)
        u = rng.uniform(-4, 4, size=500)
        out = soft_threshold(u, 0.3)
        assert np.array_equal(soft_threshold(-u, 0.3), -out)
        assert np.all(np.abs(out) <= np.abs(u))

    def test_grad_values(self):
        assert soft_threshold_grad(0.5, 0.15) == (1.0, -1.0)
        assert soft_threshold_grad(-0.5, 0.15) == (1.0, 1.0)
        assert soft_threshold_grad(0.1, 0.15) == (0.0, 0.0)

    def test_grad_rejects_negative_gamma(self):
        with pytest.raises(InvalidParameterError):
            soft_threshold_grad(1.0, -1e-9)


class TestLesitaProx:
    # Spec'd branch examples from the five-case definitions.  Note the
    # (-2.0, -1.0, 0.25) triple: side - 2*mu = -1.5 > u, so the first case
    # (shift up) fires and the value is -1.5; mu = 0.5 is what puts u on
    # the clamp branch.
    @pytest.mark.parametrize("u, side, mu, expected", [
        (1.5, 1.0, 0.5, 1.0),     # clamp: side <= u <= side + 2mu
        (-0.5, 1.0, 0.5, 0.0),    # zero: -2mu <= u <= 0
        (3.0, 1.0, 0.5, 2.0),     # shift down: u >= side + 2mu
        (-2.0, -1.0, 0.25, -1.5),  # shift up: u < side - 2mu
        (-2.0, -1.0, 0.5, -1.0),  # clamp (side < 0): side - 2mu <= u <= side
        (0.5, 1.0, 0.1, 0.5),     # pass-through: 0 < u < side
        (-0.5, -1.0, 0.3, -0.5),  # pass-through (side < 0)
        (0.3, -1.0, 0.3, 0.0),    # zero (side < 0): 0 <= u <= 2mu
    ])
    def test_branch_examples(self, u, side, mu, expected):
        assert lesita_prox(u, side, mu) == pytest.approx(expected, abs=1e-15)
        assert grid_minimizer(u, side, mu) == pytest.approx(expected, abs=2e-4)

    def test_rejects_negative_mu(self):
        with pytest.raises(InvalidParameterError):
            lesita_prox(1.0, 1.0, -0.5)
        with pytest.raises(InvalidParameterError):
            lesita_prox_grads(1.0, 1.0, -0.5)

    def test_matches_grid_oracle(self):
        rng = np.random.default_rng(2024)
        for _ in range(300):
            u = rng.uniform(-5, 5)
            side = rng.uniform(-3, 3)
            mu = rng.uniform(0, 1.5)
            assert abs(lesita_prox(u, side, mu) - grid_minimizer(u, side, mu)) <= 1e-4

    def test_degenerate_side_equals_double_soft_threshold_exactly(self):
        u = np.arange(-5.0, 5.0 + 1e-12, 1e-3)
        for mu in (0.0, 0.15, 0.7):
            diff = lesita_prox(u, 0.0, mu) - soft_threshold(u, 2 * mu)
            assert np.max(np.abs(diff)) == 0.0

    def test_point_symmetry(self):
        rng = np.random.default_rng(5)
        u = rng.uniform(-5, 5, size=2000)
        side = rng.uniform(-3, 3, size=2000)
        for mu in (0.0, 0.2, 0.9):
            assert np.array_equal(lesita_prox(-u, -side, mu), -lesita_prox(u, side, mu))

    def test_nonexpansive_in_u(self):
        rng = np.random.default_rng(11)
        for _ in range(300):
            u1, u2 = rng.uniform(-5, 5, size=2)
            side = rng.uniform(-3, 3)
            mu = rng.uniform(0, 1.5)
            gap = abs(lesita_prox(u1, side, mu) - lesita_prox(u2, side, mu))
            assert gap <= abs(u1 - u2) + 1e-15

    def test_fixed_point_at_side(self):
        for side in (0.25, 1.0, 2.5):
            for mu in (0.0, 0.15, 1.0):
                assert lesita_prox(side, side, mu) == side

    def test_vectorized_matches_scalar(self):
        rng = np.random.default_rng(3)
        u = rng.uniform(-4, 4, size=64)
        side = rng.uniform(-2, 2, size=64)
        vec = lesita_prox(u, side, 0.4)
        scalars = np.array([lesita_prox(ui, si, 0.4) for ui, si in zip(u, side)])
        assert np.array_equal(vec, scalars)


class TestLesitaProxGrads:
    @pytest.mark.parametrize("u, side, mu, expected", [
        (3.0, 1.0, 0.5, (1.0, 0.0, -2.0)),   # shift down
        (1.5, 1.0, 0.5, (0.0, 1.0, 0.0)),    # clamp to side
        (-0.5, 1.0, 0.5, (0.0, 0.0, 0.0)),   # zero
        (-3.0, 1.0, 0.5, (1.0, 0.0, 2.0)),   # shift up
        (0.5, 1.0, 0.2, (1.0, 0.0, 0.0)),    # pass-through
    ])
    def test_branch_grads(self, u, side, mu, expected):
        assert lesita_prox_grads(u, side, mu) == expected

    def test_matches_central_differences_away_from_kinks(self):
        rng = np.random.default_rng(17)
        h = 1e-6
        checked = 0
        while checked < 400:
            u = rng.uniform(-5, 5)
            side = rng.uniform(-3, 3)
            mu = rng.uniform(1e-2, 1.5)
            if lesita_prox_margin(u, side, mu) <= 1e-3:
                continue
            checked += 1
            d_du, d_dside, d_dmu = lesita_prox_grads(u, side, mu)
            fd_u = (lesita_prox(u + h, side, mu) - lesita_prox(u - h, side, mu)) / (2 * h)
            fd_side = (lesita_prox(u, side + h, mu) - lesita_prox(u, side - h, mu)) / (2 * h)
            fd_mu = (lesita_prox(u, side, mu + h) - lesita_prox(u, side, mu - h)) / (2 * h)
            for analytic, numeric in ((d_du, fd_u), (d_dside, fd_side), (d_dmu, fd_mu)):
                assert abs(analytic - numeric) <= 1e-6 * max(abs(analytic), abs(numeric), 1.0)

    def test_boundary_uses_first_matching_branch(self):
        # u exactly at side (side > 0): the clamp case is the first match,
        # so the derivative is (0, 1, 0) even though pass-through abuts it.
        assert lesita_prox_grads(1.0, 1.0, 0.5) == (0.0, 1.0, 0.0)
        # u exactly at 0 with side >= 0: zero branch wins.
        assert lesita_prox_grads(0.0, 1.0, 0.5) == (0.0, 0.0, 0.0)


class TestProxParams:
    def test_accepts_zero(self):
        assert ProxParams(0.0).threshold == 0.0

    def test_rejects_negative(self):
        with pytest.raises(InvalidParameterError):
            ProxParams(-0.01)
