"""Γ₂, Hessians, covariant derivatives and pointwise curvature bounds."""

from __future__ import annotations

import math

import numpy as np
import pytest

from src.gamma_calc.calculus.first_order import build_cotangent, differential
from src.gamma_calc.calculus.second_order import (
    covariant_derivative,
    covariant_energy,
    curvature_estimate,
    gamma2,
    gradient_estimate,
    h_form,
    h_matrix,
    hessian,
    lie_bracket,
)
from src.gamma_calc.core.builders import cycle, icosphere, path
from src.gamma_calc.core.errors import ReconstructionError, SizeCapError, UsageError


class TestGamma2:
    def test_two_point_values(self) -> None:
        space = path(2)
        f = np.array([0.0, 1.0])
        np.testing.assert_allclose(space.gamma(f, f), [0.5, 0.5])
        np.testing.assert_allclose(gamma2(space, f, f), [1.0, 1.0])

    def test_symmetric_and_vanishes_on_constants(self, cycle8, rng) -> None:
        f, g = rng.standard_normal(8), rng.standard_normal(8)
        np.testing.assert_allclose(gamma2(cycle8, f, g), gamma2(cycle8, g, f), atol=1e-12)
        np.testing.assert_allclose(gamma2(cycle8, np.ones(8), g), 0.0, atol=1e-12)

    def test_h_matrix_matches_h_form(self, cycle8, rng) -> None:
        f = rng.standard_normal(8)
        F = rng.standard_normal((8, 3))
        H = h_matrix(cycle8, f, F)
        for a in range(3):
            for b in range(3):
                np.testing.assert_allclose(H[:, a, b], h_form(cycle8, f, F[:, a], F[:, b]), atol=1e-12)


class TestHessian:
    def test_linear_in_f(self, cycle8, rng) -> None:
        ct = build_cotangent(cycle8)
        f, g = rng.standard_normal(8), rng.standard_normal(8)
        lhs = hessian(ct, f + 2.0 * g).coeffs
        rhs = hessian(ct, f).coeffs + 2.0 * hessian(ct, g).coeffs
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)

    def test_symmetric_and_zero_on_constants(self, cycle8, rng) -> None:
        ct = build_cotangent(cycle8)
        A = hessian(ct, rng.standard_normal(8)).coeffs
        np.testing.assert_allclose(A, np.swapaxes(A, 1, 2), atol=1e-12)
        np.testing.assert_allclose(hessian(ct, np.full(8, 3.0)).coeffs, 0.0, atol=1e-12)


@pytest.fixture
def cos_only():
    theta = 2.0 * math.pi * np.arange(8) / 8
    return build_cotangent(cycle(8), np.cos(theta)[:, None], names=["cos"]), theta


class TestUnderGenerated:
    def test_strict_hessian_lists_the_points(self, cos_only) -> None:
        ct, theta = cos_only
        with pytest.raises(ReconstructionError) as exc_info:
            hessian(ct, np.sin(theta), strict=True)
        assert exc_info.value.points == list(range(8))

    def test_strict_covariant_derivative_lists_the_points(self, cos_only) -> None:
        ct, _ = cos_only
        with pytest.raises(ReconstructionError) as exc_info:
            covariant_derivative(ct, ct.generator_form(0), strict=True)
        assert exc_info.value.points == list(range(8))

    def test_lenient_calls_report_instead(self, cos_only) -> None:
        ct, theta = cos_only
        H = hessian(ct, np.sin(theta))
        assert H.residual.shape == (8,)
        assert covariant_derivative(ct, ct.generator_form(0)).coeffs.shape == (8, 1, 1)

    def test_spanning_single_generator_passes(self) -> None:
        ct = build_cotangent(path(2), np.array([[0.0], [1.0]]))
        H = hessian(ct, np.array([0.0, 2.0]), strict=True)
        assert float(H.residual.max()) == pytest.approx(0.0, abs=1e-12)


class TestCovariantDerivative:
    def test_linear_in_the_field(self, cycle8, rng) -> None:
        ct = build_cotangent(cycle8)
        X, Y = ct.bundle.random_section(rng), ct.bundle.random_section(rng)
        lhs = covariant_derivative(ct, X + Y * 3.0).coeffs
        rhs = covariant_derivative(ct, X).coeffs + 3.0 * covariant_derivative(ct, Y).coeffs
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)

    def test_bracket_is_antisymmetric(self, cycle8, rng) -> None:
        ct = build_cotangent(cycle8)
        X, Y = ct.bundle.random_section(rng), ct.bundle.random_section(rng)
        np.testing.assert_allclose(lie_bracket(ct, X, Y).coeffs, -lie_bracket(ct, Y, X).coeffs, atol=1e-12)
        np.testing.assert_allclose(lie_bracket(ct, X, X).coeffs, 0.0, atol=1e-12)

    def test_energy_is_nonnegative(self, cycle8, rng) -> None:
        ct = build_cotangent(cycle8)
        X = differential(ct, rng.standard_normal(8))
        assert covariant_energy(ct, X) >= 0.0
        assert covariant_energy(ct, ct.bundle.zero()) == pytest.approx(0.0)


class TestCurvature:
    def test_two_point_space(self) -> None:
        est = curvature_estimate(path(2))
        assert est.k_global == pytest.approx(2.0)
        assert est.bound_kind == "exact"

    def test_cycle_is_flat(self, cycle8) -> None:
        est = curvature_estimate(cycle8)
        assert est.k_global == pytest.approx(0.0, abs=1e-6)

    def test_restricted_pencil_is_an_upper_bound(self, cycle8) -> None:
        exact = curvature_estimate(cycle8)
        restricted = curvature_estimate(cycle8, restrict=True)
        assert restricted.bound_kind == "upper_bound"
        assert restricted.k_global >= exact.k_global - 1e-8

    def test_restricted_sphere_curvature_moves_toward_one(self) -> None:
        ks = [curvature_estimate(icosphere(level), restrict=True).k_global for level in (2, 3)]
        assert ks[1] > 0.0
        assert abs(ks[1] - 1.0) <= abs(ks[0] - 1.0)

    def test_dimension_term_lowers_the_bound(self, cycle8) -> None:
        k_inf = curvature_estimate(cycle8).k_global
        k_n = curvature_estimate(cycle8, "cd_n", N=2.0).k_global
        assert k_n <= k_inf + 1e-9

    def test_cd_n_needs_positive_n(self, cycle8) -> None:
        with pytest.raises(UsageError):
            curvature_estimate(cycle8, "cd_n")
        with pytest.raises(UsageError):
            curvature_estimate(cycle8, "cd_n", N=0.0)

    def test_size_cap(self, cycle8) -> None:
        from src.gamma_calc.core.config import settings

        tight = settings.with_overrides(CURVATURE_MAX_POINTS=4)
        with pytest.raises(SizeCapError):
            curvature_estimate(cycle8, restrict=False, cfg=tight)
        assert curvature_estimate(cycle8, cfg=tight).restricted


class TestGradientEstimate:
    def test_curvature_only_scales_the_right_side(self, cycle8, rng) -> None:
        f = rng.standard_normal(8)
        flat = gradient_estimate(cycle8, f, 0.3, 0.0)
        curved = gradient_estimate(cycle8, f, 0.3, 1.0)
        np.testing.assert_allclose(curved.lhs, flat.lhs)
        np.testing.assert_allclose(curved.rhs, np.exp(-0.6) * flat.rhs, rtol=1e-12)
        assert curved.violation.shape == (8,)
        assert np.all(curved.violation >= 0.0)
