"""Ricci densities, the integrated formula and the N-dimensional variant."""

from __future__ import annotations

import math

import numpy as np
import pytest

from src.gamma_calc.calculus.first_order import build_cotangent, differential
from src.gamma_calc.calculus.hodge import HodgeComplex
from src.gamma_calc.calculus.ricci import (
    bochner_rewrite,
    key_lemma_report,
    ricci,
    ricci_bound_report,
    ricci_n,
    ricci_total_check,
)
from src.gamma_calc.core.errors import GammaCalcError, UsageError


@pytest.fixture
def cycle_complex(cycle8) -> HodgeComplex:
    return HodgeComplex(build_cotangent(cycle8))


class TestRicci:
    def test_symmetric(self, cycle_complex, rng) -> None:
        b = cycle_complex.ct.bundle
        X, Y = b.random_section(rng), b.random_section(rng)
        np.testing.assert_allclose(
            ricci(cycle_complex, X, Y).density, ricci(cycle_complex, Y, X).density, atol=1e-10
        )

    def test_total_matches_integrated_formula(self, cycle_complex, rng) -> None:
        b = cycle_complex.ct.bundle
        X, Y = b.random_section(rng), b.random_section(rng)
        assert ricci_total_check(cycle_complex, X, Y).residual <= 1e-8

    def test_bochner_rewrite_is_ricci_minus_k(self, cycle_complex, rng) -> None:
        X = cycle_complex.ct.bundle.random_section(rng)
        expected = ricci(cycle_complex, X, X).density - 0.5 * X.norm_sq()
        np.testing.assert_allclose(bochner_rewrite(cycle_complex, X, 0.5), expected, atol=1e-10)


class TestBounds:
    def test_report_at_its_own_infimum_has_no_violations(self, cycle_complex, rng) -> None:
        X = cycle_complex.ct.bundle.random_section(rng)
        (first,) = ricci_bound_report(cycle_complex, [X], 0.0)
        (again,) = ricci_bound_report(cycle_complex, [X], first.k_ric - 1e-9)
        assert again.violation_points == []
        assert again.violation_mass == pytest.approx(0.0, abs=1e-10)
        assert first.tv >= 0.0
        assert first.to_dict()["K_ric"] == first.k_ric

    def test_unbounded_k(self, cycle_complex, rng) -> None:
        X = cycle_complex.ct.bundle.random_section(rng)
        (fb,) = ricci_bound_report(cycle_complex, [X], -math.inf)
        assert fb.tv_bound == math.inf
        assert math.isnan(fb.ehec_slack)


class TestRicciN:
    def test_infinite_dimension_has_no_correction(self, cycle_complex, rng) -> None:
        X = cycle_complex.ct.bundle.random_section(rng)
        out = ricci_n(cycle_complex, X, X, math.inf)
        np.testing.assert_allclose(out.correction, 0.0)
        np.testing.assert_allclose(out.density, ricci(cycle_complex, X, X).density, atol=1e-12)

    def test_correction_is_nonnegative_on_the_diagonal(self, cycle_complex, rng) -> None:
        X = differential(cycle_complex.ct, rng.standard_normal(8))
        out = ricci_n(cycle_complex, X, X, 3.0)
        assert np.all(out.correction >= 0.0)

    def test_rejects_small_or_nonpositive_n(self, path3) -> None:
        cx = HodgeComplex(build_cotangent(path3))
        X = cx.ct.bundle.zero()
        with pytest.raises(GammaCalcError, match="local dimension"):
            ricci_n(cx, X, X, 1.5)
        with pytest.raises(UsageError):
            ricci_n(cx, X, X, 0.0)


class TestKeyLemma:
    def test_sides_have_one_value_per_point(self, cycle_complex, rng) -> None:
        f = [rng.standard_normal(8)]
        g = [np.ones(8)]
        h = [rng.standard_normal(8)]
        rep = key_lemma_report(cycle_complex, f, g, h, 0.0)
        assert rep.lhs.shape == rep.rhs.shape == (8,)
        assert np.all(rep.violation >= 0.0)

    def test_mismatched_lists(self, cycle_complex) -> None:
        with pytest.raises(UsageError):
            key_lemma_report(cycle_complex, [np.ones(8)], [], [np.ones(8)], 0.0)
