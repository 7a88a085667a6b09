"""Rule catalog, refinement studies and the cheap acceptance criteria."""

from __future__ import annotations

import math

import numpy as np
import pytest

from src.gamma_calc.core.builders import grid_torus
from src.gamma_calc.core.config import settings
from src.gamma_calc.core.errors import InsufficientInputsError, UsageError
from src.gamma_calc.schemas.responses import CriterionResult
from src.gamma_calc.utils.formatters import format_json
from src.gamma_calc.verification.acceptance import (
    SUITES,
    HodgeObservation,
    betti_bound,
    brute_force_oracle,
    determinism,
    exact_algebra,
    observe_hodge,
    random_graph_space,
    run_acceptance,
)
from src.gamma_calc.verification.rules import RULE_IDS, RULES, rule_residual, run_rules, select_rules
from src.gamma_calc.verification.study import convergence_study, fitted_order


EXACT_RULES = ["weak_max", "functoriality_pullback", "ricci_total", "laplacian_leibniz", "adjointness"]


class TestCatalog:
    def test_every_rule_is_registered(self) -> None:
        assert set(RULES) == set(RULE_IDS)

    def test_selection(self) -> None:
        assert select_rules("exact") == EXACT_RULES
        assert len(select_rules("all")) == len(RULE_IDS)
        assert select_rules("adjointness,chain_rule") == ["chain_rule", "adjointness"]
        assert not set(select_rules("diffusion")) & set(EXACT_RULES)

    @pytest.mark.parametrize("spec", ["", "nope", "exact,nope"])
    def test_bad_selection(self, spec: str) -> None:
        with pytest.raises(UsageError):
            select_rules(spec)


class TestRuleResidual:
    def test_exact_rules_pass(self, cycle8) -> None:
        outcomes = run_rules(select_rules("exact"), cycle8)
        assert [o.rule for o in outcomes] == EXACT_RULES
        for o in outcomes:
            assert o.passed is True, (o.rule, o.relative)

    def test_diffusion_rules_are_reported_not_judged(self, cycle8) -> None:
        out = rule_residual("chain_rule", cycle8)
        assert out.rule_class == "diffusion"
        assert out.passed is None
        assert set(out.norms) == {"l1", "l2", "linf"}
        assert out.to_dict()["rule"] == "chain_rule"

    def test_explicit_inputs(self, cycle8, rng) -> None:
        f, g = rng.standard_normal(8), rng.standard_normal(8)
        out = rule_residual("laplacian_leibniz", cycle8, {"f": f, "g": g}, allow_auto=False)
        assert out.passed is True

    def test_functoriality_reports_the_lipschitz_ratio(self, cycle8) -> None:
        out = rule_residual("functoriality_pullback", cycle8)
        assert math.isfinite(out.metrics["lipschitz_ratio"])
        assert out.metrics["lipschitz_ratio"] >= 0.0

    def test_unknown_rule(self, cycle8) -> None:
        with pytest.raises(UsageError):
            rule_residual("nope", cycle8)

    def test_missing_inputs_without_auto(self, cycle8) -> None:
        with pytest.raises(InsufficientInputsError):
            rule_residual("laplacian_leibniz", cycle8, allow_auto=False)


class TestDiffusionResiduals:
    @pytest.mark.parametrize("rule", ["flow_derivative", "ricci_tensoriality"])
    def test_relative_residual_shrinks_on_refinement(self, rule: str) -> None:
        coarse, fine = (rule_residual(rule, grid_torus(2, res)) for res in (12, 24))
        assert fine.relative < coarse.relative
        assert fine.relative < 0.5

    def test_wedge_leibniz_covers_every_degree_pair_the_fiber_allows(self, cycle8) -> None:
        low = rule_residual("wedge_leibniz", cycle8)
        assert set(low.metrics) == {"relative_0_1", "relative_1_0"}
        high = rule_residual("wedge_leibniz", grid_torus(2, 6), params={"mode": "exact"})
        assert {"relative_1_1", "relative_0_2", "relative_2_0"} <= set(high.metrics)
        assert all(math.isfinite(v) for v in high.metrics.values())

    def test_flow_derivative_is_measured_on_a_moving_integral(self) -> None:
        out = rule_residual("flow_derivative", grid_torus(2, 12))
        # d/dt ∫f ρ dm starts near ∫Γ(f) dm = 2π² for f = sin(2πx).
        assert out.scale > 1.0


class TestFittedOrder:
    def test_second_order_decay(self) -> None:
        order, note = fitted_order([8, 16, 32], [1.0, 0.25, 0.0625], 1e-8)
        assert order == pytest.approx(2.0)
        assert note == ""

    def test_noise_floor(self) -> None:
        assert fitted_order([8, 16, 32], [1e-15, 1e-16, 0.0], 1e-8)[0] == "exact"

    @pytest.mark.parametrize("values", [[1.0, 2.0, 0.5], [1.0]])
    def test_undetermined(self, values) -> None:
        order, _ = fitted_order([8, 16, 32][: len(values)], values, 1e-8)
        assert math.isnan(order)


class TestConvergenceStudy:
    def test_exact_rule_sits_at_the_floor(self) -> None:
        (row,) = convergence_study(["laplacian_leibniz"], "cycle", [6, 8, 10])
        assert row.order == "exact"
        assert row.rule_class == "exact"
        assert len(row.values) == 3

    def test_threads_do_not_change_values(self) -> None:
        one = convergence_study(["chain_rule"], "cycle", [6, 8, 10], threads=1)
        two = convergence_study(["chain_rule"], "cycle", [6, 8, 10], threads=2)
        assert one[0].values == two[0].values

    def test_needs_three_resolutions(self) -> None:
        with pytest.raises(UsageError):
            convergence_study(["chain_rule"], "cycle", [6, 8])

    def test_unknown_rule(self) -> None:
        with pytest.raises(UsageError):
            convergence_study(["nope"], "cycle", [6, 8, 10])


class TestAcceptance:
    def test_brute_force_oracle(self) -> None:
        result = brute_force_oracle(settings)
        assert isinstance(result, CriterionResult)
        assert result.passed, result.details
        assert result.details["dim_loc"] == [1, 2, 1]

    def test_small_exact_algebra(self) -> None:
        result = exact_algebra(3, max_n=12, cfg=settings)
        assert result.name == "exact_algebra"
        assert result.passed, result.details["failures"]

    def test_exact_algebra_is_seeded(self) -> None:
        a = exact_algebra(2, max_n=10, cfg=settings)
        b = exact_algebra(2, max_n=10, cfg=settings)
        assert a.details == b.details

    def test_random_graphs_are_connected_spaces(self) -> None:
        space = random_graph_space(np.random.default_rng(3), max_n=15)
        assert 4 <= space.n <= 15
        assert np.unique(space.components).size == 1

    def test_unknown_suite(self) -> None:
        assert set(SUITES) == {"primary", "quick"}
        with pytest.raises(UsageError):
            run_acceptance("huge")


def _observation(betti: list[int], min_dim_loc: int) -> HodgeObservation:
    return HodgeObservation(
        space="torus",
        betti_eigen=list(betti),
        betti_rank=list(betti),
        gap_ratio=[100.0] * len(betti),
        conclusive=[True] * len(betti),
        min_dim_loc=min_dim_loc,
    )


class TestBettiBound:
    def test_torus_row_holds(self) -> None:
        result = betti_bound([_observation([1, 2, 1], 2), _observation([0], 2)])
        assert result.passed
        assert [r["h1"] for r in result.details["spaces"]] == [2, 0]

    def test_violation_fails(self) -> None:
        result = betti_bound([_observation([1, 2, 1], 1)])
        assert not result.passed
        assert result.details["spaces"][0]["holds"] is False

    def test_nothing_observed_fails(self) -> None:
        assert not betti_bound([]).passed

    def test_observed_min_dim_loc_is_the_smallest_rank(self, path3) -> None:
        assert observe_hodge(path3, (0, 1), settings).min_dim_loc == 1

    def test_rule_reads_the_smallest_rank(self, path3) -> None:
        out = rule_residual("betti_bound", path3, params={"K": 0.0})
        assert out.metrics["min_dim_loc"] == 1.0


class TestDeterminism:
    def test_identical_reruns_pass(self) -> None:
        first = [CriterionResult(name="a", passed=True, details={"x": 1.0})]
        result = determinism(first, lambda: [CriterionResult(name="a", passed=True, details={"x": 1.0})])
        assert result.passed
        assert result.details["mismatched"] == []
        assert result.details["bytes"] == len(format_json(first))

    def test_drift_names_the_criterion(self) -> None:
        first = [
            CriterionResult(name="a", passed=True, details={"x": 1.0}),
            CriterionResult(name="b", passed=True, details={"y": 2.0}),
        ]
        second = [
            CriterionResult(name="a", passed=True, details={"x": 1.0}),
            CriterionResult(name="b", passed=True, details={"y": 2.0000001}),
        ]
        result = determinism(first, lambda: second)
        assert not result.passed
        assert result.details["mismatched"] == ["b"]

    @pytest.mark.slow
    def test_quick_suite_reports_are_byte_identical(self) -> None:
        one = run_acceptance("quick")
        two = run_acceptance("quick")
        assert one[-1].name == "determinism"
        assert one[-1].passed, one[-1].details
        assert format_json(one) == format_json(two)
