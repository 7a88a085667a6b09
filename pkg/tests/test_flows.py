"""Upwind transport of densities along vector fields."""

from __future__ import annotations

import math

import numpy as np
import pytest

from src.gamma_calc.calculus.first_order import build_cotangent, differential
from src.gamma_calc.calculus.flows import (
    cfl_bound,
    flow_derivative_check,
    lagrangian_flow,
    rotation_field,
    upwind_operator,
)
from src.gamma_calc.core.errors import CFLError, UsageError


@pytest.fixture
def cycle_ct(cycle8):
    return build_cotangent(cycle8)


def _gradient_field(ct, rng):
    return differential(ct, rng.standard_normal(ct.n))


class TestCFL:
    def test_zero_field_never_moves(self, cycle_ct, rng) -> None:
        X = cycle_ct.bundle.zero()
        assert cfl_bound(cycle_ct, X) == math.inf
        rho0 = rng.uniform(0.5, 1.5, 8)
        curve = lagrangian_flow(cycle_ct, X, rho0, 1.0, 3)
        np.testing.assert_allclose(curve.rho[-1], rho0)

    def test_upwind_fluxes_are_nonnegative(self, cycle_ct, rng) -> None:
        Vp = upwind_operator(cycle_ct, _gradient_field(cycle_ct, rng))
        assert Vp.shape == (8, 8)
        assert Vp.data.min(initial=0.0) >= 0.0

    def test_too_few_steps(self, cycle_ct, rng) -> None:
        X = _gradient_field(cycle_ct, rng)
        T = 10.0 * cfl_bound(cycle_ct, X)
        with pytest.raises(CFLError) as exc_info:
            lagrangian_flow(cycle_ct, X, np.ones(8), T, 1)
        needed = exc_info.value.required_steps
        assert needed >= 10
        lagrangian_flow(cycle_ct, X, np.ones(8), T, needed)


class TestTransport:
    def test_conserves_mass_and_positivity(self, cycle_ct, rng) -> None:
        X = _gradient_field(cycle_ct, rng)
        T = 0.5
        steps = int(math.ceil(T / cfl_bound(cycle_ct, X))) + 1
        curve = lagrangian_flow(cycle_ct, X, rng.uniform(0.1, 1.0, 8), T, steps)
        assert curve.max_mass_drift <= 1e-12
        assert curve.rho.min() >= 0.0
        assert curve.compression_slack >= -1e-12
        assert curve.steps == steps
        assert curve.dt == pytest.approx(T / steps)

    def test_rotation_keeps_mass(self, cycle8, cycle_ct) -> None:
        theta = 2.0 * math.pi * np.arange(8) / 8
        X = rotation_field(cycle_ct, np.cos(theta), np.sin(theta))
        steps = int(math.ceil(1.0 / cfl_bound(cycle_ct, X))) + 1
        rho0 = 1.0 + 0.5 * np.cos(theta)
        curve = lagrangian_flow(cycle_ct, X, rho0, 1.0, steps)
        assert float(cycle8.integrate(curve.rho[-1])) == pytest.approx(float(cycle8.integrate(rho0)), rel=1e-12)

    def test_derivative_along_a_resting_flow(self, cycle_ct, rng) -> None:
        curve = lagrangian_flow(cycle_ct, cycle_ct.bundle.zero(), rng.uniform(0.5, 1.5, 8), 1.0, 4)
        check = flow_derivative_check(curve, cycle_ct.generators[:, 0])
        assert check.lhs.shape == check.rhs.shape == (3,)
        np.testing.assert_allclose(check.times, curve.times[1:4])
        assert check.max_residual <= 1e-14

    def test_derivative_sides_are_sampled_inside_the_run(self, cycle_ct, rng) -> None:
        X = _gradient_field(cycle_ct, rng)
        T = 6.0 * cfl_bound(cycle_ct, X)
        curve = lagrangian_flow(cycle_ct, X, np.ones(8), T, 6)
        check = flow_derivative_check(curve, cycle_ct.generators[:, 1])
        assert check.lhs.shape == (5,)
        assert 0.0 < check.times.min() and check.times.max() < T

    def test_snapshots(self, cycle_ct, rng) -> None:
        X = _gradient_field(cycle_ct, rng)
        T = 2.5 * cfl_bound(cycle_ct, X)
        curve = lagrangian_flow(cycle_ct, X, np.ones(8), T, 5)
        report = curve.to_dict(every=2)
        assert sorted(report["snapshots"], key=int) == ["0", "2", "4", "5"]
        assert "snapshots" not in curve.to_dict()

    def test_piecewise_fields(self, cycle_ct, rng) -> None:
        X, Y = _gradient_field(cycle_ct, rng), _gradient_field(cycle_ct, rng)
        dt_max = min(cfl_bound(cycle_ct, X), cfl_bound(cycle_ct, Y))
        curve = lagrangian_flow(cycle_ct, [X, Y], np.ones(8), 3.0 * dt_max, 3)
        assert curve.field_at(0) is X
        assert curve.field_at(2) is Y

    @pytest.mark.parametrize(
        "rho0, T, steps",
        [
            (np.array([1.0, -0.1, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0]), 1.0, 10),
            (np.zeros(8), 1.0, 10),
            (np.ones(8), 0.0, 10),
            (np.ones(8), 1.0, 0),
        ],
    )
    def test_bad_inputs(self, cycle_ct, rho0, T, steps) -> None:
        with pytest.raises(UsageError):
            lagrangian_flow(cycle_ct, cycle_ct.bundle.zero(), rho0, T, steps)
