"""Finite metric measure spaces: invariants, Γ, heat flow and spectra."""

from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import sparse

from src.gamma_calc.core.builders import cycle, grid_torus, path
from src.gamma_calc.core.errors import SpaceError, SpaceMismatchError, UsageError
from src.gamma_calc.core.space import FiniteMMSpace, carre_du_champ, dirichlet_energy, from_weights


F_PATH3 = np.array([0.0, 1.0, 3.0])


class TestInvariants:
    def test_path_generator_is_graph_laplacian(self, path3) -> None:
        expected = np.array([[-1.0, 1.0, 0.0], [1.0, -2.0, 1.0], [0.0, 1.0, -1.0]])
        np.testing.assert_allclose(path3.gen.toarray(), expected)
        assert path3.total_mass == pytest.approx(3.0)

    def test_weighted_measure_keeps_m_symmetry(self) -> None:
        W = sparse.csr_matrix(np.array([[0.0, 2.0], [2.0, 0.0]]))
        space = from_weights("two", W, np.array([1.0, 4.0]))
        L = space.gen.toarray()
        assert space.m[0] * L[0, 1] == pytest.approx(space.m[1] * L[1, 0])
        np.testing.assert_allclose(L.sum(axis=1), 0.0, atol=1e-15)

    def test_rejects_nonpositive_measure(self) -> None:
        W = sparse.csr_matrix(np.array([[0.0, 1.0], [1.0, 0.0]]))
        with pytest.raises(SpaceError, match="strictly positive"):
            from_weights("bad", W, np.array([1.0, 0.0]))

    def test_rejects_negative_rates(self) -> None:
        gen = np.array([[1.0, -1.0], [-1.0, 1.0]])
        with pytest.raises(SpaceError, match="negative off-diagonal"):
            FiniteMMSpace(name="bad", m=np.ones(2), gen=gen)

    def test_rejects_asymmetric_generator(self) -> None:
        gen = np.array([[-1.0, 1.0], [2.0, -2.0]])
        with pytest.raises(SpaceError, match="symmetric"):
            FiniteMMSpace(name="bad", m=np.ones(2), gen=gen)

    def test_rejects_triangle_violation(self) -> None:
        base = path(3)
        dist = np.array([[0.0, 1.0, 5.0], [1.0, 0.0, 1.0], [5.0, 1.0, 0.0]])
        with pytest.raises(SpaceError, match="triangle"):
            FiniteMMSpace(name="bad", m=base.m, gen=base.gen, dist=dist)

    def test_field_length_mismatch(self, path3) -> None:
        with pytest.raises(SpaceMismatchError):
            path3.apply(np.ones(4))

    def test_arrays_are_read_only(self, path3) -> None:
        with pytest.raises(ValueError):
            path3.m[0] = 2.0


class TestCarreDuChamp:
    def test_path3_hand_values(self, path3) -> None:
        np.testing.assert_allclose(path3.apply(F_PATH3), [1.0, 1.0, -2.0])
        np.testing.assert_allclose(path3.gamma(F_PATH3, F_PATH3), [0.5, 2.5, 2.0])
        assert float(path3.integrate(path3.gamma(F_PATH3, F_PATH3))) == pytest.approx(5.0)
        assert dirichlet_energy(path3, F_PATH3) == pytest.approx(2.5)
        np.testing.assert_allclose(carre_du_champ(path3, F_PATH3, F_PATH3), path3.gamma(F_PATH3, F_PATH3))

    def test_matches_product_formula(self, cycle8, rng) -> None:
        f, g = rng.standard_normal(8), rng.standard_normal(8)
        L = cycle8.apply
        expected = 0.5 * (L(f * g) - f * L(g) - g * L(f))
        np.testing.assert_allclose(cycle8.gamma(f, g), expected, atol=1e-12)

    def test_columnwise_and_gamma_matrix(self, cycle8, rng) -> None:
        U = rng.standard_normal((8, 3))
        G = cycle8.gamma_matrix(U)
        assert G.shape == (8, 3, 3)
        for a in range(3):
            for b in range(3):
                np.testing.assert_allclose(G[:, a, b], cycle8.gamma(U[:, a], U[:, b]), atol=1e-12)
        np.testing.assert_allclose(cycle8.gamma(U, U)[:, 1], G[:, 1, 1], atol=1e-12)

    def test_integration_by_parts(self, cycle8, rng) -> None:
        f, g = rng.standard_normal(8), rng.standard_normal(8)
        lhs = float(cycle8.integrate(cycle8.gamma(f, g)))
        assert lhs == pytest.approx(-cycle8.inner(f, cycle8.apply(g)), abs=1e-12)


class TestHeatFlow:
    def test_zero_and_infinite_time(self, path3) -> None:
        np.testing.assert_allclose(path3.heat_flow(F_PATH3, 0.0), F_PATH3)
        np.testing.assert_allclose(path3.heat_flow(F_PATH3, math.inf), np.full(3, 4.0 / 3.0))

    def test_conserves_mass_and_stays_in_range(self, cycle8, rng) -> None:
        f = rng.uniform(0.0, 1.0, 8)
        u = cycle8.heat_flow(f, 0.3, steps=16)
        assert float(cycle8.integrate(u)) == pytest.approx(float(cycle8.integrate(f)), abs=1e-12)
        assert u.min() >= f.min() - 1e-12
        assert u.max() <= f.max() + 1e-12

    def test_spectral_agrees_with_implicit_euler(self, cycle8, rng) -> None:
        f = rng.standard_normal(8)
        exact = cycle8.heat_flow(f, 0.2, scheme="spectral")
        stepped = cycle8.heat_flow(f, 0.2, steps=2048)
        np.testing.assert_allclose(stepped, exact, atol=2e-3)

    @pytest.mark.parametrize("s, t", [(0.05, 0.1), (0.3, 0.7), (1.0, 2.5)])
    def test_spectral_semigroup(self, cycle8, rng, s: float, t: float) -> None:
        f = rng.standard_normal(8)
        twice = cycle8.heat_flow(cycle8.heat_flow(f, s, scheme="spectral"), t, scheme="spectral")
        once = cycle8.heat_flow(f, s + t, scheme="spectral")
        np.testing.assert_allclose(twice, once, atol=1e-8)

    def test_implicit_euler_semigroup_at_a_common_step(self, cycle8, rng) -> None:
        f = rng.standard_normal(8)
        twice = cycle8.heat_flow(cycle8.heat_flow(f, 0.1, steps=8), 0.2, steps=16)
        np.testing.assert_allclose(twice, cycle8.heat_flow(f, 0.3, steps=24), atol=1e-12)

    @pytest.mark.parametrize("scheme", ["spectral", "implicit_euler"])
    def test_dirichlet_energy_never_grows(self, cycle8, rng, scheme: str) -> None:
        f = rng.standard_normal(8)
        u, energies = f, [cycle8.dirichlet_energy(f)]
        for _ in range(12):
            u = cycle8.heat_flow(u, 0.05, scheme=scheme, steps=4)
            energies.append(cycle8.dirichlet_energy(u))
        assert np.all(np.diff(energies) <= 1e-12)
        assert energies[-1] < energies[0]

    def test_rejects_negative_time(self, path3) -> None:
        with pytest.raises(UsageError):
            path3.heat_flow(F_PATH3, -1.0)


class TestSpectrum:
    def test_cycle_eigenvalues(self) -> None:
        space = cycle(6)
        lam, funcs = space.low_eigenpairs(4)
        np.testing.assert_allclose(lam, [0.0, 1.0, 1.0, 3.0], atol=1e-10)
        gram = funcs.T @ (space.m[:, None] * funcs)
        np.testing.assert_allclose(gram, np.eye(4), atol=1e-10)

    def test_torus_cosine_is_an_eigenfunction(self) -> None:
        res = 8
        space = grid_torus(2, res)
        x = space.coords[:, 0]
        f = np.cos(2.0 * math.pi * x)
        h = 1.0 / res
        lam = (2.0 / h**2) * (1.0 - math.cos(2.0 * math.pi * h))
        np.testing.assert_allclose(space.apply(f), -lam * f, atol=1e-9)

    def test_components_and_describe(self, path3) -> None:
        info = path3.describe()
        assert info["n"] == 3
        assert info["edges"] == 2
        assert info["components"] == 1
        assert info["has_dist"] is True
