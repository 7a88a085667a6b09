"""Fiber bundles, exterior powers, generated submodules and pullbacks."""

from __future__ import annotations

import numpy as np
import pytest

from src.gamma_calc.core.builders import path
from src.gamma_calc.core.errors import SpaceMismatchError, UsageError
from src.gamma_calc.modules import (
    FiberBundle,
    PointMap,
    Section,
    dimensional_decomposition,
    exterior_power,
    generated_submodule,
    induced_map,
    pullback_module,
    pullback_section,
    riesz_dual,
    wedge,
    wedge_forms,
)
from src.gamma_calc.modules.bundle import mul_function, outer, pointwise_norm, tensor_ops, tensor_product
from src.gamma_calc.modules.exterior import compound, subsets


def _spd_bundle(space, width: int, rng: np.random.Generator) -> FiberBundle:
    A = rng.standard_normal((space.n, width, width))
    gram = np.einsum("nab,ncb->nac", A, A) + 0.5 * np.eye(width)
    return FiberBundle(space, np.full(space.n, width), gram)


class TestSections:
    def test_module_operations(self, rng) -> None:
        space = path(4)
        b = FiberBundle.identity(space, np.array([1, 2, 2, 1]))
        v, w = b.random_section(rng), b.random_section(rng)
        f = rng.standard_normal(4)
        # Padding beyond the fiber dimension is zeroed.
        assert v.coeffs[0, 1] == 0.0
        np.testing.assert_allclose((v + w).scale(f).coeffs, v.scale(f).coeffs + w.scale(f).coeffs)
        np.testing.assert_allclose((2.0 * v).norm(), 2.0 * v.norm())
        np.testing.assert_allclose(v.scale(f).norm(), np.abs(f) * v.norm(), atol=1e-12)

    def test_module_norm_integrates_pointwise_norm(self, rng) -> None:
        space = path(3)
        b = _spd_bundle(space, 2, rng)
        v = b.random_section(rng)
        assert v.module_norm() ** 2 == pytest.approx(float(space.integrate(v.norm_sq())))

    def test_shape_and_bundle_mismatch(self, rng) -> None:
        space = path(3)
        b = FiberBundle.identity(space, np.full(3, 2))
        with pytest.raises(SpaceMismatchError):
            Section(b, np.zeros((3, 3)))
        other = FiberBundle.identity(space, np.full(3, 1))
        with pytest.raises(SpaceMismatchError):
            b.random_section(rng) + other.random_section(rng)

    def test_riesz_dual_is_isometric(self, rng) -> None:
        space = path(3)
        b = _spd_bundle(space, 3, rng)
        v = b.random_section(rng)
        dual = riesz_dual(v)
        np.testing.assert_allclose(dual.dual_norm(), v.norm(), rtol=1e-8)
        w = b.random_section(rng)
        np.testing.assert_allclose(dual(w), v.inner(w), atol=1e-12)

    def test_dual_norm_on_degenerate_gram(self) -> None:
        space = path(2)
        gram = np.broadcast_to(np.diag([1.0, 0.0]), (2, 2, 2)).copy()
        b = FiberBundle(space, np.full(2, 2), gram)
        v = Section(b, np.array([[3.0, 5.0], [0.0, 1.0]]))
        # The null direction carries no norm.
        np.testing.assert_allclose(v.norm(), [3.0, 0.0])
        np.testing.assert_allclose(riesz_dual(v).dual_norm(), [3.0, 0.0], atol=1e-12)


class TestTensors:
    def test_outer_contract_and_parts(self, rng) -> None:
        space = path(3)
        b = FiberBundle.identity(space, np.full(3, 3))
        v, w = b.random_section(rng), b.random_section(rng)
        T = outer(v, w)
        np.testing.assert_allclose(T.contract(T), v.norm_sq() * w.norm_sq(), rtol=1e-10)
        np.testing.assert_allclose((T.sym() + T.asym()).coeffs, T.coeffs)
        np.testing.assert_allclose(T.trace(), v.inner(w), atol=1e-12)
        np.testing.assert_allclose(T.apply(v, w), v.norm_sq() * w.norm_sq(), rtol=1e-10)

    def test_free_function_forms(self, rng) -> None:
        b = FiberBundle.identity(path(3), np.full(3, 2))
        v, w = b.random_section(rng), b.random_section(rng)
        f = rng.standard_normal(3)
        np.testing.assert_allclose(pointwise_norm(v), v.norm())
        np.testing.assert_allclose(mul_function(f, v).coeffs, v.scale(f).coeffs)
        ops = tensor_ops(outer(v, w))
        assert set(ops) == {"transpose", "hs_norm", "sym", "asym"}
        np.testing.assert_allclose(ops["hs_norm"], v.norm() * w.norm(), rtol=1e-10)
        np.testing.assert_allclose(ops["transpose"].coeffs, outer(w, v).coeffs)

    def test_tensor_product_rank(self) -> None:
        space = path(2)
        b = FiberBundle.identity(space, np.array([1, 2]))
        dec = dimensional_decomposition(tensor_product(b, b))
        assert dec.dim_loc.tolist() == [1, 4]
        assert dec.histogram() == {1: 1, 4: 1}


class TestExterior:
    def test_colex_order(self) -> None:
        assert subsets(4, 2) == ((0, 1), (0, 2), (1, 2), (0, 3), (1, 3), (2, 3))
        assert subsets(3, 4) == ()

    def test_compound_of_identity(self) -> None:
        np.testing.assert_allclose(compound(np.eye(4), 2), np.eye(6))
        assert compound(np.eye(3), 0).shape == (1, 1)

    def test_dimensions(self) -> None:
        space = path(3)
        b = FiberBundle.identity(space, np.array([1, 2, 3]))
        assert exterior_power(b, 2).bundle.dims.tolist() == [0, 1, 3]
        assert exterior_power(b, 0).bundle.dims.tolist() == [1, 1, 1]

    def test_wedge_alternates_and_measures_area(self, rng) -> None:
        space = path(3)
        b = FiberBundle.identity(space, np.full(3, 3))
        ext = exterior_power(b, 2)
        v, w = b.random_section(rng), b.random_section(rng)
        vw, wv = wedge(ext, [v, w]), wedge(ext, [w, v])
        np.testing.assert_allclose(vw.coeffs, -wv.coeffs)
        np.testing.assert_allclose(wedge(ext, [v, v]).coeffs, 0.0, atol=1e-12)
        area_sq = v.norm_sq() * w.norm_sq() - v.inner(w) ** 2
        np.testing.assert_allclose(vw.norm_sq(), area_sq, rtol=1e-9, atol=1e-12)

    def test_wedge_forms_matches_wedge(self, rng) -> None:
        space = path(3)
        b = FiberBundle.identity(space, np.full(3, 3))
        ext = exterior_power(b, 2)
        v, w = b.random_section(rng), b.random_section(rng)
        np.testing.assert_allclose(wedge_forms(v, 1, w, 1, ext).coeffs, wedge(ext, [v, w]).coeffs, atol=1e-12)


class TestSubmodules:
    def test_rank_of_generated_span(self, rng) -> None:
        space = path(3)
        b = _spd_bundle(space, 3, rng)
        v, w = b.random_section(rng), b.random_section(rng)
        assert generated_submodule(b, [v, v * 2.0]).rank.tolist() == [1, 1, 1]
        sub = generated_submodule(b, [v, w, v + w])
        assert sub.rank.tolist() == [2, 2, 2]
        e0, e1 = sub.frame_sections()
        np.testing.assert_allclose(e0.norm_sq(), 1.0, rtol=1e-8)
        np.testing.assert_allclose(e0.inner(e1), 0.0, atol=1e-8)

    def test_zero_generator_has_rank_zero(self) -> None:
        space = path(2)
        b = FiberBundle.identity(space, np.full(2, 2))
        v = Section(b, np.array([[1.0, 0.0], [0.0, 0.0]]))
        assert generated_submodule(b, [v]).rank.tolist() == [1, 0]


class TestPullback:
    def test_point_map_basics(self) -> None:
        space = path(3)
        ident = PointMap.identity(space)
        assert ident.compression == pytest.approx(1.0)
        assert ident.lipschitz == pytest.approx(1.0)
        const = PointMap.constant(space, space, 1)
        assert const.compression == pytest.approx(3.0)
        assert const.lipschitz == pytest.approx(0.0)
        with pytest.raises(UsageError):
            PointMap(space, space, np.array([0, 1, 3]))

    def test_composition(self) -> None:
        space = path(3)
        phi = PointMap(space, space, np.array([2, 1, 0]))
        psi = PointMap(space, space, np.array([0, 0, 1]))
        assert phi.compose(psi).phi.tolist() == [2, 2, 1]
        f = np.array([10.0, 20.0, 30.0])
        np.testing.assert_allclose(phi.compose(psi).pull_function(f), psi.pull_function(phi.pull_function(f)))

    def test_pullback_module_and_sections(self, rng) -> None:
        space = path(3)
        b = FiberBundle.identity(space, np.array([1, 2, 3]))
        phi = PointMap(space, space, np.array([2, 2, 0]))
        pb = pullback_module(phi, b)
        assert pb.dims.tolist() == [3, 3, 1]
        v = b.random_section(rng)
        np.testing.assert_allclose(pullback_section(phi, v, pb).norm(), v.norm()[phi.phi])

    def test_induced_map_reproduces_images(self, rng) -> None:
        space = path(3)
        b = FiberBundle.identity(space, np.full(3, 2))
        phi = PointMap.identity(space)
        gens = [b.basis_section(0), b.basis_section(1)]
        images = [g.scale(np.array([1.0, 2.0, 3.0])) for g in gens]
        T = induced_map(phi, gens, images)
        assert T.residual == pytest.approx(0.0, abs=1e-12)
        v = b.random_section(rng)
        np.testing.assert_allclose(T(pullback_section(phi, v, T.source)).coeffs, v.scale(np.array([1.0, 2.0, 3.0])).coeffs)
