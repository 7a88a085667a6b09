"""
Point maps between finite spaces and pullback modules.

A `PointMap` sends every point of a source space ``Y`` to a point of the
target ``X``. Finite spaces with positive weights always have a finite
compression constant, so every vertex map is of bounded compression.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from src.gamma_calc.core.errors import SpaceMismatchError, UsageError
from src.gamma_calc.core.space import FiniteMMSpace
from src.gamma_calc.modules.bundle import FiberBundle, Section

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class PointMap:
    source: FiniteMMSpace
    target: FiniteMMSpace
    phi: np.ndarray

    def __post_init__(self) -> None:
        phi = np.asarray(self.phi, dtype=np.int64).ravel()
        if phi.shape != (self.source.n,):
            raise SpaceMismatchError(f"map has {phi.shape[0]} entries, source has n={self.source.n}")
        if phi.size and (phi.min() < 0 or phi.max() >= self.target.n):
            raise UsageError(f"map values must lie in 0..{self.target.n - 1}")
        phi.setflags(write=False)
        object.__setattr__(self, "phi", phi)

    @classmethod
    def identity(cls, space: FiniteMMSpace) -> "PointMap":
        return cls(space, space, np.arange(space.n))

    @classmethod
    def constant(cls, source: FiniteMMSpace, target: FiniteMMSpace, point: int = 0) -> "PointMap":
        return cls(source, target, np.full(source.n, point))

    @cached_property
    def pushforward(self) -> np.ndarray:
        """``φ_* m_Y`` as weights on the target."""
        return np.bincount(self.phi, weights=self.source.m, minlength=self.target.n)

    @cached_property
    def compression(self) -> float:
        """Least ``C`` with ``φ_* m_Y ≤ C m_X``."""
        return float(np.max(self.pushforward / self.target.m))

    @cached_property
    def lipschitz(self) -> Optional[float]:
        """``max dist_X(φy, φy') / dist_Y(y, y')``; None without both distance tables."""
        dY, dX = self.source.dist, self.target.dist
        if dY is None or dX is None:
            return None
        num = dX[np.ix_(self.phi, self.phi)]
        off = ~np.eye(self.source.n, dtype=bool)
        if not off.any():
            return 0.0
        return float(np.max(num[off] / dY[off]))

    def compose(self, inner: "PointMap") -> "PointMap":
        """``self ∘ inner`` for ``inner: Z → Y`` and ``self: Y → X``."""
        if inner.target is not self.source:
            raise SpaceMismatchError("composition needs inner.target to be self.source")
        return PointMap(inner.source, self.target, self.phi[inner.phi])

    def pull_function(self, f: np.ndarray) -> np.ndarray:
        """``f ∘ φ``."""
        return self.target.check_field(f)[self.phi]

    def describe(self) -> dict[str, object]:
        return {
            "source": self.source.name,
            "target": self.target.name,
            "compression": self.compression,
            "lipschitz": self.lipschitz,
        }


def pullback_module(phi: PointMap, b: FiberBundle) -> FiberBundle:
    """``φ*b``: the fiber at ``y`` is the fiber of ``b`` at ``φ(y)``."""
    if b.space is not phi.target:
        raise SpaceMismatchError("bundle does not live on the map's target")
    return FiberBundle(phi.source, b.dims[phi.phi], b.gram[phi.phi], label=f"pb({b.label})")


def pullback_section(phi: PointMap, v: Section, pb: Optional[FiberBundle] = None) -> Section:
    pb = pb or pullback_module(phi, v.bundle)
    return Section(pb, v.coeffs[phi.phi])


@dataclass(frozen=True)
class InducedMap:
    """Per-point linear map ``φ*M → N`` factoring a bounded L∞-linear map."""

    source: FiberBundle
    target: FiberBundle
    # (n_Y, D_N, D_M)
    matrix: np.ndarray
    residual: float

    def __call__(self, s: Section) -> Section:
        if not self.source.compatible(s.bundle):
            raise SpaceMismatchError("section does not live in the pullback module")
        return Section(self.target, np.einsum("nab,nb->na", self.matrix, s.coeffs))


def induced_map(
    phi: PointMap,
    gens: Sequence[Section],
    images: Sequence[Section],
    pb: Optional[FiberBundle] = None,
) -> InducedMap:
    """Factor ``T(v_a) = images[a]`` through ``φ*`` on the generators ``v_a``.

    At every ``y`` the map is the minimum-norm solution of
    ``L_y c_a(φ(y)) = T(v_a)(y)``; ``residual`` is the largest mismatch on
    the generators, which vanishes when ``T`` is L∞-linear and bounded by
    ``C|v|∘φ``.
    """
    if len(gens) != len(images) or not gens:
        raise UsageError("induced_map needs matching, nonempty generator and image lists")
    pb = pb or pullback_module(phi, gens[0].bundle)
    target = images[0].bundle
    C = np.stack([pullback_section(phi, g, pb).coeffs for g in gens], axis=2)  # (n, D_M, r)
    T = np.stack([t.coeffs for t in images], axis=2)  # (n, D_N, r)
    matrix = np.einsum("nar,nrb->nab", T, np.linalg.pinv(C, rcond=1e-10))
    fitted = np.einsum("nab,nbr->nar", matrix, C)
    scale = max(float(np.max(np.abs(T), initial=0.0)), 1.0)
    residual = float(np.max(np.abs(fitted - T), initial=0.0)) / scale
    logger.debug("induced map assembled", extra={"generators": len(gens), "residual": residual})
    return InducedMap(source=pb, target=target, matrix=matrix, residual=residual)
