"""
Fiber bundles and their sections.

A `FiberBundle` is the finite realization of an L²-normed Hilbert module:
each point ``i`` carries a fiber of dimension ``dims[i]`` with a symmetric
positive semidefinite Gram matrix ``G_i``. Storage is padded to a common
width ``D = max(dims)``: ``gram`` has shape ``(n, D, D)`` and section
coefficients have shape ``(n, D)``, with zeros beyond ``dims[i]``.

Sections support the module operations (addition, scaling, multiplication
by functions) and the pointwise norm ``|v|(i) = √(vᵀ G_i v)``. Degenerate
Grams are allowed; the dual norm is taken on the quotient by the null
space through a pseudo-inverse.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Optional

import numpy as np

from src.gamma_calc.core.config import settings
from src.gamma_calc.core.errors import SpaceMismatchError
from src.gamma_calc.core.space import FiniteMMSpace


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class FiberBundle:
    space: FiniteMMSpace
    dims: np.ndarray
    gram: np.ndarray
    label: str = "bundle"

    def __post_init__(self) -> None:
        dims = np.asarray(self.dims, dtype=np.int64).ravel()
        gram = np.asarray(self.gram, dtype=float)
        n = self.space.n
        if dims.shape != (n,):
            raise SpaceMismatchError(f"dims has length {dims.shape[0]}, space has n={n}")
        if np.any(dims < 0):
            raise ValueError("fiber dimensions must be nonnegative")
        width = int(dims.max(initial=0))
        if gram.ndim != 3 or gram.shape[0] != n or gram.shape[1] != gram.shape[2] or gram.shape[1] < width:
            raise ValueError(f"gram shape {gram.shape} incompatible with dims (n={n}, D>={width})")
        # Symmetrize exactly; tiny asymmetries come from assembly round-off.
        gram = 0.5 * (gram + np.swapaxes(gram, 1, 2))
        mask = np.arange(gram.shape[1])[None, :] < dims[:, None]
        gram = gram * (mask[:, :, None] & mask[:, None, :])
        dims.setflags(write=False)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "gram", _frozen(gram))

    @property
    def n(self) -> int:
        return self.space.n

    @property
    def width(self) -> int:
        return int(self.gram.shape[1])

    @property
    def mask(self) -> np.ndarray:
        return np.arange(self.width)[None, :] < self.dims[:, None]

    def compatible(self, other: "FiberBundle") -> bool:
        if other is self:
            return True
        return (
            other.space is self.space
            and other.width == self.width
            and np.array_equal(other.dims, self.dims)
            and np.array_equal(other.gram, self.gram)
        )

    def section(self, coeffs: Any) -> "Section":
        return Section(self, coeffs)

    def zero(self) -> "Section":
        return Section(self, np.zeros((self.n, self.width)))

    def basis_section(self, a: int) -> "Section":
        """Section with coefficient 1 in slot ``a`` wherever the fiber has it."""
        c = np.zeros((self.n, self.width))
        c[:, a] = 1.0
        return Section(self, c)

    def random_section(self, rng: np.random.Generator) -> "Section":
        return Section(self, rng.standard_normal((self.n, self.width)))

    def to_dict(self) -> dict[str, Any]:
        return {
            "dims": self.dims.tolist(),
            "gram": [self.gram[i, : d, : d].ravel().tolist() for i, d in enumerate(self.dims)],
        }

    @classmethod
    def identity(cls, space: FiniteMMSpace, dims: np.ndarray, label: str = "bundle") -> "FiberBundle":
        dims = np.asarray(dims, dtype=np.int64)
        width = int(dims.max(initial=0))
        eye = np.broadcast_to(np.eye(width), (space.n, width, width)).copy()
        return cls(space, dims, eye, label)

    @classmethod
    def scalar(cls, space: FiniteMMSpace) -> "FiberBundle":
        return cls.identity(space, np.ones(space.n, dtype=np.int64), label="scalar")


@dataclass(frozen=True, eq=False)
class Section:
    bundle: FiberBundle
    coeffs: np.ndarray

    def __post_init__(self) -> None:
        c = np.asarray(self.coeffs, dtype=float)
        b = self.bundle
        if c.ndim == 1 and b.width == 1:
            c = c[:, None]
        if c.shape != (b.n, b.width):
            raise SpaceMismatchError(f"coefficients of shape {c.shape} do not fit fibers ({b.n}, {b.width})")
        object.__setattr__(self, "coeffs", _frozen(c * b.mask))

    # ----------------------------------------------------- module structure

    def _same(self, other: "Section") -> None:
        if not self.bundle.compatible(other.bundle):
            raise SpaceMismatchError("sections live in different bundles")

    def __add__(self, other: "Section") -> "Section":
        self._same(other)
        return Section(self.bundle, self.coeffs + other.coeffs)

    def __sub__(self, other: "Section") -> "Section":
        self._same(other)
        return Section(self.bundle, self.coeffs - other.coeffs)

    def __neg__(self) -> "Section":
        return Section(self.bundle, -self.coeffs)

    def __mul__(self, scalar: float) -> "Section":
        return Section(self.bundle, float(scalar) * self.coeffs)

    __rmul__ = __mul__

    def scale(self, f: np.ndarray) -> "Section":
        """Multiplication by a function, ``(f·v)(i) = f(i) v(i)``."""
        fv = self.bundle.space.check_field(f, "multiplier")
        return Section(self.bundle, fv[:, None] * self.coeffs)

    # --------------------------------------------------------------- norms

    def inner(self, other: "Section") -> np.ndarray:
        """Pointwise pairing ``⟨v, w⟩(i) = vᵀ G_i w``."""
        self._same(other)
        return np.einsum("na,nab,nb->n", self.coeffs, self.bundle.gram, other.coeffs)

    def norm_sq(self) -> np.ndarray:
        return np.clip(self.inner(self), 0.0, None)

    def norm(self) -> np.ndarray:
        return np.sqrt(self.norm_sq())

    def module_norm(self) -> float:
        """‖v‖ = √∫|v|² dm."""
        return math.sqrt(max(float(self.bundle.space.integrate(self.norm_sq())), 0.0))

    def module_inner(self, other: "Section") -> float:
        return float(self.bundle.space.integrate(self.inner(other)))

    def to_dict(self) -> dict[str, Any]:
        return {
            "dims": self.bundle.dims.tolist(),
            "coeffs": [self.coeffs[i, :d].tolist() for i, d in enumerate(self.bundle.dims)],
        }


def pointwise_norm(v: Section) -> np.ndarray:
    return v.norm()


def mul_function(f: np.ndarray, v: Section) -> Section:
    return v.scale(f)


# ------------------------------------------------------------------- duals


@dataclass(frozen=True, eq=False)
class DualSection:
    """Pointwise linear functional on a bundle, stored as ``a_i = G_i v_i``."""

    bundle: FiberBundle
    covector: np.ndarray

    def __call__(self, w: Section) -> np.ndarray:
        if not self.bundle.compatible(w.bundle):
            raise SpaceMismatchError("functional applied to a section of another bundle")
        return np.einsum("na,na->n", self.covector, w.coeffs)

    def dual_norm(self) -> np.ndarray:
        """|L|_* = √(aᵀ G⁺ a), the norm on the quotient by null(G)."""
        pinv = np.linalg.pinv(self.bundle.gram, rcond=settings.TOL_RANK, hermitian=True)
        val = np.einsum("na,nab,nb->n", self.covector, pinv, self.covector)
        return np.sqrt(np.clip(val, 0.0, None))

    def scale(self, f: np.ndarray) -> "DualSection":
        fv = self.bundle.space.check_field(f, "multiplier")
        return DualSection(self.bundle, fv[:, None] * self.covector)


def riesz_dual(v: Section) -> DualSection:
    return DualSection(v.bundle, np.einsum("nab,nb->na", v.bundle.gram, v.coeffs))


# ----------------------------------------------------------------- tensors


@dataclass(frozen=True, eq=False)
class TensorSection:
    """Section of ``first ⊗ second`` with per-point coefficient tables."""

    first: FiberBundle
    second: FiberBundle
    coeffs: np.ndarray

    def __post_init__(self) -> None:
        c = np.asarray(self.coeffs, dtype=float)
        shape = (self.first.n, self.first.width, self.second.width)
        if self.first.space is not self.second.space:
            raise SpaceMismatchError("tensor factors live on different spaces")
        if c.shape != shape:
            raise SpaceMismatchError(f"tensor coefficients {c.shape} do not fit {shape}")
        m = self.first.mask[:, :, None] & self.second.mask[:, None, :]
        object.__setattr__(self, "coeffs", _frozen(c * m))

    @property
    def homogeneous(self) -> bool:
        return self.first.compatible(self.second)

    def _same(self, other: "TensorSection") -> None:
        if not (self.first.compatible(other.first) and self.second.compatible(other.second)):
            raise SpaceMismatchError("tensors live in different bundles")

    def __add__(self, other: "TensorSection") -> "TensorSection":
        self._same(other)
        return TensorSection(self.first, self.second, self.coeffs + other.coeffs)

    def __sub__(self, other: "TensorSection") -> "TensorSection":
        self._same(other)
        return TensorSection(self.first, self.second, self.coeffs - other.coeffs)

    def __mul__(self, scalar: float) -> "TensorSection":
        return TensorSection(self.first, self.second, float(scalar) * self.coeffs)

    __rmul__ = __mul__

    def scale(self, f: np.ndarray) -> "TensorSection":
        fv = self.first.space.check_field(f, "multiplier")
        return TensorSection(self.first, self.second, fv[:, None, None] * self.coeffs)

    def contract(self, other: "TensorSection") -> np.ndarray:
        """Pointwise ``A:B = tr(G₁ A G₂ Bᵀ)``."""
        self._same(other)
        left = np.einsum("nab,nbc->nac", self.first.gram, self.coeffs)
        right = np.einsum("nab,ncb->nac", other.coeffs, self.second.gram)
        return np.einsum("nac,nac->n", left, right)

    def hs_norm(self) -> np.ndarray:
        return np.sqrt(np.clip(self.contract(self), 0.0, None))

    def transpose(self) -> "TensorSection":
        return TensorSection(self.second, self.first, np.swapaxes(self.coeffs, 1, 2))

    def _require_homogeneous(self, op: str) -> None:
        if not self.homogeneous:
            raise SpaceMismatchError(f"{op} is defined on a tensor square only")

    def sym(self) -> "TensorSection":
        self._require_homogeneous("sym")
        return TensorSection(self.first, self.second, 0.5 * (self.coeffs + np.swapaxes(self.coeffs, 1, 2)))

    def asym(self) -> "TensorSection":
        self._require_homogeneous("asym")
        return TensorSection(self.first, self.second, 0.5 * (self.coeffs - np.swapaxes(self.coeffs, 1, 2)))

    def apply(self, v: Section, w: Section) -> np.ndarray:
        """``A(v, w)`` pointwise, pairing through the Grams."""
        gv = np.einsum("nab,nb->na", self.first.gram, v.coeffs)
        gw = np.einsum("nab,nb->na", self.second.gram, w.coeffs)
        return np.einsum("na,nab,nb->n", gv, self.coeffs, gw)

    def trace(self) -> np.ndarray:
        """Metric trace ``tr(G A)`` for tensor squares with orthonormal-compatible Grams."""
        self._require_homogeneous("trace")
        return np.einsum("nab,nba->n", self.first.gram, self.coeffs)

    def flatten(self, bundle: Optional[FiberBundle] = None) -> Section:
        """View as a section of `tensor_product(first, second)`."""
        target = bundle or tensor_product(self.first, self.second)
        return Section(target, self.coeffs.reshape(self.first.n, -1))


def outer(v: Section, w: Section) -> TensorSection:
    return TensorSection(v.bundle, w.bundle, v.coeffs[:, :, None] * w.coeffs[:, None, :])


def tensor_product(b1: FiberBundle, b2: FiberBundle) -> FiberBundle:
    """Fiberwise tensor product; Kronecker Gram in the ``(a, b) -> a·D₂ + b`` layout.

    Slots are interleaved rather than trailing, so every point carries the
    full padded width ``D₁·D₂``; slots outside the ``(dims₁, dims₂)`` block
    have zero Gram. The fiber dimension ``dims₁·dims₂`` is recovered as the
    Gram rank (see `dimensional_decomposition`).
    """
    if b1.space is not b2.space:
        raise SpaceMismatchError("tensor product of bundles on different spaces")
    D1, D2 = b1.width, b2.width
    gram = np.einsum("nac,nbd->nabcd", b1.gram, b2.gram).reshape(b1.n, D1 * D2, D1 * D2)
    return FiberBundle(b1.space, np.full(b1.n, D1 * D2), gram, f"{b1.label}⊗{b2.label}")


def tensor_ops(A: TensorSection) -> dict[str, Any]:
    out: dict[str, Any] = {"transpose": A.transpose(), "hs_norm": A.hs_norm()}
    if A.homogeneous:
        out["sym"] = A.sym()
        out["asym"] = A.asym()
    return out
