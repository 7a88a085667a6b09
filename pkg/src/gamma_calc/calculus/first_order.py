"""
First-order calculus: the cotangent bundle built from the carré du champ.

Construction
------------
For generator functions ``g_1..g_r`` the stencil at point ``i`` is the
``deg(i) × r`` matrix

    D_i[s, a] = √(½ L_ie) · (g_a(head_e) − g_a(i)),    e the s-th out-edge,

so that ``D_iᵀ D_i`` is the Γ Gram matrix ``Γ(g_a, g_b)(i)``. A thin SVD
``D_i = U S Vᵀ`` gives the fiber: the kept right-singular directions,
with orthonormal coordinates. In these coordinates

    dg_a = Φ[:, a],   Φ = S Vᵀ        (every generator, exactly)
    df   = U_kᵀ δf_i                  (any function, δf its edge stencil)

and ``Ψ = S⁻¹ Vᵀ`` is the minimum-norm inverse used to read a 1-form back
in the generator basis. ``|df|² ≤ Γ(f, f)`` pointwise with equality
exactly when ``δf`` lies in the kept column space; the gap is the span
defect, and ``|df|² + |P⊥δf|² = Γ(f, f)`` with ``P⊥`` the projector
onto the dropped stencil directions (:attr:`CotangentBundle.dropped`).

Two rank modes:

* ``exact``: keep singular values above ``TOL_RANK`` times the largest
  over the space. This is the Γ-Gram quotient itself.
* ``resolved`` (default for embedded meshes): keep directions above
  ``RESOLVED_RANK_TOL`` times the local maximum. Mesh stencils carry
  second-order content in their small singular directions; dropping it
  leaves the geometric fiber of the sampled manifold.

Public API:

* :func:`build_cotangent(space, gens)` → :class:`CotangentBundle`
* :func:`differential`, :func:`gradient`, :func:`divergence`
* :func:`span_defect`, :func:`sobolev_norm`
* :class:`FormRepresentation`, :func:`map_pullback_forms`,
  :func:`map_differential`
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Literal, Optional, Sequence

import numpy as np
from scipy import sparse

from src.gamma_calc.core.config import Settings, settings as default_settings
from src.gamma_calc.core.errors import SpaceMismatchError, SpanError, UsageError
from src.gamma_calc.core.space import FiniteMMSpace
from src.gamma_calc.modules.bundle import FiberBundle, Section
from src.gamma_calc.modules.pullback import PointMap, pullback_module
from src.gamma_calc.modules.submodule import DimensionalDecomposition, decomposition_from_ranks

logger = logging.getLogger(__name__)

RankMode = Literal["auto", "exact", "resolved"]


# ---------------------------------------------------------------- generators


def auto_generators(
    space: FiniteMMSpace, count: Optional[int] = None, *, cfg: Optional[Settings] = None
) -> tuple[np.ndarray, list[str]]:
    """Default generator frame for ``space``.

    Embedded builders contribute their coordinate functions (periodic boxes
    the pair ``sin, cos`` of each angle). Other spaces use the lowest
    nonconstant eigenfunctions of ``−L``; ``count`` adds that many
    eigenfunctions on top of the coordinates, or replaces the automatic
    eigenfunction count otherwise.
    """
    cfg = cfg or default_settings
    if count is None and cfg.GENERATOR_COUNT:
        count = cfg.GENERATOR_COUNT
    cols: list[np.ndarray] = []
    names: list[str] = []
    if space.embedded and space.coords is not None:
        X = space.coords
        if space.periods:
            for k, side in enumerate(space.periods):
                angle = 2.0 * math.pi * X[:, k] / side
                cols += [np.sin(angle), np.cos(angle)]
                names += [f"sin{k}", f"cos{k}"]
        else:
            for k in range(X.shape[1]):
                cols.append(X[:, k].copy())
                names.append("xyz"[k] if k < 3 else f"x{k}")
        extra = count or 0
    else:
        extra = count if count is not None else min(space.n - 1, 3 * space.expected_dim + 2)
    extra = max(0, min(int(extra), space.n - 1))
    if extra:
        _, vec = space.low_eigenpairs(extra + 1, cfg=cfg)
        for j in range(1, vec.shape[1]):
            cols.append(vec[:, j])
            names.append(f"eig{j}")
    if not cols:
        raise UsageError("no generators available; pass explicit functions or a positive count")
    return np.column_stack(cols), names


# ----------------------------------------------------------- the bundle


@dataclass(frozen=True, eq=False)
class CotangentBundle:
    space: FiniteMMSpace
    generators: np.ndarray
    names: tuple[str, ...]
    mode: str
    bundle: FiberBundle
    # (n, degmax, K): kept left-singular directions of the stencil.
    U: np.ndarray
    sigma: np.ndarray
    # (n, K, r): dg_a coefficients and their minimum-norm inverse.
    phi: np.ndarray
    psi: np.ndarray
    cfg: Settings = field(repr=False, default_factory=lambda: default_settings)

    @property
    def n(self) -> int:
        return self.space.n

    @property
    def rank(self) -> np.ndarray:
        return self.bundle.dims

    @property
    def width(self) -> int:
        return self.bundle.width

    @property
    def generator_count(self) -> int:
        return int(self.generators.shape[1])

    @cached_property
    def edge_weight(self) -> np.ndarray:
        return np.sqrt(0.5 * self.space.edges.rate)

    def stencil(self, f: np.ndarray) -> np.ndarray:
        """Padded ``δf``: ``(n, degmax)`` (or ``(n, degmax, p)`` for 2-d input)."""
        arr = self.space.check_field(f)
        e = self.space.edges
        diff = arr[e.head] - arr[e.tail]
        w = self.edge_weight.reshape((-1,) + (1,) * (diff.ndim - 1))
        out = np.zeros((self.n, e.max_degree) + arr.shape[1:])
        out[e.tail, e.slot] = w * diff
        return out

    @cached_property
    def dropped(self) -> np.ndarray:
        """``(n, degmax, degmax)`` projector onto the stencil directions the fiber leaves out."""
        e = self.space.edges
        width = self.U.shape[1]
        valid = np.zeros((self.n, width))
        valid[e.tail, e.slot] = 1.0
        P = valid[:, :, None] * np.eye(width)[None] - np.einsum("nsk,ntk->nst", self.U, self.U)
        P[np.abs(P) < 1e-12] = 0.0
        return P

    @cached_property
    def under_generated(self) -> np.ndarray:
        """Exact-mode points whose fiber is smaller than their edge count."""
        if self.mode != "exact":
            return np.zeros(0, dtype=np.int64)
        degree = np.bincount(self.space.edges.tail, minlength=self.n)
        return np.flatnonzero(self.rank < degree)

    def decomposition(self) -> DimensionalDecomposition:
        return decomposition_from_ranks(self.rank)

    def generator_form(self, a: int) -> Section:
        return Section(self.bundle, self.phi[:, :, a])

    def describe(self) -> dict[str, object]:
        return {
            "mode": self.mode,
            "generators": list(self.names),
            "generator_count": self.generator_count,
            "max_rank": self.width,
            "rank_histogram": {str(k): v for k, v in self.decomposition().histogram().items()},
        }

    @cached_property
    def d0(self) -> sparse.csr_matrix:
        """The differential as a sparse ``(n·K, n)`` operator in padded layout."""
        e = self.space.edges
        K = self.width
        if K == 0 or e.count == 0:
            return sparse.csr_matrix((self.n * K, self.n))
        q = self.U[e.tail, e.slot, :] * self.edge_weight[:, None]  # (E, K)
        rows = (e.tail[:, None] * K + np.arange(K)[None, :]).ravel()
        heads = np.repeat(e.head, K)
        tails = np.repeat(e.tail, K)
        data = q.ravel()
        A = sparse.coo_matrix(
            (np.concatenate([data, -data]), (np.concatenate([rows, rows]), np.concatenate([heads, tails]))),
            shape=(self.n * K, self.n),
        )
        return A.tocsr()


def build_cotangent(
    space: FiniteMMSpace,
    gens: Optional[np.ndarray | Sequence[np.ndarray]] = None,
    *,
    names: Optional[Sequence[str]] = None,
    count: Optional[int] = None,
    mode: RankMode = "auto",
    cfg: Optional[Settings] = None,
) -> CotangentBundle:
    """Cotangent bundle generated by ``gens`` (auto frame when omitted)."""
    cfg = cfg or default_settings
    if gens is None:
        G, gen_names = auto_generators(space, count, cfg=cfg)
    else:
        if isinstance(gens, (list, tuple)):
            G = np.column_stack([np.asarray(g, dtype=float) for g in gens]) if gens else np.zeros((space.n, 0))
        else:
            G = np.asarray(gens, dtype=float)
        if G.ndim == 1:
            G = G[:, None]
        space.check_field(G, "generators")
        gen_names = list(names) if names is not None else [f"g{a}" for a in range(G.shape[1])]
    if G.shape[1] == 0:
        raise UsageError("build_cotangent needs at least one generator")
    if mode == "auto":
        mode = "resolved" if space.embedded else "exact"
    if mode not in ("exact", "resolved"):
        raise UsageError(f"unknown rank mode {mode!r}")

    e = space.edges
    r = G.shape[1]
    degmax = max(e.max_degree, 1)
    D = np.zeros((space.n, degmax, r))
    if e.count:
        w = np.sqrt(0.5 * e.rate)
        D[e.tail, e.slot, :] = w[:, None] * (G[e.head] - G[e.tail])
    U, S, Vt = np.linalg.svd(D, full_matrices=False)

    global_max = max(float(S.max(initial=0.0)), cfg.RESIDUAL_FLOOR)
    keep = S > cfg.TOL_RANK * global_max
    if mode == "resolved":
        local_max = S[:, :1]
        keep &= S > cfg.RESOLVED_RANK_TOL * local_max
    rank = keep.sum(axis=1).astype(np.int64)
    K = int(rank.max(initial=0))

    U = (U * keep[:, None, :])[:, :, :K]
    Sk = np.where(keep, S, 0.0)[:, :K]
    Vk = (np.swapaxes(Vt, 1, 2) * keep[:, None, :])[:, :, :K]  # (n, r, K)
    phi = np.swapaxes(Vk * Sk[:, None, :], 1, 2)
    inv = np.where(Sk > 0, 1.0 / np.where(Sk > 0, Sk, 1.0), 0.0)
    psi = np.swapaxes(Vk * inv[:, None, :], 1, 2)

    bundle = FiberBundle.identity(space, rank, label="T*")
    ct = CotangentBundle(
        space=space,
        generators=G,
        names=tuple(gen_names),
        mode=mode,
        bundle=bundle,
        U=U,
        sigma=Sk,
        phi=phi,
        psi=psi,
        cfg=cfg,
    )
    logger.info(
        "cotangent bundle built",
        extra={"space": space.name, "mode": mode, "generators": r, "max_rank": K},
    )
    return ct


# ----------------------------------------------------------- differential


def span_defect(ct: CotangentBundle, f: np.ndarray) -> np.ndarray:
    """``Γ(f,f) − |df|²`` per point, relative to ``max Γ(f,f)``."""
    g = ct.space.gamma(f, f)
    c = np.einsum("nsk,ns->nk", ct.U, ct.stencil(f))
    gap = np.clip(g - np.einsum("nk,nk->n", c, c), 0.0, None)
    return gap / max(float(g.max(initial=0.0)), ct.cfg.RESIDUAL_FLOOR)


def differential(ct: CotangentBundle, f: np.ndarray, *, strict: bool = True) -> Section:
    """``df`` in fiber coordinates.

    With ``strict`` a span defect above the mode's tolerance raises
    `SpanError` listing the points; diagnostics pass ``strict=False``.
    """
    arr = ct.space.check_field(f, "function")
    coeffs = np.einsum("nsk,ns->nk", ct.U, ct.stencil(arr))
    if strict:
        tol = ct.cfg.SPAN_TOL if ct.mode == "exact" else ct.cfg.RESOLVED_SPAN_TOL
        defect = span_defect(ct, arr)
        bad = np.flatnonzero(defect > tol)
        if bad.size:
            raise SpanError("differential is not determined by the generators", bad)
    return Section(ct.bundle, coeffs)


def differentials(ct: CotangentBundle, F: np.ndarray) -> np.ndarray:
    """Coefficients of ``dF[:, p]`` for every column, shape ``(n, K, p)``."""
    return np.einsum("nsk,nsp->nkp", ct.U, ct.stencil(np.asarray(F, dtype=float).reshape(ct.n, -1)))


def gradient(ct: CotangentBundle, f: np.ndarray, *, strict: bool = True) -> Section:
    """``∇f``; fibers are orthonormal so it shares the coefficients of ``df``."""
    return differential(ct, f, strict=strict)


def apply_form(ct: CotangentBundle, f: np.ndarray, X: Section) -> np.ndarray:
    """``df(X)`` pointwise."""
    return differential(ct, f, strict=False).inner(X)


def divergence(ct: CotangentBundle, X: Section, *, strict: bool = False) -> np.ndarray:
    """The weighted adjoint of ``d``: ``∫ f·div X dm = −∫ df(X) dm`` for all ``f``.

    The identity covers every ``f`` only where the fiber keeps all edge
    directions; with ``strict`` the exact-mode points where it does not
    raise `SpanError`.
    """
    if not ct.bundle.compatible(X.bundle):
        raise SpaceMismatchError("vector field does not live in this cotangent bundle")
    if strict and ct.under_generated.size:
        raise SpanError("divergence is the adjoint of an under-generated differential", ct.under_generated)
    e = ct.space.edges
    m = ct.space.m
    y = np.einsum("nsk,nk->ns", ct.U, X.coeffs)
    kappa = ct.edge_weight * y[e.tail, e.slot]
    flux = m[e.tail] * kappa
    t = np.bincount(e.head, weights=flux, minlength=ct.n) - np.bincount(e.tail, weights=flux, minlength=ct.n)
    return -t / m


def sobolev_norm(space: FiniteMMSpace, f: np.ndarray) -> float:
    """``‖f‖_{W^{1,2}} = √(‖f‖² + ‖|df|‖²)`` with ``|df|² = Γ(f, f)``."""
    return math.sqrt(space.inner(f, f) + 2.0 * space.dirichlet_energy(f))


# ------------------------------------------------------------- pullbacks


@dataclass(frozen=True)
class FormRepresentation:
    """A 1-form written as ``Σ_a alpha[:, a]·d(funcs[:, a])``."""

    alpha: np.ndarray
    funcs: np.ndarray

    @classmethod
    def exact(cls, f: np.ndarray) -> "FormRepresentation":
        f = np.asarray(f, dtype=float)
        return cls(alpha=np.ones((f.shape[0], 1)), funcs=f[:, None])

    @classmethod
    def from_section(cls, ct: CotangentBundle, omega: Section) -> "FormRepresentation":
        if not ct.bundle.compatible(omega.bundle):
            raise SpaceMismatchError("form does not live in this cotangent bundle")
        alpha = np.einsum("nka,nk->na", ct.psi, omega.coeffs)
        return cls(alpha=alpha, funcs=ct.generators)

    def pullback(self, phi: PointMap) -> "FormRepresentation":
        if self.alpha.shape[0] != phi.target.n:
            raise SpaceMismatchError("form does not live on the map's target")
        return FormRepresentation(alpha=self.alpha[phi.phi], funcs=self.funcs[phi.phi])

    def evaluate(self, ct: CotangentBundle) -> Section:
        dF = differentials(ct, self.funcs)
        return Section(ct.bundle, np.einsum("nkp,np->nk", dF, self.alpha))


def map_pullback_forms(
    phi: PointMap,
    ct_x: CotangentBundle,
    ct_y: CotangentBundle,
    omega: Section | FormRepresentation,
) -> Section:
    """``φ*ω``: pull the generator expansion of ``ω`` back along ``φ``."""
    if ct_x.space is not phi.target or ct_y.space is not phi.source:
        raise SpaceMismatchError("cotangent bundles do not match the map")
    rep = omega if isinstance(omega, FormRepresentation) else FormRepresentation.from_section(ct_x, omega)
    return rep.pullback(phi).evaluate(ct_y)


def pullback_lipschitz_ratio(
    phi: PointMap, ct_x: CotangentBundle, ct_y: CotangentBundle, omega: Section
) -> Optional[float]:
    """``max |φ*ω| / (Lip(φ)·|ω|∘φ)``; None without distance tables."""
    lip = phi.lipschitz
    if lip is None:
        return None
    lhs = map_pullback_forms(phi, ct_x, ct_y, omega).norm()
    rhs = lip * omega.norm()[phi.phi]
    ok = rhs > ct_x.cfg.RESIDUAL_FLOOR
    if not ok.any():
        return 0.0 if np.all(lhs <= ct_x.cfg.RESIDUAL_FLOOR) else math.inf
    ratio = float(np.max(lhs[ok] / rhs[ok]))
    if np.any(lhs[~ok] > ct_x.cfg.RESIDUAL_FLOOR):
        ratio = math.inf
    return ratio


@dataclass(frozen=True)
class MapDifferential:
    section: Section
    # (n_Y, r) mismatch of the duality identity on generator forms.
    residual: np.ndarray

    @property
    def max_residual(self) -> float:
        return float(np.abs(self.residual).max(initial=0.0))


def map_differential(
    phi: PointMap, ct_x: CotangentBundle, ct_y: CotangentBundle, X: Section
) -> MapDifferential:
    """``dφ(X)`` in ``φ*T X``, from ``(φ*dg_a)(dφX) = d(g_a∘φ)(X)``."""
    if not ct_y.bundle.compatible(X.bundle):
        raise SpaceMismatchError("vector field does not live on the map's source")
    dpull = differentials(ct_y, ct_x.generators[phi.phi])  # (n_Y, K_Y, r)
    s = np.einsum("nkr,nk->nr", dpull, X.coeffs)
    psi = ct_x.psi[phi.phi]
    z = np.einsum("nkr,nr->nk", psi, s)
    residual = np.einsum("nkr,nk->nr", ct_x.phi[phi.phi], z) - s
    pb = pullback_module(phi, ct_x.bundle)
    return MapDifferential(section=Section(pb, z), residual=residual)
