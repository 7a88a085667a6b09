"""
Ricci curvature of vector fields, its N-dimensional variant, and the
key-inequality verifier.

The Ricci measure is represented by its density against ``m``:

    Ric(X, Y) = ½ L⟨X,Y⟩ + ½⟨X, Δ_H Y⟩ + ½⟨Y, Δ_H X⟩ − ∇X:∇Y,

with vector and covector fields identified through the orthonormal fiber
coordinates. ``∫ ½ L⟨X,Y⟩ dm`` vanishes by m-symmetry and the Hodge terms
integrate to ``⟨dX, dY⟩ + ⟨δX, δY⟩ + ⟨TX, TY⟩``, so the total of the density matches
the integrated formula up to rounding.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from src.gamma_calc.calculus.first_order import divergence
from src.gamma_calc.calculus.hodge import HodgeComplex, hodge_energy, hodge_pairing
from src.gamma_calc.calculus.second_order import (
    CovariantDerivative,
    covariant_derivative,
    gamma2,
    h_form,
)
from src.gamma_calc.core.errors import GammaCalcError, SpaceMismatchError, UsageError
from src.gamma_calc.modules.bundle import Section

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RicciField:
    density: np.ndarray
    # Hodge Laplacians of X and Y in fiber coordinates, kept for reports.
    lap_x: np.ndarray
    lap_y: np.ndarray
    nabla_x: CovariantDerivative
    nabla_y: CovariantDerivative
    # Pointwise sum of the absolute values of the terms adding up to the density.
    term_size: np.ndarray

    def total(self, m: np.ndarray) -> float:
        return float(np.dot(self.density, m))


def _check(cx: HodgeComplex, *fields: Section) -> None:
    for X in fields:
        if not cx.ct.bundle.compatible(X.bundle):
            raise SpaceMismatchError("vector field does not live in this cotangent bundle")


def hodge_laplacian_field(cx: HodgeComplex, X: Section) -> np.ndarray:
    """``Δ_H X♭`` in padded fiber coordinates."""
    space = cx.space(1)
    vec = space.to_vector(X.coeffs)
    return space.to_padded(cx.laplacian(1) @ vec)


def ricci(cx: HodgeComplex, X: Section, Y: Section) -> RicciField:
    _check(cx, X, Y)
    ct = cx.ct
    lap_x = hodge_laplacian_field(cx, X)
    lap_y = lap_x if Y is X else hodge_laplacian_field(cx, Y)
    nx = covariant_derivative(ct, X)
    ny = nx if Y is X else covariant_derivative(ct, Y)
    transport = _transport_term(cx, X, Y)
    hodge = 0.5 * (np.einsum("nk,nk->n", X.coeffs, lap_y) + np.einsum("nk,nk->n", Y.coeffs, lap_x))
    cov = np.einsum("nab,nab->n", nx.coeffs, ny.coeffs)
    return RicciField(
        density=transport + hodge - cov,
        lap_x=lap_x,
        lap_y=lap_y,
        nabla_x=nx,
        nabla_y=ny,
        term_size=np.abs(transport) + np.abs(hodge) + np.abs(cov),
    )


def _transport_term(cx: HodgeComplex, X: Section, Y: Section) -> np.ndarray:
    """``½L⟨X,Y⟩``, the part of the density that integrates to zero."""
    return 0.5 * cx.ct.space.apply(X.inner(Y))


@dataclass(frozen=True)
class RicciTotal:
    integral: float
    formula: float
    residual: float


def ricci_total_check(cx: HodgeComplex, X: Section, Y: Section) -> RicciTotal:
    """``∫Ric(X,Y) dm`` against ``∫⟨dX,dY⟩ + δXδY + ⟨TX,TY⟩ − ∇X:∇Y dm``."""
    rf = ricci(cx, X, Y)
    m = cx.ct.space.m
    hodge = hodge_pairing(cx, X, Y, 1)
    cov = float(np.dot(np.einsum("nab,nab->n", rf.nabla_x.coeffs, rf.nabla_y.coeffs), m))
    integral = rf.total(m)
    formula = hodge - cov
    # Round-off follows the size of the terms that cancel, not of the total.
    spread = float(np.dot(np.abs(rf.density), m)) + float(np.dot(np.abs(_transport_term(cx, X, Y)), m))
    scale = max(abs(integral), abs(hodge), abs(cov), spread, cx.cfg.RESIDUAL_FLOOR)
    return RicciTotal(integral=integral, formula=formula, residual=abs(integral - formula) / scale)


# ------------------------------------------------------------- bounds


@dataclass(frozen=True)
class FieldBound:
    k_ric: float
    violation_points: list[int]
    violation_mass: float
    tv: float
    tv_bound: float
    e_h: float
    e_c: float
    ehec_slack: float
    l2_sq: float

    def to_dict(self) -> dict[str, object]:
        return {
            "K_ric": self.k_ric,
            "violation_points": self.violation_points,
            "violation_mass": self.violation_mass,
            "tv": self.tv,
            "tv_bound": self.tv_bound,
            "E_H": self.e_h,
            "E_C": self.e_c,
            "ehec_slack": self.ehec_slack,
            "l2_sq": self.l2_sq,
        }


def ricci_bound_report(cx: HodgeComplex, fields: Sequence[Section], K: float) -> list[FieldBound]:
    """Per-field ``inf Ric(X,X)/|X|²``, total-variation and energy slacks against ``K``."""
    m = cx.ct.space.m
    floor = cx.cfg.RESIDUAL_FLOOR
    out: list[FieldBound] = []
    k_neg = max(-K, 0.0) if math.isfinite(K) else math.inf
    for X in fields:
        _check(cx, X)
        rf = ricci(cx, X, X)
        sq = X.norm_sq()
        on = sq > floor * max(float(sq.max(initial=0.0)), 1.0)
        ratio = rf.density[on] / sq[on]
        k_ric = float(ratio.min()) if ratio.size else 0.0
        viol = np.flatnonzero(rf.density < K * sq - floor) if math.isfinite(K) else np.zeros(0, dtype=np.int64)
        viol_mass = float(np.dot(np.clip(K * sq - rf.density, 0.0, None), m)) if math.isfinite(K) else 0.0
        e_h = hodge_energy(cx, X, 1)
        e_c = 0.5 * float(np.dot(rf.nabla_x.hs_norm_sq(), m))
        l2 = float(np.dot(sq, m))
        tv = float(np.dot(np.abs(rf.density), m))
        tv_bound = 2.0 * (e_h + k_neg * l2) if math.isfinite(k_neg) else math.inf
        out.append(
            FieldBound(
                k_ric=k_ric,
                violation_points=viol.tolist(),
                violation_mass=viol_mass,
                tv=tv,
                tv_bound=tv_bound,
                e_h=e_h,
                e_c=e_c,
                ehec_slack=(e_h - 0.5 * K * l2 - e_c) if math.isfinite(K) else math.nan,
                l2_sq=l2,
            )
        )
    return out


# ---------------------------------------------------------- N-Ricci


@dataclass(frozen=True)
class RicciN:
    density: np.ndarray
    correction: np.ndarray
    trace_defect_x: np.ndarray
    trace_defect_y: np.ndarray
    # |∇X|² + R_N(X,X) − (div X)²/N, meaningful for X = Y.
    inequality_slack: np.ndarray


def _trace_gap(dim: np.ndarray, N: float) -> np.ndarray:
    """``1/(N − dim_loc)`` where positive, 0 where ``dim_loc = N`` or ``N = ∞``."""
    if math.isinf(N):
        return np.zeros(dim.shape)
    gap = N - dim
    return np.where(gap > 0, 1.0 / np.where(gap > 0, gap, 1.0), 0.0)


def ricci_n(cx: HodgeComplex, X: Section, Y: Section, N: float) -> RicciN:
    """``Ric_N = Ric − R_N`` with ``R_N(X,Y) = (tr∇X − div X)(tr∇Y − div Y)/(N − dim_loc)``."""
    if not N > 0:
        raise UsageError(f"N must be positive, got {N}")
    ct = cx.ct
    dim = ct.rank.astype(float)
    bad = np.flatnonzero(dim > N)
    if bad.size:
        raise GammaCalcError(
            f"N={N:g} is below the local dimension at {bad.size} points (first {bad[:10].tolist()})"
        )
    rf = ricci(cx, X, Y)
    inv_gap = _trace_gap(dim, N)
    div_x = divergence(ct, X)
    tx = rf.nabla_x.trace() - div_x
    ty = tx if Y is X else rf.nabla_y.trace() - divergence(ct, Y)
    corr = tx * ty * inv_gap
    slack = rf.nabla_x.hs_norm_sq() + tx * tx * inv_gap
    if math.isfinite(N):
        slack = slack - div_x * div_x / N
    return RicciN(
        density=rf.density - corr,
        correction=corr,
        trace_defect_x=tx,
        trace_defect_y=ty,
        inequality_slack=slack,
    )


# ------------------------------------------------------- key inequality


@dataclass(frozen=True)
class KeyLemmaReport:
    rho: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray

    @property
    def violation(self) -> np.ndarray:
        return np.clip(self.lhs - self.rhs, 0.0, None)

    def violation_points(self, floor: float) -> list[int]:
        scale = max(float(np.abs(self.rhs).max(initial=0.0)), float(np.abs(self.lhs).max(initial=0.0)), floor)
        return np.flatnonzero(self.lhs - self.rhs > 1e-10 * scale).tolist()


def key_lemma_report(
    cx: HodgeComplex,
    f_list: Sequence[np.ndarray],
    g_list: Sequence[np.ndarray],
    h_list: Sequence[np.ndarray],
    K: float,
) -> KeyLemmaReport:
    """Pointwise density ``ρ`` of the key measure and both sides of its inequality.

    ``ρ = Σ_{i,i'} g_i g_{i'}(γ₂(f_i,f_{i'}) − KΓ(f_i,f_{i'})) + 2 g_i H[f_i](f_{i'},g_{i'})
    + ½(Γ(f_i,f_{i'})Γ(g_i,g_{i'}) + Γ(f_i,g_{i'})Γ(g_i,f_{i'}))``, checked against

    ``|Σ_{i,j} Γ(f_i,h_j)Γ(g_i,h_j) + g_i H[f_i](h_j,h_j)|² ≤ ρ Σ_{j,j'} Γ(h_j,h_{j'})²``.
    """
    if len(f_list) != len(g_list):
        raise UsageError("key lemma needs as many g as f functions")
    space = cx.ct.space
    G = space.gamma
    rho = np.zeros(space.n)
    for fi, gi in zip(f_list, g_list):
        for fj, gj in zip(f_list, g_list):
            rho += gi * gj * (gamma2(space, fi, fj) - K * G(fi, fj))
            rho += 2.0 * gi * h_form(space, fi, fj, gj)
            rho += 0.5 * (G(fi, fj) * G(gi, gj) + G(fi, gj) * G(gi, fj))
    inner = np.zeros(space.n)
    for fi, gi in zip(f_list, g_list):
        for h in h_list:
            inner += G(fi, h) * G(gi, h) + gi * h_form(space, fi, h, h)
    hh = np.zeros(space.n)
    for ha in h_list:
        for hb in h_list:
            hh += G(ha, hb) ** 2
    return KeyLemmaReport(rho=rho, lhs=inner * inner, rhs=rho * hh)


def bochner_rewrite(cx: HodgeComplex, X: Section, K: float) -> np.ndarray:
    """``½L|X|² − (|∇X|² − ⟨X,Δ_H X⟩ + K|X|²)``, nonnegative on RCD(K,∞) limits."""
    rf = ricci(cx, X, X)
    sq = X.norm_sq()
    return 0.5 * cx.ct.space.apply(sq) - (
        rf.nabla_x.hs_norm_sq() - np.einsum("nk,nk->n", X.coeffs, rf.lap_x) + K * sq
    )
