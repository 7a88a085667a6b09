"""
Second-order calculus: Γ₂, the H-form, Hessians, covariant derivatives and
pointwise curvature-dimension bounds.

Hessians and covariant derivatives are reconstructed per point from their
values on generator pairs. With ``Φ`` and ``Ψ`` from the cotangent bundle,
a tensor ``A`` with prescribed values ``H_ab = Φ_aᵀ A Φ_b`` has the
minimum-norm solution ``A = Ψ H Ψᵀ``; the mismatch ``ΦᵀAΦ − H`` is the
reconstruction residual (zero whenever the generators are independent in
the fiber).

Tensor convention: ``T = ∇X`` is stored with ``T:(Z ⊗ Y) = ⟨∇_Z X, Y⟩``,
so ``∇_Z X = Tᵀ Z``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Literal, Optional

import numpy as np

from src.gamma_calc.calculus.first_order import CotangentBundle, build_cotangent, differential
from src.gamma_calc.core.config import Settings, settings as default_settings
from src.gamma_calc.core.errors import ReconstructionError, SizeCapError, SpaceMismatchError, UsageError
from src.gamma_calc.core.space import FiniteMMSpace
from src.gamma_calc.modules.bundle import Section, TensorSection
from src.gamma_calc.utils.linalg import pencil_min, symmetric_part

logger = logging.getLogger(__name__)

CurvatureMode = Literal["cd_infty", "cd_n"]


# ------------------------------------------------------------ Γ₂ and H


def gamma2(space: FiniteMMSpace, f: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Γ₂(f, g) = ½(L Γ(f,g) − Γ(f, Lg) − Γ(g, Lf))."""
    Lf, Lg = space.apply(f), space.apply(g)
    return 0.5 * (space.apply(space.gamma(f, g)) - space.gamma(f, Lg) - space.gamma(g, Lf))


def h_form(space: FiniteMMSpace, f: np.ndarray, g: np.ndarray, h: np.ndarray) -> np.ndarray:
    """H[f](g, h) = ½(Γ(Γ(f,g),h) + Γ(Γ(f,h),g) − Γ(f,Γ(g,h)))."""
    G = space.gamma
    return 0.5 * (G(G(f, g), h) + G(G(f, h), g) - G(f, G(g, h)))


def h_matrix(space: FiniteMMSpace, f: np.ndarray, F: np.ndarray) -> np.ndarray:
    """``H[f](F_a, F_b)`` for all column pairs, shape ``(n, p, p)``."""
    F = np.asarray(F, dtype=float).reshape(space.n, -1)
    p = F.shape[1]
    P = space.gamma_matrix(f[:, None], F)[:, 0, :]  # Γ(f, F_a)
    Q = space.gamma_matrix(P, F)  # Γ(Γ(f, F_a), F_b)
    GG = space.gamma_matrix(F).reshape(space.n, p * p)
    last = space.gamma_matrix(f[:, None], GG)[:, 0, :].reshape(space.n, p, p)
    return 0.5 * (Q + np.swapaxes(Q, 1, 2) - last)


# --------------------------------------------------------------- Hessian


@dataclass(frozen=True)
class Hessian:
    tensor: TensorSection
    # H[f](g_a, g_b) on generator pairs, (n, r, r).
    values: np.ndarray
    residual: np.ndarray

    @property
    def coeffs(self) -> np.ndarray:
        return self.tensor.coeffs

    def hs_norm_sq(self) -> np.ndarray:
        return np.einsum("nab,nab->n", self.coeffs, self.coeffs)


def _reconstruct(ct: CotangentBundle, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    A = np.einsum("nka,nab,nlb->nkl", ct.psi, values, ct.psi)
    fitted = np.einsum("nka,nkl,nlb->nab", ct.phi, A, ct.phi)
    scale = np.maximum(np.abs(values).max(axis=(1, 2)), ct.cfg.RESIDUAL_FLOOR)
    residual = np.abs(fitted - values).max(axis=(1, 2)) / scale
    residual[ct.rank == 0] = 0.0
    return A, residual


def _require_reconstructed(ct: CotangentBundle, residual: np.ndarray, what: str) -> None:
    tol = ct.cfg.SPAN_TOL if ct.mode == "exact" else ct.cfg.RESOLVED_SPAN_TOL
    bad = np.union1d(ct.under_generated, np.flatnonzero(residual > tol))
    if bad.size:
        raise ReconstructionError(f"{what} is not determined by the generator pairs", bad)


def hessian(ct: CotangentBundle, f: np.ndarray, *, strict: bool = False) -> Hessian:
    """Hessian of ``f`` from ``Hess f(∇g_a, ∇g_b) = H[f](g_a, g_b)``.

    With ``strict``, under-generated points and reconstruction residuals
    above the span tolerance raise `ReconstructionError`.
    """
    arr = ct.space.check_field(f, "function")
    H = h_matrix(ct.space, arr, ct.generators)
    A, residual = _reconstruct(ct, H)
    if strict:
        _require_reconstructed(ct, residual, "Hessian")
    A = symmetric_part(A)
    tensor = TensorSection(ct.bundle, ct.bundle, A)
    return Hessian(tensor=tensor, values=H, residual=residual)


def generator_hessians(ct: CotangentBundle) -> np.ndarray:
    """Hessians of every generator, ``(n, r, K, K)``; cached per bundle."""
    return _generator_hessians(ct)


@lru_cache(maxsize=8)
def _generator_hessians(ct: CotangentBundle) -> np.ndarray:
    out = np.empty((ct.n, ct.generator_count, ct.width, ct.width))
    for b in range(ct.generator_count):
        out[:, b] = hessian(ct, ct.generators[:, b]).coeffs
    return out


# ---------------------------------------------------- covariant derivative


@dataclass(frozen=True)
class CovariantDerivative:
    tensor: TensorSection
    residual: np.ndarray

    @property
    def coeffs(self) -> np.ndarray:
        return self.tensor.coeffs

    def along(self, Z: Section) -> Section:
        """``∇_Z X``."""
        return Section(self.tensor.second, np.einsum("nkl,nk->nl", self.coeffs, Z.coeffs))

    def trace(self) -> np.ndarray:
        return np.einsum("nkk->n", self.coeffs)

    def hs_norm_sq(self) -> np.ndarray:
        return np.einsum("nab,nab->n", self.coeffs, self.coeffs)


def covariant_derivative(ct: CotangentBundle, X: Section, *, strict: bool = False) -> CovariantDerivative:
    """``∇X`` from ``∇X:(∇g_a⊗∇g_b) = Γ(⟨X,∇g_b⟩, g_a) − Hess g_b(X, ∇g_a)``; ``strict`` as in `hessian`."""
    if not ct.bundle.compatible(X.bundle):
        raise SpaceMismatchError("vector field does not live in this cotangent bundle")
    space = ct.space
    pair = np.einsum("nkb,nk->nb", ct.phi, X.coeffs)  # ⟨X, ∇g_b⟩
    first = space.gamma_matrix(ct.generators, pair)  # [a, b] = Γ(g_a, ⟨X,∇g_b⟩)
    A = generator_hessians(ct)
    second = np.einsum("nk,nbkl,nla->nab", X.coeffs, A, ct.phi)
    R = first - second
    T, residual = _reconstruct(ct, R)
    if strict:
        _require_reconstructed(ct, residual, "covariant derivative")
    return CovariantDerivative(tensor=TensorSection(ct.bundle, ct.bundle, T), residual=residual)


def lie_bracket(ct: CotangentBundle, X: Section, Y: Section) -> Section:
    """``[X, Y] = ∇_X Y − ∇_Y X``."""
    dX = covariant_derivative(ct, X)
    dY = covariant_derivative(ct, Y)
    return dY.along(X) - dX.along(Y)


def covariant_energy(ct: CotangentBundle, X: Section) -> float:
    """E_C(X) = ½∫|∇X|²_HS dm."""
    return 0.5 * float(ct.space.integrate(covariant_derivative(ct, X).hs_norm_sq()))


def vector_action(ct: CotangentBundle, X: Section, f: np.ndarray) -> np.ndarray:
    """``X(f) = df(X)``."""
    return differential(ct, f, strict=False).inner(X)


# ------------------------------------------------------ curvature bound


@dataclass(frozen=True)
class CurvatureEstimate:
    k_field: np.ndarray
    mode: str
    N: Optional[float]
    restricted: bool

    @property
    def k_global(self) -> float:
        # +inf marks points where Γ vanishes identically; they constrain nothing.
        bounded = self.k_field[self.k_field < math.inf]
        return float(bounded.min()) if bounded.size else math.inf

    @property
    def bound_kind(self) -> str:
        return "upper_bound" if self.restricted else "exact"


def _local_forms(space: FiniteMMSpace, i: int, N: Optional[float]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    S = space.ball(i, 2)
    pos = {int(p): k for k, p in enumerate(S)}
    L = space.gen[S][:, S].toarray()
    size = S.shape[0]
    eye = np.eye(size)

    def carre(j: int) -> np.ndarray:
        C = np.zeros((size, size))
        for l in range(size):
            if l != j and L[j, l] != 0.0:
                v = eye[l] - eye[j]
                C += 0.5 * L[j, l] * np.outer(v, v)
        return C

    ii = pos[int(i)]
    Ci = carre(ii)
    ball1 = [pos[int(p)] for p in space.ball(i, 1)]
    Q2 = np.zeros((size, size))
    for j in ball1:
        if L[ii, j] != 0.0:
            Q2 += 0.5 * L[ii, j] * carre(j)
    Q2 -= 0.5 * (Ci @ L + L.T @ Ci)
    if N is not None and math.isfinite(N):
        row = L[ii]
        Q2 -= np.outer(row, row) / N
    return Q2, Ci, S


def _flattened_frame(ct: CotangentBundle, i: int, S: np.ndarray) -> np.ndarray:
    """Values on ``S`` of the fiber frame at ``i`` with its Hessian at ``i`` removed.

    ``u_a = g_a − ½ Σ C_a[b,c] (g_b − g_b(i))(g_c − g_c(i))`` with
    ``C_a = Ψᵀ Hess g_a Ψ`` has vanishing Hessian at ``i``; the frame is
    ``u_k = Σ_a Ψ[k, a] u_a``, one function per fiber direction.
    """
    r_i = int(ct.rank[i])
    psi = ct.psi[i, :r_i]
    H = generator_hessians(ct)[i][:, :r_i, :r_i]
    C = np.einsum("kb,akl,lc->abc", psi, H, psi)
    dG = ct.generators[S] - ct.generators[i]
    U = dG - 0.5 * np.einsum("abc,sb,sc->sa", C, dG, dG)
    return U @ psi.T


def curvature_estimate(
    space: FiniteMMSpace,
    mode: CurvatureMode = "cd_infty",
    *,
    N: Optional[float] = None,
    generators: Optional[np.ndarray] = None,
    restrict: Optional[bool] = None,
    cfg: Optional[Settings] = None,
) -> CurvatureEstimate:
    """Pointwise largest ``K`` with Γ₂-form ⪰ K·Γ-form (CD(K,∞) or CD(K,N)).

    Up to ``CURVATURE_MAX_POINTS`` the pencil is solved over all functions on
    the 2-ball of each point, which is exact. Above the cap (or with
    ``restrict=True``) it is solved over the fiber frame of each point with
    its Hessian there cancelled by quadratics in the generators, so the
    quotient tends to the smallest Ricci eigenvalue. That is a subspace of
    the ball functions and can only raise the minimum, so the result is
    labelled an upper bound; ``restrict=False`` refuses instead.
    """
    cfg = cfg or default_settings
    if mode not in ("cd_infty", "cd_n"):
        raise UsageError(f"unknown curvature mode {mode!r}")
    if mode == "cd_n":
        if N is None or not N > 0:
            raise UsageError("cd_n mode needs a positive N")
    else:
        N = None
    too_big = space.n > cfg.CURVATURE_MAX_POINTS
    if restrict is None:
        restrict = too_big
    if too_big and not restrict:
        raise SizeCapError("pointwise curvature pencil", space.n, cfg.CURVATURE_MAX_POINTS, "CURVATURE_MAX_POINTS")

    k_field = np.empty(space.n)
    ct = build_cotangent(space, generators, cfg=cfg) if restrict else None
    for i in range(space.n):
        Q2, Q1, S = _local_forms(space, i, N)
        if ct is not None:
            if ct.rank[i] == 0:
                k_field[i] = math.inf
                continue
            U = _flattened_frame(ct, i, S)
            Q2, Q1 = U.T @ Q2 @ U, U.T @ Q1 @ U
        k_field[i] = pencil_min(Q2, Q1, rtol=cfg.TOL_RANK)
    est = CurvatureEstimate(k_field=k_field, mode=mode, N=N, restricted=bool(restrict))
    logger.info(
        "curvature estimate",
        extra={"space": space.name, "mode": mode, "k_global": est.k_global, "bound": est.bound_kind},
    )
    return est


# --------------------------------------------------- heat gradient bound


@dataclass(frozen=True)
class GradientEstimate:
    lhs: np.ndarray
    rhs: np.ndarray

    @property
    def violation(self) -> np.ndarray:
        return np.clip(self.lhs - self.rhs, 0.0, None)


def gradient_estimate(
    space: FiniteMMSpace, f: np.ndarray, t: float, K: float, *, steps: int = 64
) -> GradientEstimate:
    """Both sides of ``Γ(h_t f) ≤ e^{−2Kt} h_t Γ(f)``."""
    ht = space.heat_flow(f, t, steps=steps)
    lhs = space.gamma(ht, ht)
    rhs = math.exp(-2.0 * K * t) * space.heat_flow(space.gamma(f, f), t, steps=steps)
    return GradientEstimate(lhs=lhs, rhs=rhs)

