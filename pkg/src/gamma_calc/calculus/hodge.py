"""
Exterior derivative, codifferential and Hodge Laplacian on k-forms.

Form spaces
-----------
A k-form at ``i`` lives in ``Λ^k`` of the cotangent fiber, with basis the
k-subsets of the fiber slots (colexicographic, valid when the largest slot
is below the local rank). The global space of k-forms concatenates the
valid coefficients of every point; its inner product is ``M_k``, the
measure repeated over each point's coefficients.

Exterior derivative
-------------------
A k-form is read in the generator basis ``ω = Σ_B α_B dg_B`` (minimum-norm
coefficients ``α = C_k(Ψ)ᵀ ω``, ``C_k`` the k-th compound) and
differentiated by

    dω = Σ_B dα_B ∧ dg_B,

the finite form of ``d(f₀ df₁∧…∧df_k) = df₀∧df₁∧…∧df_k``. For ``k = 0``
this is the differential itself. The operator is assembled once per
degree as a sparse matrix; the codifferential is its exact ``M``-adjoint.
``d∘d`` vanishes only in the continuum and its size is reported.

Dropped stencil content
-----------------------
A resolved fiber keeps part of each edge stencil. The rest is carried by

    T_k ω (i) = Σ_B (P⊥_i δα_B) ⊗ dg_B(i),

and the Hodge Laplacian is ``δd + dδ + T*T``. On functions ``T_0 f = P⊥δf``
so ``Δ_H = −L`` and ``E_H(f) = ½∫Γ(f) dm`` whatever the fiber. Smooth forms
have ``T ω = O(h)``; lattice-scale oscillations that ``d`` and ``δ`` miss on
periodic grids do not. ``T`` vanishes wherever the fiber spans the stencil.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla

from src.gamma_calc.calculus.first_order import CotangentBundle, differentials
from src.gamma_calc.core.config import Settings
from src.gamma_calc.core.errors import SpaceMismatchError, UsageError
from src.gamma_calc.modules.bundle import Section
from src.gamma_calc.modules.exterior import ExteriorPower, compound, exterior_power, subsets
from src.gamma_calc.modules.pullback import PointMap

logger = logging.getLogger(__name__)


# ------------------------------------------------------------ form spaces


@dataclass(frozen=True, eq=False)
class FormSpace:
    ct: CotangentBundle
    degree: int
    ext: ExteriorPower
    # Positions of the valid coefficients in the padded (n, S) layout.
    index: np.ndarray
    owner: np.ndarray

    @property
    def size(self) -> int:
        return int(self.index.shape[0])

    @property
    def width(self) -> int:
        return self.ext.bundle.width

    @cached_property
    def weights(self) -> np.ndarray:
        return self.ct.space.m[self.owner]

    def to_vector(self, padded: np.ndarray) -> np.ndarray:
        return np.asarray(padded, dtype=float).reshape(-1)[self.index]

    def to_padded(self, vec: np.ndarray) -> np.ndarray:
        out = np.zeros(self.ct.n * self.width)
        out[self.index] = vec
        return out.reshape(self.ct.n, self.width)

    def form(self, vec: np.ndarray) -> "KForm":
        return KForm(self, np.asarray(vec, dtype=float))

    def from_section(self, s: Section) -> "KForm":
        if not self.ext.bundle.compatible(s.bundle):
            raise SpaceMismatchError(f"section is not a {self.degree}-form of this bundle")
        return KForm(self, self.to_vector(s.coeffs))

    def zero(self) -> "KForm":
        return KForm(self, np.zeros(self.size))

    def inner(self, a: np.ndarray, b: np.ndarray) -> float:
        return float(np.dot(a * self.weights, b))

    def norm(self, a: np.ndarray) -> float:
        return math.sqrt(max(self.inner(a, a), 0.0))


@dataclass(frozen=True, eq=False)
class KForm:
    space: FormSpace
    values: np.ndarray

    @property
    def degree(self) -> int:
        return self.space.degree

    def section(self) -> Section:
        return Section(self.space.ext.bundle, self.space.to_padded(self.values))

    def norm(self) -> float:
        return self.space.norm(self.values)

    def __add__(self, other: "KForm") -> "KForm":
        if other.space is not self.space:
            raise SpaceMismatchError("forms of different spaces")
        return KForm(self.space, self.values + other.values)

    def __sub__(self, other: "KForm") -> "KForm":
        if other.space is not self.space:
            raise SpaceMismatchError("forms of different spaces")
        return KForm(self.space, self.values - other.values)


def _insertion_tensor(K: int, k: int) -> np.ndarray:
    """``E[c, A, J] = ±1`` where ``e_c ∧ e_J = ±e_A``."""
    rows = subsets(K, k + 1)
    cols = subsets(K, k)
    row_index = {s: i for i, s in enumerate(rows)}
    E = np.zeros((K, len(rows), len(cols)))
    for j, J in enumerate(cols):
        for c in range(K):
            if c in J:
                continue
            A = tuple(sorted(J + (c,)))
            sign = -1.0 if sum(1 for x in J if x < c) % 2 else 1.0
            E[c, row_index[A], j] = sign
    return E


# ---------------------------------------------------------------- complex


@dataclass(eq=False)
class HodgeComplex:
    """Sparse de Rham complex of a cotangent bundle, assembled lazily."""

    ct: CotangentBundle
    _spaces: dict[int, FormSpace] = field(default_factory=dict, repr=False)
    _d: dict[int, sparse.csr_matrix] = field(default_factory=dict, repr=False)
    _t: dict[int, sparse.csr_matrix] = field(default_factory=dict, repr=False)

    @property
    def cfg(self) -> Settings:
        return self.ct.cfg

    @property
    def top_degree(self) -> int:
        return self.ct.width

    def space(self, k: int) -> FormSpace:
        if k < 0:
            raise UsageError(f"form degree must be >= 0, got {k}")
        if k not in self._spaces:
            ext = exterior_power(self.ct.bundle, k)
            mask = ext.bundle.mask
            index = np.flatnonzero(mask.ravel())
            owner = index // max(ext.bundle.width, 1)
            self._spaces[k] = FormSpace(self.ct, k, ext, index, owner)
        return self._spaces[k]

    def d(self, k: int) -> sparse.csr_matrix:
        """``d_k``: k-forms → (k+1)-forms, shape ``(N_{k+1}, N_k)``."""
        if k not in self._d:
            self._d[k] = self._assemble(k)
        return self._d[k]

    def _assemble(self, k: int) -> sparse.csr_matrix:
        src, dst = self.space(k), self.space(k + 1)
        ct = self.ct
        e = ct.space.edges
        K = ct.width
        if src.size == 0 or dst.size == 0 or e.count == 0:
            return sparse.csr_matrix((dst.size, src.size))
        S0, S1 = src.width, dst.width
        E = _insertion_tensor(K, k)
        W = compound(ct.phi, k)  # (n, S0, R)
        P = compound(ct.psi, k)
        q = ct.U[e.tail, e.slot, :] * ct.edge_weight[:, None]  # (E, K)
        Z = np.einsum("ec,cab->eab", q, E)  # (E, S1, S0)
        off = np.einsum("eab,ebR,ecR->eac", Z, W[e.tail], P[e.head], optimize=True)
        diag_t = np.einsum("nbR,ncR->nbc", W, P)
        diag = -np.einsum("eab,ebc->eac", Z, diag_t[e.tail])

        rows = e.tail[:, None, None] * S1 + np.arange(S1)[None, :, None]
        cols_off = e.head[:, None, None] * S0 + np.arange(S0)[None, None, :]
        cols_diag = e.tail[:, None, None] * S0 + np.arange(S0)[None, None, :]
        rows = np.broadcast_to(rows, off.shape)
        padded = sparse.coo_matrix(
            (
                np.concatenate([off.ravel(), diag.ravel()]),
                (
                    np.concatenate([rows.ravel(), rows.ravel()]),
                    np.concatenate([np.broadcast_to(cols_off, off.shape).ravel(), np.broadcast_to(cols_diag, off.shape).ravel()]),
                ),
            ),
            shape=(ct.n * S1, ct.n * S0),
        ).tocsr()
        out = padded[dst.index][:, src.index].tocsr()
        out.eliminate_zeros()
        logger.debug("exterior derivative assembled", extra={"degree": k, "shape": list(out.shape), "nnz": out.nnz})
        return out

    def dropped(self, k: int) -> sparse.csr_matrix:
        """``T_k``: k-forms → ``(n·degmax·S_k)`` rows indexed ``(point, slot, coefficient)``."""
        if k not in self._t:
            self._t[k] = self._assemble_dropped(k)
        return self._t[k]

    def _assemble_dropped(self, k: int) -> sparse.csr_matrix:
        src = self.space(k)
        ct = self.ct
        e = ct.space.edges
        P = ct.dropped
        D, S = P.shape[1], src.width
        rows_total = ct.n * D * S
        if src.size == 0 or e.count == 0 or not P.any():
            return sparse.csr_matrix((rows_total, src.size))
        W = compound(ct.phi, k)
        C = compound(ct.psi, k)
        w = ct.edge_weight[:, None, None]
        # Stencil of the generator coefficients, read in the tail's fiber.
        off = w * np.einsum("ebR,ecR->ebc", W[e.tail], C[e.head], optimize=True)
        diag = -w * np.einsum("nbR,ncR->nbc", W, C)[e.tail]
        rows = np.broadcast_to(((e.tail * D + e.slot) * S)[:, None, None] + np.arange(S)[None, :, None], off.shape)
        cols_off = np.broadcast_to(e.head[:, None, None] * S + np.arange(S)[None, None, :], off.shape)
        cols_diag = np.broadcast_to(e.tail[:, None, None] * S + np.arange(S)[None, None, :], off.shape)
        stencil = sparse.coo_matrix(
            (
                np.concatenate([off.ravel(), diag.ravel()]),
                (np.concatenate([rows.ravel(), rows.ravel()]), np.concatenate([cols_off.ravel(), cols_diag.ravel()])),
            ),
            shape=(rows_total, ct.n * S),
        ).tocsr()
        # P⊥ ⊗ I on each point's (slot, coefficient) block.
        i, s, t = np.nonzero(P)
        b = np.arange(S)[None, :]
        proj = sparse.coo_matrix(
            (
                np.repeat(P[i, s, t], S),
                ((((i * D + s) * S)[:, None] + b).ravel(), (((i * D + t) * S)[:, None] + b).ravel()),
            ),
            shape=(rows_total, rows_total),
        ).tocsr()
        out = (proj @ stencil)[:, src.index].tocsr()
        out.eliminate_zeros()
        logger.debug("dropped stencil operator assembled", extra={"degree": k, "shape": list(out.shape), "nnz": out.nnz})
        return out

    def dropped_mass(self, k: int, power: float = 1.0) -> sparse.dia_matrix:
        rows = self.dropped(k).shape[0]
        per_point = max(rows // max(self.ct.n, 1), 1)
        return sparse.diags(np.repeat(self.ct.space.m, per_point)[:rows] ** power)

    def mass(self, k: int, power: float = 1.0) -> sparse.dia_matrix:
        return sparse.diags(self.space(k).weights ** power)

    def delta(self, k: int) -> sparse.csr_matrix:
        """``δ``: (k+1)-forms → k-forms, the ``M``-adjoint of ``d_k``."""
        return (self.mass(k, -1.0) @ self.d(k).T @ self.mass(k + 1)).tocsr()

    def sym_d(self, k: int) -> sparse.csr_matrix:
        """``M_{k+1}^½ d_k M_k^{-½}``; its singular values carry the spectrum."""
        return (self.mass(k + 1, 0.5) @ self.d(k) @ self.mass(k, -0.5)).tocsr()

    def sym_dropped(self, k: int) -> sparse.csr_matrix:
        return (self.dropped_mass(k, 0.5) @ self.dropped(k) @ self.mass(k, -0.5)).tocsr()

    def laplacian(self, k: int) -> sparse.csr_matrix:
        """``Δ_H = δd + dδ + T*T`` on k-forms."""
        N = self.space(k).size
        T = self.dropped(k)
        out = (self.delta(k) @ self.d(k)).tocsr() + self.mass(k, -1.0) @ T.T @ self.dropped_mass(k) @ T
        if k > 0:
            out = out + self.d(k - 1) @ self.delta(k - 1)
        return sparse.csr_matrix(out, shape=(N, N))

    def sym_laplacian(self, k: int) -> sparse.csr_matrix:
        Dk, Tk = self.sym_d(k), self.sym_dropped(k)
        out = Dk.T @ Dk + Tk.T @ Tk
        if k > 0:
            Dm = self.sym_d(k - 1)
            out = out + Dm @ Dm.T
        out = ((out + out.T) * 0.5).tocsr()
        return out

    def closed_gram(self, k: int) -> sparse.csr_matrix:
        """``dᵀd + TᵀT`` in the symmetric frame; its kernel is the closed forms."""
        Dk, Tk = self.sym_d(k), self.sym_dropped(k)
        out = Dk.T @ Dk + Tk.T @ Tk
        return ((out + out.T) * 0.5).tocsr()

    def d2_defect(self, k: int) -> float:
        """``‖d_{k+1} d_k‖_F / (‖d_{k+1}‖_F ‖d_k‖_F)`` in the symmetric frame."""
        A, B = self.sym_d(k + 1), self.sym_d(k)
        na, nb = spla.norm(A) if A.nnz else 0.0, spla.norm(B) if B.nnz else 0.0
        if na == 0.0 or nb == 0.0:
            return 0.0
        AB = (A @ B).tocsr()
        return float((spla.norm(AB) if AB.nnz else 0.0) / (na * nb))


def hodge_complex(ct: CotangentBundle) -> HodgeComplex:
    return HodgeComplex(ct)


# ------------------------------------------------------------- operators


def _form_of(cx: HodgeComplex, omega: KForm | Section | np.ndarray, k: int) -> KForm:
    space = cx.space(k)
    if isinstance(omega, KForm):
        if omega.space is not space:
            raise SpaceMismatchError(f"form is not a {k}-form of this complex")
        return omega
    if isinstance(omega, Section):
        return space.from_section(omega)
    arr = np.asarray(omega, dtype=float)
    if k == 0 and arr.shape == (cx.ct.n,):
        return space.form(arr)
    if arr.shape != (space.size,):
        raise SpaceMismatchError(f"{k}-form vector must have length {space.size}, got {arr.shape}")
    return space.form(arr)


def exterior_derivative(cx: HodgeComplex, omega: KForm | Section | np.ndarray, k: int) -> KForm:
    w = _form_of(cx, omega, k)
    return cx.space(k + 1).form(cx.d(k) @ w.values)


def codifferential(cx: HodgeComplex, omega: KForm | Section | np.ndarray, k: int) -> KForm:
    """``δω`` of a k-form; identically zero on functions."""
    w = _form_of(cx, omega, k)
    if k == 0:
        return cx.space(0).zero()
    return cx.space(k - 1).form(cx.delta(k - 1) @ w.values)


def hodge_laplacian(cx: HodgeComplex, omega: KForm | Section | np.ndarray, k: int) -> KForm:
    w = _form_of(cx, omega, k)
    return cx.space(k).form(cx.laplacian(k) @ w.values)


def hodge_pairing(
    cx: HodgeComplex, a: KForm | Section | np.ndarray, b: KForm | Section | np.ndarray, k: int
) -> float:
    """``⟨da, db⟩ + ⟨δa, δb⟩ + ⟨Ta, Tb⟩ = ⟨a, Δ_H b⟩``."""
    wa, wb = _form_of(cx, a, k), _form_of(cx, b, k)
    da, db = exterior_derivative(cx, wa, k), exterior_derivative(cx, wb, k)
    ca, cb = codifferential(cx, wa, k), codifferential(cx, wb, k)
    T = cx.dropped(k)
    ta, tb = T @ wa.values, T @ wb.values
    dropped = float(np.dot(ta * cx.dropped_mass(k).diagonal(), tb)) if T.shape[0] else 0.0
    return da.space.inner(da.values, db.values) + ca.space.inner(ca.values, cb.values) + dropped


def hodge_energy(cx: HodgeComplex, omega: KForm | Section | np.ndarray, k: int) -> float:
    """E_H(ω) = ½(‖dω‖² + ‖δω‖² + ‖Tω‖²); ½∫Γ(f) dm on functions."""
    return 0.5 * hodge_pairing(cx, omega, omega, k)


# -------------------------------------------------------- harmonic forms


@dataclass(frozen=True)
class HodgeReport:
    degree: int
    form_dim: int
    harmonic_dim: Optional[int]
    betti_rank: Optional[int]
    eigenvalues: list[float]
    threshold: Optional[float]
    gap_ratio: Optional[float]
    conclusive: bool
    d2_defect: float
    note: str = ""

    def to_dict(self) -> dict[str, object]:
        return {
            "degree": self.degree,
            "form_dim": self.form_dim,
            "betti_eigen": self.harmonic_dim,
            "betti_rank": self.betti_rank,
            "eigenvalues": self.eigenvalues,
            "threshold": self.threshold,
            "gap_ratio": self.gap_ratio,
            "conclusive": self.conclusive,
            "d2_defect": self.d2_defect,
            "note": self.note,
        }


@dataclass(frozen=True)
class HarmonicBasis:
    report: HodgeReport
    # (N_k, h), M-orthonormal.
    forms: np.ndarray
    space: FormSpace


def _smallest_eigenpairs(A: sparse.csr_matrix, q: int, cfg: Settings) -> tuple[np.ndarray, np.ndarray]:
    N = A.shape[0]
    if N <= cfg.DENSE_EIG_MAX or q >= N - 1:
        lam, vec = np.linalg.eigh(A.toarray())
        return lam[:q], vec[:, :q]
    rng = np.random.default_rng(cfg.SEED)
    v0 = rng.standard_normal(N)
    shift = -1e-6 * max(float(abs(A).max()), 1.0)
    lam, vec = spla.eigsh(A.tocsc(), k=q, sigma=shift, which="LM", v0=v0, maxiter=cfg.EIGSH_MAX_ITER)
    order = np.argsort(lam)
    return lam[order], vec[:, order]


def _low_subspace(A: sparse.csr_matrix, tau: float, cfg: Settings) -> Optional[np.ndarray]:
    """Orthonormal eigenvectors of ``A`` below ``tau``; None past ``RANK_KERNEL_MAX``."""
    N = A.shape[0]
    if N <= cfg.DENSE_EIG_MAX:
        lam, vec = np.linalg.eigh(A.toarray())
        return vec[:, lam < tau]
    cap = min(cfg.RANK_KERNEL_MAX, N - 2)
    q = min(16, cap)
    while True:
        lam, vec = _smallest_eigenpairs(A, q, cfg)
        if lam[-1] >= tau:
            return vec[:, lam < tau]
        if q >= cap:
            return None
        q = min(2 * q, cap)


def _exact_overlap(cx: HodgeComplex, k: int, Z: np.ndarray, tau: float) -> np.ndarray:
    """``Zᵀ P Z`` with ``P = A(AᵀA + τ)⁻¹Aᵀ`` the soft projector onto ``im d_{k-1}``."""
    A = cx.sym_d(k - 1)
    if max(A.shape) <= cx.cfg.DENSE_EIG_MAX:
        u, s, _ = np.linalg.svd(A.toarray(), full_matrices=False)
        c = u.T @ Z
        return c.T @ ((s * s / (s * s + tau))[:, None] * c)
    damp = math.sqrt(tau)
    PZ = np.column_stack(
        [A @ spla.lsqr(A, z, damp=damp, atol=1e-12, btol=1e-12, iter_lim=max(10 * A.shape[1], 1000))[0] for z in Z.T]
    )
    O = Z.T @ PZ
    return 0.5 * (O + O.T)


def _rank_betti(cx: HodgeComplex, k: int, tau: float) -> Optional[int]:
    """``dim ker d_k − rank d_{k-1}`` with singular values below ``√τ`` read as zero.

    Closed forms are the low eigenspace of ``dᵀd + TᵀT``; the image of
    ``d_{k-1}`` is projected into it before counting.
    """
    cfg = cx.cfg
    try:
        Z = _low_subspace(cx.closed_gram(k), tau, cfg)
    except spla.ArpackNoConvergence:
        logger.warning("rank Betti eigensolver did not converge", extra={"degree": k})
        return None
    if Z is None:
        logger.warning("closed-form space exceeds RANK_KERNEL_MAX", extra={"degree": k, "cap": cfg.RANK_KERNEL_MAX})
        return None
    if k == 0 or cx.space(k - 1).size == 0 or Z.shape[1] == 0:
        return int(Z.shape[1])
    # Image of d_{k-1} projected into ker d_k absorbs the d∘d defect.
    overlap = np.linalg.eigvalsh(_exact_overlap(cx, k, Z, tau))
    return int(Z.shape[1] - np.count_nonzero(overlap > 0.5))


def harmonic_basis(cx: HodgeComplex, k: int, count_hint: int = 3) -> HarmonicBasis:
    """Harmonic k-forms from the bottom of the Δ_H spectrum.

    ``λ_ref`` is the first eigenvalue above the median of the smallest
    ``2·count_hint``; eigenvalues below ``HARMONIC_GAP_TOL·λ_ref`` are
    harmonic. The report is conclusive only when the ratio between the
    first eigenvalue above and the last one below reaches ``GAP_FACTOR``.
    """
    cfg = cx.cfg
    space = cx.space(k)
    N = space.size
    defect = cx.d2_defect(max(k - 1, 0))
    if N == 0:
        report = HodgeReport(k, 0, 0, 0, [], None, None, True, defect, note="trivial form space")
        return HarmonicBasis(report, np.zeros((0, 0)), space)

    A = cx.sym_laplacian(k)
    q = min(N, 2 * max(count_hint, 1) + 2)
    try:
        lam, vec = _smallest_eigenpairs(A, q, cfg)
    except spla.ArpackNoConvergence:
        logger.warning("Hodge eigensolver did not converge", extra={"degree": k, "form_dim": N})
        report = HodgeReport(k, N, None, None, [], None, None, False, defect, note="eigensolver did not converge")
        return HarmonicBasis(report, np.zeros((N, 0)), space)

    lam = np.clip(lam, 0.0, None)
    head = lam[: min(q, 2 * max(count_hint, 1))]
    med = float(np.median(head))
    above = lam[lam > med]
    lam_ref = float(above[0]) if above.size else float(lam[-1])
    tau = cfg.HARMONIC_GAP_TOL * lam_ref
    below = lam < tau
    h = int(below.sum())
    scale = max(float(abs(A).sum(axis=1).max()), 1.0)
    floor = cfg.TOL_SPECTRAL * scale
    note = ""
    if h == lam.shape[0]:
        gap = None
        conclusive = False
        note = "no eigenvalue above the harmonic threshold"
    else:
        first_above = float(lam[h])
        last_below = float(lam[h - 1]) if h else 0.0
        gap = first_above / max(last_below, floor)
        conclusive = gap >= cfg.GAP_FACTOR
        if not conclusive:
            note = "spectral gap below GAP_FACTOR"
    if not conclusive:
        logger.warning("inconclusive harmonic count", extra={"degree": k, "gap_ratio": gap, "harmonic": h})

    betti = _rank_betti(cx, k, tau) if tau > 0 else None
    forms = vec[:, :h] / np.sqrt(space.weights)[:, None]
    report = HodgeReport(
        degree=k,
        form_dim=N,
        harmonic_dim=h,
        betti_rank=betti,
        eigenvalues=[float(x) for x in lam],
        threshold=tau,
        gap_ratio=gap,
        conclusive=conclusive,
        d2_defect=defect,
        note=note,
    )
    logger.info("harmonic forms", extra={"degree": k, "harmonic": h, "betti_rank": betti, "gap_ratio": gap})
    return HarmonicBasis(report, forms, space)


# ---------------------------------------------------------- decomposition


@dataclass(frozen=True)
class HodgeDecomposition:
    exact: KForm
    coexact: KForm
    harmonic: KForm
    orthogonality: float
    harmonic_residual: float


def _lsqr(A: sparse.spmatrix, b: np.ndarray) -> np.ndarray:
    if A.shape[1] == 0 or A.nnz == 0:
        return np.zeros(A.shape[1])
    sol = spla.lsqr(A, b, atol=1e-14, btol=1e-14, iter_lim=max(10 * A.shape[1], 1000))
    return sol[0]


def hodge_decompose(cx: HodgeComplex, omega: KForm | Section | np.ndarray, k: int) -> HodgeDecomposition:
    """``ω = dα + δβ + h`` by weighted least squares."""
    w = _form_of(cx, omega, k)
    space = w.space
    sq = np.sqrt(space.weights)
    target = sq * w.values
    exact = np.zeros_like(target)
    coexact = np.zeros_like(target)
    if k > 0:
        Dm = cx.sym_d(k - 1)
        exact = Dm @ _lsqr(Dm, target)
    Dk = cx.sym_d(k)
    if Dk.shape[0]:
        DkT = Dk.T.tocsr()
        coexact = DkT @ _lsqr(DkT, target)
    harm = target - exact - coexact
    total = max(float(np.dot(target, target)), cx.cfg.RESIDUAL_FLOOR)
    ortho = max(abs(float(np.dot(exact, coexact))), abs(float(np.dot(exact, harm))), abs(float(np.dot(coexact, harm)))) / total
    lap = cx.sym_laplacian(k) @ harm
    hres = float(np.linalg.norm(lap)) / max(float(np.linalg.norm(target)), cx.cfg.RESIDUAL_FLOOR)
    return HodgeDecomposition(
        exact=space.form(exact / sq),
        coexact=space.form(coexact / sq),
        harmonic=space.form(harm / sq),
        orthogonality=ortho,
        harmonic_residual=hres,
    )


# ---------------------------------------------------------- pullbacks


def pullback_form(phi: PointMap, cx_x: HodgeComplex, cx_y: HodgeComplex, omega: KForm) -> KForm:
    """``φ*ω = Σ_B (α_B∘φ)·d(g_{b₁}∘φ)∧…∧d(g_{b_k}∘φ)``."""
    ct_x, ct_y = cx_x.ct, cx_y.ct
    if ct_x.space is not phi.target or ct_y.space is not phi.source:
        raise SpaceMismatchError("complexes do not match the map")
    k = omega.degree
    alpha = np.einsum("nJB,nJ->nB", compound(ct_x.psi, k), omega.space.to_padded(omega.values))
    dpull = differentials(ct_y, ct_x.generators[phi.phi])
    wedges = compound(dpull, k)  # (n_Y, S_k^Y, R_k)
    padded = np.einsum("nJB,nB->nJ", wedges, alpha[phi.phi])
    target = cx_y.space(k)
    return target.form(target.to_vector(padded))


@dataclass(frozen=True)
class CohomologyMap:
    degree: int
    matrix: np.ndarray
    functoriality_residual: float
    source: HodgeReport
    target: HodgeReport


def cohomology_pullback(phi: PointMap, cx_x: HodgeComplex, cx_y: HodgeComplex, k: int, count_hint: int = 3) -> CohomologyMap:
    """Induced map ``H^k(X) → H^k(Y)`` in harmonic bases."""
    hx = harmonic_basis(cx_x, k, count_hint)
    hy = harmonic_basis(cx_y, k, count_hint)
    sx, sy = cx_x.space(k), cx_y.space(k)
    matrix = np.zeros((hy.forms.shape[1], hx.forms.shape[1]))
    worst = 0.0
    for j in range(hx.forms.shape[1]):
        omega = sx.form(hx.forms[:, j])
        pulled = pullback_form(phi, cx_x, cx_y, omega)
        matrix[:, j] = [sy.inner(pulled.values, hy.forms[:, i]) for i in range(hy.forms.shape[1])]
        lhs = exterior_derivative(cx_y, pulled, k)
        rhs = pullback_form(phi, cx_x, cx_y, exterior_derivative(cx_x, omega, k))
        scale = max(lhs.norm(), rhs.norm(), cx_x.cfg.RESIDUAL_FLOOR)
        worst = max(worst, (lhs - rhs).norm() / scale)
    return CohomologyMap(degree=k, matrix=matrix, functoriality_residual=worst, source=hx.report, target=hy.report)
