"""
Finite metric measure space.

A `FiniteMMSpace` is the discrete (X, d, m, L): ``n`` points with strictly
positive measure weights, an optional distance table and a sparse Markov
generator ``L`` that is m-symmetric (``m_i L_ij = m_j L_ji``), has zero row
sums and nonnegative off-diagonal rates. Every operator in the engine
factors through ``(m, L)``.

Scalar fields are plain ``numpy`` vectors of length ``n``; functions here
check lengths and raise `SpaceMismatchError` otherwise. The carré du champ
is evaluated through the edge form

    Γ(f, g)(i) = ½ Σ_j L_ij (f_j − f_i)(g_j − g_i),

which equals ½(L(fg) − f·Lg − g·Lf) and is nonnegative on the diagonal by
the sign conditions of ``L``.

Instances are frozen after construction; derived tables (edge lists,
spectral decompositions) are cached on first use and never mutated, so a
space can be shared freely between threads.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Literal, Optional

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph
from scipy.sparse import linalg as spla

from src.gamma_calc.core.config import Settings, settings as default_settings
from src.gamma_calc.core.errors import (
    GammaCalcError,
    SizeCapError,
    SpaceError,
    SpaceMismatchError,
    UsageError,
)

logger = logging.getLogger(__name__)

HeatScheme = Literal["implicit_euler", "spectral"]

# Builder rounding allowed in the m-symmetry / row-sum checks.
_STRUCTURE_RTOL = 1e-12
# Triangle inequality is O(n^3); larger tables are trusted.
_TRIANGLE_CHECK_MAX = 400


@dataclass(frozen=True)
class EdgeList:
    """Directed off-diagonal entries of the generator in CSR order.

    ``tail[e] -> head[e]`` with rate ``L[tail, head]``; every undirected
    edge appears in both directions. ``slot[e]`` is the position of the
    edge among the out-edges of its tail.
    """

    tail: np.ndarray
    head: np.ndarray
    rate: np.ndarray
    slot: np.ndarray
    max_degree: int
    scatter: sparse.csr_matrix

    @property
    def count(self) -> int:
        return int(self.tail.shape[0])


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class FiniteMMSpace:
    name: str
    m: np.ndarray
    gen: sparse.csr_matrix
    dist: Optional[np.ndarray] = None
    coords: Optional[np.ndarray] = None
    faces: Optional[np.ndarray] = None
    # Mesh backends resolve the cotangent fiber from first-order stencil
    # content only (see calculus.first_order).
    embedded: bool = False
    expected_dim: int = 1
    # Side lengths of a periodic box, when the space is a flat torus.
    periods: Optional[tuple[float, ...]] = None
    kind: str = "custom"
    params: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        m = np.array(self.m, dtype=float).ravel()
        gen = sparse.csr_matrix(self.gen, dtype=float)
        gen.sum_duplicates()
        gen.sort_indices()
        object.__setattr__(self, "m", _readonly(m))
        object.__setattr__(self, "gen", gen)
        if self.dist is not None:
            object.__setattr__(self, "dist", _readonly(np.array(self.dist, dtype=float)))
        if self.coords is not None:
            object.__setattr__(self, "coords", _readonly(np.array(self.coords, dtype=float)))
        if self.faces is not None:
            object.__setattr__(self, "faces", _readonly(np.array(self.faces, dtype=np.int64)))
        self._validate()

    # ------------------------------------------------------------ invariants

    def _validate(self) -> None:
        n = self.m.shape[0]
        if n == 0:
            raise SpaceError("a space needs at least one point")
        if self.gen.shape != (n, n):
            raise SpaceError(f"generator shape {self.gen.shape} does not match n={n}")
        if not np.all(np.isfinite(self.m)) or np.any(self.m <= 0):
            bad = np.flatnonzero(~(self.m > 0))
            raise SpaceError(f"measure weights must be strictly positive (points {bad[:10].tolist()})")

        scale = max(float(np.max(np.abs(self.gen.data))) if self.gen.nnz else 0.0, 1.0)
        off = self.gen - sparse.diags(self.gen.diagonal())
        if off.nnz and off.data.min() < -_STRUCTURE_RTOL * scale:
            raise SpaceError("generator has negative off-diagonal rates")
        row_sums = np.asarray(self.gen.sum(axis=1)).ravel()
        if np.max(np.abs(row_sums), initial=0.0) > _STRUCTURE_RTOL * scale * max(n, 1):
            raise SpaceError("generator rows must sum to zero")
        weighted = sparse.diags(self.m) @ self.gen
        asym = abs(weighted - weighted.T)
        wscale = max(float(abs(weighted).max()), 1e-300)
        if asym.nnz and asym.max() > _STRUCTURE_RTOL * wscale * 10:
            raise SpaceError("generator is not symmetric with respect to the measure")

        if self.dist is not None:
            d = self.dist
            if d.shape != (n, n):
                raise SpaceError(f"distance table shape {d.shape} does not match n={n}")
            if np.any(d < 0) or np.any(np.diag(d) != 0) or not np.allclose(d, d.T, rtol=0, atol=1e-12):
                raise SpaceError("distance table must be symmetric, nonnegative, zero on the diagonal")
            if n <= _TRIANGLE_CHECK_MAX:
                tol = 1e-12 * max(float(d.max()), 1.0)
                for k in range(n):
                    if np.any(d > d[:, k, None] + d[None, k, :] + tol):
                        raise SpaceError("distance table violates the triangle inequality")

    # ---------------------------------------------------------------- basics

    @property
    def n(self) -> int:
        return int(self.m.shape[0])

    @property
    def total_mass(self) -> float:
        return float(self.m.sum())

    def check_field(self, f: Any, what: str = "field") -> np.ndarray:
        arr = np.asarray(f, dtype=float)
        if arr.ndim == 0 or arr.shape[0] != self.n:
            raise SpaceMismatchError(
                f"{what} has leading length {arr.shape[0] if arr.ndim else 0}, space {self.name!r} has n={self.n}"
            )
        return arr

    def apply(self, f: np.ndarray) -> np.ndarray:
        """Generator action ``Lf`` (columnwise for 2-d input)."""
        return np.asarray(self.gen @ self.check_field(f))

    def integrate(self, f: np.ndarray) -> float | np.ndarray:
        """∫ f dm, reducing the leading (point) axis."""
        arr = self.check_field(f)
        return np.tensordot(self.m, arr, axes=(0, 0))

    def inner(self, f: np.ndarray, g: np.ndarray) -> float:
        """Weighted pairing ``Σ f_i g_i m_i``."""
        return float(np.dot(self.check_field(f) * self.check_field(g), self.m))

    def l2_norm(self, f: np.ndarray) -> float:
        return math.sqrt(max(self.inner(f, f), 0.0))

    # ------------------------------------------------------------ edge tables

    @cached_property
    def edges(self) -> EdgeList:
        off = (self.gen - sparse.diags(self.gen.diagonal())).tocsr()
        off.eliminate_zeros()
        off.sort_indices()
        counts = np.diff(off.indptr)
        tail = np.repeat(np.arange(self.n), counts)
        head = off.indices.astype(np.int64)
        rate = off.data.astype(float)
        slot = np.arange(head.shape[0]) - off.indptr[tail]
        scatter = sparse.csr_matrix(
            (np.ones(head.shape[0]), (tail, np.arange(head.shape[0]))),
            shape=(self.n, head.shape[0]),
        )
        for a in (tail, head, rate, slot):
            _readonly(a)
        return EdgeList(
            tail=tail,
            head=head,
            rate=rate,
            slot=slot,
            max_degree=int(counts.max(initial=0)),
            scatter=scatter,
        )

    def edge_diff(self, f: np.ndarray) -> np.ndarray:
        """``f[head] − f[tail]`` for every directed edge."""
        arr = self.check_field(f)
        e = self.edges
        return arr[e.head] - arr[e.tail]

    def neighbors(self, i: int) -> np.ndarray:
        row = self.gen.getrow(i)
        return np.array(sorted(set(row.indices.tolist()) - {i}), dtype=np.int64)

    def ball(self, i: int, radius: int) -> np.ndarray:
        """Combinatorial ball of ``radius`` hops around ``i`` (sorted)."""
        seen = {int(i)}
        frontier = {int(i)}
        for _ in range(radius):
            nxt: set[int] = set()
            for p in frontier:
                nxt.update(self.gen.indices[self.gen.indptr[p] : self.gen.indptr[p + 1]].tolist())
            frontier = nxt - seen
            seen |= nxt
        return np.array(sorted(seen), dtype=np.int64)

    @cached_property
    def components(self) -> np.ndarray:
        """Connected-component label per point."""
        _, labels = csgraph.connected_components(abs(self.gen), directed=False)
        return _readonly(labels.astype(np.int64))

    # ---------------------------------------------------------- carré du champ

    def gamma(self, f: np.ndarray, g: np.ndarray) -> np.ndarray:
        """Carré du champ Γ(f, g), columnwise for matching 2-d inputs."""
        df = self.edge_diff(f)
        dg = self.edge_diff(g)
        if df.shape != dg.shape:
            raise SpaceMismatchError("Γ needs operands of matching shape")
        e = self.edges
        half = 0.5 * e.rate
        prod = half.reshape((-1,) + (1,) * (df.ndim - 1)) * (df * dg)
        out = e.scatter @ prod.reshape(e.count, -1)
        return np.asarray(out).reshape((self.n,) + df.shape[1:])

    def gamma_matrix(self, U: np.ndarray, V: Optional[np.ndarray] = None) -> np.ndarray:
        """All pairings ``Γ(U[:, p], V[:, q])`` as an ``(n, p, q)`` array."""
        U2 = self.check_field(U).reshape(self.n, -1)
        V2 = U2 if V is None else self.check_field(V).reshape(self.n, -1)
        e = self.edges
        dU = U2[e.head] - U2[e.tail]
        dV = V2[e.head] - V2[e.tail]
        prod = (0.5 * e.rate)[:, None, None] * (dU[:, :, None] * dV[:, None, :])
        out = e.scatter @ prod.reshape(e.count, -1)
        return np.asarray(out).reshape(self.n, U2.shape[1], V2.shape[1])

    def dirichlet_energy(self, f: np.ndarray) -> float:
        """E(f) = ½ ∫ Γ(f, f) dm."""
        return 0.5 * float(self.integrate(self.gamma(f, f)))

    # ---------------------------------------------------------------- spectra

    @cached_property
    def _sqrt_m(self) -> np.ndarray:
        return _readonly(np.sqrt(self.m))

    def symmetric_generator(self) -> sparse.csr_matrix:
        """``M^½ L M^-½``, symmetric and negative semidefinite."""
        s = sparse.diags(self._sqrt_m)
        si = sparse.diags(1.0 / self._sqrt_m)
        S = (s @ self.gen @ si).tocsr()
        return ((S + S.T) * 0.5).tocsr()

    @cached_property
    def _dense_spectrum(self) -> tuple[np.ndarray, np.ndarray]:
        lam, vec = np.linalg.eigh(self.symmetric_generator().toarray())
        _readonly(lam)
        _readonly(vec)
        return lam, vec

    def low_eigenpairs(
        self, count: int, *, cfg: Optional[Settings] = None
    ) -> tuple[np.ndarray, np.ndarray]:
        """Smallest ``count`` eigenvalues of −L with m-orthonormal eigenfunctions.

        Dense ``eigh`` up to ``DENSE_EIG_MAX`` points, shift-invert ``eigsh``
        above. Eigenvalues ascend; the constant mode comes first.
        """
        cfg = cfg or default_settings
        count = max(0, min(int(count), self.n))
        if count == 0:
            return np.zeros(0), np.zeros((self.n, 0))
        if self.n <= cfg.DENSE_EIG_MAX or count >= self.n - 1:
            lam, vec = self._dense_spectrum
            # eigh ascends on L (≤ 0); the low end of −L is the top end of L.
            lam = -lam[::-1][:count]
            vec = vec[:, ::-1][:, :count]
        else:
            S = -self.symmetric_generator()
            rng = np.random.default_rng(cfg.SEED)
            v0 = self._sqrt_m + 1e-3 * rng.standard_normal(self.n)
            shift = -1e-6 * max(float(abs(S).max()), 1.0)
            try:
                lam, vec = spla.eigsh(
                    S.tocsc(), k=count, sigma=shift, which="LM", v0=v0, maxiter=cfg.EIGSH_MAX_ITER
                )
            except spla.ArpackNoConvergence as exc:
                raise GammaCalcError(f"eigensolver did not converge for {count} eigenpairs") from exc
            order = np.argsort(lam)
            lam, vec = lam[order], vec[:, order]
        funcs = vec / self._sqrt_m[:, None]
        # Fix signs so the output is reproducible across solvers.
        pivots = np.argmax(np.abs(funcs), axis=0)
        signs = np.sign(funcs[pivots, np.arange(funcs.shape[1])])
        signs[signs == 0] = 1.0
        return np.clip(lam, 0.0, None), funcs * signs

    # ------------------------------------------------------------- heat flow

    def kernel_projection(self, f: np.ndarray) -> np.ndarray:
        """m-weighted mean of ``f`` on each connected component (t = ∞)."""
        arr = self.check_field(f)
        labels = self.components
        k = int(labels.max()) + 1
        mass = np.bincount(labels, weights=self.m, minlength=k)
        flat = arr.reshape(self.n, -1)
        out = np.empty_like(flat)
        for col in range(flat.shape[1]):
            num = np.bincount(labels, weights=self.m * flat[:, col], minlength=k)
            out[:, col] = (num / mass)[labels]
        return out.reshape(arr.shape)

    def heat_flow(
        self,
        f: np.ndarray,
        t: float,
        *,
        scheme: HeatScheme = "implicit_euler",
        steps: int = 64,
        cfg: Optional[Settings] = None,
    ) -> np.ndarray:
        """Solve ``du/dt = Lu``, ``u(0) = f`` up to time ``t``."""
        cfg = cfg or default_settings
        arr = self.check_field(f)
        if not t >= 0:
            raise UsageError(f"heat flow time must be nonnegative, got {t!r}")
        if t == 0:
            return arr.copy()
        if math.isinf(t):
            return self.kernel_projection(arr)

        if scheme == "spectral":
            if self.n > cfg.SPECTRAL_MAX_POINTS:
                raise SizeCapError("spectral heat flow", self.n, cfg.SPECTRAL_MAX_POINTS, "SPECTRAL_MAX_POINTS")
            lam, vec = self._dense_spectrum
            coeff = vec.T @ (self._sqrt_m[:, None] * arr.reshape(self.n, -1))
            out = vec @ (np.exp(t * np.minimum(lam, 0.0))[:, None] * coeff)
            return (out / self._sqrt_m[:, None]).reshape(arr.shape)

        if scheme != "implicit_euler":
            raise UsageError(f"unknown heat-flow scheme {scheme!r}")
        if steps < 1:
            raise UsageError("implicit Euler needs at least one step")
        tau = t / steps
        A = (sparse.identity(self.n, format="csc") - tau * self.gen.tocsc()).tocsc()
        try:
            solve = spla.factorized(A)
        except RuntimeError as exc:  # cannot happen for a valid generator
            raise GammaCalcError("implicit Euler system is singular") from exc
        u = arr.reshape(self.n, -1).copy()
        for _ in range(steps):
            u = np.column_stack([solve(u[:, c]) for c in range(u.shape[1])])
        logger.debug("heat flow done", extra={"t": t, "steps": steps, "n": self.n})
        return u.reshape(arr.shape)

    # ------------------------------------------------------------- summaries

    def describe(self) -> dict[str, Any]:
        e = self.edges
        return {
            "name": self.name,
            "kind": self.kind,
            "n": self.n,
            "edges": e.count // 2,
            "total_mass": self.total_mass,
            "max_degree": e.max_degree,
            "embedded": self.embedded,
            "has_dist": self.dist is not None,
            "components": int(self.components.max()) + 1,
            "params": dict(self.params),
        }


# ------------------------------------------------------- module-level API


def carre_du_champ(space: FiniteMMSpace, f: np.ndarray, g: np.ndarray) -> np.ndarray:
    return space.gamma(f, g)


def dirichlet_energy(space: FiniteMMSpace, f: np.ndarray) -> float:
    return space.dirichlet_energy(f)


def heat_flow(
    space: FiniteMMSpace,
    f: np.ndarray,
    t: float,
    *,
    scheme: HeatScheme = "implicit_euler",
    steps: int = 64,
    cfg: Optional[Settings] = None,
) -> np.ndarray:
    return space.heat_flow(f, t, scheme=scheme, steps=steps, cfg=cfg)


def from_weights(
    name: str,
    weights: sparse.spmatrix,
    m: np.ndarray,
    **kwargs: Any,
) -> FiniteMMSpace:
    """Assemble ``L = M⁻¹(W − diag(W·1))`` from symmetric edge weights."""
    W = sparse.csr_matrix(weights, dtype=float)
    W = W - sparse.diags(W.diagonal())
    W = ((W + W.T) * 0.5).tocsr()
    W.eliminate_zeros()
    m = np.asarray(m, dtype=float)
    deg = np.asarray(W.sum(axis=1)).ravel()
    L = sparse.diags(1.0 / m) @ (W - sparse.diags(deg))
    return FiniteMMSpace(name=name, m=m, gen=sparse.csr_matrix(L), **kwargs)
