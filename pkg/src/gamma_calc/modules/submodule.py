"""
Generated submodules and the dimensional decomposition.

Ranks are decided on singular values of ``G_i^½ C_i`` (``C_i`` the
generator coefficients at ``i``): values below ``TOL_RANK`` times the
largest singular value over the whole bundle count as zero. A bundle-wide
scale keeps points where every generator vanishes at rank zero instead of
promoting round-off to a direction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from src.gamma_calc.core.config import Settings, settings as default_settings
from src.gamma_calc.core.errors import SpaceMismatchError
from src.gamma_calc.modules.bundle import FiberBundle, Section


@dataclass(frozen=True)
class GeneratedSubmodule:
    bundle: FiberBundle
    rank: np.ndarray
    # (n, D, R) coefficient vectors, G-orthonormal in the first rank[i] columns.
    frame: np.ndarray

    def frame_sections(self) -> list[Section]:
        return [Section(self.bundle, self.frame[:, :, c]) for c in range(self.frame.shape[2])]


def _gram_sqrt(gram: np.ndarray) -> np.ndarray:
    lam, Q = np.linalg.eigh(gram)
    lam = np.clip(lam, 0.0, None)
    return np.einsum("nab,nb,ncb->nac", Q, np.sqrt(lam), Q)


def generated_submodule(
    b: FiberBundle, gens: Sequence[Section], *, cfg: Optional[Settings] = None
) -> GeneratedSubmodule:
    """Per-point span of ``gens`` with rank and a G-orthonormal frame."""
    cfg = cfg or default_settings
    if not gens:
        raise ValueError("generated_submodule needs at least one generator")
    for g in gens:
        if not b.compatible(g.bundle):
            raise SpaceMismatchError("generator lives in another bundle")
    C = np.stack([g.coeffs for g in gens], axis=2)  # (n, D, r)
    B = np.einsum("nab,nbr->nar", _gram_sqrt(b.gram), C)
    _, s, vt = np.linalg.svd(B, full_matrices=False)
    scale = max(float(s.max(initial=0.0)), cfg.RESIDUAL_FLOOR)
    keep = s > cfg.TOL_RANK * scale
    rank = keep.sum(axis=1).astype(np.int64)
    width = int(rank.max(initial=0))
    inv = np.where(keep, 1.0 / np.where(keep, s, 1.0), 0.0)
    # frame = C V S⁻¹ restricted to kept singular directions.
    frame = np.einsum("nar,nkr,nk->nak", C, vt, inv)[:, :, :width]
    return GeneratedSubmodule(bundle=b, rank=rank, frame=frame)


@dataclass(frozen=True)
class DimensionalDecomposition:
    dim_loc: np.ndarray
    classes: dict[int, list[int]] = field(default_factory=dict)

    def histogram(self) -> dict[int, int]:
        return {k: len(v) for k, v in sorted(self.classes.items())}

    def to_dict(self) -> dict[str, object]:
        return {
            "dim_loc": self.dim_loc.tolist(),
            "classes": {str(k): v for k, v in sorted(self.classes.items())},
            "histogram": {str(k): c for k, c in self.histogram().items()},
        }


def decomposition_from_ranks(rank: np.ndarray) -> DimensionalDecomposition:
    rank = np.asarray(rank, dtype=np.int64)
    classes: dict[int, list[int]] = {}
    for k in np.unique(rank):
        classes[int(k)] = np.flatnonzero(rank == k).tolist()
    return DimensionalDecomposition(dim_loc=rank, classes=classes)


def fiber_rank(b: FiberBundle, *, cfg: Optional[Settings] = None) -> np.ndarray:
    """Numerical rank of every Gram matrix, bundle-wide relative threshold."""
    cfg = cfg or default_settings
    if b.width == 0:
        return np.zeros(b.n, dtype=np.int64)
    lam = np.linalg.eigvalsh(b.gram)
    sv = np.sqrt(np.clip(lam, 0.0, None))
    scale = max(float(sv.max(initial=0.0)), cfg.RESIDUAL_FLOOR)
    return (sv > cfg.TOL_RANK * scale).sum(axis=1).astype(np.int64)


def dimensional_decomposition(
    b: FiberBundle, *, cfg: Optional[Settings] = None
) -> DimensionalDecomposition:
    """Partition of the points by local fiber rank ``E_k = {i : rank(i) = k}``."""
    return decomposition_from_ranks(fiber_rank(b, cfg=cfg))
