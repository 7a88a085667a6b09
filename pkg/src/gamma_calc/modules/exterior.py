"""
Exterior powers of fiber bundles.

The k-th exterior power of a bundle with padded width ``D`` uses the
k-subsets of ``range(D)`` as fiber basis, in colexicographic order so that
the subsets of the first ``d`` slots form a prefix (the padding stays
trailing, as for every other bundle). The Gram matrix on basis k-vectors
is the matrix of k×k minors of the base Gram,

    ⟨e_I, e_J⟩ = det(G[I, J]),

and the wedge of k sections has coefficient ``det(V[I, :])`` on ``e_I``.
By Cauchy–Binet this realizes ``⟨v₁∧…∧v_k, w₁∧…∧w_k⟩ = det(⟨v_i, w_j⟩)``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from src.gamma_calc.core.errors import SpaceMismatchError
from src.gamma_calc.modules.bundle import FiberBundle, Section


@lru_cache(maxsize=256)
def subsets(width: int, k: int) -> tuple[tuple[int, ...], ...]:
    """k-subsets of ``range(width)`` in colexicographic order."""
    if k < 0 or k > width:
        return ()
    combos = itertools.combinations(range(width), k)
    return tuple(sorted(combos, key=lambda s: tuple(reversed(s))))


@lru_cache(maxsize=256)
def subset_index(width: int, k: int) -> dict[tuple[int, ...], int]:
    return {s: i for i, s in enumerate(subsets(width, k))}


def compound(A: np.ndarray, k: int) -> np.ndarray:
    """k-th compound matrix (all k×k minors) over the trailing two axes.

    Rows and columns are indexed by colexicographic k-subsets. ``k = 0``
    gives the 1×1 identity, ``k`` beyond either side gives an empty axis.
    """
    A = np.asarray(A, dtype=float)
    p, q = A.shape[-2], A.shape[-1]
    lead = A.shape[:-2]
    rows, cols = subsets(p, k), subsets(q, k)
    if k == 0:
        return np.ones(lead + (1, 1))
    if not rows or not cols:
        return np.zeros(lead + (len(rows), len(cols)))
    r = np.array(rows)
    c = np.array(cols)
    minors = A[..., r[:, None, :, None], c[None, :, None, :]]
    return np.linalg.det(minors)


@dataclass(frozen=True, eq=False)
class ExteriorPower:
    """``Λ^k`` of a base bundle together with its subset bookkeeping."""

    base: FiberBundle
    degree: int
    bundle: FiberBundle

    @property
    def basis(self) -> tuple[tuple[int, ...], ...]:
        return subsets(self.base.width, self.degree)


def exterior_power(b: FiberBundle, k: int) -> ExteriorPower:
    if k < 0:
        raise ValueError(f"exterior degree must be >= 0, got {k}")
    dims = np.array([math.comb(int(d), k) for d in b.dims], dtype=np.int64)
    gram = compound(b.gram, k)
    if gram.shape[1] == 0:
        gram = np.zeros((b.n, 0, 0))
    bundle = FiberBundle(b.space, dims, gram, label=f"Λ{k}({b.label})")
    return ExteriorPower(base=b, degree=k, bundle=bundle)


def wedge(ext: ExteriorPower, vectors: Sequence[Section]) -> Section:
    """``v₁ ∧ … ∧ v_k`` as a section of ``ext``."""
    if len(vectors) != ext.degree:
        raise ValueError(f"wedge into Λ{ext.degree} needs {ext.degree} sections, got {len(vectors)}")
    for v in vectors:
        if not ext.base.compatible(v.bundle):
            raise SpaceMismatchError("wedge factors must live in the base bundle")
    if ext.degree == 0:
        return Section(ext.bundle, np.ones((ext.base.n, 1)))
    V = np.stack([v.coeffs for v in vectors], axis=2)  # (n, D, k)
    coeffs = compound(V, ext.degree)[:, :, 0]
    return Section(ext.bundle, coeffs)


@lru_cache(maxsize=256)
def _shuffle_table(width: int, p: int, q: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    out_idx, left_idx, right_idx, signs = [], [], [], []
    left_lookup = subset_index(width, p)
    right_lookup = subset_index(width, q)
    for kk, K in enumerate(subsets(width, p + q)):
        for I in itertools.combinations(K, p):
            J = tuple(x for x in K if x not in I)
            inversions = sum(1 for a in I for b in J if a > b)
            out_idx.append(kk)
            left_idx.append(left_lookup[I])
            right_idx.append(right_lookup[J])
            signs.append(-1.0 if inversions % 2 else 1.0)
    return (
        np.array(out_idx, dtype=np.int64),
        np.array(left_idx, dtype=np.int64),
        np.array(right_idx, dtype=np.int64),
        np.array(signs),
    )


def wedge_forms(
    omega: Section, p: int, eta: Section, q: int, target: ExteriorPower
) -> Section:
    """Wedge of a p-form and a q-form of the same base into ``target`` (degree p+q)."""
    if target.degree != p + q:
        raise ValueError(f"target degree {target.degree} != {p} + {q}")
    width = target.base.width
    out = np.zeros((target.base.n, len(subsets(width, p + q))))
    if out.shape[1]:
        o, li, ri, sg = _shuffle_table(width, p, q)
        contrib = sg[None, :] * omega.coeffs[:, li] * eta.coeffs[:, ri]
        np.add.at(out, (slice(None), o), contrib)
    return Section(target.bundle, out)
