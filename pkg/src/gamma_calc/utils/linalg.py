"""
Small dense linear-algebra helpers shared by the calculus modules.
"""

from __future__ import annotations

import math

import numpy as np

from src.gamma_calc.core.space import FiniteMMSpace


def field_norms(space: FiniteMMSpace, field: np.ndarray) -> dict[str, float]:
    """m-weighted L¹, L² and L∞ norms of a scalar field."""
    a = np.abs(np.asarray(field, dtype=float))
    return {
        "l1": float(np.dot(a, space.m)),
        "l2": math.sqrt(float(np.dot(a * a, space.m))),
        "linf": float(a.max(initial=0.0)),
    }



def pencil_min(
    Q2: np.ndarray, Q1: np.ndarray, *, rtol: float = 1e-8
) -> float:
    """Largest ``K`` with ``Q2 − K·Q1 ⪰ 0`` for symmetric ``Q2`` and PSD ``Q1``.

    The pencil is split over ``range(Q1) ⊕ null(Q1)``. On the null part
    ``Q2`` must be PSD and absorb its coupling to the range part, otherwise
    no ``K`` works and the result is ``-inf``. ``+inf`` means ``Q1 = 0``.
    """
    Q1 = 0.5 * (Q1 + Q1.T)
    Q2 = 0.5 * (Q2 + Q2.T)
    lam, V = np.linalg.eigh(Q1)
    scale1 = max(float(np.abs(lam).max(initial=0.0)), 1e-300)
    on = lam > rtol * scale1
    if not on.any():
        return math.inf
    R, N = V[:, on], V[:, ~on]
    scale2 = max(float(np.abs(Q2).max(initial=0.0)), scale1)
    A = R.T @ Q2 @ R
    D = lam[on]
    if N.shape[1]:
        B = R.T @ Q2 @ N
        C = N.T @ Q2 @ N
        cl, cv = np.linalg.eigh(0.5 * (C + C.T))
        if cl.min() < -rtol * scale2:
            return -math.inf
        keep = cl > rtol * scale2
        # Coupling into null(C) cannot be absorbed.
        leak = B @ cv[:, ~keep]
        if leak.size and np.abs(leak).max() > math.sqrt(rtol) * scale2:
            return -math.inf
        if keep.any():
            Bk = B @ cv[:, keep]
            A = A - Bk @ np.diag(1.0 / cl[keep]) @ Bk.T
    isq = 1.0 / np.sqrt(D)
    S = isq[:, None] * A * isq[None, :]
    return float(np.linalg.eigvalsh(0.5 * (S + S.T)).min())


def symmetric_part(A: np.ndarray) -> np.ndarray:
    return 0.5 * (A + np.swapaxes(A, -1, -2))
