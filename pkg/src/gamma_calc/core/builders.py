"""
Reference-space builders.

Graph builders (``path``, ``cycle``) use unit edge weights and unit vertex
measure. ``grid_torus`` is the periodic lattice with the 2d-neighbour
stencil: rate ``1/h_k²`` along axis k and measure ``Π h_k``, so ``L`` is
the standard finite-difference Laplacian of the flat torus. Mesh builders
(``icosphere``, ``cone``) use cotangent weights with mixed-Voronoi lumped
vertex masses; obtuse-angle weights that come out negative are clamped to
zero with a warning so the Markov sign condition survives.

`build_space` parses builder-spec strings such as
``"grid_torus:2,32,1.0,1.0"``; ``from_file`` reads the JSON interchange
format ``{"n", "measure", "edges": [[i, j, w], ...], "dist"}``.
"""

from __future__ import annotations

import json
import logging
import math
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from src.gamma_calc.core.errors import BuilderError
from src.gamma_calc.core.space import FiniteMMSpace, from_weights

logger = logging.getLogger(__name__)

# Distance tables are dense; beyond this they are left out.
DIST_TABLE_MAX = 2048


# ------------------------------------------------------------------ graphs


def _graph_dist(W: sparse.spmatrix) -> Optional[np.ndarray]:
    if W.shape[0] > DIST_TABLE_MAX:
        return None
    hops = (W != 0).astype(float)
    return csgraph.shortest_path(hops, directed=False, unweighted=True)


def path(n: int) -> FiniteMMSpace:
    if n < 2:
        raise BuilderError(f"path needs n >= 2, got {n}")
    i = np.arange(n - 1)
    W = sparse.coo_matrix((np.ones(n - 1), (i, i + 1)), shape=(n, n))
    W = (W + W.T).tocsr()
    return from_weights(
        f"path:{n}", W, np.ones(n), dist=_graph_dist(W), kind="path", params={"n": n}
    )


def cycle(n: int) -> FiniteMMSpace:
    if n < 3:
        raise BuilderError(f"cycle needs n >= 3, got {n}")
    i = np.arange(n)
    W = sparse.coo_matrix((np.ones(n), (i, (i + 1) % n)), shape=(n, n))
    W = (W + W.T).tocsr()
    angle = 2.0 * np.pi * i / n
    return from_weights(
        f"cycle:{n}",
        W,
        np.ones(n),
        dist=_graph_dist(W),
        coords=np.column_stack([np.cos(angle), np.sin(angle)]),
        kind="cycle",
        params={"n": n},
    )


# ------------------------------------------------------------------- torus


def grid_torus(d: int, res: int, sides: Optional[Sequence[float]] = None) -> FiniteMMSpace:
    """Periodic ``res^d`` lattice on the box ``Π [0, side_k)``."""
    if d < 1:
        raise BuilderError(f"grid_torus dimension must be >= 1, got {d}")
    if res < 2:
        raise BuilderError(f"grid_torus resolution must be >= 2, got {res}")
    sides = [1.0] * d if not sides else [float(s) for s in sides]
    if len(sides) == 1 and d > 1:
        sides = sides * d
    if len(sides) != d:
        raise BuilderError(f"grid_torus needs {d} side lengths, got {len(sides)}")
    if any(not s > 0 for s in sides):
        raise BuilderError(f"grid_torus side lengths must be positive, got {sides}")

    h = np.array(sides) / res
    cell = float(np.prod(h))
    n = res**d
    index = np.arange(n).reshape((res,) * d)
    rows, cols, vals = [], [], []
    for k in range(d):
        nb = np.roll(index, -1, axis=k)
        rows.append(index.ravel())
        cols.append(nb.ravel())
        # Symmetric weight W = m · rate.
        vals.append(np.full(n, cell / h[k] ** 2))
    W = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )
    W = (W + W.T).tocsr()

    grid = np.stack(np.unravel_index(np.arange(n), (res,) * d), axis=1).astype(float)
    coords = grid * h

    dist = None
    if n <= DIST_TABLE_MAX:
        delta = np.abs(coords[:, None, :] - coords[None, :, :])
        delta = np.minimum(delta, np.array(sides) - delta)
        dist = np.sqrt((delta**2).sum(axis=2))
        np.fill_diagonal(dist, 0.0)

    return from_weights(
        f"grid_torus:{d},{res}," + ",".join(f"{s:g}" for s in sides),
        W,
        np.full(n, cell),
        dist=dist,
        coords=coords,
        embedded=True,
        expected_dim=d,
        periods=tuple(sides),
        kind="grid_torus",
        params={"d": d, "res": res, "sides": list(sides)},
    )


# ------------------------------------------------------------------ meshes


def _cot(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    cross = np.linalg.norm(np.cross(u, v), axis=1)
    return np.einsum("ij,ij->i", u, v) / np.maximum(cross, 1e-300)


def cotangent_space(
    name: str,
    vertices: np.ndarray,
    faces: np.ndarray,
    *,
    kind: str,
    params: dict[str, Any],
) -> FiniteMMSpace:
    """Cotangent-weight generator with mixed-Voronoi lumped masses."""
    V = np.asarray(vertices, dtype=float)
    F = np.asarray(faces, dtype=np.int64)
    n = V.shape[0]

    rows, cols, vals = [], [], []
    mass = np.zeros(n)
    for corner in range(3):
        i, j, k = F[:, corner], F[:, (corner + 1) % 3], F[:, (corner + 2) % 3]
        # Angle at k is opposite edge (i, j).
        cot_k = _cot(V[i] - V[k], V[j] - V[k])
        rows.append(i)
        cols.append(j)
        vals.append(0.5 * cot_k)

    # Mixed Voronoi area (Meyer et al.): circumcentric share for
    # non-obtuse triangles, area/2 at an obtuse corner, area/4 elsewhere.
    e0 = V[F[:, 1]] - V[F[:, 0]]
    e1 = V[F[:, 2]] - V[F[:, 0]]
    area = 0.5 * np.linalg.norm(np.cross(e0, e1), axis=1)
    cots = []
    for corner in range(3):
        a, b, c = F[:, corner], F[:, (corner + 1) % 3], F[:, (corner + 2) % 3]
        cots.append(_cot(V[b] - V[a], V[c] - V[a]))
    cots_arr = np.stack(cots, axis=1)  # cot of angle at each corner
    obtuse = cots_arr < 0
    any_obtuse = obtuse.any(axis=1)
    for corner in range(3):
        a, b, c = F[:, corner], F[:, (corner + 1) % 3], F[:, (corner + 2) % 3]
        lab = np.sum((V[b] - V[a]) ** 2, axis=1)
        lac = np.sum((V[c] - V[a]) ** 2, axis=1)
        # cot at c weights edge ab, cot at b weights edge ac.
        voronoi = (lab * cots_arr[:, (corner + 2) % 3] + lac * cots_arr[:, (corner + 1) % 3]) / 8.0
        share = np.where(
            any_obtuse,
            np.where(obtuse[:, corner], area / 2.0, area / 4.0),
            voronoi,
        )
        np.add.at(mass, a, share)

    W = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    ).tocsr()
    W = (W + W.T).tocsr()
    W.sum_duplicates()
    negative = W.data < 0
    if negative.any():
        logger.warning(
            "clamped negative cotangent weights to zero",
            extra={"space": name, "clamped_edges": int(negative.sum()) // 2},
        )
        W.data[negative] = 0.0
        W.eliminate_zeros()
    if np.any(mass <= 0):
        raise BuilderError(f"{name}: degenerate triangles produced nonpositive vertex mass")

    return from_weights(
        name,
        W,
        mass,
        coords=V,
        faces=F,
        embedded=True,
        expected_dim=2,
        kind=kind,
        params=params,
    )


def _icosahedron() -> tuple[np.ndarray, np.ndarray]:
    t = (1.0 + math.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
            [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
            [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
        ],
        dtype=float,
    )
    faces = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ],
        dtype=np.int64,
    )
    return verts / np.linalg.norm(verts, axis=1, keepdims=True), faces


def icosphere(subdivisions: int, radius: float = 1.0) -> FiniteMMSpace:
    """Loop-subdivided icosahedron projected onto the sphere of ``radius``."""
    if subdivisions < 0:
        raise BuilderError(f"icosphere subdivisions must be >= 0, got {subdivisions}")
    if not radius > 0:
        raise BuilderError(f"icosphere radius must be positive, got {radius}")
    verts, faces = _icosahedron()
    vlist = list(verts)
    for _ in range(subdivisions):
        midpoint: dict[tuple[int, int], int] = {}

        def mid(a: int, b: int) -> int:
            key = (a, b) if a < b else (b, a)
            if key not in midpoint:
                p = vlist[a] + vlist[b]
                vlist.append(p / np.linalg.norm(p))
                midpoint[key] = len(vlist) - 1
            return midpoint[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]])
        faces = np.array(new_faces, dtype=np.int64)
    V = np.array(vlist) * radius
    return cotangent_space(
        f"icosphere:{subdivisions},{radius:g}",
        V,
        faces,
        kind="icosphere",
        params={"subdivisions": subdivisions, "radius": radius},
    )


def _zip_rings(inner: np.ndarray, inner_t: np.ndarray, outer: np.ndarray, outer_t: np.ndarray) -> list[list[int]]:
    """Triangulate the band between two closed rings by angular merging."""
    faces: list[list[int]] = []
    a, b = 0, 0
    na, nb = len(inner), len(outer)
    while a < na or b < nb:
        ta = inner_t[(a + 1) % na] + (2 * math.pi if a + 1 >= na else 0.0)
        tb = outer_t[(b + 1) % nb] + (2 * math.pi if b + 1 >= nb else 0.0)
        if b >= nb or (a < na and ta <= tb):
            faces.append([int(inner[a % na]), int(outer[b % nb]), int(inner[(a + 1) % na])])
            a += 1
        else:
            faces.append([int(inner[a % na]), int(outer[b % nb]), int(outer[(b + 1) % nb])])
            b += 1
    return faces


def cone(angle: float, res: int) -> FiniteMMSpace:
    """Unit-radius cone with total angle ``angle`` at the apex.

    ``res`` concentric rings at intrinsic radii ``k/res``; ring k carries
    ``max(3, round(6k · angle/2π))`` vertices. The surface is embedded in
    R³ with opening ratio ``s = angle/2π`` (``angle = 2π`` is the flat disc).
    """
    if not (0.0 < angle <= 2.0 * math.pi + 1e-12):
        raise BuilderError(f"cone angle must lie in (0, 2π], got {angle}")
    if res < 2:
        raise BuilderError(f"cone resolution must be >= 2, got {res}")
    s = min(angle / (2.0 * math.pi), 1.0)
    height = math.sqrt(max(0.0, 1.0 - s * s))

    verts = [np.zeros(3)]
    rings: list[np.ndarray] = [np.array([0])]
    thetas: list[np.ndarray] = [np.array([0.0])]
    for k in range(1, res + 1):
        r = k / res
        count = max(3, int(round(6 * k * s)))
        theta = 2.0 * math.pi * np.arange(count) / count
        start = len(verts)
        for t in theta:
            verts.append(np.array([r * s * math.cos(t), r * s * math.sin(t), r * height]))
        rings.append(np.arange(start, start + count))
        thetas.append(theta)

    faces: list[list[int]] = []
    first = rings[1]
    for q in range(len(first)):
        faces.append([0, int(first[q]), int(first[(q + 1) % len(first)])])
    for k in range(1, res):
        faces.extend(_zip_rings(rings[k], thetas[k], rings[k + 1], thetas[k + 1]))

    return cotangent_space(
        f"cone:{angle:g},{res}",
        np.array(verts),
        np.array(faces, dtype=np.int64),
        kind="cone",
        params={"angle": angle, "res": res},
    )


# ------------------------------------------------------------------- files


def from_file(path_like: str | Path) -> FiniteMMSpace:
    """Read the JSON interchange format; ``L_ij = w_ij / m_i``."""
    p = Path(path_like)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise BuilderError(f"cannot read space file {p}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise BuilderError(f"{p}: {exc.msg}", line=exc.lineno) from exc
    return from_document(doc, name=f"file:{p.name}", source_text=text)


def _line_of(text: Optional[str], needle: str) -> Optional[int]:
    if not text:
        return None
    pos = text.find(needle)
    return text.count("\n", 0, pos) + 1 if pos >= 0 else None


def from_document(doc: Any, *, name: str = "document", source_text: Optional[str] = None) -> FiniteMMSpace:
    if not isinstance(doc, dict):
        raise BuilderError("space document must be a JSON object", line=1)
    for key in ("n", "measure", "edges"):
        if key not in doc:
            raise BuilderError(f"space document is missing {key!r}", line=_line_of(source_text, "{"))
    try:
        n = int(doc["n"])
        m = np.asarray(doc["measure"], dtype=float)
    except (TypeError, ValueError) as exc:
        raise BuilderError(f"bad 'n' or 'measure': {exc}", line=_line_of(source_text, '"measure"')) from exc
    if m.shape != (n,):
        raise BuilderError(
            f"'measure' has {m.size} entries, expected n={n}", line=_line_of(source_text, '"measure"')
        )
    rows, cols, vals = [], [], []
    for idx, edge in enumerate(doc["edges"]):
        try:
            i, j, w = int(edge[0]), int(edge[1]), float(edge[2])
        except (TypeError, ValueError, IndexError) as exc:
            raise BuilderError(
                f"edge #{idx} must be [i, j, w]: {exc}", line=_line_of(source_text, '"edges"')
            ) from exc
        if not (0 <= i < n and 0 <= j < n) or i == j:
            raise BuilderError(f"edge #{idx} has invalid endpoints ({i}, {j})", line=_line_of(source_text, '"edges"'))
        if w < 0:
            raise BuilderError(f"edge #{idx} has negative weight {w}", line=_line_of(source_text, '"edges"'))
        rows += [i, j]
        cols += [j, i]
        vals += [w, w]
    W = sparse.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    dist = None
    if doc.get("dist") is not None:
        dist = np.asarray(doc["dist"], dtype=float).reshape(n, n)
    return from_weights(name, W, m, dist=dist, kind="file", params={"n": n})


def to_document(space: FiniteMMSpace) -> dict[str, Any]:
    """Inverse of `from_document` (weights ``w_ij = m_i L_ij``)."""
    e = space.edges
    keep = e.tail < e.head
    weights = space.m[e.tail[keep]] * e.rate[keep]
    doc: dict[str, Any] = {
        "n": space.n,
        "measure": space.m.tolist(),
        "edges": [[int(i), int(j), float(w)] for i, j, w in zip(e.tail[keep], e.head[keep], weights)],
    }
    if space.dist is not None:
        doc["dist"] = space.dist.ravel().tolist()
    return doc


# ------------------------------------------------------------------- specs

_BUILDERS = ("path", "cycle", "grid_torus", "torus", "icosphere", "cone", "file", "from_file")


def build_space(spec: str) -> FiniteMMSpace:
    """Build a space from a builder-spec string ``kind:arg1,arg2,...``."""
    from src.gamma_calc.utils.validators import parse_builder_spec

    kind, args = parse_builder_spec(spec)
    try:
        if kind == "path":
            return path(int(args[0]))
        if kind == "cycle":
            return cycle(int(args[0]))
        if kind in ("grid_torus", "torus"):
            d, res = int(args[0]), int(args[1])
            return grid_torus(d, res, [float(a) for a in args[2:]] or None)
        if kind == "icosphere":
            return icosphere(int(args[0]), float(args[1]) if len(args) > 1 else 1.0)
        if kind == "cone":
            return cone(float(args[0]), int(args[1]))
        if kind in ("file", "from_file"):
            return from_file(",".join(args))
    except (IndexError, ValueError) as exc:
        raise BuilderError(f"bad arguments for {kind!r} in {spec!r}: {exc}") from exc
    raise BuilderError(f"unknown builder {kind!r}; choose one of {', '.join(_BUILDERS)}")


def refinement_family(family: str, resolutions: Sequence[int]) -> list[str]:
    """Builder specs of a refinement family (``torus``, ``sphere``, ``cycle``)."""
    if family in ("torus", "grid_torus"):
        return [f"grid_torus:2,{r},1.0,1.0" for r in resolutions]
    if family in ("sphere", "icosphere"):
        return [f"icosphere:{r},1.0" for r in resolutions]
    if family == "cycle":
        return [f"cycle:{r}" for r in resolutions]
    if family == "cone":
        return [f"cone:{math.pi:.12g},{r}" for r in resolutions]
    raise BuilderError(f"unknown refinement family {family!r}")


__all__ = [
    "DIST_TABLE_MAX",
    "build_space",
    "cone",
    "cotangent_space",
    "cycle",
    "from_document",
    "from_file",
    "grid_torus",
    "icosphere",
    "path",
    "refinement_family",
    "to_document",
]
