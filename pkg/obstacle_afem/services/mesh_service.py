"""
Mesh construction, newest vertex bisection and patch queries.
"""

from __future__ import annotations

import logging
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp

from ..exceptions import MeshError
from ..models.mesh import (
    DIRICHLET,
    INTERIOR,
    NEUMANN,
    Mesh,
    PatchIndex,
    Prolongation,
    mesh_with,
    tag_code,
    tag_name,
)
from ..schemas.common import BoundaryTag, MeshPattern
from ..schemas.mesh import MeshSnapshot

logger = logging.getLogger(__name__)

TagRule = Union[BoundaryTag, str, Callable[[float, float], Union[BoundaryTag, str]]]


# --------------------------------------------------------------------- build
def _orient_newest_vertex(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Rotate each triangle so that its longest edge is the refinement edge.

    Ties go to the edge whose opposite vertex has the smallest global index.
    Rotation is cyclic, so orientation is preserved.
    """
    p = vertices[triangles]
    lengths = np.empty((triangles.shape[0], 3))
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        d = p[:, k] - p[:, j]
        lengths[:, i] = np.hypot(d[:, 0], d[:, 1])
    longest = lengths.max(axis=1, keepdims=True)
    candidates = lengths >= longest * (1.0 - 1e-12)
    opposite = np.where(candidates, triangles, np.iinfo(np.int64).max)
    first = np.argmin(opposite, axis=1)
    rows = np.arange(triangles.shape[0])[:, None]
    order = (first[:, None] + np.arange(3)[None, :]) % 3
    return triangles[rows, order]


def _check_hanging_nodes(vertices: np.ndarray, edges: np.ndarray, counts: np.ndarray) -> None:
    """Raise if a vertex sits inside an edge used by a single element."""
    single = edges[counts == 1]
    neighbours: dict[int, set[int]] = {}
    for a, b in single:
        neighbours.setdefault(int(a), set()).add(int(b))
        neighbours.setdefault(int(b), set()).add(int(a))
    for a, b in single:
        common = neighbours[int(a)] & neighbours[int(b)]
        pa, pb = vertices[a], vertices[b]
        ab = pb - pa
        length2 = float(ab @ ab)
        for v in common:
            pv = vertices[v] - pa
            cross = ab[0] * pv[1] - ab[1] * pv[0]
            s = float(pv @ ab) / length2
            if abs(cross) <= 1e-12 * length2 and 0.0 < s < 1.0:
                raise MeshError(f"hanging node {v} on edge ({a}, {b})", entity_id=v)


def build_mesh(
    vertices: Sequence[Sequence[float]],
    triangles: Sequence[Sequence[int]],
    boundary_tags: Iterable[tuple[int, int, Union[BoundaryTag, str]]],
    *,
    nvb_ordered: bool = False,
    generation: Optional[Sequence[int]] = None,
) -> Mesh:
    """Validate input and build a conforming mesh.

    Negatively oriented triangles are flipped. Unless ``nvb_ordered`` the
    refinement edge of each triangle is its longest edge.
    """
    vertices = np.asarray(vertices, dtype=float).reshape(-1, 2)
    triangles = np.array(triangles, dtype=np.int64).reshape(-1, 3)
    n = vertices.shape[0]
    if triangles.size == 0:
        raise MeshError("mesh has no triangles")

    out_of_range = np.flatnonzero(((triangles < 0) | (triangles >= n)).any(axis=1))
    if out_of_range.size:
        raise MeshError("triangle references a missing vertex", entity_id=int(out_of_range[0]))
    repeated = np.flatnonzero(
        (triangles[:, 0] == triangles[:, 1]) | (triangles[:, 1] == triangles[:, 2]) | (triangles[:, 0] == triangles[:, 2])
    )
    if repeated.size:
        raise MeshError("degenerate triangle with repeated vertex", entity_id=int(repeated[0]))

    p = vertices[triangles]
    d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    signed = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    scale = np.ptp(vertices, axis=0).max() if n > 1 else 1.0
    degenerate = np.flatnonzero(np.abs(signed) <= 1e-14 * scale**2)
    if degenerate.size:
        raise MeshError("degenerate triangle with zero area", entity_id=int(degenerate[0]))
    negative = signed < 0
    if negative.any():
        if nvb_ordered:
            raise MeshError("NVB ordered triangle is negatively oriented", entity_id=int(np.flatnonzero(negative)[0]))
        triangles[negative] = triangles[negative][:, [0, 2, 1]]

    unused = np.setdiff1d(np.arange(n), triangles.reshape(-1))
    if unused.size:
        raise MeshError("vertex is not used by any triangle", entity_id=int(unused[0]))

    if not nvb_ordered:
        triangles = _orient_newest_vertex(vertices, triangles)

    # edge-use counting
    local = np.sort(np.vstack([triangles[:, [1, 2]], triangles[:, [2, 0]], triangles[:, [0, 1]]]), axis=1)
    edges, counts = np.unique(local, axis=0, return_counts=True)
    overused = np.flatnonzero(counts > 2)
    if overused.size:
        raise MeshError(f"non-conforming: edge {tuple(edges[overused[0]])} used {counts[overused[0]]} times", entity_id=int(overused[0]))
    _check_hanging_nodes(vertices, edges, counts)

    tagged = [(int(a), int(b), BoundaryTag(tag)) for a, b, tag in boundary_tags]
    tagged_edges = np.sort(np.array([(a, b) for a, b, _ in tagged], dtype=np.int64).reshape(-1, 2), axis=1)
    codes = np.array([tag_code(tag) for _, _, tag in tagged], dtype=np.int8)

    boundary = edges[counts == 1]
    boundary_keys = boundary[:, 0] * n + boundary[:, 1]
    tagged_keys = tagged_edges[:, 0] * n + tagged_edges[:, 1]
    uniq, first, dup = np.unique(tagged_keys, return_index=True, return_counts=True)
    if (dup > 1).any():
        bad = uniq[np.argmax(dup > 1)]
        raise MeshError(f"boundary edge ({bad // n}, {bad % n}) tagged twice", entity_id=(int(bad // n), int(bad % n)))
    not_boundary = np.setdiff1d(tagged_keys, boundary_keys)
    if not_boundary.size:
        bad = int(not_boundary[0])
        raise MeshError(f"tagged edge ({bad // n}, {bad % n}) is not a boundary edge", entity_id=(bad // n, bad % n))
    untagged = np.setdiff1d(boundary_keys, tagged_keys)
    if untagged.size:
        bad = int(untagged[0])
        raise MeshError(f"boundary edge ({bad // n}, {bad % n}) has no tag", entity_id=(bad // n, bad % n))

    gen = np.zeros(triangles.shape[0], dtype=np.int64) if generation is None else np.asarray(generation)
    mesh = Mesh(
        vertices=vertices,
        elements=triangles,
        boundary_edges=tagged_edges,
        boundary_tags=codes,
        generation=gen,
    )
    logger.debug("Built %r", mesh)
    return mesh


def _resolve_tag(rule: TagRule, midpoint: np.ndarray) -> BoundaryTag:
    if callable(rule):
        return BoundaryTag(rule(float(midpoint[0]), float(midpoint[1])))
    return BoundaryTag(rule)


def rectangle_mesh(
    xmin: float,
    xmax: float,
    ymin: float,
    ymax: float,
    *,
    cells: int = 1,
    pattern: MeshPattern | str = MeshPattern.DIAGONAL,
    tags: TagRule = BoundaryTag.NEUMANN,
) -> Mesh:
    """Structured triangulation of a rectangle with ``cells`` x ``cells`` cells.

    ``diagonal`` splits every cell along the same diagonal; ``crossed``
    alternates the diagonal so that all diagonals meet at grid vertices of
    even parity (2 x 2 cells give 8 triangles around the centre node).
    """
    pattern = MeshPattern(pattern)
    xs = np.linspace(xmin, xmax, cells + 1)
    ys = np.linspace(ymin, ymax, cells + 1)
    X, Y = np.meshgrid(xs, ys)
    vertices = np.column_stack([X.reshape(-1), Y.reshape(-1)])

    def node(i: int, j: int) -> int:
        return j * (cells + 1) + i

    triangles = []
    for j in range(cells):
        for i in range(cells):
            a, b, c, d = node(i, j), node(i + 1, j), node(i, j + 1), node(i + 1, j + 1)
            if pattern is MeshPattern.CROSSED and (i + j) % 2 == 1:
                triangles += [(a, b, c), (b, d, c)]
            else:
                triangles += [(a, b, d), (a, d, c)]

    boundary = []
    for k in range(cells):
        boundary += [
            (node(k, 0), node(k + 1, 0)),
            (node(cells, k), node(cells, k + 1)),
            (node(k + 1, cells), node(k, cells)),
            (node(0, k + 1), node(0, k)),
        ]
    tagged = [(a, b, _resolve_tag(tags, 0.5 * (vertices[a] + vertices[b]))) for a, b in boundary]
    return build_mesh(vertices, triangles, tagged)


def square_mesh(
    a: float,
    b: float,
    *,
    cells: int = 1,
    pattern: MeshPattern | str = MeshPattern.DIAGONAL,
    tags: TagRule = BoundaryTag.NEUMANN,
) -> Mesh:
    """Structured mesh of the square [a, b]^2."""
    return rectangle_mesh(a, b, a, b, cells=cells, pattern=pattern, tags=tags)


def polygon_mesh(
    polygon: Sequence[Sequence[float]],
    side_tags: Sequence[Union[BoundaryTag, str]],
    triangles: Optional[Sequence[Sequence[int]]] = None,
) -> Mesh:
    """Mesh of a polygon from its vertices; a fan from vertex 0 by default."""
    vertices = np.asarray(polygon, dtype=float)
    n = vertices.shape[0]
    if n < 3:
        raise MeshError("polygon needs at least three vertices")
    if triangles is None:
        triangles = [(0, k, k + 1) for k in range(1, n - 1)]
    tagged = [(k, (k + 1) % n, side_tags[k]) for k in range(n)]
    return build_mesh(vertices, triangles, tagged)


# ---------------------------------------------------------------- refinement
def _close_marking(mesh: Mesh, marked_edges: np.ndarray) -> np.ndarray:
    """Extend edge marks until every element with a marked edge has its refinement edge marked."""
    element_edges = mesh.element_edges
    while True:
        touched = marked_edges[element_edges].any(axis=1)
        refinement = element_edges[touched, 0]
        if marked_edges[refinement].all():
            return marked_edges
        marked_edges[refinement] = True


def bisect(mesh: Mesh, marked: Iterable[int]) -> tuple[Mesh, Prolongation]:
    """Newest vertex bisection of the marked elements with conforming closure.

    Every marked element is bisected at least once. Returns the refined mesh
    and the prolongation from old to new nodes.
    """
    marked = np.unique(np.asarray(list(marked) if not isinstance(marked, np.ndarray) else marked, dtype=np.int64))
    if marked.size and (marked.min() < 0 or marked.max() >= mesh.n_elements):
        raise MeshError("marked element id out of range", entity_id=int(marked[(marked < 0) | (marked >= mesh.n_elements)][0]))
    if marked.size == 0:
        return mesh, Prolongation.identity(mesh.n_nodes)

    marked_edges = np.zeros(mesh.n_edges, dtype=bool)
    marked_edges[mesh.element_edges[marked, 0]] = True
    marked_edges = _close_marking(mesh, marked_edges)

    n_old = mesh.n_nodes
    edge_ids = np.flatnonzero(marked_edges)
    midpoint = np.full(mesh.n_edges, -1, dtype=np.int64)
    midpoint[edge_ids] = n_old + np.arange(edge_ids.size)
    parent_edges = mesh.edges[edge_ids]
    new_vertices = 0.5 * (mesh.vertices[parent_edges[:, 0]] + mesh.vertices[parent_edges[:, 1]])

    def midpoint_of(a: np.ndarray, b: np.ndarray) -> np.ndarray:
        ids = mesh.find_edges(a, b)
        return np.where(ids >= 0, midpoint[np.maximum(ids, 0)], -1)

    finished, finished_gen = [], []
    active, active_gen = mesh.elements, mesh.generation
    while active.shape[0]:
        mid = midpoint_of(active[:, 1], active[:, 2])
        split = mid >= 0
        finished.append(active[~split])
        finished_gen.append(active_gen[~split])
        parents, m = active[split], mid[split]
        v0, v1, v2 = parents[:, 0], parents[:, 1], parents[:, 2]
        # children (m, v0, v1) and (m, v2, v0); their refinement edges are old edges
        children = np.empty((2 * parents.shape[0], 3), dtype=np.int64)
        children[0::2] = np.column_stack([m, v0, v1])
        children[1::2] = np.column_stack([m, v2, v0])
        active = children
        active_gen = np.repeat(active_gen[split] + 1, 2)

    elements = np.vstack(finished)
    generation = np.concatenate(finished_gen)

    # split tagged boundary edges
    b_ids = mesh.find_edges(mesh.boundary_edges[:, 0], mesh.boundary_edges[:, 1])
    b_mid = midpoint[b_ids]
    keep = b_mid < 0
    split_edges = mesh.boundary_edges[~keep]
    split_mid = b_mid[~keep]
    boundary_edges = np.vstack(
        [
            mesh.boundary_edges[keep],
            np.column_stack([split_edges[:, 0], split_mid]),
            np.column_stack([split_mid, split_edges[:, 1]]),
        ]
    )
    boundary_tags = np.concatenate(
        [mesh.boundary_tags[keep], mesh.boundary_tags[~keep], mesh.boundary_tags[~keep]]
    )

    refined = Mesh(
        vertices=np.vstack([mesh.vertices, new_vertices]),
        elements=elements,
        boundary_edges=boundary_edges,
        boundary_tags=boundary_tags,
        generation=generation,
    )
    logger.debug("Bisected %d marked elements: %d -> %d elements", marked.size, mesh.n_elements, refined.n_elements)
    return refined, Prolongation(n_old=n_old, parent_edges=parent_edges)


def uniform_refine(mesh: Mesh, times: int = 1) -> Mesh:
    """Refine every element so that every edge is halved (four children each)."""
    for _ in range(times):
        for _ in range(2):
            mesh, _ = bisect(mesh, np.arange(mesh.n_elements))
    return mesh


# ------------------------------------------------------------------- patches
def build_patches(mesh: Mesh) -> PatchIndex:
    """Patch data for every node: omega_p, gamma_p^I, gamma_p^N and h_p."""
    incidence = mesh.node_element_incidence
    node_edges = mesh.node_edge_incidence
    interior = (mesh.edge_tags == INTERIOR).astype(float)
    neumann = (mesh.edge_tags == NEUMANN).astype(float)
    skeleton = (node_edges @ sp.diags(interior)).tocsr()
    skeleton.eliminate_zeros()
    neumann_edges = (node_edges @ sp.diags(neumann)).tocsr()
    neumann_edges.eliminate_zeros()

    patch_area = incidence @ mesh.areas
    return PatchIndex(
        mesh=mesh,
        elements=incidence,
        skeleton=skeleton,
        neumann=neumann_edges,
        h=patch_diameters(mesh, incidence),
        patch_area=patch_area,
    )


def patch_diameters(mesh: Mesh, incidence: Optional[sp.csr_matrix] = None) -> np.ndarray:
    """Maximum pairwise vertex distance over each patch."""
    if incidence is None:
        incidence = mesh.node_element_incidence
    counts = np.diff(incidence.indptr)
    width = 3 * int(counts.max())
    n = mesh.n_nodes
    # padded (N, width, 2) coordinates of the patch vertices
    coords = np.full((n, width, 2), np.nan)
    row = np.repeat(np.arange(n), counts)
    slot = np.arange(incidence.indices.size) - np.repeat(incidence.indptr[:-1], counts)
    elem_vertices = mesh.vertices[mesh.elements[incidence.indices]]  # (nnz, 3, 2)
    for i in range(3):
        coords[row, 3 * slot + i] = elem_vertices[:, i]
    h = np.zeros(n)
    # chunked to bound the (chunk, width, width) temporary
    chunk = max(1, 2_000_000 // (width * width))
    for start in range(0, n, chunk):
        block = coords[start : start + chunk]
        diff = block[:, :, None, :] - block[:, None, :, :]
        dist = np.sqrt((diff**2).sum(axis=-1))
        h[start : start + chunk] = np.nanmax(dist.reshape(block.shape[0], -1), axis=1)
    return h


# --------------------------------------------------------------- diagnostics
def check_conformity(mesh: Mesh) -> None:
    """Edge-use counting: interior edges twice, boundary edges once and tagged."""
    counts = (mesh.edge_elements >= 0).sum(axis=1)
    boundary = counts == 1
    if (boundary != (mesh.edge_tags != INTERIOR)).any():
        bad = int(np.flatnonzero(boundary != (mesh.edge_tags != INTERIOR))[0])
        raise MeshError(f"edge {tuple(mesh.edges[bad])} is used {counts[bad]} times but tagged {mesh.edge_tags[bad]}", entity_id=bad)
    _check_hanging_nodes(mesh.vertices, mesh.edges, counts)


def min_angle(mesh: Mesh) -> float:
    """Smallest interior angle over all elements, in radians."""
    p = mesh.vertices[mesh.elements]
    angles = []
    for i in range(3):
        a = p[:, (i + 1) % 3] - p[:, i]
        b = p[:, (i + 2) % 3] - p[:, i]
        cos = (a * b).sum(axis=1) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
        angles.append(np.arccos(np.clip(cos, -1.0, 1.0)))
    return float(np.min(angles))


# ------------------------------------------------------------------ snapshot
def mesh_to_snapshot(mesh: Mesh) -> MeshSnapshot:
    return MeshSnapshot(
        vertices=[tuple(v) for v in mesh.vertices.tolist()],
        triangles=[tuple(t) for t in mesh.elements.tolist()],
        boundary=[(int(a), int(b), tag_name(int(c))) for (a, b), c in zip(mesh.boundary_edges.tolist(), mesh.boundary_tags)],
        nvb_ordered=True,
        generation=mesh.generation.tolist(),
    )


def mesh_from_snapshot(snapshot: MeshSnapshot) -> Mesh:
    return build_mesh(
        snapshot.vertices,
        snapshot.triangles,
        snapshot.boundary,
        nvb_ordered=snapshot.nvb_ordered,
        generation=snapshot.generation,
    )


def retag(mesh: Mesh, rule: TagRule) -> Mesh:
    """Re-assign boundary tags from a rule evaluated at edge midpoints."""
    mids = 0.5 * (mesh.vertices[mesh.boundary_edges[:, 0]] + mesh.vertices[mesh.boundary_edges[:, 1]])
    codes = np.array([tag_code(_resolve_tag(rule, m)) for m in mids], dtype=np.int8)
    return mesh_with(mesh, boundary_tags=codes)


__all__ = [
    "build_mesh",
    "rectangle_mesh",
    "square_mesh",
    "polygon_mesh",
    "bisect",
    "uniform_refine",
    "build_patches",
    "patch_diameters",
    "check_conformity",
    "min_angle",
    "mesh_to_snapshot",
    "mesh_from_snapshot",
    "retag",
    "DIRICHLET",
    "NEUMANN",
]
