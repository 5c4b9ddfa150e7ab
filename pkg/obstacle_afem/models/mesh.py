"""
Triangular mesh model with derived edge tables and patch queries.

Elements are stored newest vertex first: for ``t = elements[e]`` the
refinement edge is ``(t[1], t[2])`` and ``t[0]`` is the vertex opposite to
it. Local edge ``i`` of an element is the edge opposite local vertex ``i``,
so local edge 0 is always the refinement edge.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np
import scipy.sparse as sp

from ..exceptions import MeshError
from ..schemas.common import BoundaryTag

# Edge tag codes used in ``Mesh.edge_tags``
INTERIOR = 0
DIRICHLET = 1
NEUMANN = 2

TAG_CODES = {BoundaryTag.DIRICHLET: DIRICHLET, BoundaryTag.NEUMANN: NEUMANN}


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming triangulation; immutable once built.

    Use ``services.mesh_service.build_mesh`` to construct a validated mesh
    from user input. Refinement returns a new instance.
    """

    vertices: np.ndarray  # (N, 2)
    elements: np.ndarray  # (M, 3), newest vertex first
    boundary_edges: np.ndarray  # (K, 2), sorted pairs
    boundary_tags: np.ndarray  # (K,), codes DIRICHLET / NEUMANN
    generation: np.ndarray  # (M,)

    def __post_init__(self):
        object.__setattr__(self, "vertices", _readonly(np.asarray(self.vertices, dtype=float)))
        object.__setattr__(self, "elements", _readonly(np.asarray(self.elements, dtype=np.int64)))
        object.__setattr__(
            self, "boundary_edges", _readonly(np.sort(np.asarray(self.boundary_edges, dtype=np.int64).reshape(-1, 2), axis=1))
        )
        object.__setattr__(self, "boundary_tags", _readonly(np.asarray(self.boundary_tags, dtype=np.int8)))
        object.__setattr__(self, "generation", _readonly(np.asarray(self.generation, dtype=np.int64)))

    # ------------------------------------------------------------------ sizes
    @property
    def n_nodes(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    @property
    def n_edges(self) -> int:
        return self.edges.shape[0]

    # ------------------------------------------------------------ edge tables
    @cached_property
    def _edge_table(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        t = self.elements
        local = np.vstack([t[:, [1, 2]], t[:, [2, 0]], t[:, [0, 1]]])
        local = np.sort(local, axis=1)
        edges, inverse = np.unique(local, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        element_edges = inverse.reshape(3, -1).T
        owners = np.tile(np.arange(self.n_elements), 3)

        counts = np.bincount(inverse, minlength=edges.shape[0])
        if counts.max(initial=0) > 2:
            bad = int(np.argmax(counts))
            raise MeshError(f"edge {tuple(edges[bad])} is shared by {counts[bad]} elements", entity_id=bad)

        _, first = np.unique(inverse, return_index=True)
        _, last = np.unique(inverse[::-1], return_index=True)
        last = inverse.shape[0] - last - 1
        edge_elements = np.full((edges.shape[0], 2), -1, dtype=np.int64)
        edge_elements[:, 0] = owners[first]
        second = owners[last]
        edge_elements[:, 1] = np.where(counts == 2, second, -1)
        return edges, element_edges, edge_elements

    @property
    def edges(self) -> np.ndarray:
        return self._edge_table[0]

    @property
    def element_edges(self) -> np.ndarray:
        """(M, 3) edge ids; column i is the edge opposite local vertex i."""
        return self._edge_table[1]

    @property
    def edge_elements(self) -> np.ndarray:
        """(E, 2) elements sharing each edge; -1 in the second slot on the boundary."""
        return self._edge_table[2]

    @cached_property
    def edge_keys(self) -> np.ndarray:
        return self.edges[:, 0] * self.n_nodes + self.edges[:, 1]

    def find_edges(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Edge ids for vertex pairs; -1 where the pair is not an edge."""
        a = np.asarray(a, dtype=np.int64)
        b = np.asarray(b, dtype=np.int64)
        n = self.n_nodes
        valid = (a >= 0) & (b >= 0) & (a < n) & (b < n)
        keys = np.minimum(a, b) * n + np.maximum(a, b)
        idx = np.searchsorted(self.edge_keys, keys)
        idx = np.clip(idx, 0, max(self.n_edges - 1, 0))
        found = valid & (self.edge_keys[idx] == keys)
        return np.where(found, idx, -1)

    @cached_property
    def edge_tags(self) -> np.ndarray:
        """(E,) INTERIOR, DIRICHLET or NEUMANN."""
        tags = np.zeros(self.n_edges, dtype=np.int8)
        if self.boundary_edges.size:
            ids = self.find_edges(self.boundary_edges[:, 0], self.boundary_edges[:, 1])
            tags[ids] = self.boundary_tags
        return _readonly(tags)

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return _readonly(np.hypot(d[:, 0], d[:, 1]))

    # --------------------------------------------------------------- geometry
    @cached_property
    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.elements]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return _readonly(0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]))

    @property
    def areas(self) -> np.ndarray:
        return np.abs(self.signed_areas)

    @cached_property
    def centroids(self) -> np.ndarray:
        return _readonly(self.vertices[self.elements].mean(axis=1))

    @cached_property
    def gradients(self) -> np.ndarray:
        """(M, 3, 2) constant gradients of the three barycentric coordinates."""
        p = self.vertices[self.elements]
        twice_area = 2.0 * self.signed_areas
        grads = np.empty((self.n_elements, 3, 2))
        for i in range(3):
            j, k = (i + 1) % 3, (i + 2) % 3
            # rotate the opposite edge by -90 degrees
            grads[:, i, 0] = (p[:, j, 1] - p[:, k, 1]) / twice_area
            grads[:, i, 1] = (p[:, k, 0] - p[:, j, 0]) / twice_area
        return _readonly(grads)

    @cached_property
    def outward_normals(self) -> np.ndarray:
        """(M, 3, 2) unit outward normal of local edge i (opposite vertex i)."""
        p = self.vertices[self.elements]
        normals = np.empty((self.n_elements, 3, 2))
        for i in range(3):
            j, k = (i + 1) % 3, (i + 2) % 3
            tangent = p[:, k] - p[:, j]
            length = np.hypot(tangent[:, 0], tangent[:, 1])
            normals[:, i, 0] = tangent[:, 1] / length
            normals[:, i, 1] = -tangent[:, 0] / length
        return _readonly(normals)

    @cached_property
    def element_diameters(self) -> np.ndarray:
        return _readonly(self.edge_lengths[self.element_edges].max(axis=1))

    # ------------------------------------------------------------- incidence
    @cached_property
    def node_element_incidence(self) -> sp.csr_matrix:
        """(N, M) 0/1 matrix; row p lists the elements of the patch of p."""
        m = self.n_elements
        rows = self.elements.reshape(-1)
        cols = np.repeat(np.arange(m), 3)
        return sp.csr_matrix((np.ones(3 * m), (rows, cols)), shape=(self.n_nodes, m))

    @cached_property
    def node_edge_incidence(self) -> sp.csr_matrix:
        """(N, E) 0/1 matrix of edges touching each node."""
        e = self.n_edges
        rows = self.edges.reshape(-1)
        cols = np.repeat(np.arange(e), 2)
        return sp.csr_matrix((np.ones(2 * e), (rows, cols)), shape=(self.n_nodes, e))

    @cached_property
    def node_sets(self) -> "NodeSet":
        dirichlet = np.zeros(self.n_nodes, dtype=bool)
        neumann = np.zeros(self.n_nodes, dtype=bool)
        dirichlet[self.boundary_edges[self.boundary_tags == DIRICHLET].reshape(-1)] = True
        neumann[self.boundary_edges[self.boundary_tags == NEUMANN].reshape(-1)] = True
        # Dirichlet wins where both boundary parts meet
        neumann &= ~dirichlet
        interior = ~(dirichlet | neumann)
        return NodeSet(
            interior=np.flatnonzero(interior),
            dirichlet=np.flatnonzero(dirichlet),
            neumann=np.flatnonzero(neumann),
        )

    def __repr__(self) -> str:
        return f"Mesh(nodes={self.n_nodes}, elements={self.n_elements}, edges={self.n_edges})"


@dataclass(frozen=True)
class NodeSet:
    interior: np.ndarray
    dirichlet: np.ndarray
    neumann: np.ndarray

    def dirichlet_mask(self, n_nodes: int) -> np.ndarray:
        mask = np.zeros(n_nodes, dtype=bool)
        mask[self.dirichlet] = True
        return mask


@dataclass(frozen=True, eq=False)
class PatchIndex:
    """Per-node patch data: elements, interior skeleton, Neumann edges, diameter."""

    mesh: Mesh
    elements: sp.csr_matrix  # (N, M) omega_p
    skeleton: sp.csr_matrix  # (N, E) gamma_p^I
    neumann: sp.csr_matrix  # (N, E) gamma_p^N
    h: np.ndarray  # (N,) diam(omega_p)
    patch_area: np.ndarray  # (N,) |omega_p|

    def patch_elements(self, p: int) -> np.ndarray:
        return self.elements[p].indices.copy()

    def skeleton_edges(self, p: int) -> np.ndarray:
        return self.skeleton[p].indices.copy()

    def neumann_edges(self, p: int) -> np.ndarray:
        return self.neumann[p].indices.copy()

    def side_patch(self, s: int) -> np.ndarray:
        """Elements sharing side s (one or two)."""
        pair = self.mesh.edge_elements[s]
        return pair[pair >= 0]

    @property
    def patch_sizes(self) -> np.ndarray:
        return np.diff(self.elements.indptr)


@dataclass
class Prolongation:
    """Transfer of nodal fields from a mesh to its refinement.

    Old nodes keep their index; node ``n_old + k`` is the midpoint of
    ``parent_edges[k]``.
    """

    n_old: int
    parent_edges: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))

    @property
    def n_new(self) -> int:
        return self.n_old + self.parent_edges.shape[0]

    def apply(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        if values.shape[0] != self.n_old:
            raise MeshError(f"prolongation expects {self.n_old} values, got {values.shape[0]}")
        a, b = self.parent_edges[:, 0], self.parent_edges[:, 1]
        return np.concatenate([values, 0.5 * (values[a] + values[b])])

    def apply_mask(self, mask: np.ndarray) -> np.ndarray:
        """A new node is set iff both parent-edge endpoints are set."""
        mask = np.asarray(mask, dtype=bool)
        a, b = self.parent_edges[:, 0], self.parent_edges[:, 1]
        return np.concatenate([mask, mask[a] & mask[b]])

    @classmethod
    def identity(cls, n: int) -> "Prolongation":
        return cls(n_old=n)


def mesh_with(mesh: Mesh, **changes) -> Mesh:
    kwargs = dict(
        vertices=mesh.vertices,
        elements=mesh.elements,
        boundary_edges=mesh.boundary_edges,
        boundary_tags=mesh.boundary_tags,
        generation=mesh.generation,
    )
    kwargs.update(changes)
    return Mesh(**kwargs)


def tag_code(tag: BoundaryTag | str) -> int:
    return TAG_CODES[BoundaryTag(tag)]


def tag_name(code: int) -> Optional[BoundaryTag]:
    if code == DIRICHLET:
        return BoundaryTag.DIRICHLET
    if code == NEUMANN:
        return BoundaryTag.NEUMANN
    return None
