"""Triangle meshes, edge topology and the normalized graph propagation operator."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import ContractError, MeshParseError, TopologyError


@dataclass(frozen=True, eq=False)
class Mesh:
    """Fixed-topology triangle surface.

    Parameters
    ----------
    vertices : (N, 3) float array, millimetres
    faces : (M, 3) int array of zero-based vertex indices
    """

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64)
        f = np.asarray(self.faces, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3 or v.shape[0] == 0:
            raise ContractError(f"vertices must be (N>0, 3), got {v.shape}")
        if f.ndim != 2 or f.shape[1] != 3 or f.shape[0] == 0:
            raise ContractError(f"faces must be (M>0, 3), got {f.shape}")
        if not np.isfinite(v).all():
            raise ContractError("vertex coordinates must be finite")
        validate_faces(f, v.shape[0])
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    def with_vertices(self, vertices: np.ndarray) -> "Mesh":
        return Mesh(vertices, self.faces)


def validate_faces(faces: np.ndarray, n_vertices: int) -> None:
    faces = np.asarray(faces)
    if faces.size and (faces.min() < 0 or faces.max() >= n_vertices):
        bad = int(np.argmax((faces < 0).any(1) | (faces >= n_vertices).any(1)))
        raise TopologyError(f"face {bad} has index outside [0, {n_vertices})")
    degenerate = (
        (faces[:, 0] == faces[:, 1])
        | (faces[:, 1] == faces[:, 2])
        | (faces[:, 0] == faces[:, 2])
    )
    if degenerate.any():
        raise TopologyError(f"face {int(np.argmax(degenerate))} repeats a vertex")


def edges_from_faces(faces, n_vertices: int | None = None) -> np.ndarray:
    """Unique undirected edges of a triangle list as an (E, 2) array.

    Rows satisfy ``i < j`` and are sorted lexicographically, so the result
    does not depend on face order.
    """
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    if n_vertices is None:
        n_vertices = int(faces.max()) + 1 if faces.size else 0
    validate_faces(faces, n_vertices)
    pairs = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    pairs.sort(axis=1)
    return np.unique(pairs, axis=0)


@dataclass(frozen=True, eq=False)
class GraphTopology:
    """Adjacency-derived operators for one mesh topology.

    Sparse matrices are CSR with sorted indices; ``coo()`` on any of them
    yields the (row, col)-sorted coordinate list.
    """

    n_vertices: int
    edges: np.ndarray
    adjacency: sp.csr_matrix
    self_loop_adjacency: sp.csr_matrix
    degree: np.ndarray
    propagation: sp.csr_matrix
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def propagation_as(self, dtype) -> sp.csr_matrix:
        dtype = np.dtype(dtype)
        if dtype not in self._cache:
            self._cache[dtype] = self.propagation.astype(dtype)
        return self._cache[dtype]

    def permuted(self, perm: np.ndarray) -> "GraphTopology":
        """Topology after relabeling: new vertex ``k`` is old vertex ``perm[k]``."""
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))
        return build_topology(inv[self.edges], self.n_vertices)


def _sorted_csr(m) -> sp.csr_matrix:
    m = sp.csr_matrix(m)
    m.sum_duplicates()
    m.sort_indices()
    return m


def build_topology(edges, n_vertices: int) -> GraphTopology:
    if n_vertices <= 0:
        raise TopologyError("graph has no vertices")
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if edges.size:
        if edges.min() < 0 or edges.max() >= n_vertices:
            raise TopologyError(f"edge index outside [0, {n_vertices})")
        if (edges[:, 0] == edges[:, 1]).any():
            raise TopologyError("self-edges are not allowed")
        edges = np.unique(np.sort(edges, axis=1), axis=0)
    rows = np.concatenate([edges[:, 0], edges[:, 1]])
    cols = np.concatenate([edges[:, 1], edges[:, 0]])
    ones = np.ones(len(rows))
    adj = _sorted_csr(sp.coo_matrix((ones, (rows, cols)), shape=(n_vertices, n_vertices)))
    adj_loop = _sorted_csr(adj + sp.identity(n_vertices, format="csr"))
    degree = np.asarray(adj_loop.sum(axis=1)).ravel()
    inv_sqrt = 1.0 / np.sqrt(degree)
    coo = adj_loop.tocoo()
    vals = inv_sqrt[coo.row] * coo.data * inv_sqrt[coo.col]
    prop = _sorted_csr(sp.coo_matrix((vals, (coo.row, coo.col)), shape=adj_loop.shape))
    return GraphTopology(n_vertices, edges, adj, adj_loop, degree, prop)


def propagation_matrix(edges, n_vertices: int) -> sp.csr_matrix:
    """D^-1/2 (A + I) D^-1/2 with D the degree of the self-looped adjacency."""
    return build_topology(edges, n_vertices).propagation


def mesh_topology(mesh: Mesh) -> GraphTopology:
    return build_topology(edges_from_faces(mesh.faces, mesh.n_vertices), mesh.n_vertices)


def load_mesh(path) -> Mesh:
    """Read an ASCII OBJ with ``v`` and triangular ``f`` records.

    Normals, texture coordinates and other record types are skipped.
    Face tokens of the form ``i/t/n`` use only the vertex index; negative
    (relative) indices are resolved against the vertices read so far.
    """
    verts: list[list[float]] = []
    faces: list[list[int]] = []
    face_lines: list[int] = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tag, *rest = line.split()
            if tag == "v":
                if len(rest) < 3:
                    raise MeshParseError(f"malformed vertex at line {lineno}")
                try:
                    verts.append([float(x) for x in rest[:3]])
                except ValueError:
                    raise MeshParseError(f"malformed vertex at line {lineno}") from None
            elif tag == "f":
                if len(rest) != 3:
                    raise MeshParseError(f"non-triangle face at line {lineno}")
                idx = []
                for tok in rest:
                    try:
                        k = int(tok.split("/", 1)[0])
                    except ValueError:
                        raise MeshParseError(f"malformed face at line {lineno}") from None
                    if k == 0:
                        raise MeshParseError(f"malformed face at line {lineno}")
                    idx.append(k - 1 if k > 0 else len(verts) + k)
                faces.append(idx)
                face_lines.append(lineno)
    if not verts or not faces:
        raise MeshParseError(f"{path}: no vertices or faces")
    n = len(verts)
    for idx, lineno in zip(faces, face_lines):
        if min(idx) < 0 or max(idx) >= n:
            raise MeshParseError(f"face index out of range at line {lineno}")
    return Mesh(np.array(verts), np.array(faces))


def save_mesh(mesh: Mesh, path) -> None:
    path = Path(path)
    lines = [f"v {x:.12g} {y:.12g} {z:.12g}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces]
    path.write_text("\n".join(lines) + "\n")
