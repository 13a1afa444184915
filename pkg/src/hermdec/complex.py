"""Simplices, simplicial complexes, boundary operators and exterior derivatives.

Every p-simplex is stored in ascending vertex order. The orientation of an
input top simplex relative to that canonical order is kept as a parity, so
face enumeration and deduplication never depend on the order in which
vertices were supplied.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DegenerateSimplexError, DegreeError, EmptyComplexError


def permutation_parity(seq: Sequence[int]) -> int:
    """Sign of the permutation sorting ``seq`` into ascending order."""
    seq = list(seq)
    if len(set(seq)) != len(seq):
        raise DegenerateSimplexError(f"repeated vertex in simplex {seq}")
    # count inversions; simplices are tiny so O(p^2) is fine
    inversions = sum(
        1 for i in range(len(seq)) for j in range(i + 1, len(seq)) if seq[i] > seq[j]
    )
    return -1 if inversions % 2 else 1


def _row_parities(rows: np.ndarray) -> np.ndarray:
    n, k = rows.shape
    inversions = np.zeros(n, dtype=np.int64)
    for i in range(k):
        for j in range(i + 1, k):
            inversions += rows[:, i] > rows[:, j]
    return np.where(inversions % 2 == 0, 1, -1).astype(np.int8)


@dataclass(frozen=True)
class Simplex:
    """An oriented simplex given by an ordered tuple of vertex indices."""

    vertices: tuple
    parity: int = field(init=False)

    def __post_init__(self):
        verts = tuple(int(v) for v in self.vertices)
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "parity", permutation_parity(verts))

    @property
    def degree(self) -> int:
        return len(self.vertices) - 1

    @property
    def canonical(self) -> tuple:
        return tuple(sorted(self.vertices))

    def faces(self):
        """Oriented boundary faces as ``(sign, Simplex)`` pairs."""
        p = self.degree
        if p == 0:
            return []
        return [
            ((-1) ** i, Simplex(self.vertices[:i] + self.vertices[i + 1:]))
            for i in range(p + 1)
        ]


def _unique_rows(rows: np.ndarray):
    uniq, index, inverse = np.unique(rows, axis=0, return_index=True, return_inverse=True)
    return uniq, index, inverse.reshape(-1)


class SimplicialComplex:
    """A pure simplicial complex built from its top-dimensional simplices.

    Attributes
    ----------
    dimension : int
        Dimension N of the top simplices.
    vertex_count : int
        Size of the vertex index space (vertices absent from every simplex
        are allowed and simply do not appear in the 0-skeleton).
    skeletons : list of ndarray
        ``skeletons[p]`` is an ``(n_p, p + 1)`` integer array of p-simplices in
        ascending vertex order, sorted lexicographically.
    top_parity : ndarray
        Orientation of each top simplex relative to ascending order.
    top_faces : list of ndarray
        ``top_faces[p][t, f]`` is the rank of the f-th local p-face of top
        simplex ``t``; local faces are enumerated by ``local_faces(N, p)``.
    top_sources : ndarray
        Vertex ids used to embed each top simplex, aligned with the sorted
        vertex order of ``skeletons[N]``. Differs from ``skeletons[N]`` only
        for stitched meshes, where geometry must use the unstitched copies.
    """

    def __init__(self, dimension, vertex_count, skeletons, top_parity, top_faces, top_sources):
        self.dimension = dimension
        self.vertex_count = vertex_count
        self.skeletons = skeletons
        self.top_parity = top_parity
        self.top_faces = top_faces
        self.top_sources = top_sources
        self._boundary = {}
        self._index = {}

    def __repr__(self):
        counts = ", ".join(str(len(s)) for s in self.skeletons)
        return f"SimplicialComplex(dimension={self.dimension}, counts=[{counts}])"

    def count(self, p: int) -> int:
        return len(self.skeletons[p])

    @property
    def counts(self):
        return [len(s) for s in self.skeletons]

    def index(self, simplex) -> int:
        """Rank of a simplex (any vertex order) in its skeleton."""
        key = tuple(sorted(int(v) for v in simplex))
        p = len(key) - 1
        if p not in self._index:
            self._index[p] = {tuple(row): i for i, row in enumerate(self.skeletons[p].tolist())}
        return self._index[p][key]

    def euler_characteristic(self) -> int:
        return sum((-1) ** p * n for p, n in enumerate(self.counts))

    def boundary_matrix(self, p: int) -> sp.csc_matrix:
        return boundary_matrix(self, p)

    def exterior_derivative(self, p: int) -> sp.csr_matrix:
        return exterior_derivative(self, p)


def local_faces(n: int, p: int):
    """Local vertex tuples of the p-faces of an n-simplex, lexicographic."""
    return list(combinations(range(n + 1), p + 1))


def build_complex(top_simplices, vertex_count=None, source_simplices=None) -> SimplicialComplex:
    """Close a list of N-simplices under taking faces.

    ``source_simplices`` optionally gives, row for row, the vertex ids used to
    place each top simplex in space (see :func:`hermdec.meshgen.apply_stitches`).
    Duplicate top simplices are merged, keeping the first occurrence.
    """
    top = np.asarray(top_simplices, dtype=np.int64)
    if top.size == 0:
        raise EmptyComplexError("cannot build a complex from no simplices")
    if top.ndim != 2:
        raise ValueError("top simplices must be a 2-D array of vertex indices")
    if source_simplices is None:
        source = top.copy()
    else:
        source = np.asarray(source_simplices, dtype=np.int64)
        if source.shape != top.shape:
            raise ValueError("source simplices must match top simplices in shape")
    n_dim = top.shape[1] - 1
    if vertex_count is None:
        vertex_count = int(top.max()) + 1
    if top.min() < 0 or top.max() >= vertex_count:
        raise ValueError(f"vertex indices must lie in [0, {vertex_count})")

    order = np.argsort(top, axis=1, kind="stable")
    sorted_top = np.take_along_axis(top, order, axis=1)
    if n_dim > 0 and np.any(np.diff(sorted_top, axis=1) == 0):
        bad = np.nonzero(np.any(np.diff(sorted_top, axis=1) == 0, axis=1))[0][0]
        raise DegenerateSimplexError(f"top simplex {top[bad].tolist()} repeats a vertex")
    parity = _row_parities(top)
    sorted_source = np.take_along_axis(source, order, axis=1)

    uniq_top, first, _ = _unique_rows(sorted_top)
    parity = parity[first]
    sorted_source = sorted_source[first]

    skeletons = [None] * (n_dim + 1)
    top_faces = [None] * (n_dim + 1)
    for p in range(n_dim + 1):
        faces = local_faces(n_dim, p)
        stacked = np.concatenate([uniq_top[:, list(f)] for f in faces], axis=0)
        skel, _, inverse = _unique_rows(stacked)
        skeletons[p] = skel
        top_faces[p] = inverse.reshape(len(faces), len(uniq_top)).T.copy()
    return SimplicialComplex(n_dim, int(vertex_count), skeletons, parity, top_faces, sorted_source)


def boundary_matrix(complex_: SimplicialComplex, p: int) -> sp.csc_matrix:
    """Signed incidence matrix from p-simplices to (p-1)-simplices."""
    if not 1 <= p <= complex_.dimension:
        raise DegreeError(f"boundary degree {p} outside [1, {complex_.dimension}]")
    cached = complex_._boundary.get(p)
    if cached is not None:
        return cached
    simplices = complex_.skeletons[p]
    lower = complex_.skeletons[p - 1]
    n = len(simplices)
    rows, cols, vals = [], [], []
    for i in range(p + 1):
        face = np.delete(simplices, i, axis=1)
        both = np.concatenate([lower, face], axis=0)
        _, _, inverse = _unique_rows(both)
        rows.append(inverse[len(lower):])
        cols.append(np.arange(n))
        vals.append(np.full(n, (-1) ** i, dtype=np.int64))
    vals = np.concatenate(vals)
    cols = np.concatenate(cols)
    if p == complex_.dimension:
        vals = vals * complex_.top_parity[cols]
    mat = sp.csc_matrix(
        (vals, (np.concatenate(rows), cols)), shape=(len(lower), n), dtype=np.int64
    )
    mat.sort_indices()
    complex_._boundary[p] = mat
    return mat


def exterior_derivative(complex_: SimplicialComplex, p: int) -> sp.csr_matrix:
    """Discrete exterior derivative ``d_p``, the transpose of ``boundary(p + 1)``."""
    if not 0 <= p <= complex_.dimension - 1:
        raise DegreeError(f"exterior derivative degree {p} outside [0, {complex_.dimension - 1}]")
    return boundary_matrix(complex_, p + 1).T.tocsr()
