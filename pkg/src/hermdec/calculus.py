"""Discrete sharp operator and de Rham map.

Cochains on p-simplices with p < N are measured on simplices in ascending
vertex order. Top-degree cochains are measured on the oriented top
simplices, matching the sign convention of ``boundary_matrix(N)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations, product

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .complex import SimplicialComplex, local_faces
from .errors import DegreeError, UnderdeterminedError
from .geometry import GeometryTables, barycentric_differentials_batch, simplex_positions

DEFAULT_SUBDIVISION = 4
DENSE_LSTSQ_LIMIT = 4_000_000
# singular values below this fraction of the largest span the null space
NULL_RTOL = 1e-8


@dataclass
class Cochain:
    degree: int
    values: np.ndarray

    def __len__(self):
        return len(self.values)


@dataclass
class SharpOperator:
    """Sparse map from p-cochains to antisymmetric tensors at top-simplex barycenters.

    Row ``t * M**p + r`` holds component ``r`` (row-major multi-index) of the
    tensor at top simplex ``t``.
    """

    degree: int
    matrix: sp.csr_matrix
    embedding_dim: int

    @property
    def top_count(self) -> int:
        return self.matrix.shape[0] // self.embedding_dim ** self.degree

    def apply(self, values) -> np.ndarray:
        """Tensors of shape ``(n_top,) + (M,) * p``."""
        values = np.asarray(getattr(values, "values", values))
        flat = self.matrix @ values
        return flat.reshape((self.top_count,) + (self.embedding_dim,) * self.degree)


def wedge_components(covectors) -> np.ndarray:
    """Full antisymmetric tensor of ``a_1 ^ ... ^ a_q``, batched.

    ``covectors`` has shape ``(n, q, M)``; the result has shape
    ``(n, M**q)`` in row-major multi-index order. Component ``(i_1..i_q)``
    is ``det[a_r[i_s]]``, so ``a ^ b = a (x) b - b (x) a``.
    """
    covectors = np.asarray(covectors)
    n, q, m = covectors.shape
    if q == 0:
        return np.ones((n, 1), dtype=covectors.dtype)
    idx = np.array(list(product(range(m), repeat=q)))
    gathered = covectors[:, :, idx]            # (n, q, M**q, q)
    return np.linalg.det(np.moveaxis(gathered, 2, 1))


def sharp_operator(complex_: SimplicialComplex, differentials, p: int) -> SharpOperator:
    """Assemble the averaged-wedge sharp operator for p-cochains.

    For each top simplex the tensor is ``p!/(N+1)`` times the sum over its
    p-faces ``[i_0..i_p]`` and omitted positions ``j`` of
    ``alpha(face) (-1)^j dl_{i_0} ^ .. (omit i_j) .. ^ dl_{i_p}``, which
    reproduces constant forms exactly.
    """
    n = complex_.dimension
    if not 0 <= p <= n:
        raise DegreeError(f"sharp degree {p} outside [0, {n}]")
    dl = np.asarray(differentials)
    n_top, _, m = dl.shape
    width = m ** p
    scale = math.factorial(p) / (n + 1)
    rows, cols, vals = [], [], []
    base = np.arange(n_top)[:, None] * width + np.arange(width)[None, :]
    for f_idx, face in enumerate(local_faces(n, p)):
        block = np.zeros((n_top, width), dtype=dl.dtype)
        for j in range(p + 1):
            rest = [face[k] for k in range(p + 1) if k != j]
            block = block + (-1) ** j * wedge_components(dl[:, rest, :])
        block = block * scale
        if p == n:
            block = block * complex_.top_parity[:, None]
        rows.append(base.reshape(-1))
        cols.append(np.repeat(complex_.top_faces[p][:, f_idx], width))
        vals.append(block.reshape(-1))
    vals = np.concatenate(vals)
    if np.iscomplexobj(vals) and not np.any(vals.imag):
        vals = vals.real
    mat = sp.csr_matrix(
        (vals, (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_top * width, complex_.count(p)),
    )
    mat.eliminate_zeros()
    return SharpOperator(p, mat, m)


def sharp_from_geometry(complex_: SimplicialComplex, geometry: GeometryTables, p: int) -> SharpOperator:
    dl = barycentric_differentials_batch(geometry.top_positions, geometry.metrics)
    return sharp_operator(complex_, dl, p)


def lattice(p: int, s: int):
    """Barycentric sample lattice ``m / s`` with trapezoid weights ``1 / 2**k``.

    ``k`` counts the zero coordinates of the sample. Returns
    ``(coords, weights)`` with ``coords`` of shape ``(K, p + 1)``.
    """
    if s < 1:
        raise ValueError("subdivision must be >= 1")
    pts = [c for c in product(range(s + 1), repeat=p + 1) if sum(c) == s]
    coords = np.array(pts, dtype=float) / s
    zeros = np.sum(np.array(pts) == 0, axis=1)
    return coords, 0.5 ** zeros


def derham_map(field, complex_: SimplicialComplex, embedding, p: int,
               subdivision: int = DEFAULT_SUBDIVISION, positions=None) -> Cochain:
    """Integrate a continuous p-form over every p-simplex.

    ``field`` maps an ``(K, M)`` array of points to values of shape
    ``(K,) + (M,) * p`` holding full antisymmetric tensors (scalars for
    ``p = 0``). The tensor is averaged over the sample lattice with
    generalized trapezoid weights and contracted with the edge vectors:
    ``T(v_1 - v_0, ..., v_p - v_0) / p!``.
    """
    if subdivision < 1:
        raise ValueError("subdivision must be >= 1")
    n = complex_.dimension
    if not 0 <= p <= n:
        raise DegreeError(f"de Rham degree {p} outside [0, {n}]")
    if positions is None:
        embedding = np.asarray(embedding)
        if embedding.ndim == 1:
            embedding = embedding[:, None]
        positions = embedding[complex_.top_sources]
    verts = simplex_positions(complex_, positions, p)     # (n_p, p+1, M)
    coords, weights = lattice(p, subdivision)
    samples = np.einsum("kj,sja->ska", coords, verts)
    n_p, n_k, m = samples.shape
    values = np.asarray(field(samples.reshape(-1, m)))
    values = values.reshape((n_p, n_k) + (m,) * p)
    mean = np.tensordot(weights / weights.sum(), values, axes=([0], [1]))
    edges = verts[:, 1:] - verts[:, :1]
    out = mean
    for r in range(p):
        out = np.einsum("sa...,sa->s...", out, edges[:, r])
    out = out / math.factorial(p)
    if p == n:
        out = out * complex_.top_parity
    return Cochain(p, np.asarray(out))


def _null_space(mat, dense: bool) -> np.ndarray:
    """Orthonormal basis of the null space of ``mat``, as columns."""
    n_cols = mat.shape[1]
    if dense:
        _, sing, vt = np.linalg.svd(mat.toarray(), full_matrices=True)
        tol = NULL_RTOL * (sing[0] if len(sing) else 0.0)
        rank = int(np.sum(sing > tol))
        return vt[rank:].conj().T
    gram = (mat.conj().T @ mat).tocsc()
    scale = float(np.abs(gram.diagonal()).max())
    want = min(8, n_cols - 2)
    while True:
        vals, vecs = spla.eigsh(gram, k=want, sigma=-1e-6 * scale, which="LM")
        null = vals <= NULL_RTOL ** 2 * scale
        if not null.all() or want >= n_cols - 2:
            return vecs[:, null]
        want = min(2 * want, n_cols - 2)


def inverse_sharp_0(sharp0: SharpOperator, tensor_values, strict: bool = False, gradient=None):
    """Least-squares 0-cochain whose sharp best matches ``tensor_values``.

    Returns ``(cochain, residual_norm, rank)``. On structured grids the
    averaging matrix has a small null space of oscillating vertex patterns,
    so the least-squares solution is not unique. With ``gradient`` (the
    exterior derivative ``d_0``) the solution of least ``||d_0 V||`` is
    returned, which maps constants to constants; otherwise the minimum-norm
    solution. ``strict=True`` raises :class:`UnderdeterminedError` instead.
    """
    if sharp0.degree != 0:
        raise DegreeError("inverse sharp is only defined for 0-forms")
    mat = sp.csr_matrix(sharp0.matrix)
    rhs = np.asarray(tensor_values).reshape(-1)
    n_rows, n_cols = mat.shape
    dense = n_rows * n_cols <= DENSE_LSTSQ_LIMIT
    null = _null_space(mat, dense)
    rank = n_cols - null.shape[1]
    if strict and rank < n_cols:
        raise UnderdeterminedError(
            f"sharp operator has rank {rank} < {n_cols}; the 0-form is not determined"
        )
    if dense:
        x = np.linalg.lstsq(mat.toarray(), rhs, rcond=None)[0]
    else:
        x = spla.lsqr(mat, rhs, atol=1e-14, btol=1e-14, iter_lim=20 * n_cols)[0]
        if null.shape[1]:
            x = x - null @ (null.conj().T @ x)
    if gradient is not None and null.shape[1]:
        grad_null = sp.csr_matrix(gradient) @ null
        coef = np.linalg.lstsq(grad_null, sp.csr_matrix(gradient) @ x, rcond=None)[0]
        x = x - null @ coef
    residual = float(np.linalg.norm(mat @ x - rhs))
    return Cochain(0, x), residual, int(rank)
