"""Metric-dependent geometry: circumcenters, primal and dual volumes, Hodge stars.

All per-simplex routines come in a single-simplex form and a batched form
operating on stacks of simplices, shape ``(n, p + 1, M)``, with one metric
per simplex, shape ``(n, M, M)``. Positions and metrics may be complex.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations, permutations
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .complex import SimplicialComplex, local_faces
from .errors import AssemblyError, DegenerateSimplexError, DegreeError, SingularHodgeError

DEFAULT_EPSILON_SCALE = 1e-6
# fragments whose orientation determinant falls below this fraction of the
# reference scale are treated as lying on the face (zero volume)
DUAL_SIGN_RTOL = 1e-10
SINGULAR_HODGE_RTOL = 1e-10
GRAM_RTOL = 1e-13


class MetricField:
    """Position-dependent Hermitian metric with additive regularization.

    Parameters
    ----------
    func : callable, optional
        Maps a position (length-M array) to an ``(M, M)`` Hermitian matrix.
        With ``vectorized=True`` it instead maps an ``(n, M)`` array to an
        ``(n, M, M)`` array. ``None`` means the Euclidean metric.
    dim : int, optional
        Embedding dimension; required when ``func`` is None.
    epsilon : float or None
        Real number added to every entry of the metric. ``None`` selects
        ``1e-6`` times the mean absolute diagonal of the unregularized metric
        at each evaluation point; ``0`` disables regularization.
    """

    def __init__(self, func: Optional[Callable] = None, dim: Optional[int] = None,
                 epsilon: Optional[float] = None, vectorized: bool = False):
        if func is None and dim is None:
            raise ValueError("the Euclidean metric needs an explicit dimension")
        if epsilon is not None and epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        self.func = func
        self.dim = dim
        self.epsilon = epsilon
        self.vectorized = vectorized

    @classmethod
    def euclidean(cls, dim: int, epsilon: Optional[float] = None) -> "MetricField":
        return cls(None, dim, epsilon)

    @classmethod
    def constant(cls, h, epsilon: Optional[float] = None) -> "MetricField":
        h = np.asarray(h)
        if h.ndim != 2 or h.shape[0] != h.shape[1]:
            raise ValueError("constant metric must be a square matrix")
        if not np.allclose(h, h.conj().T, rtol=0, atol=1e-12 * max(1.0, np.abs(h).max())):
            raise ValueError("metric must be Hermitian")
        return cls(lambda x: np.broadcast_to(h, (len(x),) + h.shape), h.shape[0],
                   epsilon, vectorized=True)

    def raw(self, points) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points))
        if self.func is None:
            dim = self.dim if self.dim is not None else points.shape[1]
            return np.broadcast_to(np.eye(dim), (len(points), dim, dim)).copy()
        if self.vectorized:
            return np.array(self.func(points))
        return np.array([np.asarray(self.func(x)) for x in points])

    def evaluate(self, points) -> np.ndarray:
        """Regularized metric at each point, shape ``(n, M, M)``."""
        h = self.raw(points)
        eps = self.epsilon
        if eps is None:
            diag = np.abs(np.diagonal(h, axis1=1, axis2=2)).mean(axis=1)
            return h + (DEFAULT_EPSILON_SCALE * diag)[:, None, None]
        if eps:
            return h + eps
        return h

    def __call__(self, x) -> np.ndarray:
        return self.evaluate(np.asarray(x)[None])[0]


def _hgram(a, h, b):
    """Batched sesquilinear forms ``G[n, i, j] = conj(a_i) h b_j``."""
    return np.einsum("nia,nab,njb->nij", a.conj(), h, b)


def _as_batch(vertices, h):
    vertices = np.asarray(vertices)
    h = np.asarray(h)
    if h.ndim == 2:
        h = h[None]
    return vertices[None], h


def circumcenters(vertices, h):
    """Batched circumcenters.

    Solves, for each simplex, ``2 Re(conj(v_J) h (v_I - v_0)) a_J =
    conj(v_I) h v_I - conj(v_0) h v_0`` for ``1 <= I <= p`` together with
    ``sum(a) = 1``. Vertices are translated to ``v_0`` first, which leaves
    the weights unchanged. Returns ``(centers, weights)``.
    """
    vertices = np.asarray(vertices)
    n, k, _ = vertices.shape
    if k == 1:
        return vertices[:, 0].copy(), np.ones((n, 1))
    rel = vertices - vertices[:, :1]
    gram = _hgram(rel, h, rel)
    system = np.empty((n, k, k))
    system[:, :-1, :] = 2.0 * gram[:, 1:, :].real
    system[:, -1, :] = 1.0
    rhs = np.zeros((n, k))
    rhs[:, :-1] = np.diagonal(gram, axis1=1, axis2=2)[:, 1:].real
    rhs[:, -1] = 1.0
    _check_gram(gram[:, 1:, 1:].real)
    weights = np.linalg.solve(system, rhs[..., None])[..., 0]
    centers = np.einsum("nj,nja->na", weights, vertices)
    return centers, weights


def _check_gram(gram):
    if gram.shape[1] == 0:
        return
    det = np.linalg.det(gram)
    scale = np.prod(np.abs(np.diagonal(gram, axis1=1, axis2=2)), axis=1)
    bad = np.abs(det) <= GRAM_RTOL * scale
    if np.any(bad):
        raise DegenerateSimplexError(
            f"{int(bad.sum())} simplices have zero volume under the metric "
            f"(first at batch position {int(np.argmax(bad))})"
        )


def circumcenter(simplex_vertices, h):
    """Circumcenter and barycentric weights of a single simplex."""
    verts, hb = _as_batch(simplex_vertices, h)
    centers, weights = circumcenters(verts, hb)
    return centers[0], weights[0]


def primal_volumes(vertices, h) -> np.ndarray:
    """Batched ``sqrt|det Re(V^H h V)| / p!`` with ``V_I = v_I - v_0``."""
    vertices = np.asarray(vertices)
    n, k, _ = vertices.shape
    if k == 1:
        return np.ones(n)
    rel = vertices[:, 1:] - vertices[:, :1]
    gram = _hgram(rel, h, rel).real
    return np.sqrt(np.abs(np.linalg.det(gram))) / math.factorial(k - 1)


def primal_volume(simplex_vertices, h) -> float:
    verts, hb = _as_batch(simplex_vertices, h)
    return float(primal_volumes(verts, hb)[0])


def dual_signs(v, u, h) -> np.ndarray:
    """Batched ``sgn Re det(conj(V_i) h U_j)``; near-zero determinants give 0.

    ``v`` and ``u`` have shape ``(n, q, M)``. A determinant is treated as zero
    when below ``DUAL_SIGN_RTOL`` times the product of squared ``h``-lengths of
    the reference vectors ``u``.
    """
    v = np.asarray(v)
    u = np.asarray(u)
    det = np.linalg.det(_hgram(v, h, u)).real
    ulen2 = np.einsum("nia,nab,nib->ni", u.conj(), h, u).real
    scale = np.prod(np.abs(ulen2), axis=1)
    sign = np.sign(det)
    sign[np.abs(det) <= DUAL_SIGN_RTOL * scale] = 0.0
    return sign


def dual_sign(V, U, h) -> int:
    """Orientation sign of one dual fragment.

    ``V`` rows are ``c(sigma^{p+I}) - c(sigma^p)`` and ``U`` rows are the
    vertex added at step ``I`` minus ``c(sigma^p)``.
    """
    V = np.atleast_2d(np.asarray(V))
    U = np.atleast_2d(np.asarray(U))
    return int(dual_signs(V[None], U[None], np.asarray(h)[None])[0])


def barycentric_differentials_batch(vertices, h) -> np.ndarray:
    """Batched barycentric differentials, shape ``(n, N + 1, M)``.

    Rows 1..N are ``(V h V^H)^{-1} V h`` with ``V_I = v_I - v_0``; row 0 is
    minus their sum.
    """
    vertices = np.asarray(vertices)
    rel = vertices[:, 1:] - vertices[:, :1]
    gram = np.einsum("nia,nab,njb->nij", rel, h, rel.conj())
    if rel.shape[1]:
        _check_gram(gram)
    vh = np.einsum("nia,nab->nib", rel, h)
    x = np.linalg.solve(gram, vh)
    if not (np.iscomplexobj(x) and np.any(x.imag)):
        x = x.real
    return np.concatenate([-x.sum(axis=1, keepdims=True), x], axis=1)


def barycentric_differentials(simplex_vertices, h) -> np.ndarray:
    verts, hb = _as_batch(simplex_vertices, h)
    return barycentric_differentials_batch(verts, hb)[0]


# --------------------------------------------------------------------------
# whole-complex tables


@dataclass
class GeometryTables:
    """Per-simplex geometric quantities of an embedded complex.

    ``primal[p]`` and ``dual[p]`` are indexed by skeleton rank; dual volumes
    are signed. ``metrics`` and ``barycenters`` are per top simplex, and
    ``top_positions[t, i]`` is the position of local vertex ``i`` of top
    simplex ``t`` (unstitched).
    """

    primal: list
    dual: list
    metrics: np.ndarray
    barycenters: np.ndarray
    top_positions: np.ndarray

    @property
    def dimension(self) -> int:
        return len(self.primal) - 1

    def total_volume(self) -> float:
        return float(self.primal[-1].sum())


def top_positions(complex_: SimplicialComplex, embedding) -> np.ndarray:
    embedding = np.asarray(embedding)
    if embedding.ndim == 1:
        embedding = embedding[:, None]
    return embedding[complex_.top_sources]


def simplex_positions(complex_: SimplicialComplex, positions: np.ndarray, p: int) -> np.ndarray:
    """Positions of every p-simplex, taken from its first containing top simplex."""
    n = complex_.dimension
    faces = local_faces(n, p)
    owner = complex_.top_faces[p]
    flat = owner.T.reshape(-1)
    _, first = np.unique(flat, return_index=True)
    face_idx, top_idx = np.divmod(first, owner.shape[0])
    sel = np.array(faces)[face_idx]
    return positions[top_idx[:, None], sel]


def dual_volumes(complex_: SimplicialComplex, embedding, metric: MetricField) -> list:
    """Signed circumcentric dual volume of every simplex, one array per degree."""
    return compute_geometry(complex_, embedding, metric).dual


def compute_geometry(complex_: SimplicialComplex, embedding, metric: MetricField) -> GeometryTables:
    """Evaluate metrics, primal volumes and signed dual volumes.

    The metric is sampled once per top simplex at its barycenter. A dual
    fragment ``[c(s^N), ..., c(s^p)]`` contributes its volume under that
    metric with the orientation sign of :func:`dual_signs`. Contributions are
    accumulated in a fixed order, so results do not depend on scheduling.
    """
    n = complex_.dimension
    pos = top_positions(complex_, embedding)
    n_top = len(pos)
    bary = pos.mean(axis=1)
    h = metric.evaluate(bary)
    if h.shape[1] != pos.shape[2]:
        raise AssemblyError(
            f"metric is {h.shape[1]}x{h.shape[1]} but the embedding has {pos.shape[2]} coordinates"
        )

    centers = {}
    for size in range(1, n + 2):
        for subset in combinations(range(n + 1), size):
            centers[subset], _ = circumcenters(pos[:, list(subset)], h)

    dual = [np.zeros(complex_.count(p)) for p in range(n + 1)]
    dual[n][:] = 1.0
    for p in range(n):
        q = n - p
        for f_idx, face in enumerate(local_faces(n, p)):
            rest = [i for i in range(n + 1) if i not in face]
            c0 = centers[face]
            target = complex_.top_faces[p][:, f_idx]
            for order in permutations(rest):
                chain = list(face)
                v = np.empty((n_top, q, pos.shape[2]), dtype=np.result_type(pos, h))
                u = np.empty_like(v)
                for i, vert in enumerate(order):
                    chain.append(vert)
                    v[:, i] = centers[tuple(sorted(chain))] - c0
                    u[:, i] = pos[:, vert] - c0
                sign = dual_signs(v, u, h)
                gram = _hgram(v, h, v).real
                vol = np.sqrt(np.abs(np.linalg.det(gram))) / math.factorial(q)
                np.add.at(dual[p], target, sign * vol)

    primal = []
    for p in range(n + 1):
        if p == 0:
            primal.append(np.ones(complex_.count(0)))
            continue
        owner = complex_.top_faces[p]
        counts = np.bincount(owner.reshape(-1), minlength=complex_.count(p))
        hsum = np.zeros((complex_.count(p),) + h.shape[1:], dtype=h.dtype)
        for f_idx in range(owner.shape[1]):
            np.add.at(hsum, owner[:, f_idx], h)
        hmean = hsum / counts[:, None, None]
        primal.append(primal_volumes(simplex_positions(complex_, pos, p), hmean))
    return GeometryTables(primal, dual, h, bary, pos)


# --------------------------------------------------------------------------
# operators


@dataclass
class HodgeStar:
    """Diagonal Hodge star of one degree."""

    degree: int
    diagonal: np.ndarray

    @property
    def matrix(self) -> sp.dia_matrix:
        return sp.diags(self.diagonal).tocsr()

    @property
    def inverse(self) -> sp.dia_matrix:
        return sp.diags(1.0 / self.diagonal).tocsr()

    def singular(self) -> np.ndarray:
        scale = np.max(np.abs(self.diagonal)) if len(self.diagonal) else 0.0
        return np.nonzero(np.abs(self.diagonal) <= SINGULAR_HODGE_RTOL * scale)[0]


def hodge_star(geometry: GeometryTables, p: int, allow_singular: bool = False) -> HodgeStar:
    """Diagonal star with entries ``|dual(s_i)| / |s_i|``.

    Raises :class:`SingularHodgeError` naming the offending ranks when any
    entry vanishes, unless ``allow_singular`` is set.
    """
    if not 0 <= p <= geometry.dimension:
        raise DegreeError(f"Hodge star degree {p} outside [0, {geometry.dimension}]")
    primal = geometry.primal[p]
    if np.any(primal <= 0):
        raise DegenerateSimplexError(f"zero primal volume among {p}-simplices")
    star = HodgeStar(p, geometry.dual[p] / primal)
    bad = star.singular()
    if len(bad) and not allow_singular:
        raise SingularHodgeError(p, bad)
    return star


def codifferential(d_prev, star_p: HodgeStar, star_prev_inv, p: int) -> sp.csr_matrix:
    """``delta_p = (-1)^p star_{p-1}^{-1} d_{p-1}^T star_p``.

    ``star_prev_inv`` is either the inverse diagonal of ``star_{p-1}`` as an
    array or sparse matrix, or the :class:`HodgeStar` itself.
    """
    if p < 1:
        raise DegreeError("codifferential needs p >= 1")
    if isinstance(star_prev_inv, HodgeStar):
        inv = 1.0 / star_prev_inv.diagonal
    elif sp.issparse(star_prev_inv):
        inv = star_prev_inv.diagonal()
    else:
        inv = np.asarray(star_prev_inv)
    d_prev = sp.csr_matrix(d_prev)
    if d_prev.shape != (len(star_p.diagonal), len(inv)):
        raise AssemblyError(
            f"d_{p - 1} has shape {d_prev.shape}, expected {(len(star_p.diagonal), len(inv))}"
        )
    out = sp.diags(inv) @ d_prev.T @ sp.diags(star_p.diagonal)
    return ((-1) ** p * out).tocsr()
