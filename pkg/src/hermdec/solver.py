"""Operator assembly, boundary masking and generalized eigenproblems.

Sparse matrices are ``scipy.sparse`` CSR matrices throughout.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .complex import SimplicialComplex
from .errors import (
    AllBoundaryError,
    AssemblyError,
    ConvergenceError,
    DegreeError,
    SingularHodgeError,
)
from .geometry import GeometryTables, HodgeStar, MetricField, codifferential, compute_geometry, hodge_star

log = logging.getLogger(__name__)

DENSE_THRESHOLD = 2000
DEFAULT_TOL = 1e-8
MAX_ITER = 10_000
ZERO_RTOL = 1e-8
IMAG_RTOL = 1e-6


# --------------------------------------------------------------------------
# boundary conditions


def boundary_simplices(complex_: SimplicialComplex, p: int) -> np.ndarray:
    """Ranks of p-simplices lying on the boundary of the complex.

    An (N-1)-simplex is on the boundary when it has exactly one top coface;
    lower simplices are on the boundary when they are faces of one. Top
    simplices are never boundary simplices.
    """
    n = complex_.dimension
    if n < 1:
        raise DegreeError("boundary needs a complex of dimension >= 1")
    if not 0 <= p <= n:
        raise DegreeError(f"degree {p} outside [0, {n}]")
    if p == n:
        return np.zeros(0, dtype=np.int64)
    cofaces = np.bincount(complex_.top_faces[n - 1].reshape(-1), minlength=complex_.count(n - 1))
    facets = np.nonzero(cofaces == 1)[0]
    if p == n - 1:
        return facets
    if len(facets) == 0:
        return np.zeros(0, dtype=np.int64)
    rows = complex_.skeletons[n - 1][facets]
    from itertools import combinations

    faces = np.concatenate([rows[:, list(c)] for c in combinations(range(n), p + 1)])
    faces = np.unique(faces, axis=0)
    return np.array(sorted(complex_.index(f) for f in faces.tolist()), dtype=np.int64)


@dataclass
class BoundaryMask:
    """Interior ranks retained by a Dirichlet restriction at one degree."""

    degree: int
    interior: np.ndarray
    size: int

    @classmethod
    def dirichlet(cls, complex_: SimplicialComplex, p: int) -> "BoundaryMask":
        boundary = boundary_simplices(complex_, p)
        interior = np.setdiff1d(np.arange(complex_.count(p)), boundary)
        return cls(p, interior, complex_.count(p))

    @classmethod
    def free(cls, complex_: SimplicialComplex, p: int) -> "BoundaryMask":
        return cls(p, np.arange(complex_.count(p)), complex_.count(p))

    def restriction(self) -> sp.csr_matrix:
        """``R`` with ``R @ x`` selecting interior entries of a full cochain."""
        k = len(self.interior)
        return sp.csr_matrix((np.ones(k), (np.arange(k), self.interior)), shape=(k, self.size))

    def extend(self, values) -> np.ndarray:
        """Scatter interior values back into a full cochain (zeros elsewhere)."""
        values = np.asarray(values)
        out = np.zeros((self.size,) + values.shape[1:], dtype=values.dtype)
        out[self.interior] = values
        return out


def apply_dirichlet(op, mask: BoundaryMask, col_mask: BoundaryMask = None) -> sp.csr_matrix:
    """Delete boundary rows and columns of an operator."""
    col_mask = mask if col_mask is None else col_mask
    op = sp.csr_matrix(op)
    if op.shape != (mask.size, col_mask.size):
        raise AssemblyError(
            f"operator shape {op.shape} does not match mask sizes {(mask.size, col_mask.size)}"
        )
    if len(mask.interior) == 0 or len(col_mask.interior) == 0:
        raise AllBoundaryError("every simplex is on the boundary; nothing left to solve")
    return op[mask.interior][:, col_mask.interior].tocsr()


# --------------------------------------------------------------------------
# operator stack


@dataclass
class OperatorStack:
    """Per-degree exterior derivatives and Hodge stars of an embedded complex."""

    complex: SimplicialComplex
    geometry: GeometryTables
    d: list
    star: list
    _delta: dict = field(default_factory=dict, repr=False)

    @property
    def dimension(self) -> int:
        return self.complex.dimension

    def require_invertible(self, p: int) -> HodgeStar:
        star = self.star[p]
        bad = star.singular()
        if len(bad):
            raise SingularHodgeError(p, bad)
        return star

    def delta(self, p: int) -> sp.csr_matrix:
        """Codifferential ``delta_p`` from p-cochains to (p-1)-cochains."""
        if p not in self._delta:
            prev = self.require_invertible(p - 1)
            self._delta[p] = codifferential(self.d[p - 1], self.star[p], prev, p)
        return self._delta[p]


def build_stack(complex_: SimplicialComplex, embedding, metric: MetricField = None) -> OperatorStack:
    if metric is None:
        emb = np.asarray(embedding)
        metric = MetricField.euclidean(1 if emb.ndim == 1 else emb.shape[1])
    geometry = compute_geometry(complex_, embedding, metric)
    d = [complex_.exterior_derivative(p).astype(float) for p in range(complex_.dimension)]
    star = [hodge_star(geometry, p, allow_singular=True) for p in range(complex_.dimension + 1)]
    return OperatorStack(complex_, geometry, d, star)


def _restrict(mat, rows: BoundaryMask = None, cols: BoundaryMask = None):
    mat = sp.csr_matrix(mat)
    if rows is not None:
        mat = rows.restriction() @ mat
    if cols is not None:
        mat = mat @ cols.restriction().T
    return mat.tocsr()


def laplace_beltrami(stack: OperatorStack, p: int, exact_term: bool = True, masks: dict = None):
    """Symmetric pencil ``(A, B)`` for the positive Hodge Laplacian on p-forms.

    ``A = d_p^T S_{p+1} d_p + S_p d_{p-1} S_{p-1}^{-1} d_{p-1}^T S_p`` and
    ``B = S_p`` where ``S`` are the Hodge stars. ``exact_term=False`` drops the
    second term, leaving the curl-curl operator ``delta d``. ``masks`` maps a
    degree to a :class:`BoundaryMask`; masked cochains are restricted before
    assembly, which equals restricting the assembled matrices.
    """
    n = stack.dimension
    if not 0 <= p <= n:
        raise DegreeError(f"Laplacian degree {p} outside [0, {n}]")
    masks = masks or {}
    m_p = masks.get(p)
    if m_p is not None and len(m_p.interior) == 0:
        raise AllBoundaryError(f"every {p}-simplex lies on the boundary; nothing left to solve")
    star_p = stack.star[p]
    size = len(m_p.interior) if m_p is not None else stack.complex.count(p)
    a = sp.csr_matrix((size, size))
    if p < n:
        dp = _restrict(stack.d[p], masks.get(p + 1), m_p)
        a = a + dp.T @ _restrict(stack.star[p + 1].matrix, masks.get(p + 1), masks.get(p + 1)) @ dp
    if p >= 1 and exact_term:
        prev = stack.require_invertible(p - 1)
        stack.require_invertible(p)
        dq = _restrict(stack.d[p - 1], m_p, masks.get(p - 1))
        sp_m = _restrict(star_p.matrix, m_p, m_p)
        inv_prev = _restrict(prev.inverse, masks.get(p - 1), masks.get(p - 1))
        a = a + sp_m @ dq @ inv_prev @ dq.T @ sp_m
    b = _restrict(star_p.matrix, m_p, m_p)
    return sp.csr_matrix(a), b


def dirac_kahler(stack: OperatorStack, masks: dict = None, convention: str = "adjoint"):
    """Pencil ``(A, B)`` for ``d + delta`` on the direct sum of all degrees.

    ``B`` is the block diagonal of Hodge stars. With ``convention="adjoint"``
    the off-diagonal blocks are ``S_{p+1} d_p`` and its transpose, giving a
    Hermitian pencil whose eigenvalues square to Hodge-Laplacian eigenvalues.
    With ``convention="codifferential"`` the upper blocks carry the
    ``(-1)^(p+1)`` sign of the codifferential, so exact pairs (p, p+1) with
    odd p+1 acquire imaginary eigenvalues.
    """
    if convention not in ("adjoint", "codifferential"):
        raise ValueError(f"unknown convention {convention!r}")
    n = stack.dimension
    masks = masks or {}
    for p in range(n + 1):
        stack.require_invertible(p)
    if masks and all(len(m.interior) == 0 for m in masks.values()):
        raise AllBoundaryError("every simplex lies on the boundary; nothing left to solve")
    blocks = [[None] * (n + 1) for _ in range(n + 1)]
    stars = []
    for p in range(n + 1):
        m = masks.get(p)
        stars.append(_restrict(stack.star[p].matrix, m, m))
        blocks[p][p] = sp.csr_matrix(stars[p].shape)
    for p in range(n):
        dp = _restrict(stack.d[p], masks.get(p + 1), masks.get(p))
        lower = stars[p + 1] @ dp
        sign = 1 if convention == "adjoint" else (-1) ** (p + 1)
        blocks[p + 1][p] = lower
        blocks[p][p + 1] = sign * lower.T
    return sp.bmat(blocks, format="csr"), sp.block_diag(stars, format="csr")


# --------------------------------------------------------------------------
# eigenproblems


@dataclass
class Spectrum:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    residuals: np.ndarray

    def __len__(self):
        return len(self.eigenvalues)


def _is_hermitian(mat, rtol=1e-10) -> bool:
    diff = abs(mat - mat.conj().T)
    scale = abs(mat).max() if mat.nnz else 0.0
    return (diff.max() if diff.nnz else 0.0) <= rtol * max(scale, 1e-300)


def _positive_definite_diag(b) -> bool:
    off = b - sp.diags(b.diagonal())
    return (off.nnz == 0 or abs(off).max() == 0) and np.all(b.diagonal().real > 0)


def _norm_inf(mat) -> float:
    return float(abs(mat).sum(axis=1).max()) if mat.shape[0] else 0.0


def eigs_smallest(a, b=None, k: int = 10, tol: float = DEFAULT_TOL, drop_zero: bool = False,
                  real_positive: bool = False, dense_threshold: int = DENSE_THRESHOLD,
                  max_iter: int = MAX_ITER) -> Spectrum:
    """Eigenpairs of ``A x = lam B x`` with eigenvalues closest to zero.

    Hermitian pencils with diagonal positive-definite ``B`` return the ``k``
    smallest eigenvalues. Other pencils (indefinite ``B`` from regularized
    stars, or non-symmetric ``A``) return the ``k`` eigenvalues of smallest
    magnitude among the real ones; ``real_positive`` keeps only eigenvalues
    with positive real part. ``drop_zero`` discards eigenvalues below
    ``1e-8 * ||A|| / ||B||``. Eigenvalues are returned in ascending order.

    A pair is accepted when ``||A x - lam B x|| / ||x||`` is at most
    ``tol * max(1, ||A|| + |lam| ||B||)`` (infinity norms).
    """
    a = sp.csr_matrix(a)
    n = a.shape[0]
    b = sp.identity(n, format="csr") if b is None else sp.csr_matrix(b)
    if a.shape != b.shape or a.shape[0] != a.shape[1]:
        raise AssemblyError(f"pencil shapes {a.shape} and {b.shape} do not match")
    if n == 0:
        raise AllBoundaryError("empty eigenproblem")
    norm_a, norm_b = _norm_inf(a), _norm_inf(b)
    zero_tol = ZERO_RTOL * norm_a / max(norm_b, 1e-300)
    hermitian_definite = _is_hermitian(a) and _is_hermitian(b) and _positive_definite_diag(b)

    if n <= dense_threshold:
        vals, vecs = _dense(a, b, hermitian_definite)
    else:
        vals, vecs = _sparse(a, b, k, hermitian_definite, drop_zero, real_positive, zero_tol, tol, max_iter)

    vals, vecs = _select(vals, vecs, k, drop_zero, real_positive, zero_tol, hermitian_definite)
    if len(vals) < k:
        log.warning("only %d of %d requested eigenvalues found", len(vals), k)
    residuals = np.array([
        np.linalg.norm(a @ vecs[:, i] - vals[i] * (b @ vecs[:, i])) / np.linalg.norm(vecs[:, i])
        for i in range(len(vals))
    ])
    limit = tol * np.maximum(1.0, norm_a + np.abs(vals) * norm_b)
    if np.any(residuals > limit):
        raise ConvergenceError(
            f"eigenpairs exceed residual tolerance: max residual {residuals.max():.3g}", residuals
        )
    return Spectrum(vals, vecs, residuals)


def _dense(a, b, hermitian_definite):
    ad, bd = a.toarray(), b.toarray()
    if hermitian_definite:
        return sla.eigh(ad, bd)
    vals, vecs = sla.eig(ad, bd)
    finite = np.isfinite(vals)
    return vals[finite], vecs[:, finite]


def _select(vals, vecs, k, drop_zero, real_positive, zero_tol, hermitian_definite):
    vals = np.asarray(vals)
    keep = np.ones(len(vals), dtype=bool)
    if not hermitian_definite:
        keep &= np.abs(vals.imag) <= IMAG_RTOL * np.maximum(1.0, np.abs(vals))
    if drop_zero:
        keep &= np.abs(vals) > zero_tol
    if real_positive:
        keep &= vals.real > zero_tol
    vals, vecs = vals[keep], vecs[:, keep]
    order = np.argsort(np.abs(vals) if not hermitian_definite else vals.real, kind="stable")[:k]
    vals, vecs = vals[order], vecs[:, order]
    vals = vals.real
    order = np.argsort(vals, kind="stable")
    vecs = vecs[:, order]
    if np.iscomplexobj(vecs) and not np.any(vecs.imag):
        vecs = vecs.real
    return vals[order], vecs


def _sparse(a, b, k, hermitian_definite, drop_zero, real_positive, zero_tol, tol, max_iter):
    n = a.shape[0]
    diag_ratio = np.abs(a.diagonal()) / np.maximum(np.abs(b.diagonal()), 1e-300)
    shift = -1e-3 * float(np.median(diag_ratio[diag_ratio > 0])) if np.any(diag_ratio > 0) else -1.0
    request = min(n - 2, 2 * k + 10 if hermitian_definite else 4 * k + 20)
    while True:
        if hermitian_definite:
            vals, vecs = spla.eigsh(a, k=request, M=b, sigma=shift, which="LM",
                                    tol=tol * 1e-2, maxiter=max_iter)
            radius = np.max(np.abs(vals - shift))
        else:
            dtype = np.result_type(a.dtype, b.dtype, np.complex128)
            lu = spla.splu(sp.csc_matrix(a - shift * b, dtype=dtype))
            op = spla.LinearOperator((n, n), matvec=lambda x: lu.solve(np.asarray(b @ x, dtype=dtype)),
                                     dtype=dtype)
            theta, vecs = spla.eigs(op, k=request, which="LM", tol=tol * 1e-2, maxiter=max_iter)
            vals = shift + 1.0 / theta
            radius = np.max(np.abs(vals - shift))
        sel, _ = _select(vals, vecs, k, drop_zero, real_positive, zero_tol, hermitian_definite)
        # every eigenvalue inside the searched disc has been found, so the
        # selection is complete once it holds k values strictly inside it
        complete = len(sel) >= k and np.max(np.abs(sel - shift)) < radius
        if complete or request >= n - 2:
            return vals, vecs
        request = min(n - 2, 2 * request)
