"""Eigenvalue problem presets with analytic reference spectra.

Each ``solve_*`` function builds a mesh, assembles the relevant pencil,
solves for the smallest eigenvalues and returns a :class:`ResultTable`
comparing them to closed-form values.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .calculus import derham_map, inverse_sharp_0, sharp_from_geometry, wedge_components
from .errors import SamplingSaturationError
from .geometry import MetricField
from .meshgen import Mesh, grid_mesh, random_mesh
from .solver import (
    DEFAULT_TOL,
    BoundaryMask,
    OperatorStack,
    Spectrum,
    build_stack,
    dirac_kahler,
    eigs_smallest,
    laplace_beltrami,
)

log = logging.getLogger(__name__)

KINDS = ("membrane-dirichlet", "membrane-neumann", "cavity-E", "cavity-H", "qho", "dirac-kahler")


# --------------------------------------------------------------------------
# analytic spectra


def _box_lengths(box):
    return [float(hi - lo) for lo, hi in box]


def rectangle_modes(k: int, box=((0, math.pi), (0, math.pi)), start: int = 1) -> np.ndarray:
    """Smallest ``k`` values of ``pi^2 (m^2/a^2 + n^2/b^2)``, with multiplicity.

    ``start=1`` gives Dirichlet modes (m, n >= 1); ``start=0`` gives Neumann
    modes with the constant mode excluded.
    """
    a, b = _box_lengths(box)
    top = int(math.isqrt(k)) + k + 2
    vals = [
        math.pi ** 2 * (m * m / (a * a) + n * n / (b * b))
        for m in range(start, top) for n in range(start, top) if m or n
    ]
    return np.sort(vals)[:k]


def dirichlet_membrane_modes(k, box=((0, math.pi), (0, math.pi))):
    return rectangle_modes(k, box, start=1)


def neumann_membrane_modes(k, box=((0, math.pi), (0, math.pi))):
    return rectangle_modes(k, box, start=0)


def oscillator_levels(k: int, dimension: int) -> np.ndarray:
    """Smallest ``k`` values of ``sum(n_i + 1/2)`` over ``dimension`` quantum numbers."""
    vals = []
    level = 0
    while len(vals) < k:
        count = math.comb(level + dimension - 1, dimension - 1)
        vals.extend([level + dimension / 2] * count)
        level += 1
    return np.array(vals[:k], dtype=float)


def dirac_kahler_modes(k, box=((0, math.pi), (0, math.pi))):
    """Magnitudes ``sqrt(m^2 + n^2)`` (m, n >= 0, not both zero) on the square."""
    return np.sqrt(neumann_membrane_modes(k, box))


# --------------------------------------------------------------------------
# specs and results


@dataclass
class ProblemSpec:
    """Everything needed to reproduce one eigenvalue computation.

    Either ``mesh`` is given, or a grid (``shape``, ``style``) or a random
    mesh (``points``, ``seed``) is generated on ``box``. ``epsilon`` is the
    metric regularization (``None`` for the default relative scale).
    """

    kind: str
    shape: tuple = (20, 20)
    box: tuple = None
    style: str = None
    points: int = None
    seed: int = 0
    mesh: Mesh = None
    k: int = 10
    epsilon: float = None
    tol: float = DEFAULT_TOL
    subdivision: int = 4

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown problem kind {self.kind!r}; choose from {', '.join(KINDS)}")
        if self.k < 1:
            raise ValueError("k must be positive")

    @property
    def dimension(self) -> int:
        if self.mesh is not None:
            return self.mesh.dimension
        if self.points is not None:
            return 2
        return len(self.shape)

    def domain(self):
        if self.box is not None:
            box = tuple(tuple(float(x) for x in b) for b in self.box)
        elif self.kind == "qho":
            box = ((-math.pi, math.pi),) * self.dimension
        else:
            box = ((0.0, math.pi),) * self.dimension
        if len(box) != self.dimension:
            raise ValueError(f"box has {len(box)} axes but the mesh is {self.dimension}-dimensional")
        return box

    def build_mesh(self) -> Mesh:
        if self.mesh is not None:
            return self.mesh
        box = self.domain()
        if self.points is not None:
            verts, tris, stitches = random_mesh(self.points, box, seed=self.seed)
            return Mesh(verts, tris, stitches)
        style = self.style or ("asymmetric" if self.kind == "qho" else "symmetric")
        return grid_mesh(self.shape, box, style=style)

    def describe(self) -> dict:
        out = {"kind": self.kind, "k": self.k, "epsilon": self.epsilon, "tol": self.tol,
               "box": [list(b) for b in self.domain()]}
        if self.mesh is not None:
            out["mesh"] = "file"
        elif self.points is not None:
            out.update(points=self.points, seed=self.seed)
        else:
            out.update(shape=list(self.shape),
                       style=self.style or ("asymmetric" if self.kind == "qho" else "symmetric"))
        if self.kind == "qho":
            out["subdivision"] = self.subdivision
        return out


@dataclass
class ResultTable:
    analytic: np.ndarray
    numerical: np.ndarray
    metadata: dict = field(default_factory=dict)
    spectrum: Spectrum = field(default=None, repr=False)
    context: dict = field(default_factory=dict, repr=False)

    @property
    def percent_error(self) -> np.ndarray:
        return 100.0 * np.abs(self.numerical - self.analytic) / np.abs(self.analytic)

    @property
    def max_error(self) -> float:
        return float(self.percent_error.max())

    @property
    def mean_error(self) -> float:
        return float(self.percent_error.mean())

    def rows(self):
        return list(zip(self.analytic.tolist(), self.numerical.tolist(), self.percent_error.tolist()))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["analytic", "numerical", "percent_error"])
        for a, n, e in self.rows():
            writer.writerow([repr(a), repr(n), repr(e)])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({
            "metadata": self.metadata,
            "rows": [{"analytic": a, "numerical": n, "percent_error": e} for a, n, e in self.rows()],
        }, indent=2)

    def __str__(self):
        lines = [f"{'analytic':>12} {'numerical':>12} {'% error':>9}"]
        lines += [f"{a:12.6g} {n:12.6g} {e:9.3f}" for a, n, e in self.rows()]
        return "\n".join(lines)


def _table(analytic, spectrum: Spectrum, spec: ProblemSpec, started: float, **context) -> ResultTable:
    numerical = np.asarray(spectrum.eigenvalues, dtype=float)
    analytic = np.asarray(analytic, dtype=float)[: len(numerical)]
    meta = spec.describe()
    meta["seconds"] = round(time.perf_counter() - started, 3)
    meta["max_residual"] = float(spectrum.residuals.max()) if len(spectrum.residuals) else 0.0
    if len(numerical) < spec.k:
        meta["partial"] = True
    return ResultTable(analytic, numerical, meta, spectrum, context)


def _stack(spec: ProblemSpec):
    mesh = spec.build_mesh()
    complex_ = mesh.complex()
    metric = MetricField.euclidean(mesh.vertices.shape[1] if mesh.vertices.ndim > 1 else 1, spec.epsilon)
    return mesh, build_stack(complex_, mesh.vertices, metric)


# --------------------------------------------------------------------------
# presets


def solve_membrane(spec: ProblemSpec) -> ResultTable:
    """Scalar Laplacian on a square drum, fixed (Dirichlet) or free (Neumann) edge."""
    started = time.perf_counter()
    _, stack = _stack(spec)
    dirichlet = spec.kind != "membrane-neumann"
    masks = {0: BoundaryMask.dirichlet(stack.complex, 0)} if dirichlet else {}
    a, b = laplace_beltrami(stack, 0, masks=masks)
    spectrum = eigs_smallest(a, b, spec.k, tol=spec.tol, drop_zero=not dirichlet)
    box = spec.domain()
    analytic = dirichlet_membrane_modes(spec.k, box) if dirichlet else neumann_membrane_modes(spec.k, box)
    return _table(analytic, spectrum, spec, started, stack=stack, masks=masks, degree=0)


def solve_cavity(spec: ProblemSpec) -> ResultTable:
    """Curl-curl eigenmodes of 1-forms in a square cavity.

    The E field has vanishing tangential component on the wall, so boundary
    edges are removed. The H field needs no restriction. Gradient modes
    (zero eigenvalues) are discarded in both cases.
    """
    started = time.perf_counter()
    _, stack = _stack(spec)
    e_field = spec.kind == "cavity-E"
    masks = {1: BoundaryMask.dirichlet(stack.complex, 1)} if e_field else {}
    a, b = laplace_beltrami(stack, 1, exact_term=False, masks=masks)
    spectrum = eigs_smallest(a, b, spec.k, tol=spec.tol, drop_zero=True, real_positive=True)
    box = spec.domain()
    analytic = neumann_membrane_modes(spec.k, box) if e_field else dirichlet_membrane_modes(spec.k, box)
    return _table(analytic, spectrum, spec, started, stack=stack, masks=masks, degree=1)


def _volume_form(n: int) -> np.ndarray:
    return wedge_components(np.eye(n)[None])[0].reshape((n,) * n)


def cell_averages(func, stack: OperatorStack, embedding, subdivision: int = 4) -> np.ndarray:
    """Mean of a scalar field over each top simplex.

    The field times the volume form is integrated with the de Rham map and
    divided by the integral of the volume form itself.
    """
    n = stack.dimension
    vol = _volume_form(n)
    pos = stack.geometry.top_positions

    def weighted(x):
        return np.asarray(func(x))[(slice(None),) + (None,) * n] * vol

    num = derham_map(weighted, stack.complex, embedding, n, subdivision, positions=pos).values
    den = derham_map(lambda x: np.broadcast_to(vol, (len(x),) + vol.shape), stack.complex,
                     embedding, n, subdivision, positions=pos).values
    return num / den


def harmonic_potential(x) -> np.ndarray:
    return 0.5 * np.sum(np.asarray(x) ** 2, axis=1)


def solve_qho(spec: ProblemSpec, potential=harmonic_potential) -> ResultTable:
    """Quantum harmonic oscillator ``H = 1/2 delta d + V`` on 0-forms.

    The potential is averaged over each top simplex, pulled back to vertex
    values by least squares against the 0-form sharp, and enters ``A`` as
    ``S_0 diag(V)``. The wave function vanishes on the boundary.
    """
    started = time.perf_counter()
    mesh, stack = _stack(spec)
    sharp0 = sharp_from_geometry(stack.complex, stack.geometry, 0)
    cell_values = cell_averages(potential, stack, mesh.vertices, spec.subdivision)
    vertex_values, residual, rank = inverse_sharp_0(sharp0, cell_values, gradient=stack.d[0])
    masks = {0: BoundaryMask.dirichlet(stack.complex, 0)}
    kinetic, b = laplace_beltrami(stack, 0, masks=masks)
    restrict = masks[0].restriction()
    pot = b @ restrict @ vertex_values.values
    a = 0.5 * kinetic + _diag(pot)
    spectrum = eigs_smallest(a, b, spec.k, tol=spec.tol)
    table = _table(oscillator_levels(spec.k, stack.dimension), spectrum, spec, started,
                   stack=stack, masks=masks, degree=0, potential=vertex_values.values)
    table.metadata["potential_fit_residual"] = residual
    table.metadata["potential_fit_rank"] = rank
    return table


def _diag(values):
    return sp.diags(np.asarray(values)).tocsr()


def solve_dirac_kahler(spec: ProblemSpec, convention: str = "codifferential") -> ResultTable:
    """Smallest positive eigenvalues of ``d + delta`` with Dirichlet walls at every degree.

    With the codifferential sign convention the exact/coexact pairs between
    0- and 1-forms give imaginary eigenvalues, so only the real positive
    part of the spectrum is reported. ``convention="adjoint"`` instead
    reports magnitudes of the Hermitian pencil.
    """
    started = time.perf_counter()
    _, stack = _stack(spec)
    masks = {p: BoundaryMask.dirichlet(stack.complex, p) for p in range(stack.dimension + 1)}
    a, b = dirac_kahler(stack, masks, convention=convention)
    if convention == "adjoint":
        spectrum = _magnitudes(a, b, spec.k, spec.tol)
    else:
        spectrum = eigs_smallest(a, b, spec.k, tol=spec.tol, drop_zero=True, real_positive=True)
    return _table(dirac_kahler_modes(spec.k, spec.domain()), spectrum, spec, started,
                  stack=stack, masks=masks, degree=None)


def _magnitudes(a, b, k, tol) -> Spectrum:
    # the Hermitian pencil is symmetric about zero; ask for both signs
    full = eigs_smallest(a, b, 2 * k + 4, tol=tol, drop_zero=True)
    order = np.argsort(np.abs(full.eigenvalues), kind="stable")[:k]
    order = order[np.argsort(np.abs(full.eigenvalues[order]), kind="stable")]
    return Spectrum(np.abs(full.eigenvalues[order]), full.eigenvectors[:, order], full.residuals[order])


SOLVERS = {
    "membrane-dirichlet": solve_membrane,
    "membrane-neumann": solve_membrane,
    "cavity-E": solve_cavity,
    "cavity-H": solve_cavity,
    "qho": solve_qho,
    "dirac-kahler": solve_dirac_kahler,
}


def solve(spec: ProblemSpec) -> ResultTable:
    return SOLVERS[spec.kind](spec)


# --------------------------------------------------------------------------
# convergence


def derived_seeds(seed: int, count: int):
    """Independent per-run seeds spawned from one user seed."""
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(count)]


def convergence_study(kind: str = "membrane-dirichlet", point_counts=(100, 200, 400, 800),
                      repeats: int = 5, seed: int = 0, k: int = 10, tol: float = DEFAULT_TOL,
                      threads: int = 1, box=None):
    """Mean first-``k`` percent error on random meshes of increasing size.

    Returns a list of ``(M, mean_percent_error)``. Each ``(M, repeat)`` run
    uses its own derived seed; sizes whose point sampling saturates are
    skipped with a warning.
    """
    if repeats < 1:
        raise ValueError("repeats must be positive")
    counts = [int(m) for m in point_counts]
    seeds = derived_seeds(seed, len(counts) * repeats)
    jobs = [(m, r, seeds[i * repeats + r]) for i, m in enumerate(counts) for r in range(repeats)]

    def run(job):
        m, _, s = job
        spec = ProblemSpec(kind, points=m, seed=s, k=k, tol=tol, box=box)
        try:
            return solve(spec).mean_error
        except SamplingSaturationError as exc:
            return exc

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(job) for job in jobs]

    out = []
    for i, m in enumerate(counts):
        chunk = results[i * repeats:(i + 1) * repeats]
        failed = [r for r in chunk if isinstance(r, Exception)]
        if failed:
            warnings.warn(f"skipping M={m}: {failed[0]}", RuntimeWarning, stacklevel=2)
            continue
        out.append((m, float(np.mean(chunk))))
    return out


def count_inversions(errors) -> int:
    """Number of consecutive pairs where the error increases."""
    return sum(1 for a, b in itertools.pairwise(errors) if b > a)


# --------------------------------------------------------------------------
# field export


def _b_normalized(vec, b):
    vec = np.asarray(vec)
    if np.iscomplexobj(vec):
        # eigenvectors of real pencils with real eigenvalues can be made real
        pivot = vec[np.argmax(np.abs(vec))]
        vec = vec * (abs(pivot) / pivot)
        if np.max(np.abs(vec.imag)) <= 1e-10 * np.max(np.abs(vec)):
            vec = vec.real
    norm = np.sqrt(abs(np.vdot(vec, b @ vec)))
    return vec / norm if norm > 0 else vec


def _encode(values):
    values = np.asarray(values)
    if np.iscomplexobj(values):
        return np.stack([values.real, values.imag], axis=-1).tolist()
    return values.tolist()


def export_fields(table: ResultTable) -> list:
    """Sharpened eigenvectors at top-simplex barycenters, one record per degree.

    Eigenvectors are scaled to unit ``B``-norm and extended by zeros on
    masked boundary simplices before sharpening. Each record holds
    ``degree``, ``barycenters``, ``eigenvalues`` and ``tensors``, where
    ``tensors[mode][top]`` is the flattened antisymmetric tensor.
    """
    if table.spectrum is None or "stack" not in table.context:
        raise ValueError("table carries no eigenvectors to export")
    stack = table.context["stack"]
    masks = table.context.get("masks", {})
    degree = table.context.get("degree")
    degrees = list(range(stack.dimension + 1)) if degree is None else [degree]
    sizes = [len(masks[p].interior) if p in masks else stack.complex.count(p) for p in degrees]
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    b_blocks = [
        masks[p].restriction() @ stack.star[p].matrix @ masks[p].restriction().T if p in masks
        else stack.star[p].matrix
        for p in degrees
    ]
    b = sp.block_diag(b_blocks, format="csr")
    vecs = [_b_normalized(table.spectrum.eigenvectors[:, i], b) for i in range(len(table.spectrum))]
    records = []
    for j, p in enumerate(degrees):
        sharp = sharp_from_geometry(stack.complex, stack.geometry, p)
        tensors = []
        for vec in vecs:
            part = vec[offsets[j]:offsets[j + 1]]
            full = masks[p].extend(part) if p in masks else part
            tensors.append(_encode(sharp.apply(full).reshape(sharp.top_count, -1)))
        records.append({
            "degree": p,
            "barycenters": _encode(stack.geometry.barycenters),
            "eigenvalues": table.numerical.tolist(),
            "tensors": tensors,
        })
    return records
