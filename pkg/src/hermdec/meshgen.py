"""Structured grid meshes, topology stitching and 2-D random Delaunay meshes."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from itertools import permutations, product
from pathlib import Path

import numpy as np

from .complex import SimplicialComplex, build_complex
from .errors import (
    AxisError,
    DegenerateGridError,
    DegenerateInputError,
    SamplingSaturationError,
)

RETRY_BUDGET = 10_000
PREDICATE_RTOL = 1e-12


@dataclass(frozen=True)
class GridIndexMap:
    """Row-major map from integer grid coordinates to vertex indices."""

    shape: tuple
    index_map: dict

    @property
    def dimension(self) -> int:
        return len(self.shape)

    @property
    def vertex_count(self) -> int:
        return len(self.index_map)

    def positions(self, box) -> np.ndarray:
        """Vertex coordinates for a uniform grid spanning ``box``.

        ``box`` is a sequence of ``(lo, hi)`` pairs, one per axis.
        """
        box = _as_box(box, self.dimension)
        out = np.empty((self.vertex_count, self.dimension))
        spacing = [(hi - lo) / (m - 1) for (lo, hi), m in zip(box, self.shape)]
        for coord, idx in self.index_map.items():
            out[idx] = [lo + c * h for c, (lo, _), h in zip(coord, box, spacing)]
        return out


def _as_box(box, n):
    box = [(float(lo), float(hi)) for lo, hi in box]
    if len(box) != n:
        raise ValueError(f"box has {len(box)} axes, expected {n}")
    for lo, hi in box:
        if not hi > lo:
            raise ValueError(f"empty box interval ({lo}, {hi})")
    return box


def grid_indices(shape) -> GridIndexMap:
    shape = tuple(int(m) for m in shape)
    if not shape or any(m < 2 for m in shape):
        raise DegenerateGridError(f"every grid extent must be >= 2, got {shape}")
    index_map = {coord: i for i, coord in enumerate(np.ndindex(*shape))}
    return GridIndexMap(shape, index_map)


def _chain_simplices(grid: GridIndexMap, anchors, sign_choices):
    n = grid.dimension
    seen = set()
    out = []
    for anchor in anchors:
        for perm in permutations(range(n)):
            perm_sign = _perm_sign(perm)
            for signs in sign_choices:
                coord = list(anchor)
                verts = [grid.index_map[anchor]]
                for axis in perm:
                    coord[axis] += signs[axis]
                    idx = grid.index_map.get(tuple(coord))
                    if idx is None:
                        break
                    verts.append(idx)
                else:
                    key = tuple(sorted(verts))
                    if key in seen:
                        continue
                    seen.add(key)
                    # det of the chain's step vectors is sign(perm) * prod(signs)
                    if perm_sign * math.prod(signs) < 0:
                        verts[-2], verts[-1] = verts[-1], verts[-2]
                    out.append(verts)
    return np.array(out, dtype=np.int64).reshape(-1, n + 1)


def _perm_sign(perm):
    perm = list(perm)
    sign = 1
    for i in range(len(perm)):
        while perm[i] != i:
            j = perm[i]
            perm[i], perm[j] = perm[j], perm[i]
            sign = -sign
    return sign


def asymmetric_simplices(grid: GridIndexMap) -> np.ndarray:
    """Kuhn decomposition: every cell split into N! simplices along +unit steps.

    Simplices are returned positively oriented in grid coordinates.
    """
    ones = [(1,) * grid.dimension]
    return _chain_simplices(grid, grid.index_map.keys(), ones)


def symmetric_simplices(grid: GridIndexMap) -> np.ndarray:
    """Mirrored decomposition anchored at even points with +-unit steps.

    Anchors are the points whose coordinates are all even, so every cell is
    split along the diagonal through its one even corner (Kuhn's
    decomposition reflected in alternate cells). In 2-D this is the same as
    anchoring at every point of even coordinate sum.
    """
    anchors = [c for c in grid.index_map if all(x % 2 == 0 for x in c)]
    signs = list(product((1, -1), repeat=grid.dimension))
    return _chain_simplices(grid, anchors, signs)


def pbc_stitches(grid: GridIndexMap, periodic_axes) -> dict:
    """Identify the last layer of each periodic axis with the first.

    Axes are 0-based. Every identified vertex maps straight to its final
    representative, so the map is already path-compressed.
    """
    axes = sorted(set(int(a) for a in periodic_axes))
    for a in axes:
        if not 0 <= a < grid.dimension:
            raise AxisError(f"periodic axis {a} outside [0, {grid.dimension})")
    stitches = {}
    if not axes:
        return stitches
    for coord, idx in grid.index_map.items():
        target = list(coord)
        for a in axes:
            if coord[a] == grid.shape[a] - 1:
                target[a] = 0
        target = tuple(target)
        if target != coord:
            stitches[idx] = grid.index_map[target]
    return stitches


def _resolve(stitches: dict) -> dict:
    resolved = {}
    for src in stitches:
        seen = {src}
        dst = stitches[src]
        while dst in stitches:
            dst = stitches[dst]
            if dst in seen:
                raise ValueError(f"stitch cycle through vertex {src}")
            seen.add(dst)
        if dst != src:
            resolved[int(src)] = int(dst)
    return resolved


def apply_stitches(simplices, stitches: dict, return_source: bool = False):
    """Replace vertices by their representatives and drop degenerate simplices.

    With ``return_source=True`` also returns the surviving rows of the input,
    which keep the unstitched vertex ids needed for embedding geometry.
    """
    simplices = np.asarray(simplices, dtype=np.int64)
    if not stitches:
        return (simplices.copy(), simplices.copy()) if return_source else simplices.copy()
    resolved = _resolve(stitches)
    lookup = np.arange(max(int(simplices.max()), max(resolved)) + 1)
    for src, dst in resolved.items():
        lookup[src] = dst
    mapped = lookup[simplices]
    s = np.sort(mapped, axis=1)
    keep = np.all(np.diff(s, axis=1) != 0, axis=1)
    if return_source:
        return mapped[keep], simplices[keep]
    return mapped[keep]


# --------------------------------------------------------------------------
# random meshes


def separation_radius(m: int, n: int) -> float:
    """Minimum separation for ``m`` points in the unit ``n``-cube."""
    return 0.5 / m ** (1.0 / n)


def _strata(n, counts_per_axis, periodic):
    """Faces of the box ordered corners first, then edges, ..., interior.

    Each face is a tuple with entry 0 (low side), 1 (high side) or None
    (free) per axis; periodic axes are always free.
    """
    choices = [(None,) if a in periodic else (0, 1, None) for a in range(n)]
    faces = list(product(*choices))
    faces.sort(key=lambda f: (sum(x is None for x in f), [(-1 if x is None else x) for x in f]))
    sizes = []
    for f in faces:
        free = [a for a in range(n) if f[a] is None]
        sizes.append(int(round(math.prod(counts_per_axis[a] for a in free))) if free else 1)
    return faces, sizes


def random_points(m, n, box=None, seed=0, periodic_axes=()):
    """Stratified random points with pairwise separation at least ``R``.

    Points are drawn face stratum by face stratum: all corners, then the open
    edges, then 2-faces and so on up to the interior. Each candidate is
    resampled until it lies at least ``R = 0.5 / m**(1/n)`` from every point
    already accepted, measured in box-normalized coordinates (with wrap-around
    on periodic axes). Returns an ``(m, n)`` array.
    """
    m, n = int(m), int(n)
    if m < 1 or n < 1:
        raise ValueError("need m >= 1 points in n >= 1 dimensions")
    box = _as_box(box if box is not None else [(0.0, 1.0)] * n, n)
    periodic = set(int(a) for a in periodic_axes)
    for a in periodic:
        if not 0 <= a < n:
            raise AxisError(f"periodic axis {a} outside [0, {n})")
    rng = np.random.default_rng(seed)
    radius = separation_radius(m, n)
    per_axis = m ** (1.0 / n)
    counts_per_axis = [max(per_axis - (1 if a in periodic else 2), 0.0) for a in range(n)]
    faces, sizes = _strata(n, counts_per_axis, periodic)

    plan = []
    remaining = m
    for face, size in zip(faces[:-1], sizes[:-1]):
        take = min(size, remaining)
        plan.append((face, take))
        remaining -= take
    plan.append((faces[-1], remaining))

    accepted = np.empty((m, n))
    count = 0
    per = np.array([a in periodic for a in range(n)])
    for face, take in plan:
        free = np.array([x is None for x in face])
        fixed = np.array([0.0 if x is None else float(x) for x in face])
        for _ in range(take):
            for _attempt in range(RETRY_BUDGET):
                cand = np.where(free, rng.random(n), fixed)
                if count == 0:
                    break
                diff = np.abs(accepted[:count] - cand)
                diff = np.where(per, np.minimum(diff, 1.0 - diff), diff)
                if np.min(np.einsum("ij,ij->i", diff, diff)) >= radius * radius:
                    break
            else:
                raise SamplingSaturationError(
                    f"could not place point {count + 1} of {m} at separation {radius:.4g} "
                    f"after {RETRY_BUDGET} tries; use fewer points or a smaller radius"
                )
            accepted[count] = cand
            count += 1
    lo = np.array([b[0] for b in box])
    span = np.array([b[1] - b[0] for b in box])
    return lo + accepted * span


def _circumcircles(pts, tris):
    a, b, c = pts[tris[:, 0]], pts[tris[:, 1]], pts[tris[:, 2]]
    bx, by = b[:, 0] - a[:, 0], b[:, 1] - a[:, 1]
    cx, cy = c[:, 0] - a[:, 0], c[:, 1] - a[:, 1]
    d = 2.0 * (bx * cy - by * cx)
    b2, c2 = bx * bx + by * by, cx * cx + cy * cy
    ux = (cy * b2 - by * c2) / d
    uy = (bx * c2 - cx * b2) / d
    centers = np.stack([a[:, 0] + ux, a[:, 1] + uy], axis=1)
    return centers, ux * ux + uy * uy


def orientation_2d(a, b, c) -> float:
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def delaunay_2d(points) -> np.ndarray:
    """Bowyer-Watson triangulation of a planar point set.

    Points exactly on a circumcircle (within a relative tolerance of 1e-12)
    count as outside. Returns counter-clockwise triangles as an ``(T, 3)``
    array of point indices.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise DegenerateInputError("delaunay_2d needs an (M, 2) array of points")
    if len(pts) < 3:
        raise DegenerateInputError("need at least 3 points to triangulate")
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    scale = float(np.max(hi - lo))
    centered = pts - (lo + hi) / 2
    if scale == 0 or np.linalg.matrix_rank(centered - centered.mean(0), tol=1e-12 * scale) < 2:
        raise DegenerateInputError("all points are collinear")
    centered /= scale

    big = 100.0
    work = np.vstack([centered, [[-big, -big], [big, -big], [0.0, big]]])
    n = len(pts)
    tris = np.array([[n, n + 1, n + 2]], dtype=np.int64)
    centers, r2 = _circumcircles(work, tris)
    for i in range(n):
        p = work[i]
        d2 = np.sum((centers - p) ** 2, axis=1)
        bad = r2 - d2 > PREDICATE_RTOL * r2
        bad_tris = tris[bad]
        edges = np.concatenate([bad_tris[:, [0, 1]], bad_tris[:, [1, 2]], bad_tris[:, [2, 0]]])
        key = np.sort(edges, axis=1)
        _, inv, cnt = np.unique(key, axis=0, return_inverse=True, return_counts=True)
        boundary = edges[cnt[inv.reshape(-1)] == 1]
        new = np.column_stack([boundary, np.full(len(boundary), i)])
        new_centers, new_r2 = _circumcircles(work, new)
        keep = ~bad
        tris = np.concatenate([tris[keep], new])
        centers = np.concatenate([centers[keep], new_centers])
        r2 = np.concatenate([r2[keep], new_r2])
    tris = tris[np.all(tris < n, axis=1)]
    a, b, c = pts[tris[:, 0]], pts[tris[:, 1]], pts[tris[:, 2]]
    area2 = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    tris = tris[np.abs(area2) > PREDICATE_RTOL * scale * scale]
    area2 = area2[np.abs(area2) > PREDICATE_RTOL * scale * scale]
    neg = area2 < 0
    tris[neg] = tris[neg][:, [0, 2, 1]]
    return tris


def random_mesh(m, box=None, periodic_axes=(), seed=0, ghost_band=None):
    """2-D random mesh: stratified points, periodic ghosts, Delaunay, stitches.

    Returns ``(vertices, triangles, stitches)``. For periodic axes the vertex
    array is extended by ghost copies of points near the opposite side; the
    triangles reference ghosts where they cross a periodic boundary and
    ``stitches`` maps every ghost to its representative in ``[0, m)``.
    """
    box = _as_box(box if box is not None else [(0.0, 1.0)] * 2, 2)
    periodic = sorted(set(int(a) for a in periodic_axes))
    pts = random_points(m, 2, box, seed, periodic)
    if not periodic:
        return pts, delaunay_2d(pts), {}

    span = np.array([hi - lo for lo, hi in box])
    lo = np.array([b[0] for b in box])
    if ghost_band is None:
        ghost_band = 6.0 * separation_radius(m, 2)
    unit = (pts - lo) / span
    images = [np.zeros(2)]
    for a in periodic:
        images = [img + shift * np.eye(2)[a] for img in images for shift in (-1.0, 0.0, 1.0)]
    all_pts, owners = [unit], [np.arange(m)]
    for img in images:
        if not np.any(img):
            continue
        moved = unit + img
        near = np.all((moved > -ghost_band) & (moved < 1.0 + ghost_band), axis=1)
        all_pts.append(moved[near])
        owners.append(np.nonzero(near)[0])
    all_pts = np.concatenate(all_pts)
    owners = np.concatenate(owners)
    tris = delaunay_2d(all_pts)

    centroid = all_pts[tris].mean(axis=1)
    inside = np.ones(len(tris), dtype=bool)
    for a in periodic:
        inside &= (centroid[:, a] >= 0.0) & (centroid[:, a] < 1.0)
    tris = tris[inside]

    used = np.unique(tris)
    ghosts = used[used >= m]
    renumber = np.full(len(all_pts), -1, dtype=np.int64)
    renumber[:m] = np.arange(m)
    renumber[ghosts] = m + np.arange(len(ghosts))
    vertices = lo + np.concatenate([unit, all_pts[ghosts]]) * span
    stitches = {int(m + k): int(owners[g]) for k, g in enumerate(ghosts)}
    return vertices, renumber[tris], stitches


# --------------------------------------------------------------------------
# mesh container and file format


@dataclass
class Mesh:
    """Vertices, oriented top simplices and an optional stitch map."""

    vertices: np.ndarray
    simplices: np.ndarray
    stitches: dict = field(default_factory=dict)

    @property
    def dimension(self) -> int:
        return self.simplices.shape[1] - 1

    def complex(self) -> SimplicialComplex:
        stitched, source = apply_stitches(self.simplices, self.stitches, return_source=True)
        return build_complex(stitched, len(self.vertices), source_simplices=source)

    def to_dict(self) -> dict:
        verts = self.vertices
        if np.iscomplexobj(verts):
            coords = [[[float(z.real), float(z.imag)] for z in row] for row in verts]
        else:
            coords = verts.tolist()
        return {
            "dimension": self.dimension,
            "vertices": coords,
            "simplices": self.simplices.tolist(),
            "stitches": {str(k): str(v) for k, v in sorted(self.stitches.items())},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Mesh":
        verts = data["vertices"]
        arr = np.asarray(verts, dtype=float)
        if arr.ndim == 3:
            arr = arr[..., 0] + 1j * arr[..., 1]
        simplices = np.asarray(data["simplices"], dtype=np.int64)
        if simplices.ndim != 2 or simplices.shape[1] != int(data["dimension"]) + 1:
            raise ValueError("simplex rows do not match the declared dimension")
        stitches = {int(k): int(v) for k, v in data.get("stitches", {}).items()}
        return cls(arr, simplices, stitches)

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()), encoding="utf-8")

    @classmethod
    def read(cls, path) -> "Mesh":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def grid_mesh(shape, box, style="symmetric", periodic_axes=()) -> Mesh:
    grid = grid_indices(shape)
    if style == "symmetric":
        simplices = symmetric_simplices(grid)
    elif style == "asymmetric":
        simplices = asymmetric_simplices(grid)
    else:
        raise ValueError(f"unknown grid style {style!r}")
    return Mesh(grid.positions(box), simplices, pbc_stitches(grid, periodic_axes))


def polar_embedding(positions: np.ndarray) -> np.ndarray:
    """Map ``(r, theta)`` grid coordinates to the plane."""
    r, theta = positions[:, 0], positions[:, 1]
    return np.column_stack([r * np.cos(theta), r * np.sin(theta)])
