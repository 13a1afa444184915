import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hermdec.calculus import (
    derham_map,
    inverse_sharp_0,
    lattice,
    sharp_from_geometry,
    sharp_operator,
    wedge_components,
)
from hermdec.complex import build_complex
from hermdec.errors import DegreeError, UnderdeterminedError
from hermdec.geometry import MetricField, barycentric_differentials_batch, compute_geometry
from hermdec.meshgen import Mesh, grid_mesh

from conftest import SQUARE, random_square_mesh


def geometry_of(mesh, epsilon=0.0):
    k = mesh.complex()
    dim = mesh.vertices.shape[1]
    return k, compute_geometry(k, mesh.vertices, MetricField.euclidean(dim, epsilon))


def constant_form(tensor):
    tensor = np.asarray(tensor, dtype=float)
    return lambda x: np.broadcast_to(tensor, (len(x),) + tensor.shape)


def antisym(m, p, rng):
    t = rng.normal(size=(m,) * p)
    out = np.zeros_like(t)
    import itertools

    for perm in itertools.permutations(range(p)):
        sign = np.linalg.det(np.eye(p)[list(perm)])
        out = out + sign * np.transpose(t, perm)
    return out / math.factorial(p)


def test_wedge_is_antisymmetric_outer_difference():
    a, b = np.array([1.0, 2.0, 0.0]), np.array([0.0, 1.0, 3.0])
    w = wedge_components(np.array([[a, b]]))[0].reshape(3, 3)
    assert np.allclose(w, np.outer(a, b) - np.outer(b, a))


def test_sharp0_is_vertex_average():
    mesh = grid_mesh((3, 3), SQUARE)
    k, g = geometry_of(mesh)
    s0 = sharp_from_geometry(k, g, 0)
    vals = np.arange(k.count(0), dtype=float)
    expected = vals[k.skeletons[2]].mean(axis=1)
    assert np.allclose(s0.apply(vals), expected)


def test_sharp_single_segment():
    mesh = Mesh(np.array([[0.0], [0.25]]), np.array([[0, 1]]))
    k, g = geometry_of(mesh)
    s1 = sharp_from_geometry(k, g, 1)
    assert s1.apply(np.array([3.0]))[0, 0] == pytest.approx(3.0 / 0.25)


def test_sharp_degree_error():
    k, g = geometry_of(grid_mesh((3, 3), SQUARE))
    with pytest.raises(DegreeError):
        sharp_from_geometry(k, g, 3)


def test_lattice_weights():
    coords, weights = lattice(1, 2)
    assert coords.tolist() == [[0, 1], [0.5, 0.5], [1, 0]]
    assert weights.tolist() == [0.5, 1.0, 0.5]
    with pytest.raises(ValueError):
        lattice(1, 0)


def test_derham_examples():
    k = build_complex([[0, 1]])
    verts = np.array([[0.0, 0.0], [1.0, 0.0]])
    for s in (1, 3, 7):
        assert derham_map(constant_form([1.0, 0.0]), k, verts, 1, s).values[0] == pytest.approx(1.0)
    point = build_complex([[0, 1]])
    val = derham_map(lambda x: x[:, 0], point, np.array([[3.0], [5.0]]), 0).values
    assert val.tolist() == [3.0, 5.0]
    xdx = derham_map(lambda x: x[:, :1], k, verts[:, :1], 1, subdivision=2).values[0]
    assert xdx == pytest.approx(0.5)
    with pytest.raises(ValueError):
        derham_map(lambda x: x[:, 0], k, verts, 0, subdivision=0)


def test_derham_orientation():
    # lower-degree simplices run from low to high vertex index
    k = build_complex([[2, 1, 0]])
    verts = np.array([[2.0, 0.0], [0.0, 0.0], [0.0, 1.0]])
    edge = derham_map(constant_form([1.0, 0.0]), k, verts, 1).values[k.index((0, 1))]
    assert edge == pytest.approx(-2.0)
    # top simplices keep the orientation they were given
    seg = build_complex([[1, 0]])
    assert derham_map(constant_form([1.0]), seg, np.array([[2.0], [0.0]]), 1).values[0] == pytest.approx(2.0)


@pytest.mark.parametrize("mesh_factory", [
    lambda: grid_mesh((5, 6), SQUARE),
    lambda: grid_mesh((5, 5), SQUARE, style="asymmetric"),
    lambda: random_square_mesh(60, seed=1),
    lambda: grid_mesh((3, 4, 3), [(0, 1)] * 3, style="asymmetric"),
    lambda: grid_mesh((3, 3, 3), [(0, 2)] * 3),
])
def test_constant_round_trip_and_antisymmetry(mesh_factory):
    mesh = mesh_factory()
    k, g = geometry_of(mesh)
    rng = np.random.default_rng(0)
    n = k.dimension
    for p in range(n + 1):
        tensor = antisym(n, p, rng) if p else np.array(rng.normal())
        cochain = derham_map(constant_form(tensor), k, mesh.vertices, p)
        sharp = sharp_from_geometry(k, g, p)
        out = sharp.apply(cochain)
        assert np.allclose(out, np.broadcast_to(tensor, out.shape), atol=1e-9)
        if p >= 2:
            random_out = sharp.apply(rng.normal(size=k.count(p)))
            assert np.max(np.abs(random_out + np.swapaxes(random_out, 1, 2))) <= 1e-12


def test_derham_second_order_quadrature():
    mesh = grid_mesh((4, 4), SQUARE)
    k = mesh.complex()

    def field(x):
        return np.stack([x[:, 0] * x[:, 1], x[:, 1] ** 2], axis=1)

    exact = derham_map(field, k, mesh.vertices, 1, subdivision=64).values
    errs = [np.linalg.norm(derham_map(field, k, mesh.vertices, 1, subdivision=s).values - exact) for s in (2, 4)]
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.15)


@settings(max_examples=25, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 1000))
def test_linearity(a, b, seed):
    mesh = grid_mesh((4, 3), SQUARE)
    k, g = geometry_of(mesh)
    rng = np.random.default_rng(seed)
    u, v = rng.normal(size=(2, k.count(1)))
    sharp = sharp_from_geometry(k, g, 1)
    assert np.allclose(sharp.apply(a * u + b * v), a * sharp.apply(u) + b * sharp.apply(v))
    f1 = lambda x: np.stack([np.sin(x[:, 0]), x[:, 1]], 1)
    f2 = lambda x: np.stack([x[:, 1] ** 2, np.cos(x[:, 0])], 1)
    lhs = derham_map(lambda x: a * f1(x) + b * f2(x), k, mesh.vertices, 1).values
    rhs = a * derham_map(f1, k, mesh.vertices, 1).values + b * derham_map(f2, k, mesh.vertices, 1).values
    assert np.allclose(lhs, rhs)


def test_sharp_with_hermitian_metric_round_trip():
    mesh = grid_mesh((4, 4), SQUARE)
    k = mesh.complex()
    h = np.array([[1.0, 0.3j], [-0.3j, 1.0]])
    g = compute_geometry(k, mesh.vertices, MetricField.constant(h, 0.0))
    cochain = derham_map(constant_form([0.7, -1.2]), k, mesh.vertices, 1)
    out = sharp_from_geometry(k, g, 1).apply(cochain)
    # the sharp returns the metric-raised covector components
    dl = barycentric_differentials_batch(g.top_positions, g.metrics)
    assert out.shape == (k.count(2), 2)
    assert np.all(np.isfinite(out))
    assert np.allclose(out, out[0], atol=1e-9)


def test_inverse_sharp_consistent_system():
    mesh = grid_mesh((8, 8), SQUARE, style="asymmetric")
    k, g = geometry_of(mesh)
    s0 = sharp_from_geometry(k, g, 0)
    v0 = np.random.default_rng(3).normal(size=k.count(0))
    rhs = s0.apply(v0)
    fit, residual, rank = inverse_sharp_0(s0, rhs)
    assert residual < 1e-9
    assert np.allclose(s0.apply(fit), rhs, atol=1e-9)
    const, _, rank = inverse_sharp_0(s0, np.full(k.count(2), 2.5), gradient=k.exterior_derivative(0))
    assert rank < k.count(0)
    assert np.allclose(const.values, 2.5)
    # the minimum-norm solution mixes in the null-space pattern instead
    plain, residual, _ = inverse_sharp_0(s0, np.full(k.count(2), 2.5))
    assert residual < 1e-9 and not np.allclose(plain.values, 2.5)


def test_inverse_sharp_full_rank_recovers_values():
    mesh = random_square_mesh(150, seed=4)
    k, g = geometry_of(mesh)
    s0 = sharp_from_geometry(k, g, 0)
    v0 = np.random.default_rng(5).normal(size=k.count(0))
    fit, _, rank = inverse_sharp_0(s0, s0.apply(v0), strict=True)
    assert rank == k.count(0)
    assert np.allclose(fit.values, v0, atol=1e-9)


def test_inverse_sharp_quadratic_1d():
    mesh = grid_mesh((20,), [(-math.pi, math.pi)])
    k, g = geometry_of(mesh)
    s0 = sharp_from_geometry(k, g, 0)
    x = mesh.vertices[:, 0]
    dx = x[1] - x[0]
    d0 = k.exterior_derivative(0)
    fit, _, rank = inverse_sharp_0(s0, s0.apply(0.5 * x ** 2), gradient=d0)
    assert np.max(np.abs(fit.values - 0.5 * x ** 2)) <= dx ** 2
    # cell averages of x^2/2 pull back to vertex values within O(dx^2)
    cells = 0.5 * (x[:-1] ** 2 + x[:-1] * x[1:] + x[1:] ** 2) / 3
    fit, _, _ = inverse_sharp_0(s0, cells, gradient=d0)
    assert np.max(np.abs(fit.values - 0.5 * x ** 2)) <= dx ** 2


def test_inverse_sharp_rank_deficiency():
    # 1-D averaging has an alternating null vector
    mesh = grid_mesh((10,), [(0, 1)])
    k, g = geometry_of(mesh)
    s0 = sharp_from_geometry(k, g, 0)
    fit, _, rank = inverse_sharp_0(s0, np.ones(k.count(1)), gradient=k.exterior_derivative(0))
    assert rank == k.count(0) - 1
    assert np.allclose(fit.values, 1.0)
    with pytest.raises(UnderdeterminedError):
        inverse_sharp_0(s0, np.ones(k.count(1)), strict=True)
    with pytest.raises(DegreeError):
        inverse_sharp_0(sharp_from_geometry(k, g, 1), np.ones(k.count(1)))


def test_inverse_sharp_large_grid_null_space():
    # big enough to take the sparse path
    mesh = grid_mesh((12, 12, 12), [(0, 1)] * 3, style="asymmetric")
    k, g = geometry_of(mesh)
    s0 = sharp_from_geometry(k, g, 0)
    assert s0.matrix.shape[0] * s0.matrix.shape[1] > 4_000_000
    x = mesh.vertices
    smooth = np.sin(x[:, 0]) + x[:, 1] * x[:, 2]
    fit, residual, rank = inverse_sharp_0(s0, s0.apply(smooth), gradient=k.exterior_derivative(0))
    assert rank < k.count(0)
    assert residual < 1e-8
    assert np.max(np.abs(fit.values - smooth)) < 1e-2
