import numpy as np
import pytest
import scipy.sparse as sp

from hermdec.errors import AllBoundaryError, AssemblyError, ConvergenceError, SingularHodgeError
from hermdec.geometry import MetricField
from hermdec.meshgen import Mesh, grid_mesh
from hermdec.problems import dirichlet_membrane_modes
from hermdec.solver import (
    BoundaryMask,
    apply_dirichlet,
    boundary_simplices,
    build_stack,
    dirac_kahler,
    eigs_smallest,
    laplace_beltrami,
)

from conftest import PI, SQUARE, equilateral_mesh, make_stack, random_square_mesh


def hermitian_error(mat):
    mat = sp.csr_matrix(mat)
    diff = abs(mat - mat.conj().T)
    return (diff.max() if diff.nnz else 0.0) / abs(mat).max()


# -- boundary -------------------------------------------------------------


def test_boundary_vertices_of_3x3():
    mesh = grid_mesh((3, 3), [(0, 1), (0, 1)])
    k = mesh.complex()
    b = boundary_simplices(k, 0)
    assert len(b) == 8
    assert k.index((4,)) not in b


def test_boundary_edges_of_3x3_asymmetric():
    k = grid_mesh((3, 3), [(0, 1), (0, 1)], style="asymmetric").complex()
    edges = k.skeletons[1][boundary_simplices(k, 1)]
    assert len(edges) == 8
    pos = grid_mesh((3, 3), [(0, 1), (0, 1)]).vertices
    mid = pos[edges].mean(axis=1)
    assert np.all(np.any(np.isclose(mid, 0) | np.isclose(mid, 1), axis=1))


def test_torus_has_no_boundary():
    k = grid_mesh((4, 4), [(0, 1), (0, 1)], periodic_axes=[0, 1]).complex()
    for p in range(3):
        assert len(boundary_simplices(k, p)) == 0


def test_top_simplices_are_never_boundary():
    k = grid_mesh((3, 3), [(0, 1), (0, 1)]).complex()
    assert len(boundary_simplices(k, 2)) == 0


def test_apply_dirichlet_identity():
    mask = BoundaryMask(0, np.array([0, 2, 3]), 5)
    out = apply_dirichlet(sp.identity(5), mask)
    assert np.array_equal(out.toarray(), np.eye(3))
    with pytest.raises(AllBoundaryError):
        apply_dirichlet(sp.identity(5), BoundaryMask(0, np.array([], dtype=int), 5))
    with pytest.raises(AssemblyError):
        apply_dirichlet(sp.identity(4), mask)


def test_path_laplacian_tridiagonal():
    mesh = grid_mesh((5,), [(0, 1)])
    stack = make_stack(mesh, 0.0)
    a, b = laplace_beltrami(stack, 0)
    mask = BoundaryMask.dirichlet(stack.complex, 0)
    a_int = apply_dirichlet(a, mask).toarray()
    b_int = apply_dirichlet(b, mask).toarray()
    dx = 0.25
    expected = (2 * np.eye(3) - np.eye(3, k=1) - np.eye(3, k=-1)) / dx ** 2
    assert np.allclose(np.linalg.solve(b_int, a_int), expected)


def test_mask_extend_and_restrict():
    mask = BoundaryMask(1, np.array([1, 3]), 5)
    assert mask.extend([7.0, 9.0]).tolist() == [0, 7, 0, 9, 0]
    assert (mask.restriction() @ np.arange(5.0)).tolist() == [1.0, 3.0]


# -- Laplacians -----------------------------------------------------------


# regularized right-angle grids have tiny signed 1-form stars, so only the
# 0-form operator is semidefinite there; well-centered meshes cover all degrees
@pytest.mark.parametrize("mesh_factory, degrees", [
    (lambda: grid_mesh((6, 6), SQUARE), [0]),
    (lambda: grid_mesh((4, 4, 4), [(0, 1)] * 3, style="asymmetric"), [0]),
    (equilateral_mesh, [0, 1, 2]),
])
def test_pencils_hermitian_and_semidefinite(mesh_factory, degrees):
    stack = make_stack(mesh_factory())
    rng = np.random.default_rng(0)
    for p in degrees:
        a, b = laplace_beltrami(stack, p)
        assert hermitian_error(a) <= 1e-10
        assert hermitian_error(b) <= 1e-10
        x = rng.normal(size=(a.shape[0], 1000))
        quad = np.einsum("ij,ij->j", x, a @ x)
        assert np.all(quad >= -1e-9 * np.einsum("ij,ij->j", x, x) * abs(a).max())


def test_neumann_constant_mode():
    stack = make_stack(grid_mesh((8, 8), SQUARE))
    a, _ = laplace_beltrami(stack, 0)
    assert np.linalg.norm(a @ np.ones(a.shape[0])) <= 1e-10


def test_constant_on_torus_is_harmonic():
    stack = make_stack(grid_mesh((6, 6), [(0, 1), (0, 1)], periodic_axes=[0, 1]))
    a, b = laplace_beltrami(stack, 0)
    spec = eigs_smallest(a, b, 1)
    assert abs(spec.eigenvalues[0]) < 1e-9


def test_masking_commutes_with_assembly():
    stack = make_stack(grid_mesh((6, 7), SQUARE))
    for p in range(3):
        masks = {q: BoundaryMask.dirichlet(stack.complex, q) for q in range(3)}
        a_full, b_full = laplace_beltrami(stack, p, exact_term=p > 0)
        a_m, b_m = laplace_beltrami(stack, p, exact_term=p > 0, masks={p: masks[p]})
        if not len(masks[p].interior):
            continue
        assert abs(apply_dirichlet(a_full, masks[p]) - a_m).max() <= 1e-12 * abs(a_full).max()
        assert abs(apply_dirichlet(b_full, masks[p]) - b_m).max() == 0


def test_singular_hodge_propagates():
    stack = make_stack(grid_mesh((5, 5), SQUARE), epsilon=0.0)
    laplace_beltrami(stack, 0)
    with pytest.raises(SingularHodgeError):
        laplace_beltrami(stack, 2)
    with pytest.raises(SingularHodgeError):
        dirac_kahler(stack)


def test_membrane_dirichlet_example(square20):
    stack = make_stack(square20)
    masks = {0: BoundaryMask.dirichlet(stack.complex, 0)}
    a, b = laplace_beltrami(stack, 0, masks=masks)
    spec = eigs_smallest(a, b, 10)
    assert np.all(np.abs(spec.eigenvalues - dirichlet_membrane_modes(10)) / dirichlet_membrane_modes(10) < 0.0359)


# -- Dirac-Kahler ---------------------------------------------------------


def test_grid_pencils_hermitian_at_every_degree():
    stack = make_stack(grid_mesh((6, 6), SQUARE))
    for p in range(3):
        a, b = laplace_beltrami(stack, p)
        assert hermitian_error(a) <= 1e-10 and hermitian_error(b) <= 1e-10
    a, b = dirac_kahler(stack)
    assert hermitian_error(a) <= 1e-10


def test_dirac_kahler_squares_to_laplacians():
    stack = make_stack(equilateral_mesh(6, 6), 0.0)
    a, b = dirac_kahler(stack)
    assert hermitian_error(a) <= 1e-10
    dk = np.sort(np.abs(eigs_smallest(a, b, a.shape[0], tol=1e-6).eigenvalues))
    lap = np.sort(np.concatenate([
        eigs_smallest(*laplace_beltrami(stack, p), stack.complex.count(p), tol=1e-6).eigenvalues
        for p in range(3)
    ]))
    assert len(dk) == len(lap)
    scale = max(lap.max(), 1.0)
    assert np.allclose(dk ** 2, lap, atol=1e-8 * scale, rtol=1e-8)


def test_dirac_kahler_two_vertices():
    mesh = Mesh(np.array([[0.0], [0.5]]), np.array([[0, 1]]))
    stack = make_stack(mesh, 0.0)
    a, b = dirac_kahler(stack)
    vals = eigs_smallest(a, b, 3).eigenvalues
    # constant 0-form plus the pair +-2/dx
    assert np.allclose(np.sort(vals), [-4.0, 0.0, 4.0])


def test_dirac_kahler_codifferential_signs():
    stack = make_stack(grid_mesh((4, 4), SQUARE))
    a_adj, _ = dirac_kahler(stack, convention="adjoint")
    a_cod, _ = dirac_kahler(stack, convention="codifferential")
    n0 = stack.complex.count(0)
    n1 = stack.complex.count(1)
    assert np.allclose(a_cod[:n0, n0:n0 + n1].toarray(), -a_adj[:n0, n0:n0 + n1].toarray())
    assert np.allclose(a_cod[n0:, n0:].toarray(), a_adj[n0:, n0:].toarray())
    with pytest.raises(ValueError):
        dirac_kahler(stack, convention="other")


# -- eigensolver ----------------------------------------------------------


def test_eigs_diagonal():
    spec = eigs_smallest(sp.diags([3.0, 1.0, 2.0]), None, 2)
    assert np.allclose(spec.eigenvalues, [1, 2])
    assert np.all(spec.residuals <= 1e-8)


def test_eigs_1d_sine_modes():
    stack = make_stack(grid_mesh((20,), [(0, PI)]), 0.0)
    mask = {0: BoundaryMask.dirichlet(stack.complex, 0)}
    spec = eigs_smallest(*laplace_beltrami(stack, 0, masks=mask), 5)
    j = np.arange(1, 6)
    dx = PI / 19
    assert np.all(np.abs(spec.eigenvalues - j ** 2) <= 0.2 * j ** 4 * dx ** 2)


def test_sparse_path_matches_dense():
    stack = make_stack(grid_mesh((16, 16), SQUARE))
    mask = {0: BoundaryMask.dirichlet(stack.complex, 0)}
    a, b = laplace_beltrami(stack, 0, masks=mask)
    dense = eigs_smallest(a, b, 6)
    sparse = eigs_smallest(a, b, 6, dense_threshold=10)
    assert np.allclose(dense.eigenvalues, sparse.eigenvalues, rtol=1e-9)


def test_sparse_indefinite_path_matches_dense():
    stack = make_stack(grid_mesh((7, 7), SQUARE))
    mask = {1: BoundaryMask.dirichlet(stack.complex, 1)}
    a, b = laplace_beltrami(stack, 1, exact_term=False, masks=mask)
    dense = eigs_smallest(a, b, 5, drop_zero=True, real_positive=True)
    sparse = eigs_smallest(a, b, 5, drop_zero=True, real_positive=True, dense_threshold=10)
    assert np.allclose(dense.eigenvalues, sparse.eigenvalues, rtol=1e-8)


def test_convergence_error_reports_residuals():
    a = sp.diags([1.0, 2.0, 3.0])
    with pytest.raises(ConvergenceError) as info:
        eigs_smallest(a, None, 2, tol=-1.0)
    assert info.value.residuals is not None


def test_empty_problem():
    with pytest.raises(AllBoundaryError):
        eigs_smallest(sp.csr_matrix((0, 0)), sp.csr_matrix((0, 0)), 1)


def test_hermitian_metric_spectrum_is_real():
    mesh = grid_mesh((8, 8), SQUARE)
    h = np.array([[1.0, 0.25j], [-0.25j, 1.0]])
    stack = build_stack(mesh.complex(), mesh.vertices, MetricField.constant(h, 1e-6))
    mask = {0: BoundaryMask.dirichlet(stack.complex, 0)}
    a, b = laplace_beltrami(stack, 0, masks=mask)
    import scipy.linalg as sla

    vals = sla.eigvals(a.toarray(), b.toarray())
    assert np.max(np.abs(vals.imag)) <= 1e-8
