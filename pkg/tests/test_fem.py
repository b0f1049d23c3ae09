import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from math import factorial

from recirc.fem import (DirichletSolver, Discretization, LinearSolveSpec, VelocitySpace, apply_dirichlet,
                        assemble_boundary_mass, assemble_mass, assemble_stiffness, assemble_vector_p1b_operator,
                        solve, triangle_quadrature)
from recirc.mesh import SURFACE, Mesh, generate_rect_mesh


def unit_triangle():
    return Mesh(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), np.array([[0, 1, 2]]),
                np.array([[0, 1], [1, 2], [2, 0]]), ("Wall", "Wall", "Surface")).validate()


@pytest.mark.parametrize("degree", [1, 2, 4, 6, 7])
def test_quadrature_exact_on_monomials(degree):
    # int_T x^a y^b = a! b! / (a + b + 2)! on the unit triangle; weights are area-normalised
    pts, w = triangle_quadrature(degree)
    assert w.sum() == pytest.approx(1.0, abs=1e-14)
    x, y = pts[:, 1], pts[:, 2]
    for a in range(degree + 1):
        for b in range(degree + 1 - a):
            exact = factorial(a) * factorial(b) / factorial(a + b + 2)
            assert 0.5 * np.sum(w * x**a * y**b) == pytest.approx(exact, rel=1e-12, abs=1e-15)


def test_bubble_products_integrated_exactly():
    # int_T b^2 with b = 27 l0 l1 l2: 27^2 * 2! 2! 2! * 2 |T| / 8! = 81/280 |T|
    pts, w = triangle_quadrature(7)
    b = 27 * pts.prod(axis=1)
    assert np.sum(w * b * b) == pytest.approx(81 / 280, rel=1e-13)


def test_unit_triangle_mass_and_stiffness():
    m = unit_triangle()
    M = assemble_mass(m).toarray()
    np.testing.assert_allclose(M, 0.5 / 12 * np.array([[2, 1, 1], [1, 2, 1], [1, 1, 2]]), atol=1e-15)
    K = assemble_stiffness(m).toarray()
    np.testing.assert_allclose(K, 0.5 * np.array([[2, -1, -1], [-1, 1, 0], [-1, 0, 1]]), atol=1e-15)
    np.testing.assert_allclose(assemble_stiffness(m, 2.0).toarray(), 2 * K)


def test_global_mass_and_kernel(lake_mesh):
    M = assemble_mass(lake_mesh)
    assert M.sum() == pytest.approx(320.0, rel=1e-12)
    assert abs(M - M.T).max() == 0.0
    K = assemble_stiffness(lake_mesh)
    assert np.abs(K @ np.ones(lake_mesh.n_vertices)).max() < 1e-12


def test_boundary_mass(lake_mesh):
    Ms = assemble_boundary_mass(lake_mesh, SURFACE)
    assert Ms.sum() == pytest.approx(20.0, rel=1e-12)
    assert assemble_boundary_mass(lake_mesh).nnz == 0
    with pytest.raises(KeyError):
        assemble_boundary_mass(lake_mesh, "Nowhere")
    m = unit_triangle()
    e = assemble_boundary_mass(m, SURFACE).toarray()[np.ix_([2, 0], [2, 0])]
    np.testing.assert_allclose(e, np.sqrt(1) / 6 * np.array([[2, 1], [1, 2]]))


@settings(max_examples=20, deadline=None)
@given(st.floats(0.1, 10.0), st.floats(0.1, 10.0))
def test_forms_linear_in_coefficient(a, b):
    mesh = generate_rect_mesh(2.0, 1.0, 3, 2)
    rng = np.random.default_rng(0)
    c1, c2 = rng.uniform(0.5, 2.0, (2, mesh.n_triangles))
    K = lambda c: assemble_stiffness(mesh, c)
    assert abs(K(a * c1 + b * c2) - (a * K(c1) + b * K(c2))).max() < 1e-12 * (a + b) * 10
    space = VelocitySpace(mesh)
    V = lambda c: space.viscous(c)
    assert abs(V(a * c1 + b * c2) - (a * V(c1) + b * V(c2))).max() < 1e-11 * (a + b) * 10


def interp(space, f):
    return space.interpolate(lambda p: np.column_stack(f(p[:, 0], p[:, 1])))


@pytest.fixture(scope="module")
def space():
    return VelocitySpace(generate_rect_mesh(3.0, 2.0, 6, 4))


def test_viscous_kernel_contains_rigid_motions(space):
    A = space.viscous(np.ones(space.nt))
    for field in (lambda x, y: (np.ones_like(x), 0 * x), lambda x, y: (0 * x, np.ones_like(x)),
                  lambda x, y: (-y, x)):
        v = interp(space, field)
        assert abs(v @ (A @ v)) < 1e-12


def test_viscous_energy_of_shear(space):
    # v = (s y, 0): eps:eps = s^2/2, so int beta eps:eps with beta = 1 gives |Omega| s^2 / 2
    s = 0.7
    v = interp(space, lambda x, y: (s * y, 0 * x))
    A = space.viscous(np.ones(space.nt))
    assert v @ (A @ v) == pytest.approx(6.0 * s**2 / 2, rel=1e-12)


def test_divergence_of_constant_and_linear(space):
    B = space.divergence
    v = interp(space, lambda x, y: (np.full_like(x, 2.0), np.full_like(x, -1.0)))
    assert np.abs(B @ v).max() < 1e-13
    # div (x, 0) = 1 -> B v = M 1
    v = interp(space, lambda x, y: (x, 0 * y))
    Mp = assemble_mass(space.mesh)
    np.testing.assert_allclose(B @ v, Mp @ np.ones(space.nv), atol=1e-13)


def test_p1b_operator_blocks(space):
    lam = 1e-3
    K = assemble_vector_p1b_operator(space.mesh, np.full(space.nt, 2.0), lam, alpha=0.5, space=space)
    n = space.ndof
    Mp = assemble_mass(space.mesh)
    assert abs(K[n:, n:] + lam * Mp).max() < 1e-15
    assert abs(K[:n, n:] + space.divergence.T).max() == 0.0
    with pytest.raises(ValueError):
        assemble_vector_p1b_operator(space.mesh, 1.0, 0.0)


def test_solve_small_and_dense_oracle(rng):
    np.testing.assert_allclose(solve(sp.identity(4, format="csr"), np.arange(4.0)), np.arange(4.0))
    np.testing.assert_allclose(solve(sp.csr_matrix([[2.0, 1.0], [1.0, 2.0]]), [3.0, 3.0]), [1.0, 1.0])
    A = rng.normal(size=(50, 50))
    A = A @ A.T + 50 * np.eye(50)
    b = rng.normal(size=50)
    x_ref = np.linalg.solve(A, b)
    for spec in (LinearSolveSpec(), LinearSolveSpec("iterative", 1e-12)):
        np.testing.assert_allclose(solve(sp.csr_matrix(A), b, spec), x_ref, rtol=1e-10, atol=1e-12)


def test_apply_dirichlet_cases():
    mesh = generate_rect_mesh(4.0, 1.0, 8, 2)
    K = assemble_stiffness(mesh)
    n = mesh.n_vertices
    x = mesh.vertices[:, 0]
    left = np.flatnonzero(x == 0.0)
    right = np.flatnonzero(x == 4.0)
    A, b = apply_dirichlet(K, np.zeros(n), np.r_[left, right], np.r_[np.zeros(len(left)), np.ones(len(right))])
    u = solve(A, b)
    np.testing.assert_allclose(u, x / 4.0, atol=1e-12)
    A0, b0 = apply_dirichlet(K, np.ones(n), [], [])
    assert abs(A0 - K).max() == 0 and np.all(b0 == 1)
    vals = np.linspace(0, 1, n)
    A1, b1 = apply_dirichlet(K, np.zeros(n), np.arange(n), vals)
    np.testing.assert_allclose(solve(A1, b1), vals)
    with pytest.raises(ValueError, match="conflicting"):
        apply_dirichlet(K, np.zeros(n), [0, 0], [1.0, 2.0])


def test_dirichlet_solver_transpose_identity(rng):
    mesh = generate_rect_mesh(2.0, 2.0, 4, 4)
    K = assemble_stiffness(mesh) + assemble_mass(mesh) + sp.random(mesh.n_vertices, mesh.n_vertices, 0.05,
                                                                   random_state=1) * 0.1
    fixed = mesh.boundary_nodes
    S = DirichletSolver(K, fixed)
    f = rng.normal(size=mesh.n_vertices)
    d = rng.normal(size=len(fixed))
    xbar = rng.normal(size=mesh.n_vertices)
    x = S.solve(f, d)
    fbar, dbar = S.solve_transpose(xbar)
    assert xbar @ x == pytest.approx(fbar @ f + dbar @ d, rel=1e-12)
    np.testing.assert_allclose(x[fixed], d)


def test_discretization_maps(lake_mesh):
    disc = Discretization(lake_mesh)
    assert disc.control_weights @ np.ones(disc.nv) == pytest.approx(1.0, rel=1e-13)
    # linear field: collector mean is the midpoint value
    y = lake_mesh.vertices[:, 1]
    np.testing.assert_allclose(disc.collector_mean @ y, [14.5, 5.5, 14.5, 5.5], rtol=1e-13)
    assert disc.injector_assignment.shape == (len(disc.injector_nodes), 4)
    np.testing.assert_allclose(disc.injector_assignment.sum(axis=1), 1.0)
