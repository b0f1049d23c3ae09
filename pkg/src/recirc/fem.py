"""Finite-element spaces, quadrature, assembly and linear solves.

Scalar fields (temperature, species, pressure) live in P1.  Velocity lives in
P1-bubble: per component a block of ``nv`` vertex values followed by ``nt``
bubble coefficients, the bubble being ``27 l1 l2 l3`` (value 1 at the
centroid).  A velocity vector is the concatenation of the two component
blocks, length ``2 * (nv + nt)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.special import roots_jacobi, roots_legendre

from .mesh import Mesh


class SolverError(RuntimeError):
    """A linear solve failed (singular matrix or iteration budget exhausted)."""

    def __init__(self, message, residual=None, step=None):
        super().__init__(message)
        self.residual = residual
        self.step = step


# --------------------------------------------------------------------------- quadrature


def triangle_quadrature(degree: int):
    """Collapsed Gauss-Jacobi rule on a triangle, exact for polynomials of ``degree``.

    Returns barycentric points ``(nq, 3)`` and weights summing to one (multiply
    by the triangle area).
    """
    n = max(1, degree // 2 + 1)
    u, wu = roots_jacobi(n, 1.0, 0.0)
    v, wv = roots_legendre(n)
    u = 0.5 * (u + 1.0)
    v = 0.5 * (v + 1.0)
    U, V = np.meshgrid(u, v, indexing="ij")
    x = U.ravel()
    y = (V * (1.0 - U)).ravel()
    w = np.outer(wu, wv).ravel() / 4.0
    return np.column_stack([1.0 - x - y, x, y]), w


VELOCITY_QUAD_DEGREE = 7


# --------------------------------------------------------------------------- P1 forms


def _p1_pattern(mesh: Mesh):
    t = mesh.triangles
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    return rows, cols


def assemble_mass(mesh: Mesh) -> sp.csr_matrix:
    """Consistent P1 mass matrix."""
    local = (np.ones((3, 3)) + np.eye(3)) / 12.0
    vals = (mesh.areas[:, None, None] * local).ravel()
    rows, cols = _p1_pattern(mesh)
    n = mesh.n_vertices
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def assemble_stiffness(mesh: Mesh, coefficient=1.0) -> sp.csr_matrix:
    """P1 stiffness ``int c grad u . grad v`` with a per-element coefficient."""
    coef = np.broadcast_to(np.asarray(coefficient, dtype=float), (mesh.n_triangles,))
    if np.any(coef < 0):
        raise ValueError("stiffness coefficient must be non-negative")
    g = mesh.barycentric_gradients
    local = np.einsum("tia,tja->tij", g, g) * (mesh.areas * coef)[:, None, None]
    rows, cols = _p1_pattern(mesh)
    n = mesh.n_vertices
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))


def assemble_boundary_mass(mesh: Mesh, *tags: str) -> sp.csr_matrix:
    """P1 mass on the boundary edges carrying any of ``tags``."""
    known = set(mesh.edge_tags)
    for tag in tags:
        if tag not in known and not _is_known_tag(tag):
            raise KeyError(f"unknown boundary tag {tag!r}")
    idx = mesh.edges_with_tag(*tags)
    n = mesh.n_vertices
    if len(idx) == 0:
        return sp.csr_matrix((n, n))
    e = mesh.boundary_edges[idx]
    h = mesh.edge_lengths[idx]
    local = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
    vals = (h[:, None, None] * local).ravel()
    rows = np.repeat(e, 2, axis=1).ravel()
    cols = np.tile(e, (1, 2)).ravel()
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def _is_known_tag(tag: str) -> bool:
    from .mesh import parse_tag, MeshError

    try:
        parse_tag(tag)
    except MeshError:
        return False
    return True


def boundary_mean_matrix(mesh: Mesh, edge_sets) -> sp.csr_matrix:
    """Rows give the length-weighted mean of a P1 field over each edge set."""
    rows, cols, vals = [], [], []
    for k, idx in enumerate(edge_sets):
        idx = np.asarray(idx, dtype=np.int64)
        h = mesh.edge_lengths[idx]
        mu = h.sum()
        e = mesh.boundary_edges[idx]
        rows += [np.full(2 * len(idx), k)]
        cols += [e.ravel()]
        vals += [np.repeat(h / (2.0 * mu), 2)]
    if not rows:
        return sp.csr_matrix((0, mesh.n_vertices))
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(len(edge_sets), mesh.n_vertices),
    )


# --------------------------------------------------------------------------- P1-bubble


class VelocitySpace:
    """Vector P1-bubble space on a mesh, with quadrature data cached."""

    def __init__(self, mesh: Mesh, degree: int = VELOCITY_QUAD_DEGREE):
        self.mesh = mesh
        self.nv = mesh.n_vertices
        self.nt = mesh.n_triangles
        self.nb = self.nv + self.nt
        self.ndof = 2 * self.nb
        self.qp, self.qw = triangle_quadrature(degree)
        lam = self.qp
        self.phi = np.column_stack([lam, 27.0 * lam.prod(axis=1)])  # (nq, 4)
        g = mesh.barycentric_gradients  # (nt, 3, 2)
        nq = len(self.qw)
        grads = np.empty((self.nt, nq, 4, 2))
        grads[:, :, :3, :] = g[:, None, :, :]
        db = (
            (lam[:, 1] * lam[:, 2])[None, :, None] * g[:, None, 0, :]
            + (lam[:, 0] * lam[:, 2])[None, :, None] * g[:, None, 1, :]
            + (lam[:, 0] * lam[:, 1])[None, :, None] * g[:, None, 2, :]
        )
        grads[:, :, 3, :] = 27.0 * db
        self.grads = grads  # (nt, nq, 4, 2)
        self.wa = mesh.areas[:, None] * self.qw[None, :]  # (nt, nq)
        # scalar-block local dofs (nt, 4)
        self.local = np.column_stack([mesh.triangles, self.nv + np.arange(self.nt)])
        # vector local dofs (nt, 8): component-major
        self.local_vec = np.concatenate([self.local, self.nb + self.local], axis=1)

    # -- field helpers
    def split(self, v):
        v = np.asarray(v)
        return v[: self.nb], v[self.nb :]

    def nodal(self, v) -> np.ndarray:
        """(nv, 2) vertex values of a velocity vector."""
        vx, vy = self.split(v)
        return np.column_stack([vx[: self.nv], vy[: self.nv]])

    def bubble(self, v) -> np.ndarray:
        vx, vy = self.split(v)
        return np.column_stack([vx[self.nv :], vy[self.nv :]])

    def from_parts(self, nodal, bubble=None) -> np.ndarray:
        nodal = np.asarray(nodal, dtype=float).reshape(self.nv, 2)
        if bubble is None:
            bubble = np.zeros((self.nt, 2))
        bubble = np.asarray(bubble, dtype=float).reshape(self.nt, 2)
        return np.concatenate([nodal[:, 0], bubble[:, 0], nodal[:, 1], bubble[:, 1]])

    def interpolate(self, func) -> np.ndarray:
        """P1b interpolant: vertex values plus bubbles matching the centroid value."""
        m = self.mesh
        nodal = np.asarray(func(m.vertices), dtype=float).reshape(self.nv, 2)
        cent = np.asarray(func(m.centroids), dtype=float).reshape(self.nt, 2)
        bub = cent - nodal[m.triangles].mean(axis=1)
        return self.from_parts(nodal, bub)

    def velocity_gradient(self, v) -> np.ndarray:
        """(nt, nq, 2, 2) with ``[..., c, a] = d v_c / d x_a`` at quadrature points."""
        v = np.asarray(v)
        loc = v[self.local_vec].reshape(self.nt, 2, 4)
        return np.einsum("tcj,tqja->tqca", loc, self.grads)

    def strain(self, v) -> np.ndarray:
        gv = self.velocity_gradient(v)
        return 0.5 * (gv + np.swapaxes(gv, -1, -2))

    def strain_norm2(self, v) -> np.ndarray:
        """``eps(v):eps(v)`` at quadrature points, shape (nt, nq)."""
        e = self.strain(v)
        return np.einsum("tqab,tqab->tq", e, e)

    def strain_contraction(self, eps) -> np.ndarray:
        """(nt, nq, 8) values of ``eps : eps(phi)`` for the local vector basis."""
        # eps : eps(phi_j e_c) = (eps grad phi_j)_c
        a = np.einsum("tqcb,tqjb->tqcj", eps, self.grads)
        return a.reshape(self.nt, -1, 8)

    # -- assembly
    def _assemble(self, local, rows_local, cols_local, shape):
        rows = np.broadcast_to(rows_local[:, :, None], local.shape)
        cols = np.broadcast_to(cols_local[:, None, :], local.shape)
        return sp.csr_matrix((local.ravel(), (rows.ravel(), cols.ravel())), shape=shape)

    @cached_property
    def mass(self) -> sp.csr_matrix:
        """Vector P1b mass matrix."""
        ms = np.einsum("tq,qi,qj->tij", self.wa, self.phi, self.phi)
        local = np.zeros((self.nt, 8, 8))
        local[:, :4, :4] = ms
        local[:, 4:, 4:] = ms
        return self._assemble(local, self.local_vec, self.local_vec, (self.ndof, self.ndof))

    @cached_property
    def mass_p1(self) -> sp.csr_matrix:
        """Scalar block: P1b test functions against P1 trial functions, shape (nb, nv)."""
        ms = np.einsum("tq,qi,qj->tij", self.wa, self.phi, self.qp)
        return self._assemble(ms, self.local, self.mesh.triangles, (self.nb, self.nv))

    @cached_property
    def divergence(self) -> sp.csr_matrix:
        """``B[i, (c, j)] = int l_i d_c phi_j``, shape (nv, ndof)."""
        loc = np.einsum("tq,qi,tqjc->ticj", self.wa, self.qp, self.grads).reshape(self.nt, 3, 8)
        return self._assemble(loc, self.mesh.triangles, self.local_vec, (self.nv, self.ndof))

    def viscous(self, coefficient) -> sp.csr_matrix:
        """``int beta eps(u):eps(v)`` with ``beta`` per element or per quadrature point."""
        beta = np.asarray(coefficient, dtype=float)
        if beta.ndim <= 1:
            beta = np.broadcast_to(beta.reshape(-1, 1) if beta.ndim == 1 else beta, (self.nt, len(self.qw)))
        wb = self.wa * beta
        G = self.grads
        gg = np.einsum("tq,tqia,tqja->tij", wb, G, G)
        # row (d, i), column (c, j): 0.5 (delta_cd grad phi_j . grad phi_i + d_d phi_j d_c phi_i)
        local = 0.5 * np.einsum("tq,tqjd,tqic->tdicj", wb, G, G)
        for d in range(2):
            local[:, d, :, d, :] += 0.5 * gg
        local = local.reshape(self.nt, 8, 8)
        return self._assemble(local, self.local_vec, self.local_vec, (self.ndof, self.ndof))

    def strain_coupling(self, weight, eps_test, eps_trial) -> sp.csr_matrix:
        """``int w (eps_test : eps(eta)) (eps_trial : eps(dv))`` as a matrix (test x trial)."""
        bt = self.strain_contraction(eps_test)
        at = self.strain_contraction(eps_trial)
        local = np.einsum("tq,tqi,tqj->tij", self.wa * weight, bt, at)
        return self._assemble(local, self.local_vec, self.local_vec, (self.ndof, self.ndof))

    @cached_property
    def centroid_eval(self) -> sp.csr_matrix:
        """Scalar block operator mapping a P1b component to [vertex values; centroid values]."""
        nv, nt = self.nv, self.nt
        avg = sp.csr_matrix(
            (np.full(3 * nt, 1.0 / 3.0), (np.repeat(np.arange(nt), 3), self.mesh.triangles.ravel())),
            shape=(nt, nv),
        )
        top = sp.hstack([sp.identity(nv), sp.csr_matrix((nv, nt))])
        bot = sp.hstack([avg, sp.identity(nt)])
        return sp.vstack([top, bot]).tocsr()

    @cached_property
    def vertex_average(self) -> sp.csr_matrix:
        nv, nt = self.nv, self.nt
        return sp.csr_matrix(
            (np.full(3 * nt, 1.0 / 3.0), (np.repeat(np.arange(nt), 3), self.mesh.triangles.ravel())),
            shape=(nt, nv),
        )


def assemble_vector_p1b_operator(mesh: Mesh, viscosity, penalty: float, alpha: float = 0.0, space=None):
    """Penalised velocity-pressure operator.

    ``[[alpha M + A_visc, -B^T], [-B, -penalty M_p]]`` on the unknowns
    ``(velocity, pressure)``.  ``viscosity`` is per element or per quadrature point.
    """
    if not penalty > 0:
        raise ValueError("penalty parameter must be positive")
    visc = np.asarray(viscosity, dtype=float)
    if np.any(visc <= 0):
        raise ValueError("viscosity must be positive")
    space = space or VelocitySpace(mesh)
    A = space.viscous(visc)
    if alpha:
        A = A + alpha * space.mass
    B = space.divergence
    Mp = assemble_mass(mesh)
    return sp.bmat([[A, -B.T], [-B, -penalty * Mp]], format="csr")


# --------------------------------------------------------------------------- solving


@dataclass(frozen=True)
class LinearSolveSpec:
    method: str = "direct"
    tolerance: float = 1e-10
    max_iterations: int = 2000

    def __post_init__(self):
        if self.method not in ("direct", "iterative"):
            raise ValueError(f"unknown solve method {self.method!r}")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")


DEFAULT_SOLVE = LinearSolveSpec()


class Factorization:
    """Reusable solver for one square sparse matrix (direct LU or ILU-GMRES)."""

    def __init__(self, matrix, spec: LinearSolveSpec = DEFAULT_SOLVE):
        self.matrix = sp.csc_matrix(matrix)
        if self.matrix.shape[0] != self.matrix.shape[1]:
            raise ValueError("matrix must be square")
        self.spec = spec
        self._lu = None
        self._ilu = None
        if self.matrix.shape[0] == 0:
            return
        if spec.method == "direct":
            try:
                self._lu = spla.splu(self.matrix)
            except RuntimeError as exc:
                raise SolverError(f"singular matrix: {exc}") from None
        else:
            try:
                self._ilu = spla.spilu(self.matrix, drop_tol=1e-6, fill_factor=20)
            except RuntimeError:
                self._ilu = None

    def solve(self, rhs, transpose: bool = False):
        rhs = np.asarray(rhs, dtype=float)
        if self.matrix.shape[0] == 0:
            return np.zeros_like(rhs)
        if self._lu is not None:
            x = self._lu.solve(rhs, trans="T" if transpose else "N")
            if not np.all(np.isfinite(x)):
                raise SolverError("direct solve produced non-finite values")
            return x
        A = self.matrix.T if transpose else self.matrix
        M = None
        if self._ilu is not None:
            ilu = self._ilu
            M = spla.LinearOperator(A.shape, lambda r: ilu.solve(r, trans="T" if transpose else "N"))
        bnorm = np.linalg.norm(rhs)
        if bnorm == 0:
            return np.zeros_like(rhs)
        x, info = spla.gmres(A, rhs, rtol=self.spec.tolerance, atol=0.0, maxiter=self.spec.max_iterations,
                             restart=min(200, A.shape[0]), M=M)
        res = np.linalg.norm(A @ x - rhs) / bnorm
        if info != 0 or res > self.spec.tolerance * 10:
            raise SolverError(f"iterative solve did not converge (relative residual {res:.3e})", residual=res)
        return x


def solve(matrix, rhs, spec: LinearSolveSpec = DEFAULT_SOLVE) -> np.ndarray:
    """Solve ``matrix x = rhs``."""
    rhs = np.asarray(rhs, dtype=float)
    if matrix.shape[0] != len(rhs):
        raise ValueError("right-hand side length does not match the matrix")
    return Factorization(matrix, spec).solve(rhs)


def _check_prescriptions(nodes, values):
    nodes = np.asarray(nodes, dtype=np.int64).ravel()
    values = np.broadcast_to(np.asarray(values, dtype=float), nodes.shape).copy()
    order = np.argsort(nodes, kind="stable")
    n_sorted, v_sorted = nodes[order], values[order]
    dup = np.flatnonzero(np.diff(n_sorted) == 0)
    if len(dup):
        clash = dup[v_sorted[dup] != v_sorted[dup + 1]]
        if len(clash):
            raise ValueError(f"conflicting Dirichlet values for dof {n_sorted[clash[0]]}")
    keep = np.concatenate([[True], np.diff(n_sorted) != 0]) if len(n_sorted) else np.zeros(0, bool)
    return n_sorted[keep], v_sorted[keep]


def apply_dirichlet(matrix, rhs, nodes, values):
    """Symmetric elimination of prescribed dofs.

    Returns a full-size system whose constrained rows and columns are replaced
    by identity, with the right-hand side corrected so the solution takes the
    prescribed values exactly.
    """
    nodes, values = _check_prescriptions(nodes, values)
    A = sp.csr_matrix(matrix, dtype=float, copy=True)
    b = np.array(rhs, dtype=float, copy=True)
    if len(nodes) == 0:
        return A, b
    d = np.zeros(A.shape[0])
    d[nodes] = values
    b -= A @ d
    mask = np.ones(A.shape[0])
    mask[nodes] = 0.0
    D = sp.diags(mask)
    A = (D @ A @ D + sp.diags(1.0 - mask)).tocsr()
    b[nodes] = values
    return A, b


class DirichletSolver:
    """Solve ``K x = f`` with ``x[fixed] = d`` and expose the exact transpose.

    ``solve(f, d)`` ignores ``f[fixed]`` (test functions vanish there).
    ``solve_transpose(xbar)`` returns ``(fbar, dbar)`` such that
    ``xbar . solve(f, d) == fbar . f + dbar . d`` for all ``f, d``.
    """

    def __init__(self, matrix, fixed, spec: LinearSolveSpec = DEFAULT_SOLVE):
        K = sp.csr_matrix(matrix)
        n = K.shape[0]
        fixed = np.unique(np.asarray(fixed, dtype=np.int64))
        mask = np.ones(n, dtype=bool)
        mask[fixed] = False
        self.n = n
        self.fixed = fixed
        self.free = np.flatnonzero(mask)
        self.K = K
        Kf = K[self.free]
        self.K_ff = Kf[:, self.free]
        self.K_fd = Kf[:, self.fixed].tocsr()
        self.factor = Factorization(self.K_ff, spec)

    def solve(self, rhs, values=None) -> np.ndarray:
        x = np.zeros(self.n)
        f = np.asarray(rhs, dtype=float)[self.free]
        if values is not None and len(self.fixed):
            d = np.broadcast_to(np.asarray(values, dtype=float), self.fixed.shape)
            x[self.fixed] = d
            f = f - self.K_fd @ d
        x[self.free] = self.factor.solve(f)
        return x

    def solve_transpose(self, xbar):
        xbar = np.asarray(xbar, dtype=float)
        y = self.factor.solve(xbar[self.free], transpose=True)
        fbar = np.zeros(self.n)
        fbar[self.free] = y
        dbar = xbar[self.fixed] - self.K_fd.T @ y
        return fbar, dbar

    def residual_at_fixed(self, x) -> np.ndarray:
        """``(K x)[fixed]``: the discrete boundary reaction of a field."""
        return (self.K[self.fixed] @ x)


def dump_coo(matrix, path) -> None:
    """Write ``row col value`` lines for debugging."""
    A = sp.coo_matrix(matrix)
    with open(path, "w") as fh:
        fh.write(f"# {A.shape[0]} {A.shape[1]} {A.nnz}\n")
        for r, c, v in zip(A.row, A.col, A.data):
            fh.write(f"{r} {c} {v!r}\n")


# --------------------------------------------------------------------------- shared data


class Discretization:
    """Mesh plus the constant matrices every physics step needs."""

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        self.layout = mesh.pump_layout
        self.nv = mesh.n_vertices
        self.nt = mesh.n_triangles

    @cached_property
    def velocity(self) -> VelocitySpace:
        return VelocitySpace(self.mesh)

    @cached_property
    def mass(self) -> sp.csr_matrix:
        return assemble_mass(self.mesh)

    @cached_property
    def lumped_mass(self) -> np.ndarray:
        return np.asarray(self.mass.sum(axis=1)).ravel()

    @cached_property
    def laplacian(self) -> sp.csr_matrix:
        return assemble_stiffness(self.mesh, 1.0)

    def boundary_mass(self, *tags) -> sp.csr_matrix:
        return assemble_boundary_mass(self.mesh, *tags)

    @cached_property
    def wall_mass(self) -> sp.csr_matrix:
        from .mesh import WALL

        return assemble_boundary_mass(self.mesh, WALL)

    @cached_property
    def surface_mass(self) -> sp.csr_matrix:
        from .mesh import SURFACE

        return assemble_boundary_mass(self.mesh, SURFACE)

    @cached_property
    def collector_mean(self) -> sp.csr_matrix:
        """(n_pumps, nv): mean over each collector."""
        return boundary_mean_matrix(self.mesh, [p.collector_edges for p in self.layout.pairs])

    @cached_property
    def injector_nodes(self) -> np.ndarray:
        return self.layout.injector_nodes

    @cached_property
    def injector_assignment(self) -> sp.csr_matrix:
        """(n_injector_nodes, n_pumps) 0/1 map from pump values to injector nodes."""
        nodes = self.injector_nodes
        pos = {int(v): i for i, v in enumerate(nodes)}
        rows, cols = [], []
        for k, p in enumerate(self.layout.pairs):
            for v in p.injector_nodes:
                rows.append(pos[int(v)])
                cols.append(k)
        return sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(nodes), self.layout.n_pairs))

    @cached_property
    def control_weights(self) -> np.ndarray:
        """Row vector ``w`` with ``w . u = (1/|Omega_C|) int_{Omega_C} u``."""
        m = self.mesh
        marked = m.region_markers
        area = m.areas[marked].sum()
        if area <= 0:
            raise ValueError("control subdomain is empty")
        w = np.zeros(self.nv)
        np.add.at(w, m.triangles[marked].ravel(), np.repeat(m.areas[marked] / 3.0, 3))
        return w / area
