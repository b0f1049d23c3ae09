"""Semi-Lagrangian transport: characteristic feet, composition and its derivatives.

Feet are traced by one explicit Euler step, ``foot = x + s dt v(x)`` with
``s = -1`` (departure) or ``s = +1`` (arrival).  They are computed at every
vertex and every triangle centroid: vertex feet serve P1 fields, vertex plus
centroid feet determine the P1-bubble interpolant of a composed velocity.
Feet leaving the domain are moved to the nearest boundary point.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .fem import VelocitySpace
from .mesh import Mesh

INSIDE_TOL = 1e-10


class PointLocator:
    """Uniform background grid mapping points to containing triangles."""

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        V, T = mesh.vertices, mesh.triangles
        self.lo = V.min(axis=0)
        span = np.maximum(V.max(axis=0) - self.lo, 1e-300)
        nt = mesh.n_triangles
        nx = max(1, int(np.ceil(np.sqrt(nt * span[0] / span[1]))))
        ny = max(1, int(np.ceil(nt / nx)))
        self.shape = (nx, ny)
        self.cell = span / np.array([nx, ny])
        tv = V[T]
        pad = 1e-9 * span.max()
        i0, j0 = self._cell_index(tv.min(axis=1) - pad).T
        i1, j1 = self._cell_index(tv.max(axis=1) + pad).T
        cells, tris = [], []
        for t in range(nt):
            ii, jj = np.meshgrid(np.arange(i0[t], i1[t] + 1), np.arange(j0[t], j1[t] + 1), indexing="ij")
            c = (ii * ny + jj).ravel()
            cells.append(c)
            tris.append(np.full(len(c), t))
        cells = np.concatenate(cells)
        tris = np.concatenate(tris)
        order = np.lexsort((tris, cells))
        self.cell_tris = tris[order]
        self.cell_ptr = np.searchsorted(cells[order], np.arange(nx * ny + 1))

    def _cell_index(self, pts):
        idx = np.floor((pts - self.lo) / self.cell).astype(np.int64)
        return np.clip(idx, 0, np.array(self.shape) - 1)

    def barycentric(self, pts, tris) -> np.ndarray:
        m = self.mesh
        g = m.barycentric_gradients[tris]
        d = pts - m.vertices[m.triangles[tris, 0]]
        lam = np.einsum("pia,pa->pi", g, d)
        lam[:, 0] += 1.0
        return lam

    def locate(self, pts):
        """Return ``(triangle, barycentric, score)``; triangle is -1 when no candidate exists.

        Among candidate triangles the one with the largest minimum barycentric
        coordinate wins, ties broken by the lowest triangle index.
        """
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        n = len(pts)
        ci, cj = self._cell_index(pts).T
        c = ci * self.shape[1] + cj
        start, stop = self.cell_ptr[c], self.cell_ptr[c + 1]
        counts = stop - start
        owner = np.repeat(np.arange(n), counts)
        offs = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
        cand = self.cell_tris[np.repeat(start, counts) + offs]
        lam = self.barycentric(pts[owner], cand)
        score = lam.min(axis=1)
        order = np.lexsort((cand, -score, owner))
        first = order[np.concatenate([[True], np.diff(owner[order]) != 0])] if len(order) else order
        tri = np.full(n, -1, dtype=np.int64)
        bary = np.zeros((n, 3))
        best = np.full(n, -np.inf)
        tri[owner[first]] = cand[first]
        bary[owner[first]] = lam[first]
        best[owner[first]] = score[first]
        return tri, bary, best


def nearest_boundary_point(mesh: Mesh, pts):
    """Project points onto the closest boundary edge.

    Returns ``(projection, edge index, parameter along edge)``.
    """
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    e = mesh.boundary_edges
    a = mesh.vertices[e[:, 0]]
    d = mesh.vertices[e[:, 1]] - a
    dd = np.einsum("ea,ea->e", d, d)
    rel = pts[:, None, :] - a[None, :, :]
    t = np.clip(np.einsum("pea,ea->pe", rel, d) / dd, 0.0, 1.0)
    q = a[None] + t[..., None] * d[None]
    dist = np.einsum("pea,pea->pe", pts[:, None] - q, pts[:, None] - q)
    k = np.argmin(dist, axis=1)
    rows = np.arange(len(pts))
    return q[rows, k], k, t[rows, k]


@dataclass(frozen=True, eq=False)
class CharacteristicMap:
    """Feet of characteristics through vertices (first ``nv`` points) and centroids."""

    origins: np.ndarray
    feet: np.ndarray
    triangles: np.ndarray
    barycentric: np.ndarray
    clamp_jacobian: np.ndarray  # d(foot)/d(unclamped foot), (np, 2, 2)
    clamped: np.ndarray
    step: float  # signed: foot = origin + step * v(origin)
    n_vertices: int

    @property
    def n_clamped(self) -> int:
        return int(self.clamped.sum())

    @property
    def n_points(self) -> int:
        return len(self.feet)


def characteristic_points(mesh: Mesh) -> np.ndarray:
    return np.vstack([mesh.vertices, mesh.centroids])


def point_velocities(space: VelocitySpace, velocity) -> np.ndarray:
    """Velocity at vertices and centroids, (nv + nt, 2)."""
    vx, vy = space.split(np.asarray(velocity, dtype=float))
    E = space.centroid_eval
    return np.column_stack([E @ vx, E @ vy])


def trace(mesh: Mesh, origins, displacement, step: float, locator: PointLocator | None = None) -> CharacteristicMap:
    """Locate ``origins + displacement`` and clamp feet outside the domain."""
    locator = locator or PointLocator(mesh)
    origins = np.asarray(origins, dtype=float)
    feet = origins + np.asarray(displacement, dtype=float)
    tri, bary, score = locator.locate(feet)
    outside = (tri < 0) | (score < -INSIDE_TOL)
    jac = np.broadcast_to(np.eye(2), (len(feet), 2, 2)).copy()
    if outside.any():
        idx = np.flatnonzero(outside)
        q, k, t = nearest_boundary_point(mesh, feet[idx])
        feet[idx] = q
        tri[idx] = mesh.edge_triangle[k]
        bary[idx] = locator.barycentric(q, tri[idx])
        e = mesh.boundary_edges[k]
        d = mesh.vertices[e[:, 1]] - mesh.vertices[e[:, 0]]
        u = d / np.linalg.norm(d, axis=1)[:, None]
        interior = (t > 1e-12) & (t < 1.0 - 1e-12)
        jac[idx] = np.einsum("pa,pb->pab", u, u) * interior[:, None, None]
    bary = np.clip(bary, 0.0, None)
    bary /= bary.sum(axis=1, keepdims=True)
    return CharacteristicMap(
        origins=origins, feet=feet, triangles=tri, barycentric=bary,
        clamp_jacobian=jac, clamped=outside, step=step, n_vertices=mesh.n_vertices,
    )


def departure_map(mesh: Mesh, velocity, dt: float, space: VelocitySpace | None = None,
                  locator: PointLocator | None = None) -> CharacteristicMap:
    """Feet ``x - dt v(x)`` at vertices and centroids."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    space = space or VelocitySpace(mesh)
    pts = characteristic_points(mesh)
    return trace(mesh, pts, -dt * point_velocities(space, velocity), -dt, locator)


def arrival_map(mesh: Mesh, velocity, dt: float, space: VelocitySpace | None = None,
                locator: PointLocator | None = None) -> CharacteristicMap:
    """Feet ``x + dt v(x)`` at vertices and centroids."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    space = space or VelocitySpace(mesh)
    pts = characteristic_points(mesh)
    return trace(mesh, pts, dt * point_velocities(space, velocity), dt, locator)


# --------------------------------------------------------------------------- composition


def _p1_rows(cmap: CharacteristicMap, mesh: Mesh, npts: int):
    tv = mesh.triangles[cmap.triangles[:npts]]
    rows = np.repeat(np.arange(npts), 3)
    return rows, tv.ravel(), cmap.barycentric[:npts].ravel()


def p1_interpolation_matrix(cmap: CharacteristicMap, mesh: Mesh) -> sp.csr_matrix:
    """``P`` with ``(P f)_i = f(foot_i)`` for P1 ``f`` at the vertex feet."""
    nv = mesh.n_vertices
    r, c, v = _p1_rows(cmap, mesh, nv)
    return sp.csr_matrix((v, (r, c)), shape=(nv, nv))


def _bubble_value(bary):
    return 27.0 * bary.prod(axis=1)


def _bubble_gradient(bary, grads):
    """Gradient of ``27 l0 l1 l2`` given barycentrics (p, 3) and gradients (p, 3, 2)."""
    l0, l1, l2 = bary.T
    return 27.0 * ((l1 * l2)[:, None] * grads[:, 0] + (l0 * l2)[:, None] * grads[:, 1]
                   + (l0 * l1)[:, None] * grads[:, 2])


def _point_to_coeff(space: VelocitySpace, values_pts):
    """Convert values at (vertices, centroids) to P1b coefficients (works on matrices too)."""
    nv = space.nv
    top = values_pts[:nv]
    bot = values_pts[nv:] - space.vertex_average @ top
    if sp.issparse(values_pts):
        return sp.vstack([top, bot]).tocsr()
    return np.concatenate([top, bot])


def p1b_interpolation_matrix(cmap: CharacteristicMap, space: VelocitySpace) -> sp.csr_matrix:
    """Scalar-block operator mapping a P1b component to its composition with the map."""
    m = space.mesh
    npts = space.nv + space.nt
    if cmap.n_points != npts:
        raise ValueError("map lacks centroid feet")
    r, c, v = _p1_rows(cmap, m, npts)
    rows = np.concatenate([r, np.arange(npts)])
    cols = np.concatenate([c, space.nv + cmap.triangles])
    vals = np.concatenate([v, _bubble_value(cmap.barycentric)])
    Q = sp.csr_matrix((vals, (rows, cols)), shape=(npts, space.nb))
    return _point_to_coeff(space, Q)


def compose(field, cmap: CharacteristicMap, mesh: Mesh, space: VelocitySpace | None = None):
    """Compose a field with a characteristic map.

    Accepts a P1 vector (length ``nv``), a stack of P1 fields ``(k, nv)``, or a
    P1-bubble velocity (length ``2 (nv + nt)``, requires centroid feet).
    """
    field = np.asarray(field, dtype=float)
    nv = mesh.n_vertices
    if field.ndim == 2 and field.shape[1] == nv:
        return np.stack([compose(f, cmap, mesh) for f in field])
    if field.shape == (nv,):
        tv = mesh.triangles[cmap.triangles[:nv]]
        return np.einsum("pi,pi->p", cmap.barycentric[:nv], field[tv])
    space = space or VelocitySpace(mesh)
    if field.shape == (space.ndof,):
        Q = p1b_interpolation_matrix(cmap, space)
        vx, vy = space.split(field)
        return np.concatenate([Q @ vx, Q @ vy])
    raise ValueError(f"cannot compose a field of shape {field.shape}")


def _p1_gradient_at_feet(field, cmap: CharacteristicMap, mesh: Mesh, npts: int):
    t = cmap.triangles[:npts]
    return np.einsum("pi,pia->pa", field[mesh.triangles[t]], mesh.barycentric_gradients[t])


def p1_foot_matrix(field, cmap: CharacteristicMap, space: VelocitySpace) -> sp.csr_matrix:
    """Derivative of ``compose(field)`` with respect to the velocity that built the map.

    Shape ``(nv, 2 nb)``; only the vertex feet move the P1 composition.
    """
    m = space.mesh
    nv = space.nv
    grad = _p1_gradient_at_feet(np.asarray(field, dtype=float), cmap, m, nv)
    a = cmap.step * np.einsum("pab,pa->pb", cmap.clamp_jacobian[:nv], grad)
    rows = np.concatenate([np.arange(nv), np.arange(nv)])
    cols = np.concatenate([np.arange(nv), space.nb + np.arange(nv)])
    return sp.csr_matrix((np.concatenate([a[:, 0], a[:, 1]]), (rows, cols)), shape=(nv, space.ndof))


def p1b_foot_matrix(velocity, cmap: CharacteristicMap, space: VelocitySpace) -> sp.csr_matrix:
    """Derivative of ``compose(velocity)`` with respect to the map-building velocity, (2nb, 2nb)."""
    m = space.mesh
    nv, nt = space.nv, space.nt
    npts = nv + nt
    t = cmap.triangles
    grads = m.barycentric_gradients[t]
    bgrad = _bubble_gradient(cmap.barycentric, grads)
    S = space.centroid_eval  # point values from P1b coefficients
    blocks = []
    for comp in space.split(np.asarray(velocity, dtype=float)):
        g = np.einsum("pi,pia->pa", comp[m.triangles[t]], grads) + comp[nv + t][:, None] * bgrad
        a = cmap.step * np.einsum("pab,pa->pb", cmap.clamp_jacobian, g)
        F = sp.hstack([sp.diags(a[:, 0]) @ S, sp.diags(a[:, 1]) @ S]).tocsr()
        blocks.append(_point_to_coeff(space, F))
    assert blocks[0].shape == (space.nb, space.ndof) and npts == S.shape[0]
    return sp.vstack(blocks).tocsr()


class Transport:
    """Transport operators for one velocity field (one time step)."""

    def __init__(self, space: VelocitySpace, velocity, dt: float, locator: PointLocator):
        self.space = space
        self.mesh = space.mesh
        self.velocity = np.asarray(velocity, dtype=float)
        self.cmap = departure_map(self.mesh, self.velocity, dt, space, locator)

    @cached_property
    def p1(self) -> sp.csr_matrix:
        return p1_interpolation_matrix(self.cmap, self.mesh)

    @cached_property
    def p1b(self) -> sp.csr_matrix:
        return p1b_interpolation_matrix(self.cmap, self.space)

    def compose_p1(self, field):
        return self.p1 @ np.asarray(field, dtype=float)

    def compose_velocity(self, v=None):
        v = self.velocity if v is None else v
        vx, vy = self.space.split(v)
        return np.concatenate([self.p1b @ vx, self.p1b @ vy])

    def p1_foot(self, field) -> sp.csr_matrix:
        return p1_foot_matrix(field, self.cmap, self.space)

    @cached_property
    def velocity_tangent(self) -> sp.csr_matrix:
        """Total derivative of ``v o X(v)`` with respect to ``v``."""
        Q = self.p1b
        return (sp.block_diag([Q, Q]) + p1b_foot_matrix(self.velocity, self.cmap, self.space)).tocsr()
