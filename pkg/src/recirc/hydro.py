"""Penalised Navier-Stokes step with Smagorinsky viscosity and pump boundary data."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fem import DEFAULT_SOLVE, DirichletSolver, Discretization, LinearSolveSpec, VelocitySpace
from .transport import Transport


@dataclass(frozen=True)
class HydroParams:
    nu: float = 1.0e-6  # kinematic viscosity, m^2/s
    nu_tur: float = 2.5e-3  # turbulent viscosity, m^2
    alpha0: float = 2.1e-4  # thermal expansion, 1/K
    theta0: float = 293.15  # reference temperature, K
    gravity: tuple = (0.0, -9.81)
    penalty: float = 1.0e-7
    eps_floor: float = 1.0e-8  # floor on sqrt(eps:eps) in the gamma coefficient, 1/s

    def __post_init__(self):
        if not self.nu > 0:
            raise ValueError("nu must be positive")
        if not self.nu_tur >= 0:
            raise ValueError("nu_tur must be non-negative")
        if not self.penalty > 0:
            raise ValueError("penalty must be positive")
        if not self.eps_floor > 0:
            raise ValueError("eps_floor must be positive")
        if len(self.gravity) != 2:
            raise ValueError("gravity must have two components")


@dataclass(frozen=True)
class HydroState:
    velocity: np.ndarray
    pressure: np.ndarray


def strain_magnitude(space: VelocitySpace, velocity) -> np.ndarray:
    """``sqrt(eps(v):eps(v))`` at quadrature points, (nt, nq)."""
    return np.sqrt(space.strain_norm2(velocity))


def smagorinsky_beta(space: VelocitySpace, velocity, params: HydroParams) -> np.ndarray:
    """``2 nu + 2 nu_tur sqrt(eps:eps)`` at quadrature points."""
    return 2.0 * params.nu + 2.0 * params.nu_tur * strain_magnitude(space, velocity)


def gamma_coefficient(space: VelocitySpace, velocity, params: HydroParams) -> np.ndarray:
    """``2 nu_tur / max(sqrt(eps:eps), floor)`` at quadrature points."""
    s = strain_magnitude(space, velocity)
    return 2.0 * params.nu_tur / np.maximum(s, params.eps_floor)


class PumpBoundary:
    """Nodal velocity data imposed on the boundary by the pumps.

    Every boundary vertex carries a Dirichlet velocity.  On a pump segment the
    value is ``w * (+-g / mu) * n``, where ``n`` is the segment normal at the
    node and ``w = h_in / (h_in + h_out)`` compares the pump-tagged and other
    incident edge lengths: ``w = 1`` inside a segment and less at its ends, so
    that the boundary flux of the P1 trace equals ``+-g`` exactly.  Elsewhere
    the value is zero.
    """

    def __init__(self, disc: Discretization):
        self.disc = disc
        mesh = disc.mesh
        space = disc.velocity
        nodes = mesh.boundary_nodes
        self.nodes = nodes
        self.fixed = np.concatenate([nodes, space.nb + nodes])
        pos = {int(v): i for i, v in enumerate(nodes)}
        nbn = len(nodes)
        e = mesh.boundary_edges
        h = mesh.edge_lengths
        nrm = mesh.edge_normals
        incident_len = np.zeros(mesh.n_vertices)
        np.add.at(incident_len, e.ravel(), np.repeat(h, 2))
        rows, cols, vals = [], [], []
        for k, pair in enumerate(disc.layout.pairs):
            for edges, measure, sign in ((pair.injector_edges, pair.injector_measure, -1.0),
                                         (pair.collector_edges, pair.collector_measure, 1.0)):
                edges = np.asarray(edges)
                h_in = np.zeros(mesh.n_vertices)
                nsum = np.zeros((mesh.n_vertices, 2))
                np.add.at(h_in, e[edges].ravel(), np.repeat(h[edges], 2))
                np.add.at(nsum, e[edges].ravel(), np.repeat(h[edges, None] * nrm[edges], 2, axis=0))
                seg_nodes = np.unique(e[edges])
                w = h_in[seg_nodes] / incident_len[seg_nodes]
                n = nsum[seg_nodes] / np.linalg.norm(nsum[seg_nodes], axis=1)[:, None]
                coef = sign * w / measure
                idx = np.array([pos[int(v)] for v in seg_nodes])
                for c in range(2):
                    rows.append(c * nbn + idx)
                    cols.append(np.full(len(idx), k))
                    vals.append(coef * n[:, c])
        n_pairs = disc.layout.n_pairs
        if rows:
            self.lift = sp.csr_matrix(
                (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                shape=(2 * nbn, n_pairs),
            )
        else:
            self.lift = sp.csr_matrix((2 * nbn, n_pairs))

    def values(self, g) -> np.ndarray:
        """Prescribed values on ``self.fixed`` for per-pump rates ``g``."""
        g = np.asarray(g, dtype=float).reshape(-1)
        if g.shape != (self.lift.shape[1],):
            raise ValueError(f"expected {self.lift.shape[1]} pump rates, got {g.shape}")
        return self.lift @ g

    def field(self, g) -> np.ndarray:
        """Velocity vector that is zero except for the boundary data."""
        v = np.zeros(self.disc.velocity.ndof)
        v[self.fixed] = self.values(g)
        return v


def pump_dirichlet_values(disc: Discretization, g) -> np.ndarray:
    """Nodal boundary velocities ``(nv, 2)`` for per-pump rates ``g``."""
    return disc.velocity.nodal(PumpBoundary(disc).field(g))


def boundary_flux(disc: Discretization, velocity, edges=None) -> float:
    """``int v . n`` over the given boundary edges (all by default) for the P1 trace."""
    mesh = disc.mesh
    nod = disc.velocity.nodal(velocity)
    idx = np.arange(mesh.n_edges) if edges is None else np.asarray(edges)
    e = mesh.boundary_edges[idx]
    vmid = 0.5 * (nod[e[:, 0]] + nod[e[:, 1]])
    return float(np.sum(mesh.edge_lengths[idx] * np.einsum("ea,ea->e", vmid, mesh.edge_normals[idx])))


class HydroOperators:
    """Matrices that do not change between steps."""

    def __init__(self, disc: Discretization, params: HydroParams, dt: float):
        self.disc = disc
        self.params = params
        self.dt = dt
        self.alpha = 1.0 / dt
        space = disc.velocity
        self.space = space
        self.pumps = PumpBoundary(disc)
        Mb1 = params.alpha0 * space.mass_p1
        ag = params.gravity
        self.buoyancy = sp.vstack([ag[0] * Mb1, ag[1] * Mb1]).tocsr()  # (ndof, nv)

    @cached_property
    def static_blocks(self):
        space = self.space
        B = space.divergence
        Mp = self.disc.mass
        return self.alpha * space.mass, B, -self.params.penalty * Mp

    def system(self, beta) -> sp.csr_matrix:
        aM, B, P = self.static_blocks
        A = aM + self.space.viscous(beta)
        return sp.bmat([[A, -B.T], [-B, P]], format="csr")

    @property
    def fixed(self):
        return self.pumps.fixed


class HydroStep:
    """One velocity/pressure step from ``(v^n, theta^n)`` with pump rates ``g^{n+1}``."""

    def __init__(self, ops: HydroOperators, v_n, transport: Transport, spec: LinearSolveSpec = DEFAULT_SOLVE):
        self.ops = ops
        self.v_n = np.asarray(v_n, dtype=float)
        self.transport = transport
        space = ops.space
        self.beta = smagorinsky_beta(space, self.v_n, ops.params)
        self.matrix = ops.system(self.beta)
        self.solver = DirichletSolver(self.matrix, ops.fixed, spec)

    def rhs(self, theta_n) -> np.ndarray:
        ops = self.ops
        fv = ops.alpha * (ops.space.mass @ self.transport.compose_velocity())
        fv += ops.buoyancy @ (np.asarray(theta_n, dtype=float) - ops.params.theta0)
        return np.concatenate([fv, np.zeros(ops.disc.nv)])

    def solve(self, theta_n, g_next) -> HydroState:
        x = self.solver.solve(self.rhs(theta_n), self.ops.pumps.values(g_next))
        nd = self.ops.space.ndof
        return HydroState(x[:nd], x[nd:])

    def tangent_matrices(self, v_next):
        """``(H_v, H_theta)``: derivatives of the right-hand side minus ``dK x``."""
        ops = self.ops
        space = ops.space
        gamma = gamma_coefficient(space, self.v_n, ops.params)
        C = space.strain_coupling(gamma, space.strain(v_next), space.strain(self.v_n))
        Hv = (ops.alpha * (space.mass @ self.transport.velocity_tangent) - C).tocsr()
        return Hv, ops.buoyancy


def step_hydro(disc: Discretization, state_n: HydroState, theta_n, g_next, params: HydroParams, dt: float,
               spec: LinearSolveSpec = DEFAULT_SOLVE, locator=None) -> HydroState:
    """Advance velocity and pressure by one step."""
    from .transport import PointLocator

    if not dt > 0:
        raise ValueError("dt must be positive")
    ops = HydroOperators(disc, params, dt)
    tr = Transport(disc.velocity, state_n.velocity, dt, locator or PointLocator(disc.mesh))
    return HydroStep(ops, state_n.velocity, tr, spec).solve(theta_n, g_next)


def divergence_norm(disc: Discretization, velocity) -> float:
    """L2 norm of the P1 projection of ``div v``."""
    r = disc.velocity.divergence @ np.asarray(velocity, dtype=float)
    y = spla.splu(sp.csc_matrix(disc.mass)).solve(r)
    return float(np.sqrt(max(r @ y, 0.0)))
