"""Five-species eutrophication kinetics and the implicit species step.

Species order: nutrient, phytoplankton, zooplankton, detritus, dissolved oxygen.
Unknown vectors are species-major: entry ``s * nv + i`` is species ``s`` at vertex ``i``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .fem import DEFAULT_SOLVE, DirichletSolver, Discretization, LinearSolveSpec
from .series import TimeSeries
from .transport import Transport

SPECIES = ("nutrient", "phytoplankton", "zooplankton", "detritus", "oxygen")
N_SPECIES = 5
DAY = 86400.0


@dataclass(frozen=True)
class EutroParams:
    C_oc: float = 2.67  # oxygen-carbon ratio, mgO/mgC
    C_nc: float = 0.18  # nitrogen-carbon ratio, mgN/mgC
    C_fz: float = 0.7  # grazing efficiency
    K_rd: float = 0.1 / DAY  # detritus regeneration, 1/s
    K_r: float = 0.1 / DAY  # phytoplankton respiration, 1/s
    K_mf: float = 0.05 / DAY  # phytoplankton mortality, 1/s
    K_mz: float = 0.05 / DAY  # zooplankton mortality, 1/s
    K_z: float = 0.2 / DAY  # zooplankton grazing, 1/s
    K_F: float = 1.0  # phytoplankton half-saturation, mgC/l
    K_N: float = 0.025  # nutrient half-saturation, mg/l
    mu: tuple = (1e-6, 1e-6, 1e-6, 1e-6, 1e-6)  # diffusivities, m^2/s
    Theta: float = 1.08  # detritus regeneration thermal constant
    C_t: float = 1.066  # growth thermal constant
    mu_growth: float = 2.0 / DAY  # maximum phytoplankton growth, 1/s
    I_s: float = 300.0  # light saturation, W/m^2
    phi1: float = 0.3  # light attenuation, 1/m
    theta_ref: float = 293.15  # reference temperature of the linearised thermal factors, K
    light: TimeSeries = field(default_factory=lambda: TimeSeries.constant(0.0))

    def __post_init__(self):
        if not (self.K_F > 0 and self.K_N > 0):
            raise ValueError("half-saturation constants must be positive")
        for name in ("K_rd", "K_r", "K_mf", "K_mz", "K_z", "mu_growth", "phi1"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if len(self.mu) != N_SPECIES or any(m < 0 for m in self.mu):
            raise ValueError("mu needs five non-negative diffusivities")
        if not self.I_s > 0:
            raise ValueError("I_s must be positive")
        object.__setattr__(self, "mu", tuple(float(m) for m in self.mu))


def thermic_regeneration(theta, params: EutroParams):
    """``D(theta) = 1 + ln(Theta) (theta - theta_ref)``, or 1 when ``Theta <= 0``."""
    theta = np.asarray(theta, dtype=float)
    if params.Theta > 0:
        return 1.0 + np.log(params.Theta) * (theta - params.theta_ref)
    return np.ones_like(theta)


def thermic_regeneration_slope(params: EutroParams) -> float:
    return float(np.log(params.Theta)) if params.Theta > 0 else 0.0


def _growth_factor(theta, params: EutroParams):
    theta = np.asarray(theta, dtype=float)
    if params.C_t > 0:
        return 1.0 + np.log(params.C_t) * (theta - params.theta_ref), float(np.log(params.C_t))
    return np.ones_like(theta), 0.0


def light_factor(depth, t, params: EutroParams):
    """``(I0(t) / I_s) exp(-phi1 depth)``."""
    depth = np.asarray(depth, dtype=float)
    return float(params.light(t)) / params.I_s * np.exp(-params.phi1 * depth)


def luminosity(depth, t, theta, params: EutroParams):
    """Phytoplankton growth rate ``mu (1 + ln(C_t)(theta - theta_ref)) (I0/I_s) exp(-phi1 depth)``."""
    depth = np.asarray(depth, dtype=float)
    if np.any(depth < 0):
        raise ValueError("depth must be non-negative")
    gf, _ = _growth_factor(theta, params)
    return params.mu_growth * gf * light_factor(depth, t, params)


def luminosity_slope(depth, t, params: EutroParams):
    """``dL / dtheta`` (independent of theta)."""
    _, s = _growth_factor(0.0, params)
    return params.mu_growth * s * light_factor(depth, t, params)


def michaelis(u, k):
    u = np.asarray(u, dtype=float)
    return u / (k + np.abs(u))


def michaelis_slope(u, k):
    u = np.asarray(u, dtype=float)
    return k / (k + np.abs(u)) ** 2


def reaction_matrix(theta, u, L, params: EutroParams) -> np.ndarray:
    """Reaction matrices ``A`` with ``A u`` on the left-hand side, vectorised over points.

    ``theta`` and ``L`` have shape ``(m,)``, ``u`` has shape ``(5, m)``; returns ``(m, 5, 5)``.
    Scalars are accepted and give a single ``(5, 5)`` matrix.
    """
    scalar = np.ndim(theta) == 0 and np.ndim(L) == 0 and np.ndim(u) == 1
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    L = np.broadcast_to(np.asarray(L, dtype=float), theta.shape)
    u = np.asarray(u, dtype=float).reshape(N_SPECIES, -1)
    p = params
    f1 = michaelis(u[0], p.K_N)
    f2 = michaelis(u[1], p.K_F)
    D = thermic_regeneration(theta, p)
    A = np.zeros(theta.shape + (5, 5))
    A[:, 0, 1] = p.C_nc * L * f1 - p.C_nc * p.K_r
    A[:, 0, 3] = -p.C_nc * p.K_rd * D
    A[:, 1, 1] = p.K_r + p.K_mf - L * f1
    A[:, 1, 2] = p.K_z * f2
    A[:, 2, 2] = p.K_mz - p.C_fz * p.K_z * f2
    A[:, 3, 1] = -p.K_mf
    A[:, 3, 2] = -p.K_mz
    A[:, 3, 3] = p.K_rd * D
    A[:, 4, 1] = p.C_oc * p.K_r - p.C_oc * L * f1
    A[:, 4, 3] = p.C_oc * p.K_rd * D
    return A[0] if scalar else A


def reaction_derivatives(theta, u, L, dL, params: EutroParams):
    """``(dA/dtheta (m,5,5), dA/du (m,5,5,5))`` with the last axis of the latter indexing ``u_q``.

    ``dL`` is ``dL/dtheta`` at each point.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    L = np.broadcast_to(np.asarray(L, dtype=float), theta.shape)
    dL = np.broadcast_to(np.asarray(dL, dtype=float), theta.shape)
    u = np.asarray(u, dtype=float).reshape(N_SPECIES, -1)
    p = params
    f1 = michaelis(u[0], p.K_N)
    df1 = michaelis_slope(u[0], p.K_N)
    df2 = michaelis_slope(u[1], p.K_F)
    dD = thermic_regeneration_slope(p)
    m = theta.shape[0]
    At = np.zeros((m, 5, 5))
    At[:, 0, 1] = p.C_nc * dL * f1
    At[:, 0, 3] = -p.C_nc * p.K_rd * dD
    At[:, 1, 1] = -dL * f1
    At[:, 3, 3] = p.K_rd * dD
    At[:, 4, 1] = -p.C_oc * dL * f1
    At[:, 4, 3] = p.C_oc * p.K_rd * dD
    Au = np.zeros((m, 5, 5, 5))
    Au[:, 0, 1, 0] = p.C_nc * L * df1
    Au[:, 1, 1, 0] = -L * df1
    Au[:, 1, 2, 1] = p.K_z * df2
    Au[:, 2, 2, 1] = -p.C_fz * p.K_z * df2
    Au[:, 4, 1, 0] = -p.C_oc * L * df1
    return At, Au


def _block_diagonals(coef) -> sp.csr_matrix:
    """Sparse ``(5 nv, 5 nv)`` matrix whose ``(s, r)`` block is ``diag(coef[:, s, r])``."""
    nv = coef.shape[0]
    s, r = np.nonzero(np.any(coef != 0, axis=0))
    rows = (s[:, None] * nv + np.arange(nv)).ravel()
    cols = (r[:, None] * nv + np.arange(nv)).ravel()
    vals = coef[:, s, r].T.ravel()
    n = N_SPECIES * nv
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


class EutroOperators:
    """Parts of the species system shared by all steps."""

    def __init__(self, disc: Discretization, params: EutroParams, dt: float):
        if not dt > 0:
            raise ValueError("dt must be positive")
        self.disc = disc
        self.params = params
        self.dt = dt
        self.alpha = 1.0 / dt
        M = disc.mass
        S = disc.laplacian
        self.base = sp.block_diag([self.alpha * M + mu * S for mu in params.mu], format="csr")
        self.mass_blocks = sp.block_diag([M] * N_SPECIES, format="csr")
        self.lumped = disc.lumped_mass
        mesh = disc.mesh
        self.depth = mesh.vertices[:, 1].max() - mesh.vertices[:, 1]
        nv = disc.nv
        inj = disc.injector_nodes
        self.fixed = (np.arange(N_SPECIES)[:, None] * nv + inj[None, :]).ravel()
        self.coupling = sp.kron(sp.identity(N_SPECIES), disc.injector_assignment @ disc.collector_mean, format="csr")

    def luminosity(self, theta, n: int):
        t = n * self.dt
        return luminosity(self.depth, t, theta, self.params), luminosity_slope(self.depth, t, self.params)


class EutroStep:
    """One species step from ``(u^n, theta^n, v^n)``."""

    def __init__(self, ops: EutroOperators, u_n, theta_n, transport: Transport, n: int,
                 spec: LinearSolveSpec = DEFAULT_SOLVE):
        self.ops = ops
        self.u_n = np.asarray(u_n, dtype=float).reshape(N_SPECIES, ops.disc.nv)
        self.theta_n = np.asarray(theta_n, dtype=float)
        self.transport = transport
        self.n = n
        self.L, self.dL = ops.luminosity(self.theta_n, n)
        A = reaction_matrix(self.theta_n, self.u_n, self.L, ops.params)
        self.reaction = _block_diagonals(ops.lumped[:, None, None] * A)
        self.matrix = (ops.base + self.reaction).tocsr()
        self.solver = DirichletSolver(self.matrix, ops.fixed, spec)

    def rhs(self) -> np.ndarray:
        comp = np.stack([self.transport.compose_p1(f) for f in self.u_n])
        return self.ops.alpha * (self.ops.mass_blocks @ comp.ravel())

    def solve(self) -> np.ndarray:
        x = self.solver.solve(self.rhs(), self.ops.coupling @ self.u_n.ravel())
        return x.reshape(N_SPECIES, -1)

    def tangent_matrices(self, u_next):
        """``(T_u, T_theta, T_v)``: derivatives of the right-hand side minus ``dK u^{n+1}``."""
        ops = self.ops
        u1 = np.asarray(u_next, dtype=float).reshape(N_SPECIES, -1)
        At, Au = reaction_derivatives(self.theta_n, self.u_n, self.L, self.dL, ops.params)
        m = ops.lumped
        # d(A u^{n+1}) / du^n_q  and  / dtheta^n, per node
        cu = m[:, None, None] * np.einsum("isrq,ri->isq", Au, u1)
        ct = m[:, None] * np.einsum("isr,ri->is", At, u1)
        P = self.transport.p1
        Tu = ops.alpha * sp.kron(sp.identity(N_SPECIES), ops.disc.mass @ P) - _block_diagonals(cu)
        nv = ops.disc.nv
        Tt = -sp.csr_matrix((ct.T.ravel(), (np.arange(N_SPECIES * nv), np.tile(np.arange(nv), N_SPECIES))),
                            shape=(N_SPECIES * nv, nv))
        Tv = sp.vstack([ops.alpha * (ops.disc.mass @ self.transport.p1_foot(f)) for f in self.u_n])
        return Tu.tocsr(), Tt.tocsr(), Tv.tocsr()


def step_eutro(disc: Discretization, u_n, theta_n, transport: Transport, params: EutroParams, dt: float, n: int,
               spec: LinearSolveSpec = DEFAULT_SOLVE) -> np.ndarray:
    """Advance the five species from step ``n`` to ``n + 1``."""
    return EutroStep(EutroOperators(disc, params, dt), u_n, theta_n, transport, n, spec).solve()
