"""Temperature step: diffusion, convective and radiative surface exchange, pump coupling."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .fem import DEFAULT_SOLVE, DirichletSolver, Discretization, LinearSolveSpec
from .series import TimeSeries
from .transport import Transport


@dataclass(frozen=True)
class ThermoParams:
    K: float = 1.4e-7  # thermal diffusivity, m^2/s
    b1_N: float = 0.0  # convective coefficient on walls, m/s
    b1_S: float = 2.4e-6  # convective coefficient at the surface, m/s
    b2_S: float = 1.36e-14  # radiative coefficient, m/(s K^3)
    theta_N: float = 293.15
    theta_S: float = 293.15
    radiation: TimeSeries = field(default_factory=lambda: TimeSeries.constant(293.15))

    def __post_init__(self):
        if not self.K > 0:
            raise ValueError("K must be positive")
        if self.b1_N < 0 or self.b1_S < 0:
            raise ValueError("convective coefficients must be non-negative")
        if not self.b2_S > 0:
            raise ValueError("b2_S must be positive")


def injector_dirichlet(disc: Discretization, field) -> np.ndarray:
    """Per-pump collector means of a P1 field (or of each row of a field stack)."""
    return np.asarray(disc.collector_mean @ np.asarray(field, dtype=float).T).T


class ThermalOperator:
    """Constant left-hand side and the per-step right-hand side of the heat equation."""

    def __init__(self, disc: Discretization, params: ThermoParams, dt: float,
                 spec: LinearSolveSpec = DEFAULT_SOLVE):
        if not dt > 0:
            raise ValueError("dt must be positive")
        self.disc = disc
        self.params = params
        self.dt = dt
        self.alpha = 1.0 / dt
        M = disc.mass
        self.MN = disc.wall_mass
        self.MS = disc.surface_mass
        self.lhs = (self.alpha * M + params.K * disc.laplacian + params.b1_N * self.MN
                    + params.b1_S * self.MS).tocsr()
        self.fixed = disc.injector_nodes
        self.solver = DirichletSolver(self.lhs, self.fixed, spec)
        # injector values from the field at the previous step
        self.coupling = (disc.injector_assignment @ disc.collector_mean).tocsr()
        ones = np.ones(disc.nv)
        self.ambient = params.b1_N * params.theta_N * (self.MN @ ones) + params.b1_S * params.theta_S * (self.MS @ ones)

    def rhs(self, theta_n, transport: Transport, n: int) -> np.ndarray:
        p = self.params
        th = np.asarray(theta_n, dtype=float)
        tr = float(p.radiation(n * self.dt))
        radiative = p.b2_S * (self.MS @ (tr**4 - np.abs(th) ** 3 * th))
        return self.alpha * (self.disc.mass @ transport.compose_p1(th)) + self.ambient + radiative

    def step(self, theta_n, transport: Transport, n: int) -> np.ndarray:
        return self.solver.solve(self.rhs(theta_n, transport, n), self.coupling @ theta_n)

    def tangent_matrices(self, theta_n, transport: Transport):
        """``(T_theta, T_v)``: derivatives of the right-hand side."""
        th = np.asarray(theta_n, dtype=float)
        M = self.disc.mass
        Tt = self.alpha * (M @ transport.p1) - 4.0 * self.params.b2_S * (self.MS @ sp.diags(np.abs(th) ** 3))
        Tv = self.alpha * (M @ transport.p1_foot(th))
        return Tt.tocsr(), Tv.tocsr()


def step_thermal(disc: Discretization, theta_n, transport: Transport, params: ThermoParams, dt: float,
                 n: int, spec: LinearSolveSpec = DEFAULT_SOLVE) -> np.ndarray:
    """Advance the temperature from step ``n`` to ``n + 1``."""
    return ThermalOperator(disc, params, dt, spec).step(theta_n, transport, n)
