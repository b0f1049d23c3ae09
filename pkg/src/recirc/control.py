"""Schedules, cost, constraints and the coupled forward simulation."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .eutro import N_SPECIES, EutroOperators, EutroParams, EutroStep
from .fem import DEFAULT_SOLVE, Discretization, LinearSolveSpec, SolverError
from .hydro import HydroOperators, HydroParams, HydroStep
from .mesh import Mesh
from .thermal import ThermalOperator, ThermoParams
from .transport import PointLocator, Transport


@dataclass(frozen=True)
class ProblemSpec:
    """Time grid, cost weights, pump bounds and the oxygen constraint mode.

    ``mode='reference'`` asks for ``G(g) >= G(g_ref)``; ``mode='bounds'`` asks
    for ``lambda_m <= G(g) <= lambda_M``.
    """

    T: float
    dt: float
    sigma1: float = 0.5
    sigma2: float = 0.5
    c1: float = 0.0
    c2: float = 1.0e-3
    mode: str = "reference"
    lambda_m: float = 0.0
    lambda_M: float = 100.0

    def __post_init__(self):
        if not (self.T > 0 and self.dt > 0):
            raise ValueError("T and dt must be positive")
        n = self.T / self.dt
        if abs(n - round(n)) > 1e-9 * max(1.0, n) or round(n) < 1:
            raise ValueError(f"T / dt = {n} must be a positive integer")
        if self.sigma1 < 0 or self.sigma2 < 0 or (self.sigma1 == 0 and self.sigma2 == 0):
            raise ValueError("cost weights must be non-negative and not both zero")
        if self.c1 > self.c2:
            raise ValueError("pump bounds need c1 <= c2")
        if self.mode not in ("reference", "bounds"):
            raise ValueError(f"unknown constraint mode {self.mode!r}")
        if self.mode == "bounds" and not self.lambda_m < self.lambda_M:
            raise ValueError("oxygen bounds need lambda_m < lambda_M")

    @property
    def N(self) -> int:
        return int(round(self.T / self.dt))


@dataclass(frozen=True)
class ControlSchedule:
    """Pump rates ``g[n - 1, k] = g^{n,k}`` with box bounds."""

    g: np.ndarray
    c1: float
    c2: float

    def __post_init__(self):
        g = np.array(self.g, dtype=float)
        if g.ndim != 2 or g.shape[0] < 1 or g.shape[1] < 1:
            raise ValueError("schedule must be an N x N_CT matrix with N, N_CT >= 1")
        if self.c1 > self.c2:
            raise ValueError("bounds need c1 <= c2")
        if np.any(g < self.c1) or np.any(g > self.c2):
            raise ValueError("schedule violates the pump bounds")
        g.flags.writeable = False
        object.__setattr__(self, "g", g)

    @property
    def N(self) -> int:
        return self.g.shape[0]

    @property
    def n_pumps(self) -> int:
        return self.g.shape[1]


@dataclass(frozen=True)
class InitialState:
    theta: np.ndarray
    species: np.ndarray
    velocity: np.ndarray | None = None


@dataclass(eq=False)
class Scenario:
    """Everything needed to run the coupled model."""

    mesh: Mesh
    hydro: HydroParams
    thermo: ThermoParams
    eutro: EutroParams
    problem: ProblemSpec
    initial: InitialState
    solve_spec: LinearSolveSpec = DEFAULT_SOLVE
    reference: np.ndarray | None = None
    name: str = "scenario"

    def __post_init__(self):
        nv = self.mesh.n_vertices
        th = np.asarray(self.initial.theta, dtype=float)
        sp_ = np.asarray(self.initial.species, dtype=float)
        if th.shape != (nv,):
            raise ValueError(f"initial temperature must have {nv} values")
        if sp_.shape != (N_SPECIES, nv):
            raise ValueError(f"initial species must have shape (5, {nv})")
        if self.initial.velocity is not None and len(self.initial.velocity) != self.disc.velocity.ndof:
            raise ValueError("initial velocity has the wrong length")
        end = self.problem.T + self.problem.dt
        if not self.thermo.radiation.covers(0.0, end):
            raise ValueError("radiation series does not cover the horizon")
        if not self.eutro.light.covers(0.0, end):
            raise ValueError("light series does not cover the horizon")
        if self.reference is not None:
            ref = np.asarray(self.reference, dtype=float)
            if ref.shape != (self.N, self.n_pumps):
                raise ValueError(f"reference schedule must have shape ({self.N}, {self.n_pumps})")
            ControlSchedule(ref, self.problem.c1, self.problem.c2)

    @property
    def N(self) -> int:
        return self.problem.N

    @property
    def dt(self) -> float:
        return self.problem.dt

    @property
    def n_pumps(self) -> int:
        return self.mesh.pump_layout.n_pairs

    @cached_property
    def disc(self) -> Discretization:
        return Discretization(self.mesh)

    @cached_property
    def locator(self) -> PointLocator:
        return PointLocator(self.mesh)

    @cached_property
    def hydro_ops(self) -> HydroOperators:
        return HydroOperators(self.disc, self.hydro, self.dt)

    @cached_property
    def thermal_op(self) -> ThermalOperator:
        return ThermalOperator(self.disc, self.thermo, self.dt, self.solve_spec)

    @cached_property
    def eutro_ops(self) -> EutroOperators:
        return EutroOperators(self.disc, self.eutro, self.dt)

    def initial_velocity(self) -> np.ndarray:
        if self.initial.velocity is None:
            return np.zeros(self.disc.velocity.ndof)
        return np.asarray(self.initial.velocity, dtype=float)

    def check_schedule(self, g) -> np.ndarray:
        g = np.asarray(g, dtype=float)
        if g.shape != (self.N, self.n_pumps):
            raise ValueError(f"schedule must have shape ({self.N}, {self.n_pumps}), got {g.shape}")
        if self.n_pumps == 0:
            return g  # closed basin: nothing to bound
        return ControlSchedule(g, self.problem.c1, self.problem.c2).g


@dataclass
class StepRecord:
    """Operators of step ``n`` kept for linearisation."""

    n: int
    transport: Transport
    hydro: HydroStep | None
    eutro: EutroStep


@dataclass
class StateTrajectory:
    """``velocity[n]``, ``pressure[n]`` for n = 0..N; ``theta[n]``, ``species[n]`` for n = 0..N+1."""

    g: np.ndarray
    dt: float
    velocity: np.ndarray
    pressure: np.ndarray
    theta: np.ndarray
    species: np.ndarray
    clamped: np.ndarray
    steps: list = field(default_factory=list, repr=False)

    @property
    def N(self) -> int:
        return self.g.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.N + 2)


def cost(g, spec: ProblemSpec) -> float:
    """``sigma1/2 sum g^2 + sigma2/2 sum (g^{n+1,k} - g^{n,k})^2``."""
    g = np.asarray(g, dtype=float)
    d = np.diff(g, axis=0)
    return 0.5 * spec.sigma1 * float(np.sum(g * g)) + 0.5 * spec.sigma2 * float(np.sum(d * d))


def cost_gradient(g, spec: ProblemSpec) -> np.ndarray:
    g = np.asarray(g, dtype=float)
    d = np.diff(g, axis=0)
    grad = spec.sigma1 * g
    grad[1:] += spec.sigma2 * d
    grad[:-1] -= spec.sigma2 * d
    return grad


def cost_hessian(shape, spec: ProblemSpec) -> np.ndarray:
    """Constant Hessian of the cost on the row-major flattened schedule."""
    N, K = shape
    D = np.diff(np.eye(N), axis=0)
    H = spec.sigma1 * np.eye(N) + spec.sigma2 * D.T @ D
    return np.kron(H, np.eye(K))


def simulate(g, scenario: Scenario, keep_steps: bool = False, progress=None) -> StateTrajectory:
    """Run the coupled model for the schedule ``g`` (shape N x N_CT).

    Step ``n`` advances velocity with ``g^{n+1}`` for ``n < N`` and temperature
    and species for ``n <= N``, all transported along the feet of ``v^n``.
    """
    g = scenario.check_schedule(g)
    N = scenario.N
    disc = scenario.disc
    spec = scenario.solve_spec
    nd = disc.velocity.ndof
    vel = np.zeros((N + 1, nd))
    pres = np.zeros((N + 1, disc.nv))
    theta = np.zeros((N + 2, disc.nv))
    species = np.zeros((N + 2, N_SPECIES, disc.nv))
    clamped = np.zeros(N + 1, dtype=np.int64)
    vel[0] = scenario.initial_velocity()
    theta[0] = scenario.initial.theta
    species[0] = scenario.initial.species
    steps = []
    for n in range(N + 1):
        try:
            tr = Transport(disc.velocity, vel[n], scenario.dt, scenario.locator)
            clamped[n] = tr.cmap.n_clamped
            hstep = None
            if n < N:
                hstep = HydroStep(scenario.hydro_ops, vel[n], tr, spec)
                state = hstep.solve(theta[n], g[n])
                vel[n + 1], pres[n + 1] = state.velocity, state.pressure
            theta[n + 1] = scenario.thermal_op.step(theta[n], tr, n)
            estep = EutroStep(scenario.eutro_ops, species[n], theta[n], tr, n, spec)
            species[n + 1] = estep.solve()
        except SolverError as exc:
            exc.step = n
            raise
        if not (np.all(np.isfinite(vel[min(n + 1, N)])) and np.all(np.isfinite(species[n + 1]))):
            raise SolverError(f"non-finite state at step {n}", step=n)
        if keep_steps:
            steps.append(StepRecord(n, tr, hstep, estep))
        if progress is not None:
            progress(n)
    return StateTrajectory(g=g, dt=scenario.dt, velocity=vel, pressure=pres, theta=theta, species=species,
                           clamped=clamped, steps=steps)


def constraints(traj: StateTrajectory, disc: Discretization) -> np.ndarray:
    """``G^n`` = mean dissolved oxygen over the control subdomain at step ``n + 1``, n = 1..N."""
    return traj.species[2:, 4, :] @ disc.control_weights


def constraint_values(g, scenario: Scenario) -> np.ndarray:
    return constraints(simulate(g, scenario), scenario.disc)
