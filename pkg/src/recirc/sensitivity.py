"""Constraint Jacobians by finite differences, tangent sweeps and adjoint sweeps.

The tangent model is the exact derivative of the discrete scheme.  Each step
is written as ``K x = f(previous states)`` with Dirichlet data ``d(previous
states, g)``; its derivative reuses the factorised ``K`` of the forward run and
right-hand-side Jacobians assembled from the same operators.  The adjoint
sweep applies the transposes of exactly those maps in reverse order, so the
two analytic routes agree to rounding.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .control import Scenario, StateTrajectory, constraints, simulate
from .eutro import N_SPECIES


@dataclass
class StepTangent:
    """Right-hand-side Jacobians of step ``n`` and the step's solvers."""

    n: int
    hydro_solver: object | None
    Hv: object | None
    Htheta: object | None
    Ttheta: object
    Tv_theta: object
    eutro_solver: object
    Tu: object
    Tu_theta: object
    Tu_v: object


@dataclass
class Linearization:
    """Forward trajectory plus per-step tangent operators."""

    scenario: Scenario
    trajectory: StateTrajectory
    steps: list

    @property
    def N(self) -> int:
        return self.trajectory.N

    @property
    def n_pumps(self) -> int:
        return self.trajectory.g.shape[1]

    @property
    def constraints(self) -> np.ndarray:
        return constraints(self.trajectory, self.scenario.disc)


def linearize(g, scenario: Scenario, trajectory: StateTrajectory | None = None) -> Linearization:
    """Run the forward model (keeping step operators) and assemble the tangent matrices."""
    traj = trajectory if trajectory is not None and trajectory.steps else simulate(g, scenario, keep_steps=True)
    th_op = scenario.thermal_op
    steps = []
    for rec in traj.steps:
        n = rec.n
        Hv = Ht = hsolver = None
        if rec.hydro is not None:
            Hv, Ht = rec.hydro.tangent_matrices(traj.velocity[n + 1])
            hsolver = rec.hydro.solver
        Tt, Ttv = th_op.tangent_matrices(traj.theta[n], rec.transport)
        Tu, Tut, Tuv = rec.eutro.tangent_matrices(traj.species[n + 1])
        steps.append(StepTangent(n, hsolver, Hv, Ht, Tt, Ttv, rec.eutro.solver, Tu, Tut, Tuv))
    return Linearization(scenario, traj, steps)


# --------------------------------------------------------------------------- tangent route


@dataclass
class TangentTrajectory:
    dv: np.ndarray  # (N + 1, ndof)
    dp: np.ndarray  # (N + 1, nv)
    dtheta: np.ndarray  # (N + 2, nv)
    du: np.ndarray  # (N + 2, 5, nv)
    dG: np.ndarray  # (N,)


def tangent_step_hydro(lin: Linearization, n: int, dv_n, dtheta_n, dg_next):
    """``(dv^{n+1}, dp^{n+1})`` from the step-``n`` tangents."""
    st = lin.steps[n]
    ops = lin.scenario.hydro_ops
    rhs = np.concatenate([st.Hv @ dv_n + st.Htheta @ dtheta_n, np.zeros(lin.scenario.disc.nv)])
    x = st.hydro_solver.solve(rhs, ops.pumps.values(dg_next))
    nd = ops.space.ndof
    return x[:nd], x[nd:]


def tangent_step_thermal(lin: Linearization, n: int, dtheta_n, dv_n):
    st = lin.steps[n]
    op = lin.scenario.thermal_op
    return op.solver.solve(st.Ttheta @ dtheta_n + st.Tv_theta @ dv_n, op.coupling @ dtheta_n)


def tangent_step_eutro(lin: Linearization, n: int, du_n, dtheta_n, dv_n):
    st = lin.steps[n]
    ops = lin.scenario.eutro_ops
    du_n = np.ravel(du_n)
    rhs = st.Tu @ du_n + st.Tu_theta @ dtheta_n + st.Tu_v @ dv_n
    return st.eutro_solver.solve(rhs, ops.coupling @ du_n)


def tangent_sweep(lin: Linearization, dg, keep: bool = False):
    """Propagate a schedule perturbation; returns ``dG`` (or a TangentTrajectory with ``keep``)."""
    sc = lin.scenario
    N = lin.N
    dg = np.asarray(dg, dtype=float).reshape(N, lin.n_pumps)
    disc = sc.disc
    nd, nv = disc.velocity.ndof, disc.nv
    w = disc.control_weights
    nz = np.flatnonzero(np.any(dg != 0, axis=1))
    start = int(nz[0]) if len(nz) else N + 1
    dv, dth, du = np.zeros(nd), np.zeros(nv), np.zeros(N_SPECIES * nv)
    dG = np.zeros(N)
    if keep:
        out = TangentTrajectory(np.zeros((N + 1, nd)), np.zeros((N + 1, nv)), np.zeros((N + 2, nv)),
                                np.zeros((N + 2, N_SPECIES, nv)), dG)
    for n in range(start, N + 1):
        dv_next = dp_next = None
        if n < N:
            dv_next, dp_next = tangent_step_hydro(lin, n, dv, dth, dg[n])
        dth_next = tangent_step_thermal(lin, n, dth, dv)
        du_next = tangent_step_eutro(lin, n, du, dth, dv)
        if n >= 1:
            dG[n - 1] = w @ du_next[4 * nv:]
        if keep:
            if n < N:
                out.dv[n + 1], out.dp[n + 1] = dv_next, dp_next
            out.dtheta[n + 1] = dth_next
            out.du[n + 1] = du_next.reshape(N_SPECIES, nv)
        if n < N:
            dv = dv_next
        dth, du = dth_next, du_next
    return out if keep else dG


def _map(fn, items, threads: int):
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def jacobian_linearized(g, scenario: Scenario, threads: int = 1, lin: Linearization | None = None) -> np.ndarray:
    """Jacobian column by column; column ``n * N_CT + i`` is the response to ``g^{n+1,i}``."""
    lin = lin or linearize(g, scenario)
    N, K = lin.N, lin.n_pumps

    def column(j):
        e = np.zeros(N * K)
        e[j] = 1.0
        return tangent_sweep(lin, e)

    cols = _map(column, range(N * K), threads)
    return np.column_stack(cols)


# --------------------------------------------------------------------------- adjoint route


@dataclass
class AdjointTrajectory:
    """Adjoint fields of one constraint row.

    ``w[n], q[n]`` solve the transposed velocity system of step ``n`` (n < N),
    ``xi[n]`` the transposed heat system and ``z[n]`` the transposed species
    system of step ``n``.  Entries for steps after the forcing vanish, and the
    final slots ``w[N], q[N], xi[N+1], z[N+1]`` are zero.  ``reaction[n]`` is
    the discrete boundary reaction on the velocity Dirichlet dofs of step ``n``.
    """

    row: int
    w: np.ndarray
    q: np.ndarray
    xi: np.ndarray
    z: np.ndarray
    reaction: np.ndarray
    gradient: np.ndarray = field(default=None)


def adjoint_sweep(lin: Linearization, k: int, weight: float = 1.0) -> AdjointTrajectory:
    """Backward sweep for constraint ``G^k`` (1-based ``k``)."""
    N = lin.N
    if not 1 <= k <= N:
        raise ValueError(f"constraint row must be in 1..{N}")
    sc = lin.scenario
    disc = sc.disc
    nd, nv = disc.velocity.ndof, disc.nv
    th_op, e_ops, h_ops = sc.thermal_op, sc.eutro_ops, sc.hydro_ops
    nfix = len(h_ops.fixed)
    adj = AdjointTrajectory(
        row=k,
        w=np.zeros((N + 1, nd)), q=np.zeros((N + 1, nv)), xi=np.zeros((N + 2, nv)),
        z=np.zeros((N + 2, N_SPECIES * nv)), reaction=np.zeros((N, nfix)),
    )
    vbar = np.zeros(nd)
    thbar = np.zeros(nv)
    ubar = np.zeros(N_SPECIES * nv)
    ubar[4 * nv:] = weight * disc.control_weights  # adjoint of u^{k+1}
    for n in range(k, -1, -1):
        st = lin.steps[n]
        new_v = np.zeros(nd)
        new_th = np.zeros(nv)
        new_u = np.zeros(N_SPECIES * nv)
        fbar, dbar = st.eutro_solver.solve_transpose(ubar)
        adj.z[n] = fbar
        new_u += st.Tu.T @ fbar + e_ops.coupling.T @ dbar
        new_th += st.Tu_theta.T @ fbar
        new_v += st.Tu_v.T @ fbar
        fbar, dbar = th_op.solver.solve_transpose(thbar)
        adj.xi[n] = fbar
        new_th += st.Ttheta.T @ fbar + th_op.coupling.T @ dbar
        new_v += st.Tv_theta.T @ fbar
        if n < N:
            fbar, dbar = st.hydro_solver.solve_transpose(np.concatenate([vbar, np.zeros(nv)]))
            adj.w[n], adj.q[n] = fbar[:nd], fbar[nd:]
            adj.reaction[n] = dbar
            new_v += st.Hv.T @ fbar[:nd]
            new_th += st.Htheta.T @ fbar[:nd]
        vbar, thbar, ubar = new_v, new_th, new_u
    adj.gradient = row_gradient(lin, adj)
    return adj


def row_gradient(lin: Linearization, adj: AdjointTrajectory) -> np.ndarray:
    """Gradient of ``G^k`` with respect to the flattened schedule.

    Entry ``(n, i)`` pairs pump ``i``'s boundary velocity pattern with the
    discrete boundary reaction of the adjoint velocity/pressure on the
    collector and injector nodes, the discrete counterpart of integrating
    ``beta eps(w) n . n - q`` over those segments.  Entries with ``n > k`` are zero.
    """
    N, K = lin.N, lin.n_pumps
    lift = lin.scenario.hydro_ops.pumps.lift
    grad = np.zeros((N, K))
    for n in range(min(adj.row, N)):
        grad[n] = lift.T @ adj.reaction[n]
    return grad.ravel()


def jacobian_adjoint(g, scenario: Scenario, threads: int = 1, lin: Linearization | None = None) -> np.ndarray:
    """Jacobian row by row, one adjoint sweep per constraint; rows may run concurrently."""
    lin = lin or linearize(g, scenario)
    rows = _map(lambda k: adjoint_sweep(lin, k).gradient, range(1, lin.N + 1), threads)
    return np.vstack(rows)


# --------------------------------------------------------------------------- finite differences


def jacobian_fd(g, scenario: Scenario, h: float, threads: int = 1) -> np.ndarray:
    """Central differences of the constraints, one column per schedule entry."""
    if not h > 0:
        raise ValueError("h must be positive")
    g = scenario.check_schedule(g)
    c1, c2 = scenario.problem.c1, scenario.problem.c2
    if np.any(g - h < c1) or np.any(g + h > c2):
        raise ValueError("finite-difference perturbation leaves the pump bounds")
    N, K = g.shape

    def column(j):
        e = np.zeros(N * K)
        e[j] = h
        e = e.reshape(N, K)
        gp = constraints(simulate(g + e, scenario), scenario.disc)
        gm = constraints(simulate(g - e, scenario), scenario.disc)
        return (gp - gm) / (2.0 * h)

    return np.column_stack(_map(column, range(N * K), threads))


@dataclass
class GradientCheck:
    J_fd: np.ndarray
    J_lin: np.ndarray
    J_adj: np.ndarray
    adj_lin: float
    lin_fd: float
    row_adj_lin: np.ndarray
    row_lin_fd: np.ndarray
    tol_adj: float
    tol_fd: float

    @property
    def passed(self) -> bool:
        return self.adj_lin <= self.tol_adj and self.lin_fd <= self.tol_fd

    def table(self) -> str:
        lines = [f"{'row':>4} {'|adj-lin|/max':>16} {'|lin-fd|/max':>16}"]
        for k, (a, b) in enumerate(zip(self.row_adj_lin, self.row_lin_fd), start=1):
            lines.append(f"{k:>4} {a:16.3e} {b:16.3e}")
        lines.append(f"{'all':>4} {self.adj_lin:16.3e} {self.lin_fd:16.3e}")
        lines.append(f"tolerances: adjoint {self.tol_adj:.1e}, finite differences {self.tol_fd:.1e}")
        lines.append("PASS" if self.passed else "FAIL")
        return "\n".join(lines)


def check_gradient(g, scenario: Scenario, h: float | None = None, threads: int = 1,
                   tol_adj: float = 1e-8, tol_fd: float = 1e-4, corrupt_adjoint: float = 0.0) -> GradientCheck:
    """Compare the three Jacobian routes.

    ``corrupt_adjoint`` scales the adjoint Jacobian by ``1 + corrupt_adjoint``;
    it exists to exercise the failure path.
    """
    g = scenario.check_schedule(g)
    if h is None:
        h = 1e-3 * max(float(np.abs(g).max()), 1e-12)
    lin = linearize(g, scenario)
    J_lin = jacobian_linearized(g, scenario, threads, lin)
    J_adj = jacobian_adjoint(g, scenario, threads, lin) * (1.0 + corrupt_adjoint)
    J_fd = jacobian_fd(g, scenario, h, threads)
    scale = max(float(np.abs(J_lin).max()), 1e-300)
    row_al = np.abs(J_adj - J_lin).max(axis=1) / scale
    row_lf = np.abs(J_lin - J_fd).max(axis=1) / scale
    return GradientCheck(J_fd, J_lin, J_adj, float(row_al.max()), float(row_lf.max()), row_al, row_lf,
                         tol_adj, tol_fd)
