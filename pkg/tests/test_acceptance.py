"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line in ``RESULTS``; ``conftest.py`` prints the
lines at the end of the session.  The optimization and lake runs take minutes.
"""
import time
from dataclasses import replace

import numpy as np
import pytest

from recirc.control import constraint_values, cost, simulate
from recirc.eutro import EutroParams, reaction_matrix
from recirc.fem import Discretization
from recirc.hydro import HydroParams, HydroState, divergence_norm, step_hydro
from recirc.mesh import generate_rect_mesh
from recirc.optimizer import OptimizerConfig, optimize
from recirc.scenarios import LAKE_PUMPS, LOWER_PUMPS, UPPER_PUMPS, coarse_scenario, lake_scenario, tiny_scenario
from recirc.sensitivity import check_gradient, jacobian_adjoint, jacobian_linearized, linearize
from recirc.scenarios import verification_schedule

RESULTS: dict[int, str] = {}


def record(k: int, ok: bool, detail: str) -> None:
    line = f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[k] = line
    print(line)
    assert ok, line


@pytest.fixture(scope="module")
def coarse_case():
    sc = coarse_scenario(N=6, n_pumps=2)
    g = verification_schedule(6, 2)
    return sc, g, linearize(g, sc)


def test_criterion_01_stoichiometric_identity():
    rng = np.random.default_rng(1)
    p = EutroParams()
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        theta = rng.uniform(270.0, 310.0)
        u = rng.uniform(-1.0, 20.0, 5)
        A = reaction_matrix(theta, u, rng.uniform(0.0, 1e-4), p)
        worst = max(worst, float(np.abs(p.C_nc * A[4] + p.C_oc * A[0]).max()))
    elapsed = time.perf_counter() - t0
    record(1, worst <= 1e-14 and elapsed < 1.0, f"max |C_nc row5 + C_oc row1| = {worst:.1e}, {elapsed:.2f} s")


def test_criterion_02_conservation():
    sc = lake_scenario(nx=20, ny=16, dt=1800.0, T=12 * 1800.0, pumps=(), name="closed")
    sc = replace(sc, eutro=replace(sc.eutro, C_fz=1.0, mu=(1e-6,) * 5))
    traj = simulate(np.zeros((12, 0)), sc)
    w = sc.disc.lumped_mass
    C = sc.eutro.C_nc
    total = np.array([w @ (u[0] + C * (u[1] + u[2] + u[3])) for u in traj.species])
    drift = float(np.abs(total - total[0]).max() / abs(total[0]))
    record(2, drift <= 1e-8, f"{sc.mesh.n_vertices} nodes, N = 12, relative drift {drift:.1e}")


def test_criterion_03_three_way_jacobian(coarse_case):
    sc, g, _ = coarse_case
    res = check_gradient(g, sc)
    record(3, res.passed, f"{sc.mesh.n_vertices} nodes, adj-lin {res.adj_lin:.1e}, lin-fd {res.lin_fd:.1e}")


def test_criterion_04_causality(coarse_case):
    sc, g, lin = coarse_case
    K = sc.n_pumps
    bad = 0
    for J in (jacobian_linearized(g, sc, lin=lin), jacobian_adjoint(g, sc, lin=lin)):
        for k in range(sc.N):
            bad += int(np.count_nonzero(J[k, K * (k + 1):]))
    record(4, bad == 0, f"{bad} nonzero entries with n > k in either route")


def test_criterion_05_penalty_scaling(lake_mesh):
    disc = Discretization(lake_mesh)
    P = HydroParams()
    nd = disc.velocity.ndof
    norms = []
    for lam in (1e-7, 5e-8):
        s = step_hydro(disc, HydroState(np.zeros(nd), np.zeros(disc.nv)), np.full(disc.nv, P.theta0),
                       np.full(4, 1e-4), replace(P, penalty=lam), 450.0)
        norms.append(divergence_norm(disc, s.velocity))
    ratio = norms[0] / norms[1]
    record(5, abs(ratio - 2.0) <= 0.5, f"||div v|| ratio for lambda, lambda/2 = {ratio:.4f}")


def test_criterion_06_pumping_raises_bottom_oxygen():
    sc = lake_scenario(nx=40, ny=32, dt=450.0)
    series = {}
    for label, rate in (("pump", 1e-4), ("none", 0.0)):
        traj = simulate(np.full((sc.N, 4), rate), sc)
        series[label] = np.array([u[4] @ sc.disc.control_weights for u in traj.species])
    start = int(np.ceil(0.1 * (sc.N + 1)))
    steps = np.diff(series["none"][start:])
    ok = series["pump"][-1] > series["none"][-1] and np.all(steps <= 0.0)
    record(6, bool(ok), f"{sc.mesh.n_vertices} nodes, final DO pump {series['pump'][-1]:.4f} vs none "
                        f"{series['none'][-1]:.4f}, largest no-pump increase after 10% {steps.max():.1e}")


@pytest.fixture(scope="module")
def lake_optimum():
    sc = lake_scenario(nx=20, ny=16, dt=3600.0)
    g, rep = optimize(sc.reference, sc.reference, sc, OptimizerConfig())
    return sc, g, rep


def test_criterion_07_optimization_outcome(lake_optimum):
    sc, g, rep = lake_optimum
    ratio = rep.J / rep.J_reference
    shortfall = float(np.max(rep.G_reference - rep.G))
    limit = 1e-3 * float(np.mean(rep.G_reference))
    inside = bool(np.all(g >= sc.problem.c1) and np.all(g <= sc.problem.c2))
    ok = ratio <= 0.9 and shortfall <= limit and inside
    record(7, ok, f"J ratio {ratio:.4f}, max shortfall {shortfall:.2e} (limit {limit:.2e}), "
                  f"{rep.n_simulations} simulations, optimizer status '{rep.message}'")


def test_criterion_08_upper_collectors_dominate(lake_optimum):
    _, g, _ = lake_optimum
    means = g.mean(axis=0)
    upper, lower = means[list(UPPER_PUMPS)], means[list(LOWER_PUMPS)]
    record(8, bool(upper.min() > lower.max()),
           "mean rates upper " + ", ".join(f"{v:.2e}" for v in upper) + " lower " +
           ", ".join(f"{v:.2e}" for v in lower))


def test_criterion_09_brute_force(tiny):
    g, rep = optimize(tiny.reference, tiny.reference, tiny)
    c2 = tiny.problem.c2
    grid = np.linspace(tiny.problem.c1, c2, 50)
    cell = grid[1] - grid[0]
    best, arg = np.inf, None
    for a in grid:
        for b in grid:
            gg = np.array([[a], [b]])
            if np.all(constraint_values(gg, tiny) >= rep.G_reference):
                J = cost(gg, tiny.problem)
                if J < best:
                    best, arg = J, gg
    # objective variation across one grid cell around the optimum
    cell_gap = cost(np.abs(g) + cell, tiny.problem) - rep.J
    ok = rep.feasible and rep.J <= best * (1 + 1e-9) and best - rep.J <= cell_gap
    record(9, bool(ok), f"{tiny.mesh.n_vertices} nodes, J* {rep.J:.4e}, grid best {best:.4e}, "
                        f"one-cell tolerance {cell_gap:.2e}, grid argmin {arg.ravel()}")


def test_criterion_10_thread_determinism(coarse_case):
    sc, g, lin = coarse_case
    same = all(np.array_equal(f(g, sc, threads=1, lin=lin), f(g, sc, threads=8, lin=lin))
               for f in (jacobian_adjoint, jacobian_linearized))
    record(10, same, "adjoint and tangent Jacobians bit-identical at 1 and 8 threads")
