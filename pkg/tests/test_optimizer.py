import numpy as np
import pytest
from dataclasses import replace
from scipy.optimize import minimize

from recirc.control import constraint_values, cost, cost_gradient
from recirc.optimizer import (OptimizerConfig, Problem, ScheduleProblem, interior_point, kkt_residual,
                              kkt_residual_parts, optimize)
from recirc.scenarios import tiny_scenario
from recirc.sensitivity import jacobian_adjoint


def quadratic_problem(target, cons, jac, lb, ub):
    target = np.asarray(target, dtype=float)
    n = len(target)
    return Problem(fun=lambda x: 0.5 * np.sum((x - target) ** 2), grad=lambda x: x - target,
                   hess=lambda x: np.eye(n), cons=cons, jac=jac, lb=lb, ub=ub)


def slsqp(target, cons, jac, lb, ub, x0):
    res = minimize(lambda x: 0.5 * np.sum((x - target) ** 2), x0, jac=lambda x: x - target, method="SLSQP",
                   bounds=list(zip(lb, ub)), constraints=[{"type": "ineq", "fun": cons, "jac": jac}],
                   options={"ftol": 1e-14, "maxiter": 200})
    return res.x


def test_config_validation():
    OptimizerConfig()
    for bad in (dict(mu_init=0.0), dict(mu_factor=1.0), dict(backtrack=0.0), dict(max_iter=0),
                dict(tol=-1.0), dict(feasibility_tol=0.0), dict(acceptable_iter=0)):
        with pytest.raises(ValueError):
            OptimizerConfig(**bad)


@pytest.mark.parametrize("case", ["linear", "circle"])
def test_toy_problems_match_slsqp(case):
    target = np.array([2.0, 2.0])
    if case == "linear":
        cons = lambda x: np.array([2.0 - x[0] - x[1], x[0] - 0.1])
        jac = lambda x: np.array([[-1.0, -1.0], [1.0, 0.0]])
    else:
        cons = lambda x: np.array([1.0 - x[0] ** 2 - x[1] ** 2])
        jac = lambda x: np.array([[-2 * x[0], -2 * x[1]]])
    lb, ub = np.array([-5.0, -5.0]), np.array([5.0, 1.5])
    x0 = np.array([0.2, 0.1])
    res = interior_point(quadratic_problem(target, cons, jac, lb, ub), x0, OptimizerConfig(tol=1e-9))
    assert res.converged, res.message
    ref = slsqp(target, cons, jac, lb, ub, x0)
    np.testing.assert_allclose(res.x, ref, atol=1e-6)
    assert np.all(res.y >= 0) and np.all(res.z_lower >= 0) and np.all(res.z_upper >= 0)


def test_active_box_bound_multiplier():
    # min (x + 1)^2 / 2 on [0, 3]: solution at the lower bound with multiplier 1
    prob = Problem(fun=lambda x: 0.5 * (x[0] + 1) ** 2, grad=lambda x: x + 1, hess=lambda x: np.eye(1),
                   cons=lambda x: np.zeros(0), jac=lambda x: np.zeros((0, 1)), lb=[0.0], ub=[3.0])
    res = interior_point(prob, [1.0], OptimizerConfig(tol=1e-9))
    assert res.converged
    assert res.x[0] == pytest.approx(0.0, abs=1e-8)
    assert res.z_lower[0] == pytest.approx(1.0, rel=1e-6)


def test_start_outside_box_is_pushed_inside():
    cons = lambda x: np.array([x[0] + x[1]])
    jac = lambda x: np.array([[1.0, 1.0]])
    res = interior_point(quadratic_problem([0.5, 0.5], cons, jac, [0.0, 0.0], [1.0, 1.0]), [2.0, -1.0])
    assert res.converged
    np.testing.assert_allclose(res.x, 0.5, atol=1e-6)


def test_merit_decreases_in_every_accepted_step():
    cons = lambda x: np.array([1.0 - x[0] ** 2 - x[1] ** 2])
    jac = lambda x: np.array([[-2 * x[0], -2 * x[1]]])
    res = interior_point(quadratic_problem([3.0, 1.0], cons, jac, [-5, -5], [5, 5]), [0.0, 0.0])
    assert res.history
    for rec in res.history:
        assert rec.merit <= rec.merit_start + 1e-12


def test_kkt_parts_constructed_active_bound():
    # 1D: J = (g + 1)^2 / 2 on [0, 1], no oxygen constraints; at g = 0 the lower multiplier is 1
    parts = kkt_residual_parts(np.array([0.0]), np.array([1.0]), np.zeros((0, 1)), np.zeros(0), np.zeros(0),
                               np.array([1.0]), np.array([0.0]), 0.0, 1.0)
    assert parts == {"stationarity": 0.0, "complementarity": 0.0, "feasibility": 0.0}
    off = kkt_residual_parts(np.array([0.0]), np.array([1.0]), np.zeros((0, 1)), np.zeros(0), np.zeros(0),
                             np.array([0.9]), np.array([0.0]), 0.0, 1.0)
    assert off["stationarity"] == pytest.approx(0.1)


@pytest.fixture(scope="module")
def tiny_bounds():
    sc = tiny_scenario()
    spec = replace(sc.problem, mode="bounds", lambda_m=0.0, lambda_M=100.0, sigma2=0.0)
    return replace(sc, problem=spec)


def test_kkt_residual_zero_at_unconstrained_minimum(tiny_bounds):
    m = tiny_bounds.N * 2
    assert kkt_residual(np.zeros((2, 1)), np.zeros(m), tiny_bounds) == 0.0
    with pytest.raises(ValueError):
        kkt_residual(np.zeros((2, 1)), -np.ones(m), tiny_bounds)


def test_kkt_residual_reassembly(tiny, rng):
    g = np.array([[1.3e-4], [2.2e-4]])
    y = rng.uniform(0, 1e-6, 2)
    zl, zu = rng.uniform(0, 1e-9, 2), rng.uniform(0, 1e-9, 2)
    G = constraint_values(g, tiny)
    c = G - constraint_values(tiny.reference, tiny)
    J = jacobian_adjoint(g, tiny)
    spec = tiny.problem
    stat = cost_gradient(g, spec).ravel() - J.T @ y - zl + zu
    comp = np.concatenate([y * c, zl * (g.ravel() - spec.c1), zu * (spec.c2 - g.ravel())])
    feas = np.maximum(-c, 0)
    expected = max(np.abs(stat).max(), np.abs(comp).max(), feas.max())
    assert kkt_residual(g, y, tiny, zl, zu) == pytest.approx(expected, rel=1e-12)


def test_pure_quadratic_goes_to_zero(tiny_bounds):
    g, rep = optimize(tiny_bounds.reference, tiny_bounds.reference, tiny_bounds,
                      OptimizerConfig(tol=1e-9, acceptable_tol=1e-9))
    assert rep.converged and rep.feasible
    assert np.all(g >= 0) and g.max() <= 1e-4 * tiny_bounds.problem.c2


def test_schedule_problem_scaling(tiny):
    sp_ = ScheduleProblem(tiny, tiny.reference)
    prob = sp_.problem()
    x = tiny.reference.ravel() / sp_.x_scale
    np.testing.assert_allclose(prob.cons(x), 0.0, atol=1e-14)
    assert prob.fun(x) == pytest.approx(cost(tiny.reference, tiny.problem) / sp_.J_scale)
    np.testing.assert_allclose(np.abs(prob.jac(x)).max(axis=1), 1.0)


def test_tiny_optimum_against_coarse_grid(tiny):
    g, rep = optimize(tiny.reference, tiny.reference, tiny)
    assert rep.converged and rep.feasible, rep.summary()
    assert rep.J <= rep.J_reference
    assert np.all(rep.G >= rep.G_reference - 1e-6)
    c2 = tiny.problem.c2
    grid = np.linspace(0, c2, 12)
    best = np.inf
    for a in grid:
        for b in grid:
            gg = np.array([[a], [b]])
            if np.all(constraint_values(gg, tiny) >= rep.G_reference):
                best = min(best, cost(gg, tiny.problem))
    cell = c2 / 11
    # J(g*) cannot exceed the best grid value, and the best grid point lies within one cell of g*
    assert rep.J <= best * (1 + 1e-9)
    assert best - rep.J <= 0.5 * tiny.problem.sigma1 * (2 * g.max() * cell + cell ** 2) * 2 + 1e-18


def test_report_summary_lists_iterations(tiny):
    g, rep = optimize(tiny.reference, tiny.reference, tiny)
    text = rep.summary()
    assert "J(g*)" in text and "iter" in text
    assert len(text.splitlines()) == 6 + len(rep.history) + 1
    assert all(r.objective > 0 for r in rep.history)
