import numpy as np
import pytest
from dataclasses import replace
from hypothesis import given, settings
from hypothesis import strategies as st

from recirc.control import (ControlSchedule, InitialState, ProblemSpec, Scenario, constraint_values, constraints,
                            cost, cost_gradient, cost_hessian, simulate)
from recirc.fem import Discretization
from recirc.mesh import generate_rect_mesh
from recirc.scenarios import tiny_scenario

SPEC = ProblemSpec(T=43200.0, dt=450.0)


@pytest.fixture(scope="module")
def tiny3():
    return tiny_scenario(N=3)


def test_cost_examples():
    assert SPEC.N == 96
    assert cost(np.zeros((96, 4)), SPEC) == 0.0
    assert cost(np.full((96, 4), 1e-4), SPEC) == pytest.approx(9.6e-7, rel=1e-12)
    g = np.zeros((5, 2))
    g[0, 0] = 3.0
    s = replace(SPEC, sigma1=0.3, sigma2=0.7)
    assert cost(g, s) == pytest.approx(0.5 * 0.3 * 9 + 0.5 * 0.7 * 9)


def test_cost_gradient_fd(rng):
    g = rng.uniform(0, 1e-3, (7, 3))
    s = replace(SPEC, sigma1=0.4, sigma2=1.3)
    grad = cost_gradient(g, s)
    h = 1e-7
    fd = np.zeros_like(g)
    for idx in np.ndindex(g.shape):
        e = np.zeros_like(g)
        e[idx] = h
        fd[idx] = (cost(g + e, s) - cost(g - e, s)) / (2 * h)
    np.testing.assert_allclose(grad, fd, rtol=1e-6, atol=1e-12)
    np.testing.assert_array_equal(cost_gradient(np.zeros((4, 2)), s), 0.0)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 1e-3), st.integers(1, 6), st.integers(1, 4))
def test_constant_schedule_gradient(c, N, K):
    np.testing.assert_allclose(cost_gradient(np.full((N, K), c), SPEC), SPEC.sigma1 * c, rtol=1e-12)


def test_cost_hessian_exact(rng):
    s = replace(SPEC, sigma1=0.2, sigma2=0.9)
    shape = (6, 3)
    H = cost_hessian(shape, s)
    g = rng.normal(size=shape)
    np.testing.assert_allclose(H @ g.ravel(), cost_gradient(g, s).ravel(), rtol=1e-12, atol=1e-14)
    assert cost(g, s) == pytest.approx(0.5 * g.ravel() @ H @ g.ravel(), rel=1e-12)


def test_problem_spec_validation():
    bad = [dict(T=0.0, dt=1.0), dict(T=10.0, dt=3.0), dict(T=1.0, dt=2.0),
           dict(T=10.0, dt=1.0, sigma1=0.0, sigma2=0.0), dict(T=10.0, dt=1.0, sigma1=-1.0),
           dict(T=10.0, dt=1.0, c1=2.0, c2=1.0), dict(T=10.0, dt=1.0, mode="other"),
           dict(T=10.0, dt=1.0, mode="bounds", lambda_m=5.0, lambda_M=5.0)]
    for kw in bad:
        with pytest.raises(ValueError):
            ProblemSpec(**kw)


def test_control_schedule_validation():
    ControlSchedule(np.zeros((2, 1)), 0.0, 1.0)
    for g in (np.zeros(3), np.zeros((0, 2)), np.full((2, 2), 2.0), np.full((2, 2), -1.0)):
        with pytest.raises(ValueError):
            ControlSchedule(g, 0.0, 1.0)
    sched = ControlSchedule(np.zeros((2, 1)), 0.0, 1.0)
    with pytest.raises(ValueError):
        sched.g[0, 0] = 1.0


def test_scenario_validation(tiny):
    with pytest.raises(ValueError):
        tiny.check_schedule(np.zeros((3, 1)))
    with pytest.raises(ValueError):
        replace(tiny, reference=np.zeros((2, 2)))
    with pytest.raises(ValueError):
        replace(tiny, initial=InitialState(theta=np.zeros(3), species=tiny.initial.species))


def test_zero_pumping_keeps_fluid_at_rest(tiny3):
    traj = simulate(np.zeros((3, 1)), tiny3)
    # uniform temperature equal to the reference: only roundoff-level buoyancy remains
    assert np.abs(traj.velocity).max() < 1e-10
    assert traj.velocity.shape[0] == 4 and traj.theta.shape[0] == 5 and traj.species.shape[0] == 5
    assert traj.pressure.shape[0] == 4


def test_simulate_is_deterministic(tiny3):
    g = np.array([[1e-4], [3e-4], [2e-4]])
    a, b = simulate(g, tiny3), simulate(g, tiny3)
    for name in ("velocity", "pressure", "theta", "species"):
        assert np.array_equal(getattr(a, name), getattr(b, name))


def test_trajectory_prefix_matches_shorter_run(tiny3):
    """Running N steps and then one more reproduces the shorter run exactly (composition)."""
    g = np.array([[1e-4], [3e-4], [2e-4]])
    long_ = simulate(g, tiny3)
    short_sc = replace(tiny3, problem=replace(tiny3.problem, T=2 * tiny3.dt), reference=None)
    short = simulate(g[:2], short_sc)
    assert np.array_equal(long_.velocity[:3], short.velocity)
    assert np.array_equal(long_.species[:3], short.species[:3])


def test_causality(tiny3):
    g = np.array([[1e-4], [3e-4], [2e-4]])
    base = constraint_values(g, tiny3)
    for n in range(3):
        gp = g.copy()
        gp[n, 0] += 5e-5
        diff = constraint_values(gp, tiny3) - base
        assert np.all(diff[:n] == 0.0)
        assert diff[n] != 0.0


def test_constraints_of_constant_and_linear_fields():
    mesh = generate_rect_mesh(3.0, 2.0, 6, 4, control_strip_height=2.0)  # whole domain marked
    disc = Discretization(mesh)
    y = mesh.vertices[:, 1]

    class Traj:
        species = np.zeros((4, 5, mesh.n_vertices))

    Traj.species[:, 4] = 7.25
    np.testing.assert_allclose(constraints(Traj, disc), 7.25, rtol=1e-14)
    Traj.species[:, 4] = 1.0 + 2.0 * y
    np.testing.assert_allclose(constraints(Traj, disc), 1.0 + 2.0 * 1.0, rtol=1e-14)
    assert len(constraints(Traj, disc)) == 2


def test_pumping_changes_oxygen_in_control_zone(tiny):
    G0 = constraint_values(np.zeros((2, 1)), tiny)
    G1 = constraint_values(np.full((2, 1), 3e-4), tiny)
    assert np.all(np.isfinite(G1)) and not np.array_equal(G0, G1)


def test_scenario_requires_covering_series(tiny):
    from recirc.series import TimeSeries

    short = TimeSeries(np.array([0.0, 10.0]), np.array([290.0, 290.0]))
    with pytest.raises(ValueError):
        Scenario(mesh=tiny.mesh, hydro=tiny.hydro, thermo=replace(tiny.thermo, radiation=short), eutro=tiny.eutro,
                 problem=tiny.problem, initial=tiny.initial)
