"""Primal-dual interior-point solver and its application to pump scheduling.

The core solver handles

    min f(x)  subject to  c(x) >= 0,  lb <= x <= ub

with slacks ``c(x) - s = 0``, logarithmic barriers on ``s`` and on the box,
a reduced Newton system, fraction-to-the-boundary step rule and a backtracking
line search on an l1 merit function.  The Hessian is the exact Hessian of
``f`` plus a damped BFGS model of the constraint curvature.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .control import Scenario, constraints, cost, cost_gradient, cost_hessian, simulate
from .sensitivity import jacobian_adjoint, linearize

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class OptimizerConfig:
    mu_init: float = 0.1  # initial barrier parameter (scaled units)
    mu_factor: float = 0.2  # barrier reduction factor
    inner_tol: float = 10.0  # barrier subproblem solved when its error <= inner_tol * mu
    tol: float = 1e-6  # final scaled KKT tolerance
    max_iter: int = 60
    backtrack: float = 0.5
    armijo: float = 1e-4
    feasibility_tol: float = 1e-6  # constraint units of the problem (raw units in optimize)
    min_step: float = 1e-8
    slack_init: float = 1e-2
    acceptable_tol: float = 1e-3  # scaled KKT level accepted after acceptable_iter consecutive hits
    acceptable_iter: int = 5
    threads: int = 1

    def __post_init__(self):
        for name in ("mu_init", "inner_tol", "tol", "feasibility_tol", "min_step", "slack_init", "acceptable_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.mu_factor < 1:
            raise ValueError("mu_factor must lie in (0, 1)")
        if not 0 < self.backtrack < 1:
            raise ValueError("backtrack must lie in (0, 1)")
        if self.max_iter < 1 or self.acceptable_iter < 1:
            raise ValueError("max_iter and acceptable_iter must be at least 1")


@dataclass
class IterationRecord:
    iteration: int
    objective: float
    violation: float
    kkt: float
    step: float
    mu: float
    merit: float
    stationarity: float = np.nan
    primal: float = np.nan
    complementarity: float = np.nan
    merit_start: float = np.nan  # merit at the start of the iteration, same barrier and penalty weights
    dual_step: float = np.nan


@dataclass
class IPResult:
    x: np.ndarray
    y: np.ndarray  # constraint multipliers
    z_lower: np.ndarray
    z_upper: np.ndarray
    objective: float
    constraints: np.ndarray
    converged: bool
    message: str
    history: list = field(default_factory=list)
    n_evaluations: int = 0
    best_feasible: bool = False  # True when x is the best feasible iterate rather than the last one


class Problem:
    """Callables of a smooth inequality-constrained problem, with value caching."""

    def __init__(self, fun, grad, hess, cons, jac, lb, ub):
        self.fun, self.grad, self.hess = fun, grad, hess
        self._cons, self._jac = cons, jac
        self.lb = np.asarray(lb, dtype=float)
        self.ub = np.asarray(ub, dtype=float)
        self.n_evaluations = 0
        self._cache = {}

    def cons(self, x):
        key = np.asarray(x, dtype=float).tobytes()
        if key not in self._cache:
            self.n_evaluations += 1
            self._cache = {key: np.asarray(self._cons(x), dtype=float)}
        return self._cache[key]

    def jac(self, x):
        return np.asarray(self._jac(x), dtype=float)


def _fraction_to_boundary(v, dv, tau):
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min(-tau * v[neg] / dv[neg])))


def interior_point(problem: Problem, x0, config: OptimizerConfig = OptimizerConfig(), callback=None) -> IPResult:
    """Solve ``min f s.t. c >= 0, lb <= x <= ub`` from a point strictly inside the box."""
    lb, ub = problem.lb, problem.ub
    x = np.asarray(x0, dtype=float).copy()
    has_l, has_u = np.isfinite(lb), np.isfinite(ub)
    if np.any(x[has_l] <= lb[has_l]) or np.any(x[has_u] >= ub[has_u]):
        # push strictly inside the box
        width = np.where(has_l & has_u, ub - lb, 1.0)
        x = np.where(has_l, np.maximum(x, lb + 1e-2 * width), x)
        x = np.where(has_u, np.minimum(x, ub - 1e-2 * width), x)
    mu = config.mu_init
    c = problem.cons(x)
    m = len(c)
    s = np.maximum(c, config.slack_init)
    y = mu / s
    dl = np.where(has_l, x - lb, 1.0)
    du = np.where(has_u, ub - x, 1.0)
    zl = np.where(has_l, mu / dl, 0.0)
    zu = np.where(has_u, mu / du, 0.0)
    H_f = problem.hess(x)
    B = np.zeros_like(H_f)  # constraint-curvature model
    A = problem.jac(x)
    gf = problem.grad(x)
    history = []
    converged = False
    message = "iteration limit reached"

    def barrier_terms(xv, sv, muv):
        bl = np.where(has_l, xv - lb, 1.0)
        bu = np.where(has_u, ub - xv, 1.0)
        return -muv * (np.sum(np.log(sv)) + np.sum(np.log(bl[has_l])) + np.sum(np.log(bu[has_u])))

    def errors(xv, sv, yv, zlv, zuv, cv, Av, gv, muv):
        """Scaled (stationarity, primal, complementarity) residuals."""
        dl_ = np.where(has_l, xv - lb, 0.0)
        du_ = np.where(has_u, ub - xv, 0.0)
        stat = gv - Av.T @ yv - zlv + zuv
        comp = np.concatenate([sv * yv - muv, (dl_ * zlv - muv)[has_l], (du_ * zuv - muv)[has_u]])
        prim = cv - sv
        sd = max(1.0, (np.abs(yv).sum() + np.abs(zlv).sum() + np.abs(zuv).sum()) / max(1, m + 2 * len(xv)) / 100.0)
        return (float(np.abs(stat).max()) / sd, float(np.abs(prim).max()) if m else 0.0,
                float(np.abs(comp).max()) / sd if len(comp) else 0.0)

    nu = 1.0
    n_acceptable = 0
    best = None  # (f, x, y, zl, zu, c) of the best feasible iterate

    def feasible(cv):
        return m == 0 or cv.min() >= -config.feasibility_tol

    if feasible(c):
        best = (problem.fun(x), x, y, zl, zu, c)
    for it in range(config.max_iter):
        parts = errors(x, s, y, zl, zu, c, A, gf, 0.0)
        err0 = max(parts)
        f = problem.fun(x)
        viol = float(np.maximum(-c, 0).max()) if m else 0.0
        if err0 <= config.tol:
            converged = True
            message = "converged"
            if not history:
                history.append(IterationRecord(it, f, viol, err0, 0.0, mu, np.nan, *parts))
            break
        n_acceptable = n_acceptable + 1 if err0 <= config.acceptable_tol and feasible(c) else 0
        if n_acceptable >= config.acceptable_iter:
            converged = True
            message = "converged to acceptable level"
            break
        while max(errors(x, s, y, zl, zu, c, A, gf, mu)) <= config.inner_tol * mu and mu > config.tol / 10:
            mu = max(config.tol / 10, min(config.mu_factor * mu, mu ** 1.5))
        dl = np.where(has_l, x - lb, 1.0)
        du = np.where(has_u, ub - x, 1.0)
        Sig_x = np.where(has_l, zl / dl, 0.0) + np.where(has_u, zu / du, 0.0)
        Sig_s = y / s
        W = H_f + B
        K = W + np.diag(Sig_x) + A.T @ (Sig_s[:, None] * A)
        rhs0 = -gf + np.where(has_l, mu / dl, 0.0) - np.where(has_u, mu / du, 0.0) + A.T @ (mu / s)
        # inertia safeguard: K must be positive definite
        shift = 0.0
        while True:
            try:
                Lc = np.linalg.cholesky(K + shift * np.eye(len(x)))
                break
            except np.linalg.LinAlgError:
                shift = max(1e-8, 10 * shift)

        def direction(r):
            """Primal step for the linearised residual ``c - s = r``."""
            d = np.linalg.solve(Lc.T, np.linalg.solve(Lc, rhs0 - A.T @ (Sig_s * r)))
            return d, A @ d + r

        def primal_step(dxv, dsv):
            return min(_fraction_to_boundary(s, dsv, tau) if m else 1.0,
                       _fraction_to_boundary(dl[has_l], dxv[has_l], tau),
                       _fraction_to_boundary(du[has_u], -dxv[has_u], tau))

        tau = max(0.99, 1.0 - mu)
        dx, ds = direction(c - s)
        dy = mu / s - y - Sig_s * ds
        dzl = np.where(has_l, mu / dl - zl - zl / dl * dx, 0.0)
        dzu = np.where(has_u, mu / du - zu + zu / du * dx, 0.0)
        a_p = primal_step(dx, ds)
        a_d = min(_fraction_to_boundary(y, dy, tau) if m else 1.0,
                  _fraction_to_boundary(zl[has_l], dzl[has_l], tau),
                  _fraction_to_boundary(zu[has_u], dzu[has_u], tau))
        # merit: f + barrier + nu |c - s|_1
        nu = max(nu, 1.1 * (np.abs(y + dy).max() if m else 0.0))
        infeas = np.abs(c - s).sum()
        phi0 = f + barrier_terms(x, s, mu) + nu * infeas
        dphi = (gf @ dx - mu * (np.sum(ds / s) + np.sum((dx / dl)[has_l]) - np.sum((dx / du)[has_u]))
                - nu * infeas)

        def trial(xv, sv_lin):
            cv = problem.cons(xv)
            # slack reset: raising s to c lowers both the barrier and the l1 term
            sv = np.maximum(sv_lin, cv)
            return cv, sv, problem.fun(xv) + barrier_terms(xv, sv, mu) + nu * np.abs(cv - sv).sum()

        def sufficient(phiv, a):
            return phiv <= phi0 + config.armijo * a * min(dphi, 0.0) or (dphi >= 0 and phiv <= phi0)

        alpha = a_p
        accepted = False
        first = True
        while alpha >= config.min_step:
            xt, st_lin = x + alpha * dx, s + alpha * ds
            ct, st, phit = trial(xt, st_lin)
            if sufficient(phit, alpha):
                accepted = True
                break
            if first and m:
                # second-order correction against the curvature of c
                first = False
                dx_c, ds_c = direction(alpha * (c - s) + (ct - st_lin))
                a_c = primal_step(dx_c, ds_c)
                xc, sc_lin = x + a_c * dx_c, s + a_c * ds_c
                cc, sc_, phic = trial(xc, sc_lin)
                if sufficient(phic, alpha):
                    xt, st, ct, phit = xc, sc_, cc, phic
                    accepted = True
                    break
            alpha *= config.backtrack
        if not accepted:
            message = "line search failed"
            history.append(IterationRecord(it, f, viol, err0, 0.0, mu, phi0, *parts))
            break
        x_old, A_old = x, A
        x, s = xt, st
        c = ct
        y = y + a_d * dy
        zl = zl + a_d * dzl
        zu = zu + a_d * dzu
        # keep multipliers within a safeguard band around mu / slack
        y = np.clip(y, mu / (1e10 * s), 1e10 * mu / s)
        dl = np.where(has_l, x - lb, 1.0)
        du = np.where(has_u, ub - x, 1.0)
        zl = np.where(has_l, np.clip(zl, mu / (1e10 * dl), 1e10 * mu / dl), 0.0)
        zu = np.where(has_u, np.clip(zu, mu / (1e10 * du), 1e10 * mu / du), 0.0)
        A = problem.jac(x)
        gf = problem.grad(x)
        H_f = problem.hess(x)
        # damped BFGS on -sum y_i c_i
        sk = x - x_old
        yk = -(A - A_old).T @ y
        if sk @ sk > 0:
            Bs = B @ sk
            sBs = sk @ Bs
            if sBs <= 0:
                B = B + 1e-8 * np.eye(len(x)) * max(1.0, np.abs(H_f).max())
                Bs = B @ sk
                sBs = sk @ Bs
            sy = sk @ yk
            theta = 1.0 if sy >= 0.2 * sBs else 0.8 * sBs / (sBs - sy)
            r = theta * yk + (1 - theta) * Bs
            B = B - np.outer(Bs, Bs) / sBs + np.outer(r, r) / (sk @ r)
        parts = errors(x, s, y, zl, zu, c, A, gf, 0.0)
        rec = IterationRecord(it + 1, problem.fun(x), float(np.maximum(-c, 0).max()) if m else 0.0,
                              max(parts), alpha, mu, phit, *parts, merit_start=phi0,
                              dual_step=a_d)
        history.append(rec)
        if feasible(c) and (best is None or rec.objective <= best[0]):
            best = (rec.objective, x, y, zl, zu, c)
        if callback is not None:
            callback(rec)
    use_best = not converged and best is not None and not (feasible(c) and problem.fun(x) <= best[0])
    if use_best:
        _, x, y, zl, zu, c = best
        message += "; returning best feasible iterate"
    return IPResult(x=x, y=y, z_lower=zl, z_upper=zu, objective=problem.fun(x), constraints=c,
                    converged=converged, message=message, history=history,
                    n_evaluations=problem.n_evaluations, best_feasible=use_best)


# --------------------------------------------------------------------------- pump scheduling


@dataclass
class OptimizationReport:
    g: np.ndarray
    g_reference: np.ndarray
    J: float
    J_reference: float
    G: np.ndarray
    G_reference: np.ndarray
    multipliers: np.ndarray
    z_lower: np.ndarray
    z_upper: np.ndarray
    history: list
    converged: bool
    message: str
    wall_time: float
    n_simulations: int
    kkt: float = np.nan
    feasible: bool = True
    best_feasible: bool = False

    def summary(self) -> str:
        lines = [
            f"status: {self.message} (converged={self.converged}, feasible={self.feasible}, "
            f"best_feasible={self.best_feasible})",
            f"J(g*) = {self.J:.6e}   J(g_ref) = {self.J_reference:.6e}   ratio = {self.J / self.J_reference if self.J_reference else float('nan'):.4f}",
            f"max constraint shortfall = {np.max(self.G_reference - self.G) if len(self.G) else 0.0:.3e}",
            f"KKT residual (raw units) = {self.kkt:.3e}",
            f"simulations = {self.n_simulations}, wall time = {self.wall_time:.1f} s",
            "",
            f"{'iter':>4} {'J':>13} {'violation':>11} {'kkt':>10} {'step':>9} {'mu':>9}",
        ]
        for r in self.history:
            lines.append(f"{r.iteration:>4} {r.objective:13.6e} {r.violation:11.3e} {r.kkt:10.3e} {r.step:9.2e} {r.mu:9.2e}")
        return "\n".join(lines)


class ScheduleProblem:
    """Scaled scheduling problem on the flattened schedule ``x = g.ravel() / x_scale``."""

    def __init__(self, scenario: Scenario, g_reference, threads: int = 1):
        self.scenario = scenario
        self.threads = threads
        spec = scenario.problem
        self.shape = (scenario.N, scenario.n_pumps)
        g_ref = scenario.check_schedule(g_reference)
        self.g_reference = g_ref
        self.x_scale = float(max(np.abs(g_ref).max(), 1e-3 * spec.c2, 1e-12))
        self.n_simulations = 0
        self._lin_key = None
        self._lin = None
        self._traj_key = None  # last simulated schedule, reused by the next linearization
        self._traj = None
        self.G_reference = self.G(g_ref)
        self.J_scale = max(cost(g_ref, spec), 0.5 * max(spec.sigma1, spec.sigma2) * self.x_scale ** 2)
        A0 = self.raw_jacobian(g_ref)
        self.c_scale = np.maximum(np.abs(A0).max(axis=1) * self.x_scale, 1e-12)

    def to_g(self, x):
        return np.asarray(x, dtype=float).reshape(self.shape) * self.x_scale

    def G(self, g):
        g = np.asarray(g, dtype=float)
        self.n_simulations += 1
        self._traj = simulate(g, self.scenario, keep_steps=True)
        self._traj_key = g.tobytes()
        return constraints(self._traj, self.scenario.disc)

    def raw_constraints(self, g):
        G = self.G(g)
        spec = self.scenario.problem
        if spec.mode == "reference":
            return G - self.G_reference
        return np.concatenate([G - spec.lambda_m, spec.lambda_M - G])

    def raw_jacobian(self, g):
        g = np.asarray(g, dtype=float)
        key = g.tobytes()
        if key != self._lin_key:
            traj = self._traj if key == self._traj_key else None
            if traj is None:
                self.n_simulations += 1
            self._lin = jacobian_adjoint(g, self.scenario, self.threads, linearize(g, self.scenario, traj))
            self._lin_key = key
            self._traj = self._traj_key = None
        J = self._lin
        if self.scenario.problem.mode == "reference":
            return J
        return np.vstack([J, -J])

    def problem(self) -> Problem:
        spec = self.scenario.problem
        xs = self.x_scale
        n = self.shape[0] * self.shape[1]
        H = cost_hessian(self.shape, spec) * xs**2 / self.J_scale
        return Problem(
            fun=lambda x: cost(self.to_g(x), spec) / self.J_scale,
            grad=lambda x: cost_gradient(self.to_g(x), spec).ravel() * xs / self.J_scale,
            hess=lambda x: H,
            cons=lambda x: self.raw_constraints(self.to_g(x)) / self.c_scale,
            jac=lambda x: self.raw_jacobian(self.to_g(x)) * xs / self.c_scale[:, None],
            lb=np.full(n, spec.c1 / xs),
            ub=np.full(n, spec.c2 / xs),
        )


def kkt_residual_parts(g, grad_J, jac, c, multipliers, z_lower, z_upper, c1, c2) -> dict:
    """Stationarity, complementarity and feasibility blocks (max-norms, raw units)."""
    g = np.ravel(g)
    stat = np.ravel(grad_J) - jac.T @ multipliers - z_lower + z_upper
    comp = np.concatenate([multipliers * c, z_lower * (g - c1), z_upper * (c2 - g)])
    feas = np.concatenate([np.maximum(-c, 0.0), np.maximum(c1 - g, 0.0), np.maximum(g - c2, 0.0)])
    return {
        "stationarity": float(np.abs(stat).max()),
        "complementarity": float(np.abs(comp).max()) if len(comp) else 0.0,
        "feasibility": float(feas.max()) if len(feas) else 0.0,
    }


def kkt_residual(g, multipliers, scenario: Scenario, z_lower=None, z_upper=None, g_reference=None,
                 threads: int = 1) -> float:
    """Max-norm KKT residual of the scheduling problem at ``g`` (raw units)."""
    multipliers = np.asarray(multipliers, dtype=float)
    if np.any(multipliers < 0):
        raise ValueError("multipliers must be non-negative")
    sp_ = ScheduleProblem(scenario, scenario.reference if g_reference is None else g_reference, threads)
    g = scenario.check_schedule(g)
    n = g.size
    zl = np.zeros(n) if z_lower is None else np.asarray(z_lower, dtype=float)
    zu = np.zeros(n) if z_upper is None else np.asarray(z_upper, dtype=float)
    parts = kkt_residual_parts(g, cost_gradient(g, scenario.problem), sp_.raw_jacobian(g),
                               sp_.raw_constraints(g), multipliers, zl, zu, scenario.problem.c1, scenario.problem.c2)
    return max(parts.values())


def optimize(g_initial, g_reference, scenario: Scenario, config: OptimizerConfig = OptimizerConfig(),
             callback=None):
    """Minimise pumping cost subject to the oxygen constraints; returns ``(g*, report)``."""
    t0 = time.perf_counter()
    sched = ScheduleProblem(scenario, g_reference, config.threads)
    g0 = scenario.check_schedule(g_initial)
    prob = sched.problem()

    def log_line(rec: IterationRecord):
        log.info("iter %3d  J %.6e  viol %.3e  kkt %.3e  step %.2e", rec.iteration,
                 rec.objective * sched.J_scale, rec.violation, rec.kkt, rec.step)
        if callback is not None:
            callback(rec)

    # the solver sees scaled constraints; a raw tolerance maps to the tightest scaled one
    ip_config = replace(config, feasibility_tol=config.feasibility_tol / float(sched.c_scale.max()))
    res = interior_point(prob, g0.ravel() / sched.x_scale, ip_config, log_line)
    g_star = np.clip(sched.to_g(res.x), scenario.problem.c1, scenario.problem.c2)
    G_star = sched.G(g_star)
    spec = scenario.problem
    # multipliers back in raw units
    y_raw = res.y / sched.c_scale * sched.J_scale
    zl_raw = res.z_lower * sched.J_scale / sched.x_scale
    zu_raw = res.z_upper * sched.J_scale / sched.x_scale
    c_raw = sched.raw_constraints(g_star)
    parts = kkt_residual_parts(g_star, cost_gradient(g_star, spec), sched.raw_jacobian(g_star), c_raw,
                               y_raw, zl_raw, zu_raw, spec.c1, spec.c2)
    history = [replace(r, objective=r.objective * sched.J_scale) for r in res.history]
    feasible = bool(np.all(c_raw >= -config.feasibility_tol))
    report = OptimizationReport(
        g=g_star, g_reference=sched.g_reference, J=cost(g_star, spec), J_reference=cost(sched.g_reference, spec),
        G=G_star, G_reference=sched.G_reference, multipliers=y_raw, z_lower=zl_raw, z_upper=zu_raw,
        history=history, converged=res.converged, message=res.message, wall_time=time.perf_counter() - t0,
        n_simulations=sched.n_simulations, kkt=max(parts.values()), feasible=feasible,
        best_feasible=res.best_feasible,
    )
    return g_star, report
