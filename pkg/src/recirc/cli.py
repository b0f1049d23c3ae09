"""Command-line entry point.

Exit codes: 0 success, 1 configuration or validation error, 2 solver failure,
3 tolerance failure (gradient check or optimizer did not meet its tolerances).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import (ConfigError, build_mesh, build_optimizer, build_scenario, default_config, defaults_text,
                     initial_schedule, load_config)
from .control import Scenario, StateTrajectory, constraints, simulate
from .eutro import N_SPECIES, SPECIES
from .fem import SolverError
from .mesh import MeshError, load_mesh, subdomain_measure
from .optimizer import optimize
from .sensitivity import check_gradient

EXIT_OK, EXIT_VALIDATION, EXIT_SOLVER, EXIT_TOLERANCE = 0, 1, 2, 3

log = logging.getLogger("recirc")


def _fmt(x: float) -> str:
    return f"{x:.12g}"


def _write_csv(path: Path, header, rows) -> None:
    lines = [",".join(header)]
    lines += [",".join(r if isinstance(r, str) else _fmt(r) for r in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")


def timeseries_rows(traj: StateTrajectory, scenario: Scenario):
    """Header and rows of ``timeseries.csv``: one row per time level n = 0..N+1."""
    disc = scenario.disc
    K = scenario.n_pumps
    w = np.asarray(disc.lumped_mass)
    w = w / w.sum()
    header = ["t"] + [f"g{k + 1}" for k in range(K)] + ["do_control_mean"]
    for name in SPECIES:
        header += [f"{name}_min", f"{name}_mean", f"{name}_max"]
    header.append("theta_mean")
    rows = []
    for n, t in enumerate(traj.times):
        # g^n drives the step arriving at level n; no control at n = 0 or N + 1
        g = traj.g[n - 1] if 1 <= n <= traj.N else np.zeros(K)
        u = traj.species[n]
        row = [t, *g, float(u[4] @ disc.control_weights)]
        for s in range(N_SPECIES):
            row += [float(u[s].min()), float(u[s] @ w), float(u[s].max())]
        row.append(float(traj.theta[n] @ w))
        rows.append(row)
    return header, rows


def write_snapshot(path: Path, traj: StateTrajectory, scenario: Scenario, n: int) -> None:
    """Per-node fields at level ``n``; velocity and pressure are held at level N beyond it."""
    space = scenario.disc.velocity
    m = min(n, traj.N)
    vx, vy = space.nodal(traj.velocity[m]).T
    xy = scenario.mesh.vertices
    cols = [xy[:, 0], xy[:, 1], vx, vy, traj.pressure[m], traj.theta[n], *traj.species[n]]
    header = ["x", "y", "vx", "vy", "p", "theta"] + [f"u{i + 1}" for i in range(N_SPECIES)]
    _write_csv(path, header, np.column_stack(cols))


def _schedule_from(arg: str, cfg: dict, scenario: Scenario) -> np.ndarray:
    if arg == "reference":
        return initial_schedule(cfg, scenario) if cfg["problem"]["initial_schedule"] else scenario.reference
    if arg == "zero":
        return np.zeros((scenario.N, scenario.n_pumps))
    try:
        g = np.loadtxt(arg, delimiter=",", skiprows=1, ndmin=2)
    except (OSError, ValueError) as exc:
        raise ConfigError("--schedule", str(exc)) from None
    try:
        return scenario.check_schedule(g)
    except ValueError as exc:
        raise ConfigError("--schedule", str(exc)) from None


def _scenario(args):
    cfg = load_config(args.config) if args.config else default_config()
    return cfg, build_scenario(cfg)


def cmd_simulate(args) -> int:
    cfg, scenario = _scenario(args)
    if scenario.n_pumps == 0:
        g = np.zeros((scenario.N, 0))
    else:
        g = _schedule_from(args.schedule, cfg, scenario)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    traj = simulate(g, scenario, progress=lambda n: log.debug("step %d", n))
    header, rows = timeseries_rows(traj, scenario)
    _write_csv(out / "timeseries.csv", header, rows)
    if args.snapshot_every:
        snap = out / "snapshots"
        snap.mkdir(exist_ok=True)
        levels = sorted(set(range(0, traj.N + 2, args.snapshot_every)) | {traj.N + 1})
        for n in levels:
            write_snapshot(snap / f"step_{n:05d}.csv", traj, scenario, n)
    print(f"wrote {out / 'timeseries.csv'} ({len(rows)} rows)")
    return EXIT_OK


def cmd_optimize(args) -> int:
    cfg, scenario = _scenario(args)
    if scenario.n_pumps == 0:
        raise ConfigError("mesh.pumps", "optimization needs at least one pump")
    opt = build_optimizer(cfg, args.threads)
    g0 = initial_schedule(cfg, scenario)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    g_star, report = optimize(g0, scenario.reference, scenario, opt)
    K = scenario.n_pumps
    _write_csv(out / "optimal_schedule.csv", [f"g{k + 1}" for k in range(K)], g_star)
    t = scenario.dt * np.arange(2, scenario.N + 2)
    _write_csv(out / "constraint_comparison.csv", ["t", "G_optimal", "G_reference"],
               np.column_stack([t, report.G, report.G_reference]))
    (out / "report.txt").write_text(report.summary() + "\n")
    print(report.summary())
    if not (report.converged and report.feasible):
        return EXIT_TOLERANCE
    return EXIT_OK


def cmd_check_gradient(args) -> int:
    cfg, scenario = _scenario(args)
    if scenario.n_pumps == 0:
        raise ConfigError("mesh.pumps", "gradient check needs at least one pump")
    g = initial_schedule(cfg, scenario)
    res = check_gradient(g, scenario, h=args.h, threads=args.threads, tol_adj=args.tol_adjoint,
                         tol_fd=args.tol_fd, corrupt_adjoint=args.corrupt_adjoint)
    print(res.table())
    return EXIT_OK if res.passed else EXIT_TOLERANCE


def cmd_mesh_info(args) -> int:
    if args.mesh:
        try:
            mesh = load_mesh(args.mesh)
        except OSError as exc:
            raise ConfigError("--mesh", str(exc)) from None
    else:
        cfg = load_config(args.config) if args.config else default_config()
        mesh = build_mesh(cfg)
    print(f"vertices  {mesh.n_vertices}")
    print(f"triangles {mesh.n_triangles}")
    print(f"edges     {mesh.n_edges}")
    for tag in mesh.tags:
        print(f"length[{tag}] = {mesh.tag_length(tag):.6g}")
    print(f"control area = {subdomain_measure(mesh):.6g}")
    return EXIT_OK


def cmd_print_defaults(args) -> int:
    if args.json:
        print(json.dumps(default_config(), indent=2))
    else:
        print(defaults_text())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="recirc", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=False):
        sp.add_argument("--config", help="JSON scenario file (defaults when omitted)")
        sp.add_argument("--threads", type=int, default=1, help="worker threads for Jacobian rows and columns")
        if out:
            sp.add_argument("--out", required=True, help="output directory")

    s = sub.add_parser("simulate", help="run the coupled model and write timeseries.csv")
    common(s, out=True)
    s.add_argument("--schedule", default="reference", help="'reference', 'zero' or a CSV of N rows x N_CT columns")
    s.add_argument("--snapshot-every", type=int, default=0, help="write per-node snapshots every k levels")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("optimize", help="optimize the pump schedule against the reference")
    common(s, out=True)
    s.set_defaults(func=cmd_optimize)

    s = sub.add_parser("check-gradient", help="compare adjoint, tangent and finite-difference Jacobians")
    common(s)
    s.add_argument("--h", type=float, default=None, help="finite-difference step (default 1e-3 max|g|)")
    s.add_argument("--tol-adjoint", type=float, default=1e-8)
    s.add_argument("--tol-fd", type=float, default=1e-4)
    s.add_argument("--corrupt-adjoint", type=float, default=0.0, help=argparse.SUPPRESS)
    s.set_defaults(func=cmd_check_gradient)

    s = sub.add_parser("mesh-info", help="print mesh counts, boundary lengths and control area")
    s.add_argument("--config")
    s.add_argument("--mesh", help="mesh file (overrides --config)")
    s.set_defaults(func=cmd_mesh_info)

    s = sub.add_parser("print-defaults", help="print all defaults with provenance")
    s.add_argument("--json", action="store_true", help="print a complete config file instead")
    s.set_defaults(func=cmd_print_defaults)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    if getattr(args, "threads", 1) < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_VALIDATION
    if getattr(args, "snapshot_every", 0) < 0:
        print("error: --snapshot-every must be non-negative", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        return args.func(args)
    except (ConfigError, MeshError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except SolverError as exc:
        print(f"solver failure at step {exc.step}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ValueError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
