"""Optimize the four-pump schedule against constant pumping at one or more time steps.

For each step size writes ``schedule_dt<dt>.csv``, ``report_dt<dt>.txt`` and
``constraints_dt<dt>.csv`` (t, G_optimal, G_reference).
"""
import argparse
from pathlib import Path

import numpy as np

from recirc import OptimizerConfig, lake_scenario, optimize
from recirc.scenarios import LOWER_PUMPS, UPPER_PUMPS


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--nx", type=int, default=20)
    ap.add_argument("--ny", type=int, default=16)
    ap.add_argument("--dt", type=float, nargs="+", default=[3600.0])
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--max-iter", type=int, default=60)
    ap.add_argument("--out", default="results/optimize_lake")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for dt in args.dt:
        sc = lake_scenario(nx=args.nx, ny=args.ny, dt=dt)
        g, rep = optimize(sc.reference, sc.reference, sc,
                          OptimizerConfig(max_iter=args.max_iter, threads=args.threads))
        tag = f"dt{int(dt)}"
        np.savetxt(out / f"schedule_{tag}.csv", g, delimiter=",", comments="", fmt="%.12g",
                   header=",".join(f"g{k + 1}" for k in range(sc.n_pumps)))
        t = sc.dt * np.arange(2, sc.N + 2)
        np.savetxt(out / f"constraints_{tag}.csv", np.column_stack([t, rep.G, rep.G_reference]), delimiter=",",
                   header="t,G_optimal,G_reference", comments="", fmt="%.12g")
        (out / f"report_{tag}.txt").write_text(rep.summary() + "\n")
        means = g.mean(axis=0)
        print(f"dt = {dt:g} (N = {sc.N}): J ratio {rep.J / rep.J_reference:.4f}, "
              f"shortfall {np.max(rep.G_reference - rep.G):.2e}, "
              f"upper mean {means[list(UPPER_PUMPS)].mean():.3e}, lower mean {means[list(LOWER_PUMPS)].mean():.3e}, "
              f"status '{rep.message}'")


if __name__ == "__main__":
    main()
