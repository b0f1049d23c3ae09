"""Adjoint, tangent and finite-difference Jacobians on the coarse verification scenario."""
import argparse
import sys

from recirc import check_gradient, coarse_scenario
from recirc.scenarios import verification_schedule


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--N", type=int, default=6)
    ap.add_argument("--pumps", type=int, default=2, choices=(1, 2, 3, 4))
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--h", type=float, default=None)
    args = ap.parse_args()
    sc = coarse_scenario(N=args.N, n_pumps=args.pumps)
    res = check_gradient(verification_schedule(args.N, args.pumps), sc, h=args.h, threads=args.threads)
    print(f"{sc.mesh.n_vertices} nodes, N = {args.N}, {args.pumps} pumps")
    print(res.table())
    return 0 if res.passed else 3


if __name__ == "__main__":
    sys.exit(main())
