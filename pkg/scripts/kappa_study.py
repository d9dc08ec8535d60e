"""Conditioning of the wavelet-in-time preconditioner across dyadic levels.

Usage: python scripts/kappa_study.py [--levels 6] [--nx 8] [--variant vanishing-moment]
"""

import argparse
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from psaddle import precond as pc


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--levels", type=int, default=6)
    ap.add_argument("--nx", type=int, default=8)
    ap.add_argument(
        "--variant", default="vanishing-moment",
        choices=["vanishing-moment", "hierarchical"],
    )
    args = ap.parse_args()

    results = pc.kappa_study(args.levels, n_x=args.nx, variant=args.variant)
    print(f"variant: {args.variant}")
    print(f"{'level':>5} {'dim':>6} {'kappa':>10}")
    for level, dim, kappa in results:
        print(f"{level:5d} {dim:6d} {kappa:10.4f}")
    kappas = [k for (_, _, k) in results]
    print(f"max/min over levels: {max(kappas) / min(kappas):.3f}")


if __name__ == "__main__":
    main()
