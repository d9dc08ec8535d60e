"""Run the inexact Uzawa iteration and print the monitored error estimate
next to the true errors and the a priori envelope.

Usage: python scripts/uzawa_trace.py [--n 8] [--outer 15] [--mu one-plus-inv]
"""

import argparse
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from psaddle import monotone as mo
from psaddle import system as sy
from psaddle import uzawa as uz
from psaddle.riesz import RieszContext
from psaddle.spaces import default_pair


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=8)
    ap.add_argument("--outer", type=int, default=15)
    ap.add_argument("--mu", default="constant", choices=["constant", "one-plus-inv"])
    args = ap.parse_args()

    problem = sy.heat_problem() if args.mu == "constant" else sy.quasilinear_problem()
    pair = default_pair(args.n, args.n)
    ctx = RieszContext(pair)
    op_Y = mo.GalerkinOperator(pair, "Y", problem.mu)
    op_X = mo.GalerkinOperator(pair, "X", problem.mu)
    rhs = sy.assemble_rhs(problem.data, pair)
    reference = sy.solve_reference(rhs, pair, op_Y, op_X, ctx, tol=1e-12)

    c = mo.constants_from_mu(problem.mu)
    bundle = sy.derive_constants(c.L, c.m)
    cfg = uz.make_config(bundle, tol=0.0, max_outer=args.outer)
    print(f"{problem.name}: inner count L={cfg.L}, sigma_hat={cfg.sigma_hat_S:.8f}")

    _, trace = uz.run_inexact_uzawa(
        rhs, pair, op_Y, op_X, ctx, cfg, reference=reference
    )
    C4 = max(ctx.norm_Y(reference.lam) / cfg.C_3, ctx.norm_X_delta(reference.u))
    print(f"{'k':>3} {'eta':>12} {'err_u':>12} {'err_lam':>12} {'envelope':>12}")
    for i, k in enumerate(trace.k):
        env = cfg.sigma_hat_S**k * C4
        print(
            f"{k:3d} {trace.eta[i]:12.5e} {trace.err_u[i]:12.5e} "
            f"{trace.err_lambda[i]:12.5e} {env:12.5e}"
        )


if __name__ == "__main__":
    main()
