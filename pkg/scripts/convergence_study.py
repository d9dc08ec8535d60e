"""Convergence and quasi-optimality study on the manufactured problems.

Per refinement level: solve the saddle system, measure the trial-space error
against a reference two uniform refinements finer, and compare the measured
quasi-optimality ratio against its theory bound.

Usage: python scripts/convergence_study.py [--levels 4] [--out out/convergence]
"""

import argparse
import math
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from psaddle import monotone as mo
from psaddle import quality as ql
from psaddle import system as sy
from psaddle.cli import write_csv
from psaddle.riesz import RieszContext
from psaddle.spaces import default_pair, embed_X_into_Y


def run(problem, levels, n0=4):
    c = mo.constants_from_mu(problem.mu)
    bundle = sy.derive_constants(c.L, c.m)
    rows, errs = [], []
    for level in range(levels):
        n = n0 * 2**level
        pair = default_pair(n, n)
        ctx = RieszContext(pair)
        op_Y = mo.GalerkinOperator(pair, "Y", problem.mu)
        op_X = mo.GalerkinOperator(pair, "X", problem.mu)
        rhs = sy.assemble_rhs(problem.data, pair)
        state = sy.solve_reference(rhs, pair, op_Y, op_X, ctx, tol=1e-11)

        fine = ql._surrogate_pair(pair, 2)
        fctx = RieszContext(fine)
        f_op_Y = mo.GalerkinOperator(fine, "Y", problem.mu)
        f_op_X = mo.GalerkinOperator(fine, "X", problem.mu)
        fstate = sy.solve_reference(
            sy.assemble_rhs(problem.data, fine), fine, f_op_Y, f_op_X, fctx, tol=1e-11
        )
        two = ql.TwoLevel(pair, fine, ctx_coarse=ctx, ctx_fine=fctx)
        report = ql.infsup_report(pair)
        ratio, bound = ql.quasi_opt_ratio(fstate.u, state, two, bundle, report)
        err = fctx.norm_X_delta(fstate.u - two.prolong_X(state.u))
        gap = ctx.norm_Y(state.lam - embed_X_into_Y(pair, state.u))
        errs.append(err)
        rate = math.log2(errs[-2] / errs[-1]) if level else float("nan")
        rows.append((level, n, err, rate, ratio, bound, gap))
        print(
            f"  level {level}: n={n:3d}  err={err:.6e}  rate={rate:5.3f}  "
            f"ratio={ratio:.4f} (bound {bound:.1f})  |lam-u|_Y={gap:.3e}"
        )
    return rows


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--levels", type=int, default=4)
    ap.add_argument("--out", default="out/convergence")
    args = ap.parse_args()

    header = ("level", "n", "err_X", "rate", "quasi_opt_ratio", "bound", "lambda_minus_u_Y")
    for problem in (sy.heat_problem(), sy.quasilinear_problem()):
        print(f"{problem.name}:")
        rows = run(problem, args.levels)
        write_csv(os.path.join(args.out, f"{problem.name}.csv"), header, rows)


if __name__ == "__main__":
    main()
