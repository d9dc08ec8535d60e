"""Experiment CLI: config parsing, study orchestration, CSV emission.

Config files are flat ``dotted.key = value`` text; ``#`` starts a comment.
Unknown keys, bad types, and inconsistent values are all reported together.
Every study writes CSV with a header row and 17-significant-digit floats,
atomically (temp file + rename), so identical configs reproduce identical
bytes.

Exit codes: 0 success, 2 config error, 3 solver non-convergence, 4 internal
numeric failure.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
import tempfile
from dataclasses import dataclass, field

import numpy as np

from psaddle import monotone as mo
from psaddle import precond as pc
from psaddle import quality as ql
from psaddle import system as sy
from psaddle import uzawa as uz
from psaddle.errors import ConfigError, NotConvergedError, PsaddleError
from psaddle.riesz import RieszContext
from psaddle.rng import SplitMix64

SUBCOMMANDS = ("solve", "convergence", "uzawa-trace", "infsup", "pjotr", "precond", "constants")

_SCHEMA = {
    "problem.mu": (str, "constant", ("constant", "one-plus-inv", "bounded-ramp")),
    "problem.mu_c": (float, 1.0, None),
    "problem.mu_a": (float, 1.0, None),
    "problem.mu_b": (float, 1.0, None),
    "problem.forcing": (str, "manufactured", ("manufactured", "zero")),
    "problem.u0": (str, "sine", ("sine", "zero")),
    "problem.T": (float, 1.0, None),
    "disc.nt": (int, 8, None),
    "disc.nx": (int, 8, None),
    "disc.t_breakpoints": (str, "", None),  # comma-separated, overrides disc.nt
    "disc.x_breakpoints": (str, "", None),  # comma-separated, overrides disc.nx
    "disc.levels": (int, 4, None),
    "solver.sigma_hat": (float, float("nan"), None),  # nan: use the midpoint default
    "solver.tol": (float, 1e-8, None),
    "solver.max_outer": (int, 100, None),
    "solver.L_practical": (int, 0, None),             # 0: theoretical L
    "solver.use_precond": (int, 0, (0, 1)),           # wavelet-in-time trial Riesz replacement
    "quality.rho": (float, 1.0, None),
    "quality.max_enrich": (int, 4, None),
    "output.dir": (str, "out", None),
    "output.precision": (int, 17, None),
    "seed": (int, 20260808, None),
}


@dataclass
class ExperimentConfig:
    values: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    @property
    def out_dir(self) -> str:
        return self.values["output.dir"]


def parse_config(path: str) -> ExperimentConfig:
    """Parse and fully validate a config file; report every violation."""
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    values = {k: v[1] for k, v in _SCHEMA.items()}
    problems = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                problems.append(f"line {lineno}: expected 'key = value', got {line!r}")
                continue
            key, _, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if key not in _SCHEMA:
                problems.append(f"line {lineno}: unknown key {key!r}")
                continue
            typ, _, allowed = _SCHEMA[key]
            try:
                parsed = typ(val)
            except ValueError:
                problems.append(f"line {lineno}: key {key!r} expects {typ.__name__}, got {val!r}")
                continue
            if allowed is not None and parsed not in allowed:
                problems.append(f"line {lineno}: key {key!r} must be one of {allowed}, got {parsed!r}")
                continue
            values[key] = parsed

    if values["disc.nt"] < 1 or values["disc.nx"] < 1:
        problems.append("disc.nt and disc.nx must be >= 1")
    if values["disc.levels"] < 1:
        problems.append("disc.levels must be >= 1")
    for key, lo, hi in (
        ("disc.t_breakpoints", 0.0, values["problem.T"]),
        ("disc.x_breakpoints", 0.0, 1.0),
    ):
        if values[key]:
            try:
                pts = [float(v) for v in values[key].split(",")]
            except ValueError:
                problems.append(f"key {key!r} expects comma-separated floats")
                continue
            if len(pts) < 2 or any(b <= a for a, b in zip(pts, pts[1:])):
                problems.append(f"key {key!r} must be strictly increasing with >= 2 entries")
            elif abs(pts[0] - lo) > 1e-12 or abs(pts[-1] - hi) > 1e-12:
                problems.append(f"key {key!r} must span [{lo}, {hi}]")
    if values["solver.tol"] < 0:
        problems.append("solver.tol must be >= 0")
    if values["problem.T"] <= 0:
        problems.append("problem.T must be > 0")
    if values["quality.rho"] < 0:
        problems.append("quality.rho must be >= 0")
    if values["problem.mu"] == "constant" and values["problem.mu_c"] <= 0:
        problems.append("problem.mu_c must be > 0")
    if problems:
        raise ConfigError("invalid config:\n  " + "\n  ".join(problems))
    return ExperimentConfig(values=values)


def _mu_from_config(cfg: ExperimentConfig) -> mo.MuCoefficient:
    name = cfg["problem.mu"]
    if name == "constant":
        return mo.make_mu("constant", c=cfg["problem.mu_c"])
    if name == "bounded-ramp":
        return mo.make_mu("bounded-ramp", a=cfg["problem.mu_a"], b=cfg["problem.mu_b"])
    return mo.make_mu(name)


def _problem_from_config(cfg: ExperimentConfig):
    """(mu, data) for the configured problem.

    Startup validation: the registry bounds are checked against the sampled
    extremal slopes before anything downstream uses them.
    """
    mu = _mu_from_config(cfg)
    m_hat, M_hat = mo.empirical_mu_bounds(lambda s: mu.fn(0.0, 0.0, s), r_max=50.0, n=20_000)
    if m_hat < mu.m_mu - 1e-6 or M_hat > mu.M_mu + 1e-6:
        raise ConfigError(
            f"declared mu bounds ({mu.m_mu}, {mu.M_mu}) are violated by sampled "
            f"slopes ({m_hat:.6g}, {M_hat:.6g})"
        )
    if cfg["problem.forcing"] == "zero":
        u0 = (lambda x: np.sin(np.pi * x)) if cfg["problem.u0"] == "sine" else None
        return mu, sy.ProblemData(u0=u0)
    if cfg["problem.mu"] == "constant" and cfg["problem.mu_c"] == 1.0:
        return mu, sy.heat_problem().data  # exact zero forcing for the heat case
    prob = sy.quasilinear_problem(cfg["problem.mu"], **(
        {"c": cfg["problem.mu_c"]} if cfg["problem.mu"] == "constant"
        else {"a": cfg["problem.mu_a"], "b": cfg["problem.mu_b"]}
        if cfg["problem.mu"] == "bounded-ramp" else {}
    ))
    return mu, prob.data


def _fmt(value, precision: int = 17) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"%.{precision}g" % float(value)


def write_csv(path: str, header: tuple, rows, precision: int = 17) -> None:
    """Atomic CSV write: header row, 17-significant-digit floats."""
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(",".join(header) + "\n")
            for row in rows:
                fh.write(",".join(_fmt(v, precision) for v in row) + "\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _pair_from_config(cfg: ExperimentConfig, level: int = 0):
    """Tensor pair from either explicit breakpoints or uniform element counts,
    uniformly refined `level` times."""
    from psaddle.spaces import (
        CONT_P1, CONT_P1_DIRICHLET, DISC_P1, Mesh1D, assemble_matrices, refine_times,
    )

    if cfg["disc.t_breakpoints"]:
        mesh_t = Mesh1D(tuple(float(v) for v in cfg["disc.t_breakpoints"].split(",")))
    else:
        mesh_t = Mesh1D.uniform(cfg["disc.nt"], length=cfg["problem.T"])
    if cfg["disc.x_breakpoints"]:
        mesh_x = Mesh1D(tuple(float(v) for v in cfg["disc.x_breakpoints"].split(",")))
    else:
        mesh_x = Mesh1D.uniform(cfg["disc.nx"])
    mesh_t = refine_times(mesh_t, level)
    mesh_x = refine_times(mesh_x, level)
    return assemble_matrices(
        (mesh_t, CONT_P1), (mesh_t, DISC_P1), (mesh_x, CONT_P1_DIRICHLET)
    )


def _setup(cfg: ExperimentConfig):
    mu, data = _problem_from_config(cfg)
    pair = _pair_from_config(cfg)
    ctx = RieszContext(pair)
    op_Y = mo.GalerkinOperator(pair, "Y", mu)
    op_X = mo.GalerkinOperator(pair, "X", mu)
    rhs = sy.assemble_rhs(data, pair)
    bundle = sy.derive_constants(3.0 * mu.M_mu, mu.m_mu)
    return mu, data, pair, ctx, op_Y, op_X, rhs, bundle


def _uzawa_config(cfg: ExperimentConfig, bundle, S_constants=None) -> uz.UzawaConfig:
    sig = cfg["solver.sigma_hat"]
    L_prac = cfg["solver.L_practical"] or None
    return uz.make_config(
        bundle,
        sigma_hat_S=None if math.isnan(sig) else sig,
        tol=cfg["solver.tol"],
        max_outer=cfg["solver.max_outer"],
        L_practical=L_prac,
        S_constants=S_constants,
    )


def cmd_constants(cfg: ExperimentConfig, out: str) -> int:
    mu = _mu_from_config(cfg)
    bundle = sy.derive_constants(3.0 * mu.M_mu, mu.m_mu)
    ucfg = _uzawa_config(cfg, bundle)
    cA, cS = bundle.A_constants, bundle.S_constants
    fields = [
        ("L_A", bundle.L_A), ("m_A", bundle.m_A),
        ("L_N", bundle.L_N), ("L_S", bundle.L_S), ("m_S", bundle.m_S),
        ("L_Ninv", bundle.L_Ninv), ("L_Beinv", bundle.L_Beinv),
        ("C_1", bundle.C_1), ("C_PF", bundle.C_PF),
        ("theta_star_A", cA.theta_star), ("sigma_A", cA.sigma),
        ("theta_star_S", cS.theta_star), ("sigma_S", cS.sigma),
        ("sigma_hat_S", ucfg.sigma_hat_S), ("C_3", ucfg.C_3), ("L", ucfg.L),
    ]
    for name, value in fields:
        print(f"{name} = {_fmt(value)}")
    write_csv(os.path.join(out, "constants.csv"),
              tuple(n for n, _ in fields), [tuple(v for _, v in fields)])
    return 0


def _run_uzawa(cfg: ExperimentConfig, out: str, with_reference: bool) -> int:
    mu, data, pair, ctx, op_Y, op_X, rhs, bundle = _setup(cfg)
    apply_Rinv_X = None
    S_constants = None
    if cfg["solver.use_precond"]:
        # replace the exact trial Riesz solve by the wavelet-in-time
        # preconditioner; the iteration constants adapt to the measured
        # spectral bounds of the preconditioned Gram operator
        from psaddle.core_linalg import spectral_bounds

        basis = pc.build_time_wavelets(pair.mesh_t_X)
        prec = pc.make_precond(basis, pair)
        lo, hi = spectral_bounds(ctx.apply_R_X, prec.apply, pair.dim_X)
        S_constants = uz.adapted_schur_constants(bundle, lo, hi)
        apply_Rinv_X = prec.apply
    ucfg = _uzawa_config(cfg, bundle, S_constants=S_constants)
    reference = None
    if with_reference:
        reference = sy.solve_reference(rhs, pair, op_Y, op_X, ctx, tol=1e-12)
    state, trace = uz.run_inexact_uzawa(
        rhs, pair, op_Y, op_X, ctx, ucfg, reference=reference,
        apply_Rinv_X=apply_Rinv_X,
    )
    write_csv(
        os.path.join(out, "uzawa_trace.csv"), uz.UzawaTrace.COLUMNS, trace.rows(),
        cfg["output.precision"],
    )
    write_csv(
        os.path.join(out, "solve_summary.csv"),
        ("dim_Y", "dim_X", "outer_iterations", "inner_count", "eta_final", "converged"),
        [(pair.dim_Y, pair.dim_X, len(trace.k), ucfg.L, trace.eta[-1], trace.converged)],
        cfg["output.precision"],
    )
    if not trace.converged:
        raise NotConvergedError(
            f"uzawa stopped at eta={trace.eta[-1]:.3e} > tol={ucfg.tol} "
            f"after {ucfg.max_outer} outer iterations"
        )
    return 0


def cmd_solve(cfg: ExperimentConfig, out: str) -> int:
    return _run_uzawa(cfg, out, with_reference=False)


def cmd_uzawa_trace(cfg: ExperimentConfig, out: str) -> int:
    status = _run_uzawa(cfg, out, with_reference=True)
    _aposteriori_band(cfg, out)
    return status


def _aposteriori_band(cfg: ExperimentConfig, out: str, n_perturb: int = 20) -> None:
    """Seeded perturbations of the reference: true error over eta per sample."""
    mu, data, pair, ctx, op_Y, op_X, rhs, bundle = _setup(cfg)
    reference = sy.solve_reference(rhs, pair, op_Y, op_X, ctx, tol=1e-12)
    gen = SplitMix64(cfg["seed"])
    rows = []
    for i in range(n_perturb):
        scale = 10.0 ** gen.uniform(-3.0, 0.0)
        dlam = scale * gen.normal_vector(pair.dim_Y)
        du = scale * gen.normal_vector(pair.dim_X)
        state = sy.SaddleState(reference.lam + dlam, reference.u + du)
        eta, _, _ = uz.aposteriori_estimate(state, rhs, pair, op_Y, op_X, ctx)
        true = ctx.norm_Y(dlam) + ctx.norm_X_delta(du)
        rows.append((i, eta, true, true / eta))
    write_csv(
        os.path.join(out, "aposteriori_band.csv"),
        ("sample", "eta", "true_error", "ratio"), rows, cfg["output.precision"],
    )


def cmd_convergence(cfg: ExperimentConfig, out: str) -> int:
    mu, data, *_ = _setup(cfg)
    bundle = sy.derive_constants(3.0 * mu.M_mu, mu.m_mu)
    rows = []
    errs = []
    for level in range(cfg["disc.levels"]):
        pair = _pair_from_config(cfg, level)
        nt, nx = pair.mesh_t_X.n_elements, pair.mesh_x.n_elements
        ctx = RieszContext(pair)
        op_Y = mo.GalerkinOperator(pair, "Y", mu)
        op_X = mo.GalerkinOperator(pair, "X", mu)
        rhs = sy.assemble_rhs(data, pair)
        state = sy.solve_reference(rhs, pair, op_Y, op_X, ctx, tol=1e-11)

        fine = ql._surrogate_pair(pair, 2)
        fctx = RieszContext(fine)
        fop_Y = mo.GalerkinOperator(fine, "Y", mu)
        fop_X = mo.GalerkinOperator(fine, "X", mu)
        frhs = sy.assemble_rhs(data, fine)
        fstate = sy.solve_reference(frhs, fine, fop_Y, fop_X, fctx, tol=1e-11)

        two = ql.TwoLevel(pair, fine, ctx_coarse=ctx, ctx_fine=fctx)
        report = ql.infsup_report(pair)
        ratio, bound = ql.quasi_opt_ratio(fstate.u, state, two, bundle, report)
        err = fctx.norm_X_delta(fstate.u - two.prolong_X(state.u))
        from psaddle.spaces import embed_X_into_Y

        lam_u = ctx.norm_Y(state.lam - embed_X_into_Y(pair, state.u))
        errs.append(err)
        rate = math.log2(errs[-2] / errs[-1]) if level > 0 else float("nan")
        rows.append((level, nt, nx, err, rate, ratio, bound, lam_u))
    write_csv(
        os.path.join(out, "convergence.csv"),
        ("level", "nt", "nx", "err_X", "rate", "quasi_opt_ratio", "quasi_opt_bound", "lambda_minus_u_Y"),
        rows, cfg["output.precision"],
    )
    return 0


def cmd_infsup(cfg: ExperimentConfig, out: str) -> int:
    mu, data, *_ = _setup(cfg)
    rows = []
    for level in range(cfg["disc.levels"]):
        pair = _pair_from_config(cfg, level)
        nt, nx = pair.mesh_t_X.n_elements, pair.mesh_x.n_elements
        # direct measurement only at desk-size levels: the pencil is dense
        two = ql.TwoLevel(pair, ql._surrogate_pair(pair, 2)) if pair.dim_X <= 1500 else None
        report = ql.infsup_report(pair, two)
        rows.append((
            level, nt, nx, report.gamma_t, report.gamma_x, report.gamma_lower,
            report.gamma_direct if report.gamma_direct is not None else float("nan"),
        ))
    write_csv(
        os.path.join(out, "infsup.csv"),
        ("level", "nt", "nx", "gamma_t", "gamma_x", "gamma_lower", "gamma_direct"),
        rows, cfg["output.precision"],
    )
    return 0


def cmd_pjotr(cfg: ExperimentConfig, out: str) -> int:
    mu, data, pair, ctx, op_Y, op_X, rhs, bundle = _setup(cfg)
    rows = []
    final_level, final_report = None, None
    for level in range(cfg["quality.max_enrich"] + 1):
        test_pair = ql._pair_with_enriched_test(pair, level)
        tctx = RieszContext(test_pair)
        t_op_Y = mo.GalerkinOperator(test_pair, "Y", mu)
        t_op_X = mo.GalerkinOperator(test_pair, "X", mu)
        t_rhs = sy.assemble_rhs(data, test_pair)
        state = sy.solve_reference(t_rhs, test_pair, t_op_Y, t_op_X, tctx, tol=1e-12)
        two = ql.TwoLevel(test_pair, ql._surrogate_pair(test_pair, 2), ctx_coarse=tctx)
        report = ql.check_pjotr(state, data, two, mu, bundle, rho=cfg["quality.rho"])
        rows.append((level, report.lhs, report.rhs, report.satisfied))
        final_level, final_report = level, report
        if report.satisfied:
            break
    write_csv(
        os.path.join(out, "pjotr.csv"),
        ("level", "lhs", "rhs", "satisfied"), rows, cfg["output.precision"],
    )
    if final_report is not None and not final_report.satisfied:
        raise NotConvergedError(
            f"a posteriori condition unsatisfied up to enrichment level {final_level}"
        )
    return 0


def cmd_precond(cfg: ExperimentConfig, out: str) -> int:
    results = pc.kappa_study(cfg["disc.levels"], n_x=cfg["disc.nx"], T=cfg["problem.T"])
    write_csv(
        os.path.join(out, "precond.csv"), ("level", "dim", "kappa"),
        results, cfg["output.precision"],
    )
    return 0


_DISPATCH = {
    "constants": cmd_constants,
    "solve": cmd_solve,
    "uzawa-trace": cmd_uzawa_trace,
    "convergence": cmd_convergence,
    "infsup": cmd_infsup,
    "pjotr": cmd_pjotr,
    "precond": cmd_precond,
}


def run_subcommand(name: str, cfg: ExperimentConfig, out_dir: str | None = None) -> int:
    if name not in _DISPATCH:
        raise ConfigError(f"unknown subcommand {name!r}; choose from {SUBCOMMANDS}")
    out = out_dir or cfg.out_dir
    os.makedirs(out, exist_ok=True)
    return _DISPATCH[name](cfg, out)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="psaddle",
        description="Space-time saddle-point parabolic solver experiments",
    )
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", required=True, help="path to the experiment config")
    parser.add_argument("--out", default=None, help="output directory (overrides config)")
    args = parser.parse_args(argv)

    try:
        cfg = parse_config(args.config)
        return run_subcommand(args.subcommand, cfg, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NotConvergedError as exc:
        print(f"solver did not converge: {exc}", file=sys.stderr)
        return 3
    except (PsaddleError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
