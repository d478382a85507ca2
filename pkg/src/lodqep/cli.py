"""Command line entry point ``lodqep``.

Exit codes: 0 success, 2 solver failure, 3 configuration error.
"""
import argparse
import json
import logging
import sys

from .errors import ConfigError, SolverFailure
from .experiment import (PRESETS, ExperimentConfig, emit, ell_from_rule, preset,
                         run_experiment, write_grid_csv)

EXIT_OK, EXIT_SOLVER, EXIT_CONFIG = 0, 2, 3

log = logging.getLogger("lodqep")


def _config_from_args(args):
    if args.config:
        with open(args.config) as f:
            cfg = ExperimentConfig.from_dict(json.load(f))
        if args.fine_level is not None:
            cfg.fine_level = args.fine_level
        if args.seed is not None:
            cfg.seed = args.seed
    else:
        kwargs = {"swap_regions": args.swap_regions}
        if args.fine_level is not None:
            kwargs["fine_level"] = args.fine_level
        if args.seed is not None:
            kwargs["seed"] = args.seed
        cfg = preset(args.preset, **kwargs)
    if args.coarse_levels:
        cfg.coarse_levels = [int(c) for c in args.coarse_levels.split(",")]
    if args.nev is not None:
        cfg.nev = args.nev
    if args.threads is not None:
        cfg.threads = args.threads
    return cfg.validate()


def cmd_run(args):
    cfg = _config_from_args(args)
    report = run_experiment(cfg)
    files = emit(report, args.out)
    for lv in report.levels:
        worst = max(m.rel_error for m in lv.matches)
        print(f"H={lv.H_diam:.4g} (level {lv.coarse_level}, ell={lv.ell}): "
              f"max relative error {worst:.3e}")
    slope = report.envelope_slope
    print("envelope slope: " + ("n/a" if slope is None else f"{slope:.2f}"))
    print("wrote " + ", ".join(str(f) for f in files))


def cmd_dump_basis(args):
    from .field import eval_per_element, field_from_dict
    from .lod import LodContext, basis_function_grid, build_basis
    from .mesh import build_uniform

    cfg = _config_from_args(args)
    fine = build_uniform(cfg.fine_level)
    coarse = build_uniform(args.coarse_level)
    kappa = eval_per_element(field_from_dict(cfg.diffusion), fine)
    ell = args.ell if args.ell is not None else ell_from_rule(cfg.ell_rule, coarse.diameter)
    ctx = LodContext(coarse, fine, kappa)
    basis = build_basis(coarse, fine, kappa, ell, threads=cfg.threads, ctx=ctx)
    node = args.node
    if node is None:
        node = coarse.n_vertices // 2
    write_grid_csv(args.out, basis_function_grid(ctx, basis, node))
    print(f"wrote corrected basis function of coarse vertex {node} (ell={ell}) to {args.out}")


def build_parser():
    p = argparse.ArgumentParser(
        prog="lodqep", description="LOD convergence studies for damped quadratic eigenproblems.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        src = sp.add_mutually_exclusive_group()
        src.add_argument("--preset", choices=PRESETS, default="exp1")
        src.add_argument("--config", help="JSON file mirroring ExperimentConfig")
        sp.add_argument("--fine-level", type=int)
        sp.add_argument("--coarse-levels", help="comma separated, e.g. 2,3,4")
        sp.add_argument("--nev", type=int)
        sp.add_argument("--threads", type=int)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--swap-regions", action="store_true",
                        help="composite presets: put the second value in the matrix material")

    run = sub.add_parser("run", help="run a convergence study")
    common(run)
    run.add_argument("--out", default="lodqep-out")
    run.set_defaults(func=cmd_run)

    dump = sub.add_parser("dump-basis", help="write one corrected basis function as CSV")
    common(dump)
    dump.add_argument("--coarse-level", type=int, default=3)
    dump.add_argument("--node", type=int, help="coarse vertex id (default: centre)")
    dump.add_argument("--ell", type=int)
    dump.add_argument("--out", default="corrector_dump.csv")
    dump.set_defaults(func=cmd_dump_basis)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (ConfigError, json.JSONDecodeError, KeyError, OSError) as exc:
        print(f"lodqep: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverFailure as exc:
        print(f"lodqep: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
