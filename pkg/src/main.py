import os
import sys
from typing import List, Dict, Optional, Any, Union, Tuple

# Ensure the project root is in PYTHONPATH
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import argparse
import numpy as np

from src.core.config import AppConfig
from src.core.experiment import ExperimentConfig
from src.core.errors import ConfigError, SweepError, ShapeError
from src.core.models import LayerPlan

EXIT_OK, EXIT_USAGE, EXIT_FAILURES = 0, 1, 2

PLANS: Dict[str, LayerPlan] = {
    "ucf11": LayerPlan("ucf11", (4, 2, 5, 8, 6, 5, 3, 2), (4, 4, 2, 4, 2), (10,) + (5,) * 12,
                       "reported figure for this plan is 1725 parameters; the stated shapes and ranks give the count above"),
    "synthetic": LayerPlan("synthetic", (3, 3, 3, 3), (3, 3, 3, 3), (3,) * 8),
    "cnn": LayerPlan("cnn", (32, 64), (32, 64), (40, 60, 48, 48),
                     "core factorization of 2048 x 2048 is a free choice; override with --in-dims/--out-dims"),
}


class CliParser(argparse.ArgumentParser):
    """Usage errors exit with 1."""

    def error(self, message: str) -> None:
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = CliParser(
        prog="ringlayer",
        description="Tensor ring layers: compression, gradient checks and benchmarks",
        epilog="Config file schema (JSON sections, defaults):\n" + ExperimentConfig.describe(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {AppConfig.VERSION}")
    sub = parser.add_subparsers(dest="command", parser_class=CliParser)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", type=str, help="JSON experiment config")
        p.add_argument("--seed", type=int, help="Base seed (default: TRNN_SEED or 0)")

    p = sub.add_parser("synth", help="Synthetic low-rank weight recovery (linear / TT / TR)")
    common(p)
    p.add_argument("--out", type=str, help=f"Output directory (default: {AppConfig.OUTPUT_DIR})")
    p.add_argument("--seeds", type=int, help="Number of seeds (default: 10)")
    p.add_argument("--sigma", type=float, nargs="+", help="Noise levels (default: 0.01 0.05 0.1 0.2 0.3)")
    p.add_argument("--ranks", type=int, nargs="+", help="Fit rank for tr and tt: one value, or tr then tt (default: 3)")
    p.add_argument("--optimizer", choices=["adam", "sgd", "als"], help="Fit optimizer (default: adam)")
    p.add_argument("--epochs", type=int, help="Fit epochs (default: 2000)")
    p.add_argument("--samples", type=int, help="Samples per dataset (default: 3200)")
    p.add_argument("--jobs", type=int, help="Worker processes (default: logical cores)")
    p.add_argument("--no-timing", action="store_true", help="Write wall_ms as 0 for bit-exact reports")

    p = sub.add_parser("gradcheck", help="Finite-difference check of layer and cell gradients")
    common(p)
    p.add_argument("--eps", type=float, help=f"Central-difference step (default: {AppConfig.GRAD_EPS:g})")
    p.add_argument("--tol", type=float, help=f"Max relative error (default: {AppConfig.GRAD_TOL:g})")
    p.add_argument("--instances", type=int, help="Random layers to check (default: 20)")
    p.add_argument("--corrupt", action="store_true", help="Inject a wrong gradient scalar (must fail)")

    p = sub.add_parser("complexity", help="Exact operation counts and log-log slopes")
    common(p)
    p.add_argument("--out", type=str, help=f"Output directory (default: {AppConfig.OUTPUT_DIR})")
    p.add_argument("--var", choices=["R", "I", "O", "d"], default="R", help="Swept variable (default: R)")
    p.add_argument("--layer", choices=["tr", "tt", "dense"], help="Layer kind (default: tr)")
    p.add_argument("--values", type=int, nargs="+", help="Sweep values (>= 4, increasing)")
    p.add_argument("--ranks", type=int, nargs=1, help="Fixed rank when R is not swept")
    p.add_argument("--jobs", type=int, help="Worker processes (default: logical cores)")

    p = sub.add_parser("compress", help="Parameter count and compression ratio of a layer plan")
    common(p)
    p.add_argument("--plan", choices=sorted(PLANS), default="ucf11", help="Layer plan (default: ucf11)")
    p.add_argument("--in-dims", type=int, nargs="+", help="Override input factorization")
    p.add_argument("--out-dims", type=int, nargs="+", help="Override output factorization")
    p.add_argument("--ranks", type=int, nargs="+", help="Override ring ranks (one value = uniform)")

    p = sub.add_parser("toytrain", help="Ring-layer LSTM vs dense LSTM on a synthetic sequence task")
    common(p)
    p.add_argument("--epochs", type=int, help="Training epochs (default: 30)")
    p.add_argument("--ranks", type=int, nargs=1, help="Ring rank (default: 3)")
    return parser


def cmd_synth(args: argparse.Namespace, exp: ExperimentConfig) -> int:
    from src.synthetic import run_recovery
    cfg, fit = exp.synthetic, exp.fit
    base = AppConfig.resolve_seed(args.seed)
    if args.seeds is not None:
        cfg.seeds = [base + i for i in range(args.seeds)]
    elif args.seed is not None or os.getenv("TRNN_SEED"):
        cfg.seeds = [base + i for i in range(len(cfg.seeds))]
    if args.sigma: cfg.noise_sigmas = list(args.sigma)
    if args.ranks:
        cfg.fit_ranks = {"tr": args.ranks[0], "tt": args.ranks[-1]}
    if args.samples: cfg.n_samples = args.samples
    if args.optimizer: fit.optimizer = args.optimizer
    if args.epochs: fit.epochs = args.epochs
    if args.no_timing: cfg.record_timing = False
    out = AppConfig.ensure_dirs(args.out)
    jobs = AppConfig.resolve_jobs(args.jobs)

    print(f"[SYNTH] {len(cfg.models)} models x {len(cfg.noise_sigmas)} sigmas x {len(cfg.seeds)} seeds, optimizer={fit.optimizer}, jobs={jobs}")
    report = run_recovery(cfg, fit, jobs=jobs, verbose=True)
    for path in report.write(out):
        print(f"[SYNTH] wrote {path}")
    print(report.summary_text(), end="")
    return EXIT_FAILURES if report.failures else EXIT_OK


def cmd_gradcheck(args: argparse.Namespace, exp: ExperimentConfig) -> int:
    from src.gradcheck import run_gradchecks
    cfg = exp.gradcheck
    if args.eps is not None: cfg.eps = args.eps
    if args.tol is not None: cfg.tol = args.tol
    if args.instances is not None: cfg.instances = args.instances
    cfg.seed = AppConfig.resolve_seed(args.seed) if args.seed is not None or os.getenv("TRNN_SEED") else cfg.seed

    print(f"[GRAD] eps={cfg.eps:g} tol={cfg.tol:g} lstm_tol={cfg.lstm_tol:g} seed={cfg.seed}{' (corrupted)' if args.corrupt else ''}")
    results = run_gradchecks(cfg, corrupt=args.corrupt)
    failed = 0
    for name, rep in results:
        print(f"[GRAD] {name}: {rep.summary()}")
        failed += 0 if rep.passed else 1
    worst = max(rep.max_error for _, rep in results)
    print(f"[GRAD] {len(results) - failed}/{len(results)} passed, max relative error {worst:.3e}")
    return EXIT_OK if failed == 0 else EXIT_FAILURES


def cmd_complexity(args: argparse.Namespace, exp: ExperimentConfig) -> int:
    from src.complexity import default_sweep, run_sweep
    if args.config and exp.sweep.variable == args.var:
        spec = exp.sweep
    else:
        spec = default_sweep(args.var)
    if args.layer: spec.layer = args.layer
    if args.values: spec.values = list(args.values)
    if args.ranks: spec.rank = args.ranks[0]
    spec.validate()
    out = AppConfig.ensure_dirs(args.out)

    report = run_sweep(spec, jobs=AppConfig.resolve_jobs(args.jobs), verbose=True)
    for path in report.write(out):
        print(f"[SWEEP] wrote {path}")
    for pass_name in spec.passes:
        print(f"[SWEEP] {spec.layer} {pass_name} vs {spec.variable}: multiply-add slope {report.slope(pass_name):.3f}, "
              f"peak slope {report.slope(pass_name, 'peak'):.3f}")
    return EXIT_OK


def resolve_plan(args: argparse.Namespace, exp: ExperimentConfig) -> LayerPlan:
    plan = PLANS[args.plan]
    input_dims = tuple(args.in_dims or exp.layer.get("input_dims") or plan.input_dims)
    output_dims = tuple(args.out_dims or exp.layer.get("output_dims") or plan.output_dims)
    ranks = tuple(args.ranks or exp.layer.get("ranks") or plan.ranks)
    d = len(input_dims) + len(output_dims)
    if len(ranks) == 1:
        ranks = ranks * d
    if len(ranks) != d:
        raise ConfigError(f"--ranks needs 1 or {d} values for {d} cores, got {len(ranks)}", "layer.ranks")
    changed = (input_dims, output_dims, ranks) != (plan.input_dims, plan.output_dims, plan.ranks)
    return LayerPlan(plan.name, input_dims, output_dims, ranks, "" if changed else plan.note)


def cmd_compress(args: argparse.Namespace, exp: ExperimentConfig) -> int:
    from src.formats import TRFormat, param_count, compression_ratio
    plan = resolve_plan(args, exp)
    dims = list(plan.input_dims) + list(plan.output_dims)
    d = len(dims)
    # Shapes only: zero cores give the exact stored-scalar count.
    cores = TRFormat([np.zeros((plan.ranks[k], dims[k], plan.ranks[(k + 1) % d])) for k in range(d)])
    I, O = int(np.prod(plan.input_dims)), int(np.prod(plan.output_dims))
    count = param_count(cores)
    print(f"[COMPRESS] plan {plan.name}: input {list(plan.input_dims)} -> output {list(plan.output_dims)}, ranks {list(plan.ranks)}")
    print(f"[COMPRESS] dense parameters {I} x {O} = {I * O}")
    print(f"[COMPRESS] ring parameters {count}")
    print(f"[COMPRESS] compression ratio {compression_ratio(I, O, cores):.2f}")
    if plan.note:
        print(f"[COMPRESS] note: {plan.note}")
    return EXIT_OK


def cmd_toytrain(args: argparse.Namespace, exp: ExperimentConfig) -> int:
    from src.sequence_task import run_toytrain
    cfg = exp.toytrain
    if args.epochs: cfg.epochs = args.epochs
    if args.ranks: cfg.rank = args.ranks[0]
    if args.seed is not None or os.getenv("TRNN_SEED"):
        cfg.seed = AppConfig.resolve_seed(args.seed)

    print(f"[TOY] {cfg.n_classes}-class task, T={cfg.steps}, input {list(cfg.input_dims)}, hidden {list(cfg.hidden_dims)}, rank {cfg.rank}")
    results = run_toytrain(cfg, verbose=True)
    for name, res in results.items():
        print(f"[TOY] {name:>5}: test accuracy {res.test_accuracy:.3f} (train {res.train_accuracy:.3f}), "
              f"input-to-hidden params {res.input_params}, total {res.total_params}")
    share = results["tr"].input_params / results["dense"].input_params
    print(f"[TOY] ring input maps use {100.0 * share:.2f}% of the dense input parameters")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "gradcheck": cmd_gradcheck,
    "complexity": cmd_complexity,
    "compress": cmd_compress,
    "toytrain": cmd_toytrain,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.command:
        parser.print_help()
        return EXIT_USAGE
    try:
        exp = ExperimentConfig.load(args.config)
        print(f"[BOOT] ringlayer {AppConfig.VERSION}: {args.command}" + (f" (config {args.config})" if args.config else ""))
        return COMMANDS[args.command](args, exp)
    except (ConfigError, SweepError, ShapeError) as e:
        print(f"[ERROR] {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
