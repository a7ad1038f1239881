"""Command-line front end.

    pridda calibrate --epsilon 1 --delta0 0.01 --iota 0.1 --lipschitz 1 --q 100 [--horizon T]
    pridda reference --config exp.toml [--out ref.txt]
    pridda run --config exp.toml [--seeds 0,1,2] [--out DIR] [--trace-stride N]
    pridda sweep --config exp.toml [--axis k_edges]

Exit codes: 0 success, 2 configuration or infeasible input, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import harness
from .config import SWEEP_AXES, load_config
from .errors import HorizonTooShort, InvalidArgument, PriddaError
from .privacy import PrivacyBudget, calibrate, minimum_horizon, replay_calibrate
from .reference import ground_truth

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

log = logging.getLogger("pridda")


def _seed_list(text):
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from None
    if not seeds or min(seeds) < 0:
        raise argparse.ArgumentTypeError("seeds must be nonnegative integers")
    return seeds


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pridda", description="Private distributed dual averaging experiments.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    cal = sub.add_parser("calibrate", help="report the noise level for a privacy budget")
    cal.add_argument("--epsilon", type=float, required=True)
    cal.add_argument("--delta0", type=float, default=0.01)
    cal.add_argument("--iota", type=float, required=True, help="node sampling ratio")
    cal.add_argument("--lipschitz", type=float, default=1.0)
    cal.add_argument("--q", type=int, required=True, help="samples per node")
    cal.add_argument("--horizon", type=int, default=None, help="T; the minimum feasible T when omitted")

    ref = sub.add_parser("reference", help="compute x* and F(x*) for a config")
    ref.add_argument("--config", required=True)
    ref.add_argument("--out", default=None, help="reference file to write")
    ref.add_argument("--iterations", type=_positive_int, default=None)

    for name, text in (("run", "run the configured experiment"), ("sweep", "matched-seed sweep over one axis")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True)
        seeds = p.add_mutually_exclusive_group()
        seeds.add_argument("--seed", type=int, default=None)
        seeds.add_argument("--seeds", type=_seed_list, default=None)
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--trace-stride", type=_positive_int, default=None)
        if name == "sweep":
            p.add_argument("--axis", choices=SWEEP_AXES, default=None)
    return parser


def cmd_calibrate(args) -> int:
    T = args.horizon
    try:
        min_T = minimum_horizon(args.epsilon, args.iota) if 0 < args.iota <= 1 else None
        if T is None:
            if min_T is None:
                raise InvalidArgument(f"iota must lie in (0, 1], got {args.iota}")
            T = min_T
        budget = PrivacyBudget(args.epsilon, args.delta0, args.iota, args.lipschitz, args.q, T)
        cal = calibrate(budget)
        replay = replay_calibrate(budget)
    except HorizonTooShort as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(f"min_horizon={exc.minimum}")
        return EXIT_CONFIG
    except (PriddaError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    report = {
        "epsilon": args.epsilon,
        "delta0": args.delta0,
        "iota": args.iota,
        "lipschitz": args.lipschitz,
        "q": args.q,
        "horizon": T,
        "min_horizon": budget.minimum_horizon,
        "sigma_squared": cal.sigma_squared,
        "sigma": cal.sigma,
        "eps_step": cal.per_step_epsilon,
        "eps_amplified": cal.amplified_epsilon,
        "eps_amplified_exact": cal.exact_amplified_epsilon,
        "eps_total": cal.final_epsilon,
        "delta_total": cal.final_delta,
        "replay_sigma_squared": replay.sigma_squared,
        "replay_eps_total": replay.final_epsilon,
        "replay_delta_total": replay.final_delta,
    }
    for k, v in report.items():
        print(f"{k}={harness.fmt(v)}")
    return EXIT_OK


def _load(args):
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_seeds([args.seed])
    elif getattr(args, "seeds", None) is not None:
        cfg = cfg.with_seeds(args.seeds)
    if getattr(args, "trace_stride", None) is not None:
        cfg = cfg.with_run(trace_stride=args.trace_stride)
    if getattr(args, "out", None) is not None and args.command != "reference":
        cfg = cfg.with_run(out=str(Path(args.out).resolve()))
    if getattr(args, "axis", None) is not None:
        cfg = cfg.with_run(sweep_axis=args.axis)
    return cfg


def cmd_reference(args) -> int:
    cfg = _load(args)
    problem = harness.build_problem(cfg)
    iters = args.iterations or cfg.run.reference_iterations
    if args.out is not None:
        path = Path(args.out)
    elif cfg.run.reference is not None:
        path = cfg.resolve(cfg.run.reference)
    else:
        path = cfg.resolve(cfg.run.out) / "reference.txt"
    sol = ground_truth(problem, iterations=iters, gamma=cfg.run.reference_gamma)
    harness.write_reference(path, sol)
    print(f"f_star={harness.fmt(sol.f_star)}")
    print(f"method={sol.method}")
    print(f"written={path}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _load(args)
    variant = harness.Variant()
    grouped = harness.execute(cfg, [variant])
    out = cfg.resolve(cfg.run.out)
    harness.write_run_outputs(out, cfg, variant, grouped[variant.label])
    print(f"wrote {len(cfg.run.seeds)} trace(s) to {out}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load(args)
    variants = harness.sweep_variants(cfg)
    grouped = harness.execute(cfg, variants)
    out = cfg.resolve(cfg.run.out)
    harness.write_sweep_outputs(out, cfg, variants, grouped)
    print(f"wrote sweep over {cfg.run.sweep_axis} ({len(variants)} values) to {out}")
    return EXIT_OK


COMMANDS = {"calibrate": cmd_calibrate, "reference": cmd_reference, "run": cmd_run, "sweep": cmd_sweep}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except harness.RunFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (InvalidArgument, PriddaError) as exc:
        # Anything raised before the engine starts is a configuration problem.
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
