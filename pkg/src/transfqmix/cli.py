"""Command-line entry point: ``transfqmix <command> [flags]``."""

from __future__ import annotations

import argparse
import logging
import sys

from .models import FAMILIES
from .numeric_core import ConfigurationError
from .runtime.config import load_config, parse_scenario
from .runtime.experiment import COMMANDS, run_experiment


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="transfqmix", description="Transformer value factorisation on Spread.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="INI config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory (default: $TRANSFQMIX_OUT/<run name>)")
    p.add_argument("--deterministic", action="store_true", default=None, help="single-threaded, bit-reproducible run")
    p.add_argument(
        "--scenario", action="append", default=[], metavar="spread:N",
        help="team size; repeat for zero-shot grids",
    )
    p.add_argument("--model", choices=sorted(FAMILIES), help="model family")
    p.add_argument("--steps", type=int, help="environment steps to train")
    p.add_argument("--load", action="append", default=[], metavar="CKPT", help="checkpoint; repeat for zero-shot")
    p.add_argument("--episodes", type=int, help="evaluation episodes (eval / zero-shot)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        sizes = [parse_scenario(s) for s in args.scenario]
        overrides = {
            "seed": args.seed,
            "out_dir": args.out,
            "deterministic": args.deterministic,
            "family": args.model,
            "train.total_env_steps": args.steps,
        }
        # for zero-shot the scenarios are evaluation targets, not the training size
        if sizes and args.command != "zero-shot":
            overrides["n_agents"] = sizes[0]
        cfg = load_config(args.config, overrides)
    except ConfigurationError as exc:
        logging.getLogger("transfqmix").error("invalid configuration: %s", exc)
        return 2
    return run_experiment(args.command, cfg, load=args.load, scenarios=sizes, episodes=args.episodes)


if __name__ == "__main__":
    sys.exit(main())
