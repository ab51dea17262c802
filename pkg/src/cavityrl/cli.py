"""Command-line front end: train, eval, baseline, histories, list.

Exit codes: 0 on success, 2 on configuration errors (unknown experiment,
malformed keys or values, bad usage), 3 on numerical aborts (non-finite
training state or truncation overflow).  Configuration precedence, lowest
to highest: registry defaults or --config file, QRL_<KEY> environment
variables, --scale, then --set key=value pairs.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import experiments, harness
from .experiments import ConfigError
from .fock import TruncationLeakError
from .neural import NumericalAbort


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cavityrl",
        description="Reinforcement-learned quantum control of an oscillator "
                    "with an ancilla qubit.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_args(p, with_experiment=True):
        if with_experiment:
            p.add_argument("experiment", nargs="?", default=None,
                           help="registry name (see `cavityrl list`)")
        p.add_argument("--config", default=None, metavar="FILE",
                       help="load a full config file instead of the registry")
        p.add_argument("--scale", type=float, default=1.0,
                       help="desk-scale multiplier for N, batch, and epochs")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="override one config key")
        p.add_argument("--out", default=None, metavar="DIR",
                       help="output root (default: config out_dir)")

    p_train = sub.add_parser("train", help="train one seed of an experiment")
    add_config_args(p_train)
    p_train.add_argument("--resume", action="store_true",
                         help="continue from the run's checkpoint")
    p_train.add_argument("--stop", type=float, default=None, metavar="METRIC",
                         help="stop early once the eval metric reaches this")

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint's policy")
    p_eval.add_argument("checkpoint")

    p_base = sub.add_parser("baseline", help="run a derivative-free baseline")
    p_base.add_argument("method", choices=("nm", "sa"))
    add_config_args(p_base)

    p_hist = sub.add_parser("histories",
                            help="measurement-history report for a feedback policy")
    p_hist.add_argument("checkpoint")
    p_hist.add_argument("--out", default=None, metavar="CSV")

    sub.add_parser("list", help="list registered experiments")
    return parser


def _resolve_config(args) -> experiments.ExperimentConfig:
    if args.config is not None:
        cfg = experiments.load_config(args.config)
    elif args.experiment is not None:
        cfg = experiments.registry_lookup(args.experiment)
    else:
        raise ConfigError("provide an experiment name or --config FILE")
    cfg = experiments.apply_env_overrides(cfg)
    cfg = experiments.scaled(cfg, args.scale)
    return experiments.apply_overrides(cfg, args.overrides)


def _cmd_train(args) -> int:
    cfg = _resolve_config(args)
    artifacts = harness.run_training(cfg, seed=args.seed, out_root=args.out,
                                     resume=args.resume,
                                     stop_threshold=args.stop, log=print)
    print(json.dumps(artifacts.report, indent=2, sort_keys=True))
    return 0


def _cmd_eval(args) -> int:
    print(json.dumps(harness.evaluate_checkpoint(args.checkpoint),
                     indent=2, sort_keys=True))
    return 0


def _cmd_baseline(args) -> int:
    cfg = _resolve_config(args)
    artifacts = harness.run_baseline(cfg, args.method, seed=args.seed,
                                     out_root=args.out)
    print(json.dumps(artifacts.report, indent=2, sort_keys=True))
    return 0


def _cmd_histories(args) -> int:
    result = harness.report_histories(args.checkpoint, out_path=args.out)
    print(json.dumps(result["summary"], indent=2, sort_keys=True))
    return 0


def _cmd_list(args) -> int:
    for name in experiments.experiment_names():
        cfg = experiments.registry_lookup(name)
        print(f"{name:16s} kind={cfg.kind:5s} circuit={cfg.circuit:16s} "
              f"reward={cfg.reward_kind:10s} T={cfg.T} B={cfg.batch_episodes} "
              f"epochs={cfg.epochs}")
    return 0


_COMMANDS = {"train": _cmd_train, "eval": _cmd_eval, "baseline": _cmd_baseline,
             "histories": _cmd_histories, "list": _cmd_list}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (NumericalAbort, TruncationLeakError) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
