"""Command-line entry points: collect, pretrain, train, eval, probe, export.

Flags mirror the experiment configuration; a JSON config file can seed the
values and individual flags override it. The output root defaults to the
SAFEMAZE_OUT environment variable (falling back to ./runs).

Exit codes: 0 on success, 2 for configuration problems, 3 for numerical or
simulation failures.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from concurrent import futures

from .errors import ConfigurationError, NumericalError, SimulationError
from .harness import (
    OUTPUT_ROOT_ENV,
    ExperimentConfig,
    export_metrics,
    load_experiment_config,
    run_collect,
    run_eval,
    run_pretrain,
    run_risk_probe,
    run_train,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

_CONFIG_FLAGS = [
    ("method", str, "method variant: SRL-VIC, Std_RL-VIC, SRL-K300, SRL-K1000"),
    ("episodes", int, "training episodes"),
    ("horizon", int, "max steps per episode"),
    ("updates-per-step", int, "gradient rounds per environment step"),
    ("batch-size", int, "minibatch size"),
    ("pretrain-updates", int, "offline update rounds"),
    ("gamma", float, "task discount"),
    ("gamma-risk", float, "risk discount"),
    ("epsilon-risk", float, "gate threshold on predicted risk"),
    ("force-threshold", float, "constraint threshold in newtons"),
    ("seed", int, "run seed"),
    ("ou-theta", float, "OU noise mean-reversion rate"),
    ("ou-sigma", float, "OU noise scale"),
    ("ou-dt", float, "OU noise time step"),
    ("maze", str, "maze preset name (desk|full) or maze JSON path"),
    ("lr", float, "learning rate for all networks"),
    ("tau", float, "target-network blend factor"),
    ("buffer-capacity", int, "replay capacity"),
    ("start-steps", int, "uniform-proposal warmup steps"),
    ("n-offline", int, "offline transitions to collect"),
    ("probe-noise-std", float, "position noise for scripted probes, meters"),
    ("goal-radius", float, "success tolerance radius, meters"),
    ("eval-episodes", int, "episodes per evaluation"),
    ("eval-start-noise", float, "start jitter used in evaluation, meters"),
]


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file with ExperimentConfig keys")
    parser.add_argument("--preset", choices=["desk", "paper"],
                        help="start from a scale preset before applying flags")
    for flag, typ, help_text in _CONFIG_FLAGS:
        parser.add_argument(f"--{flag}", type=typ, help=help_text)
    parser.add_argument("--hidden", type=str, help="hidden widths, e.g. 48,48")
    parser.add_argument("--ou-noise", action="store_true", default=None,
                        help="perturb observations with OU noise")
    parser.add_argument("--log-trajectories", action="store_true", default=None,
                        help="write per-step trajectory CSVs")


def _resolve_config(args) -> ExperimentConfig:
    overrides = {}
    if args.config:
        overrides.update(load_experiment_config(args.config))
    for flag, _, _ in _CONFIG_FLAGS:
        name = flag.replace("-", "_")
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    if args.hidden is not None:
        try:
            overrides["hidden"] = tuple(int(w) for w in args.hidden.split(",") if w)
        except ValueError as exc:
            raise ConfigurationError(f"bad --hidden value {args.hidden!r}") from exc
    if args.ou_noise is not None:
        overrides["ou_noise"] = args.ou_noise
    if args.log_trajectories is not None:
        overrides["log_trajectories"] = args.log_trajectories
    if args.preset == "desk":
        config = ExperimentConfig.desk(**overrides)
    elif args.preset == "paper":
        config = ExperimentConfig.paper_scale(**overrides)
    else:
        config = ExperimentConfig(**overrides)
    config.validate()
    return config


def _out_dir(args, *parts) -> str:
    root = args.out or os.environ.get(OUTPUT_ROOT_ENV, "runs")
    return os.path.join(root, *parts)


def _train_one(payload):
    config_dict, out_dir, pretrain = payload
    config = ExperimentConfig(**config_dict)
    metrics = run_train(config, out_dir, pretrain_path=pretrain)
    return config.method, config.seed, metrics.successes, metrics.violations, metrics.ratio


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="safemaze",
        description="Risk-gated variable-impedance RL on a contact maze",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_collect = sub.add_parser("collect", help="scripted offline data collection")
    _add_config_flags(p_collect)
    p_collect.add_argument("-o", "--out", help="output directory")
    p_collect.add_argument("--csv", action="store_true", help="also export a CSV copy")

    p_pre = sub.add_parser("pretrain", help="pretrain safety critic and recovery policy")
    _add_config_flags(p_pre)
    p_pre.add_argument("--dataset", required=True, help="offline dataset path")
    p_pre.add_argument("-o", "--out", help="output directory")

    p_train = sub.add_parser("train", help="online training")
    _add_config_flags(p_train)
    p_train.add_argument("--pretrain", help="pretrained checkpoint (required for SRL methods)")
    p_train.add_argument("--seeds", help="comma-separated seeds for multiple runs")
    p_train.add_argument("--methods", help="comma-separated method names")
    p_train.add_argument("--workers", type=int, default=1, help="parallel worker processes")
    p_train.add_argument("-o", "--out", help="output directory root")

    p_eval = sub.add_parser("eval", help="deterministic evaluation of a checkpoint")
    _add_config_flags(p_eval)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--episodes-eval", type=int, help="number of evaluation episodes")
    p_eval.add_argument("-o", "--out", help="output directory")

    p_probe = sub.add_parser("probe", help="risk-vs-action probe of a trained critic")
    _add_config_flags(p_probe)
    p_probe.add_argument("--checkpoint", required=True)
    p_probe.add_argument("--n-probes", type=int, default=200)
    p_probe.add_argument("-o", "--out", help="output directory")

    p_export = sub.add_parser("export", help="render CSV logs into figures")
    p_export.add_argument("--runs", required=True, help="comma-separated run directories")
    p_export.add_argument("-o", "--out", help="output directory")

    args = parser.parse_args(argv)
    try:
        if args.command == "collect":
            config = _resolve_config(args)
            run_collect(config, _out_dir(args, "dataset", f"seed-{config.seed}"),
                        csv_copy=args.csv)
        elif args.command == "pretrain":
            config = _resolve_config(args)
            run_pretrain(config, args.dataset,
                         _out_dir(args, "pretrain", f"seed-{config.seed}"))
        elif args.command == "train":
            config = _resolve_config(args)
            seeds = (
                [int(s) for s in args.seeds.split(",") if s]
                if args.seeds
                else [config.seed]
            )
            methods = (
                [m for m in args.methods.split(",") if m] if args.methods else [config.method]
            )
            jobs = []
            for method in methods:
                for seed in seeds:
                    cfg = dataclasses.replace(config, method=method, seed=seed)
                    cfg.validate()
                    out = _out_dir(args, "train", method, f"seed-{seed}")
                    jobs.append((dataclasses.asdict(cfg), out, args.pretrain))
            if args.workers > 1 and len(jobs) > 1:
                with futures.ProcessPoolExecutor(max_workers=args.workers) as pool:
                    for result in pool.map(_train_one, jobs):
                        print("done:", result)
            else:
                for job in jobs:
                    _train_one(job)
        elif args.command == "eval":
            config = _resolve_config(args)
            run_eval(config, args.checkpoint,
                     _out_dir(args, "eval", config.method, f"seed-{config.seed}"),
                     n_episodes=args.episodes_eval)
        elif args.command == "probe":
            config = _resolve_config(args)
            run_risk_probe(config, args.checkpoint,
                           _out_dir(args, "probe", f"seed-{config.seed}"),
                           n_probes=args.n_probes)
        elif args.command == "export":
            run_dirs = [d for d in args.runs.split(",") if d]
            produced = export_metrics(run_dirs, _out_dir(args, "export"))
            for path in produced:
                print("wrote", path)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, SimulationError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
