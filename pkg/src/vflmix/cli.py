"""Command-line entry points.

Subcommands: train, unlearn, attack, experiment, compare. Every subcommand
takes --config (TOML path) and an optional --seed overriding the config's
master seed.
"""

from __future__ import annotations

import argparse
import json
import sys
import time

import numpy as np

from . import attacks as attacks_mod
from . import data as data_mod
from . import federation as fed_mod
from . import harness


def _load(args, path=None) -> harness.ExperimentConfig:
    cfg = harness.parse_config(path or args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _train_once(cfg):
    train_ds, test_ds = harness.load_dataset(cfg)
    rng = np.random.default_rng(cfg.seed)
    fed = fed_mod.build_federation(
        train_ds, rng,
        embedding_dim=cfg.federation["embedding_dim"],
        bottom_hidden=tuple(cfg.federation["bottom_hidden"]),
        top_hidden=tuple(cfg.federation["top_hidden"]),
        privacy=cfg.privacy_cfg,
    )
    start = time.perf_counter()
    losses = fed_mod.fit(fed, train_ds, cfg.training["epochs"],
                         cfg.training["batch_size"], cfg.training_config(), rng)
    seconds = time.perf_counter() - start
    return fed, train_ds, test_ds, rng, losses, seconds


def cmd_train(args) -> int:
    cfg = _load(args)
    fed, train_ds, test_ds, _, losses, seconds = _train_once(cfg)
    acc = fed_mod.accuracy(fed, test_ds.parts, test_ds.labels)
    print(f"trained {cfg.training['epochs']} epochs in {seconds:.1f}s, "
          f"final loss {losses[-1]:.4f}, test accuracy {acc:.2f}%")
    if args.checkpoint:
        data_mod.save_checkpoint(fed, args.checkpoint,
                                 seed_provenance=f"master_seed={cfg.seed}")
        print(f"checkpoint written to {args.checkpoint}")
    return 0


def cmd_unlearn(args) -> int:
    cfg = _load(args)
    train_ds, test_ds = harness.load_dataset(cfg)
    rows, _ = harness.run_trial(cfg, 0, train_ds, test_ds)
    for row in rows:
        du = f"{row.du_acc:.2f}" if row.du_acc is not None else "-"
        dr = f"{row.dr_acc:.2f}" if row.dr_acc is not None else "-"
        print(f"{row.phase:<10} retained {dr}%  forget {du}%  "
              f"({row.seconds:.2f}s)")
    return 0


def cmd_attack(args) -> int:
    cfg = _load(args)
    train_ds, test_ds = harness.load_dataset(cfg)
    rows, fed = harness.run_trial(cfg, 0, train_ds, test_ds)
    row = rows[-1]
    print(f"phase {row.phase}:")
    if row.asr is not None:
        print(f"  membership-inference ASR on forget rows: {row.asr:.2f}%")
    if row.leakage_acc is not None:
        print(f"  gradient-clustering label leakage: {row.leakage_acc:.2f}%")
    if row.pmc_forgotten is not None:
        print(f"  model-completion accuracy, forget classes: "
              f"{row.pmc_forgotten:.2f}%")
    if row.pmc_retained is not None:
        print(f"  model-completion accuracy, retained classes: "
              f"{row.pmc_retained:.2f}%")
    if row.asr is None and row.leakage_acc is None and row.pmc_retained is None:
        print("  no attacks enabled in config")
    return 0


def cmd_experiment(args) -> int:
    cfg = _load(args)
    if args.output:
        import dataclasses
        cfg = dataclasses.replace(cfg, output_dir=args.output)
    report = harness.run_experiment(cfg)
    print(json.dumps(report.summary(), indent=2, sort_keys=True))
    if cfg.output_dir:
        print(f"metrics written to {cfg.output_dir}/", file=sys.stderr)
    return 0


def cmd_compare(args) -> int:
    cfgs = [_load(args, path) for path in args.configs]
    table = harness.compare_runtimes(cfgs)
    width = max(len(m) for m, _ in table)
    for method, seconds in table:
        print(f"{method:<{width}}  {seconds:8.3f}s")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="vflmix",
        description="vertical federated learning with few-shot label unlearning",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        if config_required:
            p.add_argument("--config", required=True, help="TOML config path")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config's master seed")

    p = sub.add_parser("train", help="train the federation once")
    common(p)
    p.add_argument("--checkpoint", default="", help="where to save weights")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("unlearn", help="train then run the configured method")
    common(p)
    p.set_defaults(func=cmd_unlearn)

    p = sub.add_parser("attack", help="train, unlearn, then run enabled attacks")
    common(p)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("experiment", help="run all trials and write reports")
    common(p)
    p.add_argument("--output", default="", help="override output directory")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("compare", help="compare method runtimes across configs")
    p.add_argument("--config", dest="configs", action="append", required=True,
                   help="repeatable; each config names one method")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_compare)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (harness.ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
