"""Experiment command line: gen-data, pretrain, diagnose, probe, sweep.

stdout carries machine-readable JSON only; human diagnostics go to
stderr. Exit codes: 0 ok, 2 usage/config error, 3 I/O error, 4 numeric
failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .config import (
    ConfigError,
    ExperimentConfig,
    load_config_file,
    parse_overrides,
    resolve,
)
from .synthdata import (
    DatasetFormatError,
    EnvConfig,
    dataset_sha256,
    generate_dataset,
    load_dataset,
)
from .train import (
    CheckpointError,
    NumericError,
    load_checkpoint,
    make_stream,
    pretrain,
    run_pretraining,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERIC = 4

SWEEP_COLUMNS = ["param", "value", "seed", "status", "feat_rank", "cos_k1",
                 "loss_total", "loss_sim", "loss_decorr", "loss_contrastive",
                 "loss_action", "loss_recon"]


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _emit(payload) -> None:
    print(json.dumps(payload, sort_keys=True))


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    if args.len < 2:
        _log("error: --len must be at least 2 (one future step is needed)")
        return EXIT_USAGE
    try:
        env = EnvConfig(height=args.height, width=args.width, channels=args.channels,
                        epsilon=args.epsilon)
    except ValueError as err:
        _log(f"error: {err}")
        return EXIT_USAGE
    try:
        header = generate_dataset(env, args.seed, args.traj, args.len, args.out)
        sha = dataset_sha256(args.out)
        manifest = {
            "dataset": args.out,
            "sha256": sha,
            "config": {
                "seed": args.seed, "num_trajectories": args.traj,
                "trajectory_length": args.len, "height": args.height,
                "width": args.width, "channels": args.channels,
                "epsilon": args.epsilon, "n_actions": header.n_actions,
                "env_kind": header.env_kind,
            },
        }
        manifest_path = args.out + ".manifest.json"
        with open(manifest_path, "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, sort_keys=True, indent=2)
            fh.write("\n")
    except OSError as err:
        _log(f"error: {err}")
        return EXIT_IO
    _emit({"dataset": args.out, "manifest": manifest_path, "sha256": sha})
    return EXIT_OK


def _load_run_config(args) -> ExperimentConfig:
    file_values = load_config_file(args.config) if args.config else {}
    overrides = parse_overrides(args.set or [])
    if args.dataset:
        overrides["dataset"] = args.dataset
    if args.seed is not None:
        overrides["seed"] = args.seed
    return resolve(file_values, overrides)


def cmd_pretrain(args) -> int:
    config = _load_run_config(args)
    dataset_path = config["dataset"]
    if not dataset_path:
        raise ConfigError("no dataset given (config key 'dataset' or --dataset)")
    dataset = load_dataset(dataset_path)
    run_dir = Path(args.out_root) / f"run-{config.run_hash()}"
    _log(f"pretraining for {config['steps']} steps into {run_dir}")
    try:
        info = run_pretraining(config, dataset, run_dir)
    except NumericError as err:
        _log(f"numeric failure at step {err.step}: {err}")
        return EXIT_NUMERIC
    _emit(info)
    return EXIT_OK


def cmd_diagnose(args) -> int:
    from . import diagnostics

    state, config = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.dataset)
    bundle = state.bundle
    rng = make_stream(args.seed, "diag")
    n = min(args.rank_samples, dataset.total_states)
    traj = rng.integers(0, dataset.num_trajectories, size=n)
    time = rng.integers(0, dataset.trajectory_length, size=n)
    z = diagnostics.projections_at(bundle, dataset, traj, time)
    report = diagnostics.feature_rank(z, args.rank_eps)
    k_max = min(args.k_max, dataset.trajectory_length - 1)
    curve = diagnostics.cosine_curve(bundle, dataset, k_max,
                                     min(args.pairs, dataset.total_states), rng)
    c = diagnostics.correlation_of_views(bundle, dataset, n, rng)
    doc = report.to_dict()
    doc["cosine_curve"] = curve
    doc["corr_stats"] = diagnostics.corr_stats(c)
    if args.export_embeddings:
        labels = dataset.actions[traj, time]
        diagnostics.export_embeddings(z, labels.tolist(), args.export_embeddings)
        doc["embeddings_csv"] = args.export_embeddings
    _emit(doc)
    return EXIT_OK


def cmd_probe(args) -> int:
    from .probe import run_probes

    state, config = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.dataset)
    results = run_probes(state.bundle, dataset, seed=args.seed)
    _emit({
        "act_f1": results["action"].f1,
        "rew_f1": results["reward"].f1,
        "action": results["action"].to_dict(),
        "reward": results["reward"].to_dict(),
    })
    return EXIT_OK


def cmd_sweep(args) -> int:
    file_values = load_config_file(args.config) if args.config else {}
    base_overrides = parse_overrides(args.set or [])
    if args.dataset:
        base_overrides["dataset"] = args.dataset
    values = [json.loads(v) if _is_json(v) else v for v in args.values.split(",")]
    seeds = list(range(args.seeds))

    base = resolve(file_values, base_overrides)
    dataset = load_dataset(base["dataset"])

    rows = []
    successes = 0
    for value in values:
        for seed in seeds:
            overrides = dict(base_overrides)
            overrides[args.param] = value
            overrides["seed"] = seed
            row = {"param": args.param, "value": value, "seed": seed}
            try:
                config = resolve(file_values, overrides)
                state, records = pretrain(config, dataset)
                final = records[-1]
                row.update({
                    "status": "ok",
                    "feat_rank": final.feat_rank,
                    "cos_k1": final.cos_k1,
                    "loss_total": final.loss_total,
                    "loss_sim": final.loss_sim,
                    "loss_decorr": final.loss_decorr,
                    "loss_contrastive": final.loss_contrastive,
                    "loss_action": final.loss_action,
                    "loss_recon": final.loss_recon,
                })
                successes += 1
                _log(f"sweep cell {args.param}={value} seed={seed}: "
                     f"rank={final.feat_rank}")
            except Exception as err:  # cell failures land in the status column
                row["status"] = f"error: {err}"
                _log(f"sweep cell {args.param}={value} seed={seed} failed: {err}")
            rows.append(row)

    with open(args.out, "w", encoding="ascii", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS, restval="")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("" if row.get(k) is None else row.get(k, ""))
                             for k in SWEEP_COLUMNS})
    _emit({"csv": args.out, "cells": len(rows), "succeeded": successes})
    return EXIT_OK if successes >= 1 else EXIT_NUMERIC


def _is_json(v: str) -> bool:
    try:
        json.loads(v)
        return True
    except json.JSONDecodeError:
        return False


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="simtpr")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic trajectory dataset")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--traj", type=int, required=True, help="number of trajectories")
    g.add_argument("--len", type=int, required=True, help="trajectory length")
    g.add_argument("--out", required=True)
    g.add_argument("--height", type=int, default=16)
    g.add_argument("--width", type=int, default=16)
    g.add_argument("--channels", type=int, default=1)
    g.add_argument("--epsilon", type=float, default=0.3)
    g.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("pretrain", help="run the pretraining loop")
    p.add_argument("--config", help="JSON config file (flat dotted keys)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--dataset", help="dataset path (overrides config)")
    p.add_argument("--seed", type=int, help="seed (overrides config)")
    p.add_argument("--out-root", default="runs")
    p.set_defaults(fn=cmd_pretrain)

    d = sub.add_parser("diagnose", help="feature rank, cosine curve, correlations")
    d.add_argument("--checkpoint", required=True)
    d.add_argument("--dataset", required=True)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--rank-samples", type=int, default=1000)
    d.add_argument("--rank-eps", type=float, default=0.01)
    d.add_argument("--k-max", type=int, default=5)
    d.add_argument("--pairs", type=int, default=256)
    d.add_argument("--export-embeddings", metavar="CSV")
    d.set_defaults(fn=cmd_diagnose)

    r = sub.add_parser("probe", help="linear probes on the frozen encoder")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--dataset", required=True)
    r.add_argument("--seed", type=int, default=0)
    r.set_defaults(fn=cmd_probe)

    s = sub.add_parser("sweep", help="run a parameter sweep and aggregate finals")
    s.add_argument("--config", help="JSON config file")
    s.add_argument("--set", action="append", metavar="KEY=VALUE")
    s.add_argument("--dataset")
    s.add_argument("--param", required=True, help="config key to sweep")
    s.add_argument("--values", required=True, help="comma-separated values")
    s.add_argument("--seeds", type=int, default=1, help="seeds 0..n-1 per value")
    s.add_argument("--out", required=True, help="aggregated CSV path")
    s.set_defaults(fn=cmd_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, json.JSONDecodeError) as err:
        _log(f"config error: {err}")
        return EXIT_USAGE
    except (DatasetFormatError, CheckpointError, FileNotFoundError, OSError) as err:
        _log(f"i/o error: {err}")
        return EXIT_IO
    except NumericError as err:
        _log(f"numeric failure: {err}")
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
