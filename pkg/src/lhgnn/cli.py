"""Command-line entry points.

Subcommands: features, stats, train, eval, gradcheck, param-count,
cluster-demo.  All structured output is JSON on stdout; failures from
package errors print a one-line message and exit with status 2.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import audio
from .checkpoint import average_checkpoints, load_checkpoint
from .clustering import fuzzy_cmeans, kmeans, nearest_centroids
from .data import extract_features, feature_cache_path, load_split_arrays, read_manifest, split_entries
from .errors import PACKAGE_ERRORS, ConfigError
from .gradcheck import gradient_check
from .model import ModelConfig, param_count, stage_geometry, tiny_config
from .training import TrainConfig, evaluate_arrays, train_from_manifest


def _cmd_features(args) -> int:
    entries = read_manifest(args.manifest)
    written = extract_features(entries, args.out, args.frames, args.mels)
    print(json.dumps({"files_written": len(written), "out_dir": str(args.out)}))
    return 0


def _cmd_stats(args) -> int:
    entries = split_entries(read_manifest(args.manifest), args.split)
    if not entries:
        raise ConfigError(f"manifest has no entries for split {args.split!r}")

    def feature_iter():
        for entry in entries:
            if args.features:
                yield audio.read_feature_cache(feature_cache_path(args.features, entry.path))
            else:
                yield audio.logmel(audio.load_wav(entry.path), n_frames=args.frames, n_mels=args.mels)

    mean, std, count = audio.running_stats(feature_iter())
    print(json.dumps({"split": args.split, "mean": mean, "std": std, "cells": count}))
    return 0


def _cmd_train(args) -> int:
    config = TrainConfig.from_json(args.config)
    _, lines = train_from_manifest(config, seed=args.seed)
    for line in lines[-4:]:
        print(line)
    if config.out_dir:
        print(json.dumps({"out_dir": config.out_dir, "epochs": config.epochs}))
    return 0


def _cmd_eval(args) -> int:
    if args.average:
        paths = [args.ckpt] + [p for p in args.average.split(",") if p]
        params, model_cfg = average_checkpoints(paths)
    else:
        params, model_cfg = load_checkpoint(args.ckpt)
    entries = read_manifest(args.manifest)
    feats, hot = load_split_arrays(
        entries, args.split, model_cfg.num_classes,
        model_cfg.in_frames, model_cfg.in_mels, args.features,
    )
    targets = hot if args.task == "multilabel" else hot.argmax(axis=1)
    loss, metric = evaluate_arrays(feats, targets, params, model_cfg, args.task, args.batch_size)
    name = "mAP" if args.task == "multilabel" else "accuracy"
    print(json.dumps({"split": args.split, "loss": loss, name: metric, "samples": len(feats)}))
    return 0


def _cmd_gradcheck(args) -> int:
    config = tiny_config()
    report = gradient_check(config, seed=args.seed, samples_per_tensor=args.samples)
    worst = report.worst()
    print(json.dumps({
        "scale": args.scale,
        "loss": report.loss,
        "max_rel_error": report.max_rel_error,
        "worst_tensor": worst.name,
        "tensors_checked": len(report.results),
        "tolerance": args.tolerance,
        "passed": report.max_rel_error < args.tolerance,
    }))
    return 0 if report.max_rel_error < args.tolerance else 1


def _cmd_param_count(args) -> int:
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{args.config}: invalid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{args.config}: config root must be a JSON object")
        if "model" in raw:
            raw = raw["model"]
        model_cfg = ModelConfig.from_dict(raw)
    else:
        model_cfg = ModelConfig()
    geometry = stage_geometry(model_cfg)
    print(json.dumps({
        "trainable": param_count(model_cfg),
        "total": param_count(model_cfg, trainable_only=False),
        "stage_nodes": [h * w for h, w, _ in geometry],
    }))
    return 0


def _cmd_cluster_demo(args) -> int:
    rng = np.random.default_rng(args.seed)
    centers = rng.normal(0.0, 4.0, (args.clusters, 2))
    nodes = np.concatenate([
        center + rng.normal(0.0, 0.4, (args.nodes // args.clusters + 1, 2))
        for center in centers
    ])[: args.nodes]
    if args.backend == "kmeans":
        state = kmeans(nodes, args.clusters, iterations=args.iterations)
        higher = nearest_centroids(nodes, state.centroids, args.top_k)
    else:
        state, higher = fuzzy_cmeans(
            nodes, args.clusters, args.top_k, iterations=args.iterations
        )
    print(json.dumps({
        "backend": args.backend,
        "nodes": nodes.round(4).tolist(),
        "centroids": state.centroids.round(4).tolist(),
        "memberships": state.memberships.round(4).tolist(),
        "top_centroids": higher.indices.tolist(),
    }))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lhgnn", description="Audio tagging with local-higher-order graph networks")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("features", help="extract log-mel features for every manifest entry")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--frames", type=int, default=audio.N_FRAMES)
    p.add_argument("--mels", type=int, default=audio.N_MELS)
    p.set_defaults(func=_cmd_features)

    p = sub.add_parser("stats", help="dataset-level feature mean and standard deviation")
    p.add_argument("--manifest", required=True)
    p.add_argument("--features", default=None, help="read cached features instead of WAVs")
    p.add_argument("--split", default="train")
    p.add_argument("--frames", type=int, default=audio.N_FRAMES)
    p.add_argument("--mels", type=int, default=audio.N_MELS)
    p.set_defaults(func=_cmd_stats)

    p = sub.add_parser("train", help="train from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint (optionally an average)")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--average", default=None, help="comma-separated extra checkpoints to average in")
    p.add_argument("--manifest", required=True)
    p.add_argument("--features", default=None)
    p.add_argument("--split", default="test")
    p.add_argument("--task", default="multilabel", choices=["multilabel", "multiclass"])
    p.add_argument("--batch-size", type=int, default=16)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of the backward pass")
    p.add_argument("--scale", default="tiny", choices=["tiny"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=3, help="entries sampled per tensor")
    p.add_argument("--tolerance", type=float, default=1e-3)
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("param-count", help="parameter count and stage geometry for a config")
    p.add_argument("--config", default=None)
    p.set_defaults(func=_cmd_param_count)

    p = sub.add_parser("cluster-demo", help="run clustering on synthetic 2-D blobs and dump JSON")
    p.add_argument("--nodes", type=int, default=100)
    p.add_argument("--clusters", type=int, default=4)
    p.add_argument("--top-k", type=int, default=2)
    p.add_argument("--iterations", type=int, default=1)
    p.add_argument("--backend", default="fcm", choices=["fcm", "kmeans"])
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_cluster_demo)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except PACKAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
