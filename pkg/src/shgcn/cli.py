"""Command-line entry point: ``shgcn <command> [options]``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import itertools
import json
import logging
import sys
from pathlib import Path

import numpy as np

from shgcn import io
from shgcn.baseline import MfState
from shgcn.evaluate import TOP_K, evaluate, leave_one_out_split
from shgcn.graph import DataError, build_hypergraph
from shgcn.model import ModelState, param_count
from shgcn.synth import SynthConfig, generate
from shgcn.train import (BATCH_GRID, L2_GRID, LR_GRID, SELECTION_METRIC, NumericError,
                         TrainConfig, fit, seed_streams)

log = logging.getLogger("shgcn")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

MODEL_KEYS = {"model": str, "dim": int, "layers": int}
TRAIN_KEYS = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
_CASTS = {"int": int, "float": float, "str": str, int: int, float: float, str: str}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---- configuration ----------------------------------------------------------------

def read_config(path) -> dict:
    """``key = value`` lines (``#`` comments) or a JSON object."""
    text = Path(path).read_text(encoding="utf-8")
    if text.lstrip().startswith("{"):
        raw = json.loads(text)
    else:
        raw = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            raw[key.replace("-", "_")] = value
    known = {**MODEL_KEYS, **TRAIN_KEYS}
    out = {}
    for key, value in raw.items():
        if key not in known:
            raise UsageError(f"{path}: unknown config key {key!r}")
        out[key] = _CASTS[known[key]](value)
    return out


def resolve_config(args) -> tuple[dict, TrainConfig]:
    values = {"model": "shgcn", "dim": 32, "layers": 3}
    values.update({f.name: f.default for f in dataclasses.fields(TrainConfig)})
    if args.config:
        values.update(read_config(args.config))
    for key in list(MODEL_KEYS) + list(TRAIN_KEYS):
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    if values["model"] not in ("shgcn", "mf"):
        raise UsageError(f"unknown model kind {values['model']!r}")
    model_cfg = {k: values[k] for k in MODEL_KEYS}
    try:
        train_cfg = TrainConfig(**{k: values[k] for k in TRAIN_KEYS})
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return model_cfg, train_cfg


def build_model(model_cfg: dict, dataset, seed: int):
    M, N = dataset.num_users, dataset.num_items
    if model_cfg["model"] == "mf":
        return MfState.init(M, N, model_cfg["dim"], seed=seed)
    return ModelState.init(M, N, model_cfg["dim"], model_cfg["layers"], seed=seed)


def load_from_args(args):
    return io.load_dataset(args.interactions, args.triplets,
                           derive_interactions=args.derive_interactions_from_triplets,
                           item_first=args.item_first, dedupe=args.dedupe)


# ---- commands ---------------------------------------------------------------------

def _run_fit(dataset, model_cfg, train_cfg, num_candidates, on_epoch=None):
    split = leave_one_out_split(dataset, seed_streams(train_cfg.seed)["split"], num_candidates)
    graph = build_hypergraph(split.train)
    model = build_model(model_cfg, dataset, train_cfg.seed)
    result = fit(model, graph, split, train_cfg, on_epoch=on_epoch)
    return model, graph, split, result


def metrics_report(model, graph, split, model_cfg, train_cfg, dataset) -> dict:
    scorer = model.scorer(graph)
    report = {
        "model": model.kind,
        "seed": train_cfg.seed,
        "config_hash": io.config_hash({**model_cfg, **train_cfg.to_dict()}),
        "dataset_hash": io.dataset_hash(dataset),
        "test": evaluate(scorer, split, TOP_K, "test"),
    }
    if len(split.evaluated_users("val")):
        report["val"] = evaluate(scorer, split, TOP_K, "val")
    return report


def cmd_train(args) -> int:
    model_cfg, train_cfg = resolve_config(args)
    dataset = load_from_args(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    config = {**model_cfg, **train_cfg.to_dict(), "candidates": args.candidates}
    manifest = io.RunManifest("train", model_cfg["model"], train_cfg.seed, config,
                              io.dataset_hash(dataset), started=io.timestamp())
    paths = {"epochs": out / "epochs.jsonl", "metrics": out / "metrics.json",
             "checkpoint": out / "model.ckpt", "id_map": out / "id_map.json"}
    io.write_id_map(dataset, paths["id_map"])

    with open(paths["epochs"], "w", encoding="utf-8") as epoch_log:
        def on_epoch(record):
            epoch_log.write(json.dumps(record, sort_keys=True) + "\n")
            epoch_log.flush()

        model, graph, split, result = _run_fit(dataset, model_cfg, train_cfg, args.candidates, on_epoch)

    report = metrics_report(model, graph, split, model_cfg, train_cfg, dataset)
    report["best_epoch"] = result.best_epoch
    paths["metrics"].write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    io.save_checkpoint(model, paths["checkpoint"])
    manifest.finished = io.timestamp()
    manifest.outputs = {k: str(v) for k, v in paths.items()}
    io.append_manifest(manifest, out / "manifest.jsonl")
    print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    model = io.load_checkpoint(args.checkpoint)
    dataset = load_from_args(args)
    seed, candidates, config = args.seed, args.candidates, None
    if args.manifest:
        manifest = io.read_manifests(args.manifest)[-1]
        io.verify_manifest(manifest, dataset)
        seed, candidates, config = manifest.seed, manifest.config.get("candidates", candidates), manifest.config
    if seed is None:
        raise UsageError("--seed is required without --manifest")
    if (model.num_users, model.num_items) != (dataset.num_users, dataset.num_items):
        raise DataError("checkpoint dimensions do not match the dataset")
    split = leave_one_out_split(dataset, seed_streams(seed)["split"], candidates)
    graph = build_hypergraph(split.train)
    if config is not None:
        model_cfg = {k: config[k] for k in MODEL_KEYS}
        train_cfg = TrainConfig(**{k: config[k] for k in TRAIN_KEYS})
    else:
        model_cfg = {"model": model.kind, "dim": model.dim, "layers": model.layers}
        train_cfg = TrainConfig(seed=seed)
    report = metrics_report(model, graph, split, model_cfg, train_cfg, dataset)
    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_gen_synth(args) -> int:
    cfg = SynthConfig(args.users, args.items, args.topics, args.topics_per_user, args.friends_per_user,
                      args.interactions_per_user, args.triplets_per_pair, args.noise, args.seed)
    try:
        data = generate(cfg)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_dataset(data.dataset, out / "interactions.tsv", out / "triplets.tsv")
    (out / "topics.json").write_text(json.dumps({
        "config": dataclasses.asdict(cfg),
        "item_topic": data.item_topic.tolist(),
        "user_topics": [np.flatnonzero(row).tolist() for row in data.user_topics],
    }))
    print(f"wrote {len(data.dataset.interactions)} interactions and "
          f"{len(data.dataset.triplets)} triplets to {out}")
    return EXIT_OK


def cmd_param_count(args) -> int:
    counts = param_count(args.users, args.items, args.dim, args.layers)
    for key in ("embeddings", "transforms", "mlp", "total", "mlp_approx", "extra_approx"):
        print(f"{key:<12s}{counts[key]:>14,d}")
    return EXIT_OK


def _floats(text):
    return [float(x) for x in text.split(",")]


def _ints(text):
    return [int(x) for x in text.split(",")]


def cmd_grid(args) -> int:
    model_cfg, base = resolve_config(args)
    dataset = load_from_args(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    with open(out / "grid.jsonl", "w", encoding="utf-8") as fh:
        for lr, lam, bs in itertools.product(args.lrs, args.l2s, args.batch_sizes):
            cfg = dataclasses.replace(base, learning_rate=lr, l2_lambda=lam, batch_size=bs)
            model, graph, split, result = _run_fit(dataset, model_cfg, cfg, args.candidates)
            report = metrics_report(model, graph, split, model_cfg, cfg, dataset)
            row = {"learning_rate": lr, "l2_lambda": lam, "batch_size": bs,
                   "best_epoch": result.best_epoch, "val": report.get("val"), "test": report["test"]}
            fh.write(json.dumps(row, sort_keys=True) + "\n")
            rows.append(row)
            log.info("lr=%g l2=%g batch=%d -> val %s", lr, lam, bs, result.best_metric)

    def val_metric(row):
        return (row["val"] or row["test"])[SELECTION_METRIC]

    print(f"{'lr':>8s} {'l2':>8s} {'batch':>6s} {'epoch':>6s} {'val@10':>8s} {'test@10':>8s}")
    for row in rows:
        print(f"{row['learning_rate']:>8g} {row['l2_lambda']:>8g} {row['batch_size']:>6d} "
              f"{row['best_epoch']:>6d} {val_metric(row):>8.4f} {row['test'][SELECTION_METRIC]:>8.4f}")
    best = max(rows, key=val_metric)
    print(f"best: lr={best['learning_rate']:g} l2={best['l2_lambda']:g} batch={best['batch_size']}")
    (out / "grid_best.json").write_text(json.dumps(best, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from shgcn.gradcheck import run_suite

    reports = run_suite(args.instances, args.seed, args.tol)
    for k, rep in enumerate(reports):
        print(f"instance {k:3d}: worst rel err {rep.worst:.3e} {'ok' if rep.passed else 'FAIL'}")
    failed = sum(not r.passed for r in reports)
    print(f"{len(reports) - failed}/{len(reports)} instances within {args.tol:g}")
    return EXIT_OK if failed == 0 else EXIT_NUMERIC


# ---- parser -----------------------------------------------------------------------

def _add_data_args(p):
    p.add_argument("--interactions", help="user<TAB>item file")
    p.add_argument("--triplets", help="user1<TAB>user2<TAB>item file")
    p.add_argument("--derive-interactions-from-triplets", action="store_true",
                   help="add (user1, item) and (user2, item) for every triplet")
    p.add_argument("--item-first", action="store_true", help="interaction columns are item, user")
    p.add_argument("--dedupe", action="store_true", help="drop duplicate records instead of failing")
    p.add_argument("--candidates", type=int, default=100, help="sampled negatives per evaluated user")


def _add_train_args(p):
    p.add_argument("--config", help="key = value or JSON file; flags override it")
    p.add_argument("--model", choices=["shgcn", "mf"])
    p.add_argument("--dim", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--lr", dest="learning_rate", type=float)
    p.add_argument("--l2", dest="l2_lambda", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--negatives", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="shgcn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a model and write checkpoint, logs and metrics")
    _add_data_args(p)
    _add_train_args(p)
    p.add_argument("--out", required=True, help="run directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint on the leave-one-out split")
    _add_data_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", help="manifest.jsonl of the training run (supplies seed and config)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="write the metrics report here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gen-synth", help="write a synthetic dataset with planted topics")
    d = SynthConfig()
    p.add_argument("--users", type=int, default=d.num_users)
    p.add_argument("--items", type=int, default=d.num_items)
    p.add_argument("--topics", type=int, default=d.num_topics)
    p.add_argument("--topics-per-user", type=int, default=d.topics_per_user)
    p.add_argument("--friends-per-user", type=float, default=d.friends_per_user)
    p.add_argument("--interactions-per-user", type=int, default=d.interactions_per_user)
    p.add_argument("--triplets-per-pair", type=int, default=d.triplets_per_pair)
    p.add_argument("--noise", type=float, default=d.noise)
    p.add_argument("--seed", type=int, default=d.seed)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("param-count", help="print the parameter breakdown")
    p.add_argument("--users", type=int, required=True)
    p.add_argument("--items", type=int, required=True)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--layers", type=int, default=3)
    p.set_defaults(func=cmd_param_count)

    p = sub.add_parser("grid", help="sequential sweep over learning rate, L2 and batch size")
    _add_data_args(p)
    _add_train_args(p)
    p.add_argument("--lrs", type=_floats, default=list(LR_GRID))
    p.add_argument("--l2s", type=_floats, default=list(L2_GRID))
    p.add_argument("--batch-sizes", type=_ints, default=[4096],
                   help=f"comma list; the sensitivity grid is {','.join(map(str, BATCH_GRID))}")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("gradcheck", help="finite-difference check of end-to-end gradients")
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    if hasattr(args, "interactions") and args.interactions is None and args.triplets is None:
        parser.error("at least one of --interactions / --triplets is required")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"shgcn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, io.CheckpointError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"shgcn: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"shgcn: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
