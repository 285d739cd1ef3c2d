"""Command-line surface: dataset synthesis, training, evaluation, ablation
sweeps, and export of learned spatial attention and temporal window weights.

Exit codes: 0 success, 2 usage/config errors, 3 data errors, 4 numerical
aborts. All commands are deterministic given their seeds.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import itertools
import json
import os
import sys

import numpy as np

from . import data as D
from .checkpoint import CheckpointError, load_checkpoint
from .data import STATIC_AFFORDANCE, DataError, SynthConfig, load_dataset, save_dataset, synth_generate
from .tensor import NumericError, ShapeError
from .training import (ConfigError, TrainConfig, TrainingDiverged, evaluate, forward,
                       resolve_config, train)

EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

DATA_DIR_ENV = "HOIGRAPH_DATA_DIR"


def _resolve_data_path(path: str) -> str:
    """Paths that do not exist are retried under $HOIGRAPH_DATA_DIR."""
    if os.path.exists(path):
        return path
    base = os.environ.get(DATA_DIR_ENV)
    if base and not os.path.isabs(path):
        candidate = os.path.join(base, path)
        if os.path.exists(candidate):
            return candidate
    raise DataError(f"dataset not found: {path}"
                    + (f" (also tried under ${DATA_DIR_ENV})" if base else ""))


# ---------------------------------------------------------------------------
# config files


def parse_config_file(path: str) -> dict[str, str]:
    """Simple ``key = value`` lines; '#' starts a comment."""
    values: dict[str, str] = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
                key, value = line.split("=", 1)
                values[key.strip()] = value.strip()
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    return values


def _coerce(name: str, raw: str, annotation: str):
    if annotation in ("int", "int | None"):
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{name} expects an integer, got {raw!r}") from None
    if annotation in ("float", "float | None"):
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{name} expects a number, got {raw!r}") from None
    if annotation == "bool":
        low = raw.lower()
        if low in ("true", "1", "on", "yes"):
            return True
        if low in ("false", "0", "off", "no"):
            return False
        raise ConfigError(f"{name} expects true/false, got {raw!r}")
    return raw


def build_train_config(file_values: dict[str, str], overrides: list[str]) -> TrainConfig:
    fields = {f.name: str(f.type) for f in dataclasses.fields(TrainConfig)}
    merged = dict(file_values)
    for pair in overrides or []:
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        merged[key.strip()] = value.strip()
    typed: dict = {}
    for key, raw in merged.items():
        if key not in fields:
            raise ConfigError(f"unknown config key {key!r}; valid keys: "
                              + ", ".join(sorted(fields)))
        typed[key] = _coerce(key, raw, fields[key])
    cfg = TrainConfig(**typed)
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    lo, _, hi = args.objects.partition("-")
    try:
        rng = (int(lo), int(hi) if hi else int(lo))
    except ValueError:
        raise ConfigError(f"--objects expects N or LO-HI, got {args.objects!r}") from None
    cfg = SynthConfig(num_videos=args.videos, frames=args.frames, num_objects_range=rng,
                      num_subactivities=args.classes, num_affordances=args.affordances,
                      num_categories=args.categories, feature_dim=args.feature_dim,
                      redundant_frames=args.redundant, seed=args.seed)
    samples = synth_generate(cfg)
    save_dataset(samples, args.out)
    print(f"wrote {len(samples)} videos to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = build_train_config(parse_config_file(args.config) if args.config else {}, args.set)
    dataset = load_dataset(_resolve_data_path(args.data), frames=cfg.frames)
    os.makedirs(args.out, exist_ok=True)
    ckpt = os.path.join(args.out, "checkpoint")
    log_path = os.path.join(args.out, "trainlog.jsonl")
    try:
        result = train(cfg, dataset, checkpoint_path=ckpt, log_path=log_path,
                       resume_from=args.resume)
    except TrainingDiverged as e:
        from .checkpoint import save_checkpoint
        save_checkpoint(e.last_good, ckpt + ".lastgood",
                        extra={"epoch": e.epoch, "config": cfg.to_dict()})
        print(f"training diverged: {e}; last good parameters saved to {ckpt}.lastgood.json",
              file=sys.stderr)
        raise
    final = result.log.entries[-1]
    print(f"trained {len(result.log.entries)} epochs; final loss {final['loss']:.6f}; "
          f"checkpoint at {ckpt}.json")
    if "train" in final:
        print("final train metrics: " + json.dumps(final["train"]))
    return 0


def cmd_eval(args) -> int:
    store, extra = load_checkpoint(args.ckpt)
    if "config" not in extra:
        raise DataError("checkpoint carries no config; cannot evaluate")
    cfg = TrainConfig.from_dict(extra["config"])
    dataset = load_dataset(_resolve_data_path(args.data), frames=cfg.frames)
    k_list = _parse_int_list(args.topk, "--topk")
    report = evaluate(store, dataset, cfg, k_list=k_list)
    text = json.dumps(report.to_dict(), indent=2)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
        print(f"wrote metrics to {args.out}")
    else:
        print(text)
    return 0


def _parse_int_list(raw: str, flag: str) -> list[int]:
    try:
        return [int(v) for v in raw.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"{flag} expects a comma-separated integer list, got {raw!r}") from None


def build_export_bundle(sample: D.VideoGraphSample, output) -> dict:
    """Collect one video's attention matrices, window weights, and a
    human-to-object attention summary into a JSON-ready structure."""
    h = sample.human_index
    entities = [{"node_id": e.node_id, "is_human": e.is_human, "category": e.category_id,
                 "affordance": e.affordance_label} for e in sample.entities]
    spatial = {name: [m.tolist() for m in mats]
               for name, mats in output.attention.streams.items()}
    temporal = []
    for stream, layer_records in output.temporal_weights.items():
        for layer, windows in layer_records:
            for win in windows:
                temporal.append({
                    "stream": stream, "layer": layer, "center": win.center,
                    "weights": win.weights.tolist(),
                })

    active = [i for i in sample.object_indices
              if sample.entities[i].affordance_label != STATIC_AFFORDANCE]
    distractors = [i for i in sample.object_indices
                   if sample.entities[i].affordance_label == STATIC_AFFORDANCE]
    summary = None
    if active and distractors:
        mats = [m for mats in output.attention.streams.values() for m in mats]
        to_active = float(np.mean([m[h, i] for m in mats for i in active]))
        to_distractor = float(np.mean([m[h, i] for m in mats for i in distractors]))
        summary = {"human_to_active_mean": to_active,
                   "human_to_distractor_mean": to_distractor}
    return {"video_id": sample.video_id, "entities": entities,
            "spatial_attention": spatial, "temporal_weights": temporal,
            "summary": summary}


def _write_export_csvs(bundle: dict, out_dir: str, num_nodes: int) -> None:
    with open(os.path.join(out_dir, "spatial.csv"), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = ["stream", "frame"] + [f"a_{i}_{j}" for i in range(num_nodes)
                                        for j in range(num_nodes)]
        writer.writerow(header)
        for stream, mats in bundle["spatial_attention"].items():
            for t, mat in enumerate(mats):
                writer.writerow([stream, t] + [v for row in mat for v in row])
    with open(os.path.join(out_dir, "temporal.csv"), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["stream", "layer", "node", "center", "weights"])
        for rec in bundle["temporal_weights"]:
            weights = np.asarray(rec["weights"])
            if weights.ndim == 1:
                weights = weights[None, :]
            for node in range(weights.shape[0]):
                writer.writerow([rec["stream"], rec["layer"], node, rec["center"],
                                 " ".join(repr(v) for v in weights[node])])


def cmd_export_weights(args) -> int:
    store, extra = load_checkpoint(args.ckpt)
    if "config" not in extra:
        raise DataError("checkpoint carries no config; cannot run the model")
    cfg = TrainConfig.from_dict(extra["config"])
    dataset = load_dataset(_resolve_data_path(args.data), frames=cfg.frames)
    cfg = resolve_config(cfg, dataset)
    matches = [s for s in dataset if s.video_id == args.video_id]
    if not matches:
        raise DataError(f"video {args.video_id!r} not present in {args.data}")
    sample = matches[0]
    output = forward(sample, store, cfg, record=True)
    bundle = build_export_bundle(sample, output)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "bundle.json"), "w", encoding="utf-8") as fh:
        json.dump(bundle, fh, indent=2)
        fh.write("\n")
    _write_export_csvs(bundle, args.out, sample.num_entities)
    print(f"exported attention and window weights for {sample.video_id} to {args.out}")
    return 0


def parse_grid(raw: str) -> dict[str, list[str]]:
    """Grid spec ``key=v1,v2;key2=v3,v4`` -> ordered dict of value lists."""
    grid: dict[str, list[str]] = {}
    for part in raw.split(";"):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise ConfigError(f"--grid expects key=v1,v2[;key2=...], got {part!r}")
        key, values = part.split("=", 1)
        grid[key.strip()] = [v.strip() for v in values.split(",") if v.strip()]
    if not grid:
        raise ConfigError("--grid is empty")
    return grid


def cmd_ablate(args) -> int:
    base = build_train_config(parse_config_file(args.config) if args.config else {}, args.set)
    if args.epochs:
        base = dataclasses.replace(base, epochs=args.epochs)
    dataset = load_dataset(_resolve_data_path(args.data), frames=base.frames)
    grid = parse_grid(args.grid)
    seeds = _parse_int_list(args.seeds, "--seeds")
    fields = {f.name: str(f.type) for f in dataclasses.fields(TrainConfig)}
    for key in grid:
        if key not in fields:
            raise ConfigError(f"--grid key {key!r} is not a config key")

    rows = []
    for combo in itertools.product(*grid.values()):
        settings = {k: _coerce(k, v, fields[k]) for k, v in zip(grid.keys(), combo)}
        losses, finals = [], []
        for seed in seeds:
            cfg = dataclasses.replace(base, seed=seed, **settings)
            cfg.validate()
            result = train(cfg, dataset)
            losses.append(result.log.entries[-1]["loss"])
            finals.append(result.log.entries[-1].get("train"))
        rows.append({"settings": settings, "seeds": seeds, "final_losses": losses,
                     "mean_final_loss": float(np.mean(losses)),
                     "final_metrics": finals})

    table = {"grid": grid, "epochs": base.epochs, "rows": rows}
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(table, fh, indent=2)
            fh.write("\n")
    width = max(len(_settings_label(r["settings"])) for r in rows)
    print(f"{'configuration':<{width}}  mean final loss")
    for row in rows:
        print(f"{_settings_label(row['settings']):<{width}}  {row['mean_final_loss']:.6f}")
    return 0


def _settings_label(settings: dict) -> str:
    return ",".join(f"{k}={v}" for k, v in settings.items())


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hoigraph",
        description="Train and inspect the two-stream graph attention model "
                    "with dynamic temporal pooling.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a deterministic synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--videos", type=int, default=20)
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--objects", default="2-3", help="object count N or range LO-HI")
    p.add_argument("--classes", type=int, default=3, help="number of subactivity classes")
    p.add_argument("--affordances", type=int, default=3,
                   help="affordance classes including the static class")
    p.add_argument("--categories", type=int, default=4)
    p.add_argument("--feature-dim", type=int, default=12, dest="feature_dim")
    p.add_argument("--redundant", type=int, default=0,
                   help="frames per video replaced by a copy of their predecessor")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", help="train a model and write checkpoint + log")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config value (repeatable)")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--topk", default="1", help="comma-separated k values")
    p.add_argument("--out", help="write the JSON report here instead of stdout")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("export-weights",
                       help="export spatial attention and temporal window weights")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--video-id", required=True, dest="video_id")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=cmd_export_weights)

    p = sub.add_parser("ablate", help="train every grid configuration and tabulate")
    p.add_argument("--data", required=True)
    p.add_argument("--grid", required=True, help="e.g. pooling=DTP,AvgP,none")
    p.add_argument("--seeds", default="0", help="comma-separated seeds")
    p.add_argument("--epochs", type=int, help="override epochs for every cell")
    p.add_argument("--config", help="base config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--out", help="write the JSON table here")
    p.set_defaults(fn=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CheckpointError, ShapeError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, TrainingDiverged) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
