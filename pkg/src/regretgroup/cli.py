"""Command-line entry point wiring the pipeline into reproducible runs.

Subcommands: synth, overseg, train, group, eval. Every command accepts
repeated --config values (JSON files or dotted.key=value overrides), writes
config.lock.json next to its outputs, and derives all randomness from
explicit seeds. Exit codes: 0 success, 1 runtime error, 2 config error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

from .adjacency import adjacent_pairs, build_grid
from .config import ConfigError, RunConfig, load_config, write_lock
from .evaluation import ground_truth_objects, recall_curves, write_report_csvs
from .geometry import LabeledCloud, load_ply, load_xyzl
from .grouping import run_grouping, write_proposals
from .oversegment import oversegment, read_segments, remove_background, write_segments
from .predictor import (
    HeuristicPredictor,
    NetPredictor,
    OraclePredictor,
    PredictorModel,
    load_model,
    save_model,
)
from .synthgen import generate_dataset
from .training import TrainScene, curriculum_train, write_phase_log

__all__ = ["main"]


def _load_cloud(path) -> LabeledCloud:
    if not os.path.exists(path):
        raise FileNotFoundError(f"input cloud not found: {path}")
    if str(path).endswith(".ply"):
        return load_ply(path)
    return load_xyzl(path)


def _out_dir(path) -> str:
    return os.path.dirname(os.path.abspath(path))


def cmd_synth(args, cfg: RunConfig) -> int:
    if args.scenes < 1:
        raise ConfigError("--scenes must be at least 1")
    spec = replace(cfg.synth, adversarial=args.adversarial)
    os.makedirs(args.out, exist_ok=True)
    write_lock(cfg, args.out)
    generate_dataset(args.scenes, spec, args.seed, args.out)
    return 0


def cmd_overseg(args, cfg: RunConfig) -> int:
    cloud = _load_cloud(args.input)
    segments = oversegment(cloud, cfg.ransac)
    segments = remove_background(segments, len(cloud), cfg.ransac)
    write_segments(args.out, os.path.abspath(args.input), segments)
    write_lock(cfg, _out_dir(args.out))
    return 0


def _prepare_scene(path, cfg: RunConfig) -> TrainScene:
    cloud = _load_cloud(path)
    if cloud.labels is None:
        raise ConfigError(f"training scene has no labels: {path}")
    segments = remove_background(oversegment(cloud, cfg.ransac), len(cloud), cfg.ransac)
    pairs = adjacent_pairs(build_grid(cloud, segments, cfg.grid_m)) if segments else set()
    return TrainScene.build(cloud, segments, pairs)


def cmd_train(args, cfg: RunConfig) -> int:
    with open(args.manifest, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    base = os.path.dirname(os.path.abspath(args.manifest))
    entries = manifest.get("scenes", [])
    paths = [os.path.join(base, e["path"]) for e in entries if e.get("split", "train") == "train"]
    if not paths:
        raise ConfigError("manifest lists no training scenes")
    scenes = [_prepare_scene(p, cfg) for p in paths]
    model = PredictorModel.create(
        cfg.model_encoder_widths, cfg.model_mlp_widths, cfg.sample_n, cfg.model_seed
    )
    model, logs = curriculum_train(model, scenes, cfg.train)
    save_model(model, args.out)
    write_phase_log(os.path.join(_out_dir(args.out), "phase_log.csv"), logs)
    write_lock(cfg, _out_dir(args.out))
    return 0


def cmd_group(args, cfg: RunConfig) -> int:
    cloud_path, segments = read_segments(args.segments)
    if not os.path.isabs(cloud_path):
        cloud_path = os.path.join(os.path.dirname(os.path.abspath(args.segments)), cloud_path)
    cloud = _load_cloud(cloud_path)
    if args.model:
        predictor = NetPredictor(load_model(args.model))
    elif args.predictor == "oracle":
        if cloud.labels is None:
            raise ConfigError("oracle predictor needs a labeled cloud")
        predictor = OraclePredictor(cloud)
    else:
        predictor = HeuristicPredictor()
    pairs = adjacent_pairs(build_grid(cloud, segments, cfg.grid_m)) if segments else set()
    trace = [] if args.trace else None
    proposals = run_grouping(cloud, segments, pairs, predictor, cfg.group, trace=trace)
    write_proposals(args.out, cloud_path, proposals)
    if args.trace:
        with open(args.trace, "w", encoding="utf-8") as fh:
            for record in trace:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
    write_lock(cfg, _out_dir(args.out))
    return 0


def cmd_eval(args, cfg: RunConfig) -> int:
    from .grouping import read_proposals

    _, proposals = read_proposals(args.proposals)
    cloud = _load_cloud(args.gt)
    if cloud.labels is None:
        raise ConfigError("evaluation needs a labeled ground-truth cloud")
    gts = ground_truth_objects(cloud, cfg.eval.min_object_points)
    if not gts:
        raise ConfigError("ground-truth cloud contains no objects of the minimum size")
    report = recall_curves(
        proposals,
        gts,
        iou_grid=cfg.eval.iou_grid,
        budget_grid=cfg.eval.budget_grid,
        fixed_iou=cfg.eval.fixed_iou,
        mode=cfg.eval.iou_mode,
        cloud=cloud,
    )
    os.makedirs(args.out, exist_ok=True)
    write_report_csvs(report, args.out, scene=os.path.basename(args.gt))
    write_lock(cfg, args.out)
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="regretgroup",
        description="Bottom-up 3D object proposals via plane over-segmentation and regret grouping.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config(p):
        p.add_argument(
            "--config",
            action="append",
            default=[],
            metavar="FILE|key=value",
            help="JSON config file or dotted-key override; repeatable, overrides win",
        )

    p = sub.add_parser("synth", help="generate a labeled synthetic dataset")
    p.add_argument("--scenes", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--adversarial", action="store_true", help="plant a contact trio per scene")
    add_config(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("overseg", help="over-segment a cloud into planar segments")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    add_config(p)
    p.set_defaults(func=cmd_overseg)

    p = sub.add_parser("train", help="curriculum-train the grouping predictor")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    add_config(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("group", help="run regret grouping over a segments file")
    p.add_argument("--segments", required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--model", help="model file for the learned predictor")
    src.add_argument("--predictor", choices=["oracle", "heuristic"])
    p.add_argument("--out", required=True)
    p.add_argument("--trace", help="write one JSON record per iteration to this path")
    add_config(p)
    p.set_defaults(func=cmd_group)

    p = sub.add_parser("eval", help="recall metrics of proposals against labels")
    p.add_argument("--proposals", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True)
    add_config(p)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
