"""Run configuration: defaults, JSON files, dotted-key overrides, validation.

A config source is either a JSON file or a "dotted.key=value" override;
overrides win over files, later sources over earlier ones. Unknown keys are
rejected. The merged raw dictionary is kept so commands can echo it as
config.lock.json next to their outputs.
"""

from __future__ import annotations

import copy
import json
import os
from dataclasses import dataclass

from .evaluation import DEFAULT_BUDGET_GRID, DEFAULT_IOU_GRID
from .grouping import GroupingConfig
from .oversegment import RansacConfig
from .synthgen import SceneSpec
from .training import TrainConfig

__all__ = ["ConfigError", "RunConfig", "EvalConfig", "load_config", "write_lock", "DEFAULTS"]


class ConfigError(Exception):
    """Invalid configuration or command usage; maps to exit code 2."""


DEFAULTS: dict = {
    "ransac": {
        "epsilon": 0.01,
        "iterations": 500,
        "min_inliers": 30,
        "max_planes": 64,
        "background_fraction": 0.25,
        "seed": 0,
        "connect_radius": 0.02,
    },
    "grid": {"m": 64},
    "sample": {"n": 256},
    "model": {"encoder_widths": [32, 64, 128], "mlp_widths": [128, 64, 32], "seed": 0},
    "train": {
        "epochs": 1000,
        "batch_size": 32,
        "lr": 0.001,
        "weight_decay": 1e-4,
        "t_l": 0.001,
        "k": 3,
        "seed": 0,
        "max_phases": 64,
    },
    "group": {"t": 0.75, "u": 0.5, "k": 3, "regret_enabled": True},
    "eval": {
        "iou_mode": "point",
        "iou_grid": list(DEFAULT_IOU_GRID),
        "fixed_iou": 0.5,
        "min_object_points": 20,
        "budget_grid": list(DEFAULT_BUDGET_GRID),
    },
    "synth": {
        "table_extent": 1.2,
        "n_objects": [3, 8],
        "shape_weights": {"box": 0.6, "lshape": 0.4, "cylinder": 0.0},
        "gap_range": [0.025, 0.4],
        "view_dir": None,
        "density": 25000.0,
        "table_density": 4000.0,
        "size_range": [0.05, 0.13],
        "clearance_range": [0.03, 0.08],
        "plane_margin": 0.022,
    },
}


@dataclass(frozen=True)
class EvalConfig:
    iou_mode: str = "point"
    iou_grid: tuple[float, ...] = DEFAULT_IOU_GRID
    fixed_iou: float = 0.5
    min_object_points: int = 20
    budget_grid: tuple[int, ...] = DEFAULT_BUDGET_GRID

    def __post_init__(self):
        if self.iou_mode not in ("point", "box"):
            raise ValueError("eval.iou_mode must be 'point' or 'box'")
        if not 0 <= self.fixed_iou <= 1:
            raise ValueError("eval.fixed_iou must lie in [0, 1]")
        if self.min_object_points < 1:
            raise ValueError("eval.min_object_points must be positive")
        for name, grid in (("iou_grid", self.iou_grid), ("budget_grid", self.budget_grid)):
            if not grid or list(grid) != sorted(grid):
                raise ValueError(f"eval.{name} must be non-empty and sorted")


@dataclass(frozen=True)
class RunConfig:
    ransac: RansacConfig
    grid_m: int
    sample_n: int
    model_encoder_widths: tuple[int, ...]
    model_mlp_widths: tuple[int, ...]
    model_seed: int
    train: TrainConfig
    group: GroupingConfig
    eval: EvalConfig
    synth: SceneSpec
    raw: dict


def _merge(dst: dict, src: dict, prefix: str = "") -> None:
    for key, value in src.items():
        if key not in dst:
            raise ConfigError(f"unknown config key: {prefix}{key}")
        if isinstance(dst[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {prefix}{key} expects a nested object")
            _merge(dst[key], value, prefix + key + ".")
        else:
            dst[key] = value


def _set_dotted(dst: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    node = dst
    for part in parts[:-1]:
        if part not in node or not isinstance(node[part], dict):
            raise ConfigError(f"unknown config key: {dotted}")
        node = node[part]
    leaf = parts[-1]
    if leaf not in node or isinstance(node[leaf], dict):
        raise ConfigError(f"unknown config key: {dotted}")
    node[leaf] = value


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_config(sources: list[str] | None = None) -> RunConfig:
    """Merge defaults, JSON files, then dotted overrides; build typed configs."""
    raw = copy.deepcopy(DEFAULTS)
    files: list[str] = []
    overrides: list[tuple[str, object]] = []
    for src in sources or []:
        if "=" in src:
            key, _, value = src.partition("=")
            overrides.append((key.strip(), _parse_value(value.strip())))
        else:
            files.append(src)
    for path in files:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        with open(path, "r", encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: config root must be an object")
        _merge(raw, doc)
    for key, value in overrides:
        _set_dotted(raw, key, value)

    try:
        synth = raw["synth"]
        spec = SceneSpec(
            table_extent=float(synth["table_extent"]),
            n_objects=tuple(int(v) for v in synth["n_objects"]),
            shape_weights=tuple((k, float(w)) for k, w in sorted(synth["shape_weights"].items()) if w > 0),
            gap_range=tuple(float(v) for v in synth["gap_range"]),
            view_dir=None if synth["view_dir"] is None else tuple(float(v) for v in synth["view_dir"]),
            density=float(synth["density"]),
            table_density=float(synth["table_density"]),
            size_range=tuple(float(v) for v in synth["size_range"]),
            clearance_range=tuple(float(v) for v in synth["clearance_range"]),
            plane_margin=None if synth["plane_margin"] is None else float(synth["plane_margin"]),
        )
        cfg = RunConfig(
            ransac=RansacConfig(**raw["ransac"]),
            grid_m=int(raw["grid"]["m"]),
            sample_n=int(raw["sample"]["n"]),
            model_encoder_widths=tuple(int(v) for v in raw["model"]["encoder_widths"]),
            model_mlp_widths=tuple(int(v) for v in raw["model"]["mlp_widths"]),
            model_seed=int(raw["model"]["seed"]),
            train=TrainConfig(**raw["train"]),
            group=GroupingConfig(**raw["group"]),
            eval=EvalConfig(
                iou_mode=raw["eval"]["iou_mode"],
                iou_grid=tuple(raw["eval"]["iou_grid"]),
                fixed_iou=float(raw["eval"]["fixed_iou"]),
                min_object_points=int(raw["eval"]["min_object_points"]),
                budget_grid=tuple(raw["eval"]["budget_grid"]),
            ),
            synth=spec,
            raw=raw,
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None
    if cfg.grid_m < 1:
        raise ConfigError("grid.m must be positive")
    if cfg.sample_n < 1:
        raise ConfigError("sample.n must be positive")
    if not cfg.model_encoder_widths or any(w < 1 for w in cfg.model_encoder_widths):
        raise ConfigError("model.encoder_widths must be positive")
    if any(w < 1 for w in cfg.model_mlp_widths):
        raise ConfigError("model.mlp_widths must be positive")
    return cfg


def write_lock(cfg: RunConfig, out_dir) -> None:
    """Echo the effective configuration as config.lock.json in out_dir."""
    os.makedirs(out_dir or ".", exist_ok=True)
    with open(os.path.join(out_dir or ".", "config.lock.json"), "w", encoding="utf-8") as fh:
        json.dump(cfg.raw, fh, sort_keys=True, indent=2)
        fh.write("\n")
