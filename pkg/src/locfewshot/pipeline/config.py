"""Run configuration.

The config file is INI-style with a single ``[run]`` section of ``key = value``
lines; keys are the field names of :class:`RunConfig`. Tuples are written as
comma-separated numbers, ``none`` means unset. Example::

    [run]
    stage = eval
    localization_mode = oracle
    manifest = data/synth/manifest.json
    ways = 5
    shots = 5
    eval_episodes = 1000
    seed = 7
"""
from __future__ import annotations

import configparser
import dataclasses
import os
import types
import typing
from dataclasses import dataclass

from ..augment import AugmentPolicy
from ..episodic import EpisodeConfig

STAGES = ("train-rpn", "pretrain-cls", "train-fewshot", "finetune", "eval")
MODES = ("none", "support", "oracle", "propnet")
DATA_ROOT_ENV = "LOCFEWSHOT_DATA"


@dataclass
class RunConfig:
    stage: str = "eval"
    localization_mode: str = "oracle"
    seed: int = 0

    # data
    manifest: str | None = None
    split_policy: str = "60/20/20"
    split_seed: int = 0
    min_images: int | None = None
    min_area_fraction: float = 0.002
    eval_split: str = "test"

    # episodes
    ways: int = 5
    shots: int = 5
    queries_per_episode: int = 5
    train_queries_per_episode: int = 10
    rpn_shots: int = 5
    rpn_queries: int = 2

    # schedule (full-scale defaults; the synthetic budget overrides them)
    epochs: int = 100
    episodes_per_epoch: int = 500
    val_episodes: int = 100
    eval_episodes: int = 1000
    pretrain_epochs: int = 10
    pretrain_steps_per_epoch: int = 100
    pretrain_batch: int = 32
    finetune_epochs: int = 10

    # optimizer: SGD with momentum (or Adam) and step decay
    optimizer: str = "sgd"
    lr_pretrain: float = 1e-2
    lr_episodic: float = 1e-3
    lr_rpn: float = 1e-2
    lr_finetune: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 5e-4
    lr_step_epochs: int = 30
    lr_gamma: float = 0.1

    # models
    rpn_widths: tuple[int, ...] = (32, 64, 128)
    cls_widths: tuple[int, ...] = (32, 64, 128, 256)
    rpn_image_size: int | None = 128
    cls_image_size: int | None = 64
    proposal_threshold: float | None = None
    rpn_loss_resolution: str = "image"

    # augmentation
    augment: bool = True
    flip_prob: float = 0.5
    rotation_range: float = 15.0
    translation_range: float = 0.1
    scale_range: tuple[float, ...] = (0.8, 1.25)

    # checkpoints and outputs
    rpn_checkpoint: str | None = None
    cls_checkpoint: str | None = None
    out_checkpoint: str | None = None
    metrics_path: str | None = None

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"stage must be one of {STAGES}")
        if self.localization_mode not in MODES:
            raise ValueError(f"localization_mode must be one of {MODES}")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError("optimizer must be 'sgd' or 'adam'")
        if self.rpn_loss_resolution not in ("image", "feature"):
            raise ValueError("rpn_loss_resolution must be 'image' or 'feature'")

    def episode_config(self, queries: int | None = None, seed: int | None = None) -> EpisodeConfig:
        return EpisodeConfig(self.ways, self.shots, queries or self.queries_per_episode,
                             self.seed if seed is None else seed)

    def augment_policy(self, seed: int) -> AugmentPolicy | None:
        if not self.augment:
            return None
        return AugmentPolicy(self.flip_prob, self.rotation_range, self.translation_range,
                             tuple(self.scale_range), seed)

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)

    def resolve_path(self, path: str | None) -> str | None:
        if path is None or os.path.isabs(path):
            return path
        root = os.environ.get(DATA_ROOT_ENV)
        return os.path.join(root, path) if root else path


def _coerce(value: str, tp):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if value.strip().lower() in ("none", "") and type(None) in args:
        return None
    if origin in (typing.Union, types.UnionType):
        inner = [a for a in args if a is not type(None)][0]
        return _coerce(value, inner)
    if origin is tuple:
        inner = args[0]
        return tuple(inner(v.strip()) for v in value.split(",") if v.strip())
    if tp is bool:
        return value.strip().lower() in ("1", "true", "yes", "on")
    return tp(value.strip())


def load_config(path, **overrides) -> RunConfig:
    parser = configparser.ConfigParser()
    with open(path) as fh:
        parser.read_file(fh)
    if not parser.has_section("run"):
        raise ValueError(f"{path} has no [run] section")
    hints = typing.get_type_hints(RunConfig)
    values = {}
    for key, raw in parser.items("run"):
        if key not in hints:
            raise ValueError(f"unknown config key {key!r}")
        values[key] = _coerce(raw, hints[key])
    values.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**values)


def config_fields() -> list[str]:
    return [f.name for f in dataclasses.fields(RunConfig)]


__all__ = ["RunConfig", "load_config", "config_fields", "STAGES", "MODES", "DATA_ROOT_ENV"]
