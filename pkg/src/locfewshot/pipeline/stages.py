"""Config-driven stage runner: one call per training or evaluation stage."""
from __future__ import annotations

import logging
from functools import lru_cache

from ..checkpoint import load_checkpoint, save_checkpoint
from ..encoder import EmbeddingEncoder
from ..episodic import DatasetSplits, enforce_image_disjointness, make_class_splits, split_dataset
from ..ingestion import FewShotDataset, filter_dataset, load_annotations
from ..rpn import RegionProposalNetwork
from .config import RunConfig
from .evaluation import evaluate_split
from .training import (MetricsLog, finetune_on_proposals, pretrain_classifier, train_fewshot_classifier,
                       train_rpn)

log = logging.getLogger(__name__)


@lru_cache(maxsize=4)
def _splits(manifest: str, min_images, min_area_fraction: float, policy: str, split_seed: int) -> DatasetSplits:
    raw = filter_dataset(load_annotations(manifest), min_images, min_area_fraction)
    dataset = FewShotDataset.from_raw(raw)
    train, val, test = make_class_splits(dataset.classes, policy, split_seed)
    return enforce_image_disjointness(split_dataset(dataset, train, val, test))


def load_splits(cfg: RunConfig) -> DatasetSplits:
    if cfg.manifest is None:
        raise ValueError("config needs a manifest")
    return _splits(cfg.resolve_path(cfg.manifest), cfg.min_images, cfg.min_area_fraction, cfg.split_policy,
                   cfg.split_seed)


def _require(path, what):
    if path is None:
        raise ValueError(f"this stage needs {what}")
    return path


def _load(path, name):
    modules, extra = load_checkpoint(path)
    if name not in modules:
        raise ValueError(f"{path} holds {sorted(modules)}, not {name!r}")
    return modules[name], extra


def run_stage(cfg: RunConfig, splits: DatasetSplits | None = None) -> dict:
    """Run ``cfg.stage``; returns a JSON-ready summary (the report for ``eval``)."""
    splits = splits or load_splits(cfg)
    metrics = MetricsLog(cfg.metrics_path, cfg.stage, cfg.seed)
    stats = splits.train.channel_stats()
    out = cfg.out_checkpoint

    if cfg.stage == "train-rpn":
        encoder, info = train_rpn(cfg, splits.train, splits.val, stats, metrics)
        if out:
            save_checkpoint(out, {"rpn": encoder}, info)
        return info

    if cfg.stage == "pretrain-cls":
        channels = 3 if cfg.localization_mode == "none" else 4
        encoder = pretrain_classifier(cfg, splits.train, stats, channels, metrics)
        if out:
            save_checkpoint(out, {"cls": encoder}, {"channels": channels})
        return {"channels": channels}

    if cfg.stage == "train-fewshot":
        mode = cfg.localization_mode
        if cfg.cls_checkpoint:
            encoder, _ = _load(cfg.resolve_path(cfg.cls_checkpoint), "cls")
            if mode != "none" and encoder.input_channels == 3:
                encoder = EmbeddingEncoder.four_channel_from(encoder)
        else:
            encoder = pretrain_classifier(cfg, splits.train, stats, 3 if mode == "none" else 4, metrics)
        encoder, info = train_fewshot_classifier(cfg, encoder, splits.train, splits.val, mode, metrics)
        if out:
            save_checkpoint(out, {"cls": encoder}, {**info, "mode": mode})
        return info

    if cfg.stage == "finetune":
        rpn_enc, _ = _load(cfg.resolve_path(_require(cfg.rpn_checkpoint, "rpn_checkpoint")), "rpn")
        cls_enc, _ = _load(cfg.resolve_path(_require(cfg.cls_checkpoint, "cls_checkpoint")), "cls")
        cls_enc, info = finetune_on_proposals(cfg, rpn_enc, cls_enc, splits.train, splits.val, metrics)
        if out:
            save_checkpoint(out, {"cls": cls_enc, "rpn": rpn_enc}, info)
        return info

    # eval
    cls_enc, _ = _load(cfg.resolve_path(_require(cfg.cls_checkpoint, "cls_checkpoint")), "cls")
    rpn = None
    if cfg.localization_mode == "propnet":
        rpn_enc, _ = _load(cfg.resolve_path(_require(cfg.rpn_checkpoint, "rpn_checkpoint")), "rpn")
        rpn = RegionProposalNetwork(rpn_enc, cfg.proposal_threshold)
    split = dict(splits.items())[cfg.eval_split]
    report = evaluate_split(cls_enc, split, cfg.localization_mode, cfg.eval_episodes, cfg.episode_config(),
                            cfg.cls_image_size, rpn=rpn, rpn_image_size=cfg.rpn_image_size)
    return report.to_dict()
