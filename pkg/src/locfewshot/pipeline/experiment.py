"""End-to-end synthetic busy-scene experiment.

One corpus and one RPN are shared by all seeds. Per seed, three classifiers are
trained (no localization, support masks only, ground-truth masks on both
sides), evaluated on the held-out test classes, and the oracle model is then
fine-tuned on RPN proposals.

    python -m locfewshot.pipeline.experiment --out runs/synth --seeds 0 1 2
"""
from __future__ import annotations

import argparse
import copy
import json
import logging
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import torch

from ..checkpoint import save_checkpoint
from ..episodic import DatasetSplits, enforce_image_disjointness, make_class_splits, split_dataset
from ..ingestion import FewShotDataset, SceneSpec, compute_stats, filter_dataset, generate_corpus
from ..rpn import RegionProposalNetwork
from .config import RunConfig
from .evaluation import evaluate_split, rpn_quality
from .training import (REPORT_STREAM, MetricsLog, finetune_on_proposals, pretrain_classifier,
                       train_fewshot_classifier, train_rpn)

log = logging.getLogger(__name__)


@dataclass
class Budget:
    """Corpus size and training schedule of the synthetic experiment."""

    n_classes: int = 40
    scenes_per_class: int = 60
    corpus_seed: int = 0
    split_seed: int = 0
    rpn_epochs: int = 10
    rpn_episodes_per_epoch: int = 100
    pretrain_epochs: int = 4
    pretrain_steps_per_epoch: int = 100
    fewshot_epochs: int = 3
    fewshot_episodes_per_epoch: int = 100
    finetune_epochs: int = 2
    finetune_episodes_per_epoch: int = 100
    val_episodes: int = 100
    eval_episodes: int = 1000
    rpn_eval_episodes: int = 200
    report_episodes: int = 300


def build_splits(budget: Budget) -> tuple[DatasetSplits, dict]:
    corpus = generate_corpus(SceneSpec(n_classes=budget.n_classes), budget.scenes_per_class, seed=budget.corpus_seed)
    raw = filter_dataset(corpus.raw, min_images=None)
    dataset = FewShotDataset.from_raw(raw, corpus.images)
    train, val, test = make_class_splits(dataset.classes, "60/20/20", budget.split_seed)
    splits = enforce_image_disjointness(split_dataset(dataset, train, val, test))
    return splits, compute_stats(raw).to_dict()


def base_config(budget: Budget, seed: int, metrics_path=None) -> RunConfig:
    return RunConfig(
        stage="train-fewshot", seed=seed, split_seed=budget.split_seed,
        epochs=budget.fewshot_epochs, episodes_per_epoch=budget.fewshot_episodes_per_epoch,
        val_episodes=budget.val_episodes, eval_episodes=budget.eval_episodes,
        pretrain_epochs=budget.pretrain_epochs, pretrain_steps_per_epoch=budget.pretrain_steps_per_epoch,
        finetune_epochs=budget.finetune_epochs,
        lr_step_epochs=max(1, (2 * budget.fewshot_epochs) // 3),
        metrics_path=str(metrics_path) if metrics_path else None,
    )


def train_shared_rpn(budget: Budget, splits: DatasetSplits, metrics_path=None):
    cfg = base_config(budget, 0, metrics_path).replace(
        stage="train-rpn", epochs=budget.rpn_epochs, episodes_per_epoch=budget.rpn_episodes_per_epoch,
        lr_step_epochs=100)
    return train_rpn(cfg, splits.train, splits.val, splits.train.channel_stats())


def _state(module) -> dict:
    return {k: v.detach().clone() for k, v in module.state_dict().items()}


def run_seed(budget: Budget, splits: DatasetSplits, rpn_encoder, seed: int, out_dir=None) -> dict:
    out = Path(out_dir) if out_dir else None
    cfg = base_config(budget, seed, out / "metrics.jsonl" if out else None)
    stats = splits.train.channel_stats()
    t0 = time.time()

    enc3 = pretrain_classifier(cfg, splits.train, stats, 3, MetricsLog(cfg.metrics_path, "pretrain-cls", seed))
    enc4 = pretrain_classifier(cfg, splits.train, stats, 4, MetricsLog(cfg.metrics_path, "pretrain-cls", seed))
    models = {"none": enc3, "oracle": enc4, "support": copy.deepcopy(enc4)}
    reports = {}
    for mode in ("none", "oracle", "support"):
        metrics = MetricsLog(cfg.metrics_path, "train-fewshot", seed)
        models[mode], _ = train_fewshot_classifier(cfg, models[mode], splits.train, splits.val, mode, metrics)
        rep = evaluate_split(models[mode], splits.test, mode, budget.eval_episodes, cfg.episode_config(),
                             cfg.cls_image_size)
        reports[mode] = rep.to_dict()
        if out:
            save_checkpoint(out / f"cls_{mode}_seed{seed}.npz", {"cls": models[mode]}, {"mode": mode})

    # stage two: adapt the oracle model to proposals
    rpn = RegionProposalNetwork(rpn_encoder, cfg.proposal_threshold)
    report_cfg = cfg.episode_config(seed=seed + REPORT_STREAM)

    def propnet_val(model):
        return evaluate_split(model, splits.val, "propnet", budget.report_episodes, report_cfg, cfg.cls_image_size,
                              rpn=rpn, rpn_image_size=cfg.rpn_image_size).accuracy

    stage1 = models["oracle"]
    before = propnet_val(stage1)
    cls_before, rpn_before = _state(stage1), _state(rpn_encoder)
    ft_cfg = cfg.replace(stage="finetune", episodes_per_epoch=budget.finetune_episodes_per_epoch)
    tuned, _ = finetune_on_proposals(ft_cfg, rpn_encoder, copy.deepcopy(stage1), splits.train, splits.val,
                                     MetricsLog(cfg.metrics_path, "finetune", seed))
    after = propnet_val(tuned)
    final_prefix = "blocks.%d." % (len(tuned.blocks) - 1)
    cls_after, rpn_after = _state(tuned), _state(rpn_encoder)
    frozen_ok = all(torch.equal(cls_before[k], cls_after[k]) for k in cls_before if not k.startswith(final_prefix))
    final_changed = any(not torch.equal(cls_before[k], cls_after[k]) for k in cls_before if k.startswith(final_prefix))
    rpn_ok = all(torch.equal(rpn_before[k], rpn_after[k]) for k in rpn_before)
    propnet_test = evaluate_split(tuned, splits.test, "propnet", budget.report_episodes, cfg.episode_config(),
                                  cfg.cls_image_size, rpn=rpn, rpn_image_size=cfg.rpn_image_size).to_dict()
    if out:
        save_checkpoint(out / f"cls_finetuned_seed{seed}.npz", {"cls": tuned, "rpn": rpn_encoder}, {})
    return {
        "seed": seed,
        "accuracy": {m: r["accuracy"] for m, r in reports.items()},
        "reports": reports,
        "propnet_val_before": before,
        "propnet_val_after": after,
        "propnet_test": propnet_test,
        "frozen_bit_identical": frozen_ok,
        "final_block_updated": final_changed,
        "rpn_bit_identical": rpn_ok,
        "seconds": time.time() - t0,
    }


def run_experiment(budget: Budget | None = None, seeds=(0, 1, 2), out_dir=None) -> dict:
    budget = budget or Budget()
    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    splits, stats = build_splits(budget)
    rpn_encoder, rpn_info = train_shared_rpn(budget, splits, out / "metrics.jsonl" if out else None)
    thr = rpn_info["iou_threshold"]
    rpn_test = rpn_quality(RegionProposalNetwork(rpn_encoder), splits.test, budget.rpn_eval_episodes, 5,
                           seed=REPORT_STREAM, image_size=128, threshold=thr)
    if out:
        save_checkpoint(out / "rpn.npz", {"rpn": rpn_encoder}, rpn_info)
    results = {"budget": asdict(budget), "corpus_stats": stats, "rpn_val": rpn_info, "rpn_test": rpn_test,
               "seeds": [run_seed(budget, splits, rpn_encoder, s, out) for s in seeds]}
    if out:
        (out / "results.json").write_text(json.dumps(results, indent=2))
    return results


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--eval-episodes", type=int, default=Budget.eval_episodes)
    args = p.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    res = run_experiment(Budget(eval_episodes=args.eval_episodes), args.seeds, args.out)
    for r in res["seeds"]:
        print(json.dumps({"seed": r["seed"], **r["accuracy"]}))


if __name__ == "__main__":
    main()
