"""Training stages.

Stage one trains the RPN (1-way segmentation episodes, Lovász loss) and,
independently, the early-fusion classifier: standard softmax pretraining,
then episodic ProtoNet training. Stage two fine-tunes the classifier's final
block on RPN proposals with everything else frozen.
"""
from __future__ import annotations

import copy
import json
import logging
import time

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..encoder import EmbeddingEncoder, FeatureMapEncoder
from ..episodic import EpisodeConfig, episode_rng, sample_episode
from ..ingestion.dataset import FewShotDataset
from ..lovasz import lovasz_loss
from ..protonet import class_centroids, classify_query, nll_loss
from ..rpn import RegionProposalNetwork, downsample_mask
from .config import RunConfig
from .data import SampleLoader
from .evaluation import IOU_THRESHOLDS, evaluate_split, rpn_quality

log = logging.getLogger(__name__)

# offsets keep the episode streams of different purposes apart
VAL_STREAM = 10_000
PRETRAIN_STREAM = 20_000
REPORT_STREAM = 30_000


class TrainingDivergedError(RuntimeError):
    pass


class MetricsLog:
    """Line-delimited JSON metrics: ``{stage, epoch, split, loss, accuracy|iou, seed}``."""

    def __init__(self, path=None, stage: str = "", seed: int = 0):
        self.path = path
        self.stage = stage
        self.seed = seed
        self.records: list[dict] = []

    def write(self, **record):
        rec = {"stage": self.stage, "seed": self.seed, **record}
        self.records.append(rec)
        line = json.dumps(rec)
        log.info(line)
        if self.path:
            with open(self.path, "a") as fh:
                fh.write(line + "\n")


def _optimizer(params, lr: float, cfg: RunConfig):
    if cfg.optimizer == "adam":
        opt = torch.optim.Adam(params, lr=lr, weight_decay=cfg.weight_decay)
    else:
        opt = torch.optim.SGD(params, lr=lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    sched = torch.optim.lr_scheduler.StepLR(opt, step_size=max(cfg.lr_step_epochs, 1), gamma=cfg.lr_gamma)
    return opt, sched


def _check_finite(loss, stage, epoch, step, opt):
    if not torch.isfinite(loss):
        lr = opt.param_groups[0]["lr"]
        raise TrainingDivergedError(f"{stage}: non-finite loss {loss.item()} at epoch {epoch}, step {step}, lr {lr}")


def _episode_cls_config(cfg: RunConfig, queries: int, seed: int) -> EpisodeConfig:
    return EpisodeConfig(cfg.ways, cfg.shots, queries, seed)


def train_rpn(cfg: RunConfig, train: FewShotDataset, val: FewShotDataset, stats, metrics: MetricsLog | None = None):
    """1-way n-shot segmentation training; returns the best-validation-IoU encoder.

    Validation IoU is measured over a grid of binarization thresholds; the
    threshold that maximizes it is returned as ``info["iou_threshold"]``.
    """
    metrics = metrics or MetricsLog(cfg.metrics_path, "train-rpn", cfg.seed)
    torch.manual_seed(cfg.seed)
    encoder = FeatureMapEncoder(cfg.rpn_widths, *stats)
    rpn = RegionProposalNetwork(encoder)
    loader = SampleLoader(train, cfg.rpn_image_size, cfg.augment_policy(cfg.seed))
    ep_cfg = EpisodeConfig(1, cfg.rpn_shots, cfg.rpn_queries, cfg.seed)
    opt, sched = _optimizer(rpn.parameters(), cfg.lr_rpn, cfg)
    best_iou, best_thr, best_state = -1.0, 0.5, None
    for epoch in range(cfg.epochs):
        rpn.train()
        losses, t0 = [], time.time()
        for step in range(cfg.episodes_per_epoch):
            idx = epoch * cfg.episodes_per_epoch + step
            ep = sample_episode(train, ep_cfg, idx)
            si, sm = loader.batch(ep.support_samples(), "gt", idx)
            qi, qm = loader.batch([q for q, _ in ep.queries], "gt", idx, draw_offset=500)
            if (sm.flatten(1).sum(1) <= 0).any():
                continue
            p = rpn(si, sm, qi)
            labels = (qm >= 0.5).to(p.dtype)
            if cfg.rpn_loss_resolution == "feature":
                p = F.avg_pool2d(p.unsqueeze(1), rpn.factor).squeeze(1)
                labels = (downsample_mask(qm, rpn.factor) >= 0.5).to(p.dtype)
            loss = lovasz_loss(p, labels, empty="mean")
            _check_finite(loss, "train-rpn", epoch, step, opt)
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
        sched.step()
        q = rpn_quality(rpn, val, cfg.val_episodes, cfg.rpn_shots, cfg.seed + VAL_STREAM, cfg.rpn_image_size,
                        thresholds=IOU_THRESHOLDS)
        metrics.write(epoch=epoch, split="train", loss=float(np.mean(losses)), seconds=time.time() - t0)
        metrics.write(epoch=epoch, split="val", iou=q["best_iou"], iou_threshold=q["best_threshold"],
                      iou_at_half=q["iou"], fg_over_bg=q["fg_over_bg"])
        if q["best_iou"] > best_iou:
            best_iou, best_thr = q["best_iou"], q["best_threshold"]
            best_state = copy.deepcopy(encoder.state_dict())
    if best_state is not None:
        encoder.load_state_dict(best_state)
    encoder.eval()
    return encoder, {"val_iou": best_iou, "iou_threshold": best_thr}


def pretrain_classifier(cfg: RunConfig, train: FewShotDataset, stats, channels: int = 4,
                        metrics: MetricsLog | None = None) -> EmbeddingEncoder:
    """Standard softmax classification over the training classes (class-balanced batches)."""
    metrics = metrics or MetricsLog(cfg.metrics_path, "pretrain-cls", cfg.seed)
    torch.manual_seed(cfg.seed + channels)
    encoder = EmbeddingEncoder(channels, cfg.cls_widths, *stats)
    classes = train.classes
    label_of = {c: i for i, c in enumerate(classes)}
    head = nn.Linear(encoder.embedding_dim, len(classes))
    model = nn.ModuleDict({"encoder": encoder, "head": head})
    loader = SampleLoader(train, cfg.cls_image_size, cfg.augment_policy(cfg.seed + PRETRAIN_STREAM))
    opt, sched = _optimizer(model.parameters(), cfg.lr_pretrain, cfg)
    kind = "gt" if channels == 4 else "none"
    for epoch in range(cfg.pretrain_epochs):
        model.train()
        losses, correct, seen = [], 0, 0
        for step in range(cfg.pretrain_steps_per_epoch):
            idx = epoch * cfg.pretrain_steps_per_epoch + step
            rng = episode_rng(cfg.seed + PRETRAIN_STREAM, idx)
            picked = rng.choice(classes, size=cfg.pretrain_batch)
            samples = [train.samples[int(rng.choice(train.by_class[int(c)]))] for c in picked]
            labels = torch.tensor([label_of[s.class_id] for s in samples])
            imgs, masks = loader.batch(samples, kind, idx)
            logits = head(encoder(imgs, masks if channels == 4 else None))
            loss = F.cross_entropy(logits, labels)
            _check_finite(loss, "pretrain-cls", epoch, step, opt)
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
            correct += int((logits.argmax(1) == labels).sum())
            seen += len(labels)
        sched.step()
        metrics.write(epoch=epoch, split="train", loss=float(np.mean(losses)), accuracy=correct / seen,
                      channels=channels)
    encoder.eval()
    return encoder


def fewshot_episode_loss(encoder: EmbeddingEncoder, loader: SampleLoader, episode, mode: str,
                         draw_base: int | None = None) -> torch.Tensor:
    """ProtoNet NLL of one episode under ``mode`` (none / support / oracle)."""
    q_kind = {"none": "none", "support": "ones", "oracle": "gt"}[mode]
    s_kind = "none" if mode == "none" else "gt"
    si, sm = loader.batch(episode.support_samples(), s_kind, draw_base)
    qi, qm = loader.batch([q for q, _ in episode.queries], q_kind, draw_base, draw_offset=500)
    masks = None if mode == "none" else torch.cat([sm, qm])
    emb = encoder(torch.cat([si, qi]), masks)
    n_sup = episode.ways * episode.shots
    centroids = class_centroids(emb[:n_sup].view(episode.ways, episode.shots, -1))
    labels = torch.tensor([k for _, k in episode.queries])
    return nll_loss(classify_query(emb[n_sup:], centroids), labels)


def train_fewshot_classifier(cfg: RunConfig, encoder: EmbeddingEncoder, train: FewShotDataset,
                             val: FewShotDataset, mode: str, metrics: MetricsLog | None = None):
    """Episodic ProtoNet training; returns the best-validation-accuracy encoder."""
    if mode not in ("none", "support", "oracle"):
        raise ValueError(f"episodic training mode must be none/support/oracle, got {mode!r}")
    metrics = metrics or MetricsLog(cfg.metrics_path, "train-fewshot", cfg.seed)
    torch.manual_seed(cfg.seed)
    loader = SampleLoader(train, cfg.cls_image_size, cfg.augment_policy(cfg.seed))
    ep_cfg = _episode_cls_config(cfg, cfg.train_queries_per_episode, cfg.seed)
    val_cfg = _episode_cls_config(cfg, cfg.queries_per_episode, cfg.seed + VAL_STREAM)
    opt, sched = _optimizer(encoder.parameters(), cfg.lr_episodic, cfg)
    best_acc, best_state = -1.0, None
    for epoch in range(cfg.epochs):
        encoder.train()
        losses, t0 = [], time.time()
        for step in range(cfg.episodes_per_epoch):
            idx = epoch * cfg.episodes_per_epoch + step
            loss = fewshot_episode_loss(encoder, loader, sample_episode(train, ep_cfg, idx), mode, idx)
            _check_finite(loss, "train-fewshot", epoch, step, opt)
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
        sched.step()
        rep = evaluate_split(encoder, val, mode, cfg.val_episodes, val_cfg, cfg.cls_image_size)
        metrics.write(epoch=epoch, split="train", loss=float(np.mean(losses)), mode=mode, seconds=time.time() - t0)
        metrics.write(epoch=epoch, split="val", accuracy=rep.accuracy, mode=mode)
        if rep.accuracy > best_acc:
            best_acc, best_state = rep.accuracy, copy.deepcopy(encoder.state_dict())
    if best_state is not None:
        encoder.load_state_dict(best_state)
    encoder.eval()
    return encoder, {"val_accuracy": best_acc}


def _area(x: torch.Tensor, size: int | None) -> torch.Tensor:
    if size is None or x.shape[-1] == size:
        return x
    lead = x.shape[:-2]
    y = F.interpolate(x.reshape(-1, 1, *x.shape[-2:]), size=(size, size), mode="area")
    return y.reshape(*lead, size, size)


def propnet_episode_loss(cls_encoder: EmbeddingEncoder, rpn: RegionProposalNetwork, loader: SampleLoader,
                         episode, cls_size: int | None, draw_base: int | None = None) -> torch.Tensor:
    """NLL with ground-truth support masks and per-class RPN query proposals."""
    si, sm = loader.batch(episode.support_samples(), "gt", draw_base)
    qi, _ = loader.batch([q for q, _ in episode.queries], "none", draw_base, draw_offset=500)
    with torch.no_grad():
        props = rpn.episode_proposals(si, sm, qi, episode.ways, episode.shots)
    c, n, nq = episode.ways, episode.shots, len(episode.queries)
    si_c, qi_c, sm_c, props_c = (_area(t, cls_size) for t in (si, qi, sm, props))
    q_rep = qi_c.unsqueeze(1).expand(nq, c, *qi_c.shape[1:]).reshape(nq * c, *qi_c.shape[1:])
    emb = cls_encoder(torch.cat([si_c, q_rep]), torch.cat([sm_c, props_c.reshape(nq * c, *props_c.shape[-2:])]))
    centroids = class_centroids(emb[: c * n].view(c, n, -1))
    q_emb = emb[c * n:].view(nq, c, -1)
    labels = torch.tensor([k for _, k in episode.queries])
    return nll_loss(classify_query(q_emb, centroids, per_class=True), labels)


def freeze_for_finetune(cls_encoder: EmbeddingEncoder, rpn_encoder: FeatureMapEncoder):
    for p in rpn_encoder.parameters():
        p.requires_grad_(False)
    for p in cls_encoder.parameters():
        p.requires_grad_(False)
    trainable = list(cls_encoder.final_layers().parameters())
    for p in trainable:
        p.requires_grad_(True)
    return trainable


def finetune_on_proposals(cfg: RunConfig, rpn_encoder: FeatureMapEncoder, cls_encoder: EmbeddingEncoder,
                          train: FewShotDataset, val: FewShotDataset, metrics: MetricsLog | None = None):
    """Adapt the classifier's final block to RPN proposals; the RPN and earlier blocks stay frozen.

    The returned encoder is the best fine-tuned epoch on the validation stream;
    the un-fine-tuned starting point is not a candidate.
    """
    metrics = metrics or MetricsLog(cfg.metrics_path, "finetune", cfg.seed)
    torch.manual_seed(cfg.seed)
    trainable = freeze_for_finetune(cls_encoder, rpn_encoder)
    rpn = RegionProposalNetwork(rpn_encoder, cfg.proposal_threshold).eval()
    loader = SampleLoader(train, cfg.rpn_image_size, cfg.augment_policy(cfg.seed))
    ep_cfg = _episode_cls_config(cfg, cfg.train_queries_per_episode, cfg.seed)
    val_cfg = _episode_cls_config(cfg, cfg.queries_per_episode, cfg.seed + VAL_STREAM)
    opt, sched = _optimizer(trainable, cfg.lr_finetune, cfg)
    best_acc, best_state = -1.0, None
    for epoch in range(cfg.finetune_epochs):
        cls_encoder.train()
        losses, t0 = [], time.time()
        for step in range(cfg.episodes_per_epoch):
            idx = epoch * cfg.episodes_per_epoch + step
            ep = sample_episode(train, ep_cfg, idx)
            loss = propnet_episode_loss(cls_encoder, rpn, loader, ep, cfg.cls_image_size, idx)
            _check_finite(loss, "finetune", epoch, step, opt)
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
        sched.step()
        rep = evaluate_split(cls_encoder, val, "propnet", cfg.val_episodes, val_cfg, cfg.cls_image_size,
                             rpn=rpn, rpn_image_size=cfg.rpn_image_size)
        metrics.write(epoch=epoch, split="train", loss=float(np.mean(losses)), seconds=time.time() - t0)
        metrics.write(epoch=epoch, split="val", accuracy=rep.accuracy, mode="propnet")
        if rep.accuracy > best_acc:
            best_acc, best_state = rep.accuracy, copy.deepcopy(cls_encoder.state_dict())
    if best_state is not None:
        cls_encoder.load_state_dict(best_state)
    cls_encoder.eval()
    return cls_encoder, {"val_accuracy": best_acc}
