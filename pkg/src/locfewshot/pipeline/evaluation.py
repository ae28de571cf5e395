"""Episodic evaluation under the four localization modes.

``none``     3-channel encoder, no masks.
``support``  ground-truth support masks, all-ones query masks.
``oracle``   ground-truth masks on support and query.
``propnet``  ground-truth support masks; each query is embedded once per
             episode class with that class's region proposal as its mask and
             scored against that class's centroid only.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from ..episodic import Episode, EpisodeConfig, sample_episode
from ..ingestion.dataset import FewShotDataset
from ..protonet import class_centroids, classify_query
from ..rpn import RegionProposalNetwork
from .data import SampleLoader

QUERY_MASK = {"none": "none", "support": "ones", "oracle": "gt", "propnet": "gt"}


def confidence_half_width(accuracy: float, n: int) -> float:
    """Normal-approximation 95% half-width ``1.96 sqrt(p (1 - p) / n)``."""
    return 1.96 * math.sqrt(accuracy * (1.0 - accuracy) / n) if n else float("nan")


@dataclass
class EvalReport:
    mode: str
    accuracy: float
    episodes: int
    queries_per_episode: int
    correct: int
    total: int
    half_width: float
    per_seed: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def combine(cls, reports: dict) -> "EvalReport":
        """Pool several single-seed reports keyed by seed."""
        first = next(iter(reports.values()))
        correct = sum(r.correct for r in reports.values())
        total = sum(r.total for r in reports.values())
        acc = correct / total
        return cls(first.mode, acc, sum(r.episodes for r in reports.values()), first.queries_per_episode,
                   correct, total, confidence_half_width(acc, total),
                   {int(s): r.accuracy for s, r in reports.items()})


class EmbeddingCache:
    """Memoized encoder outputs keyed by image id and the exact mask bytes.

    Every input is encoded on its own (batch size 1): batched CPU convolutions
    are not bitwise batch-invariant, so this keeps each embedding a pure
    function of its image and mask.
    """

    def __init__(self, encoder, loader: SampleLoader):
        self.encoder = encoder
        self.loader = loader
        self.store: dict = {}

    @staticmethod
    def _key(image_id, mask):
        if mask is None:
            return (image_id, None)
        arr = np.ascontiguousarray(mask, dtype=np.float32)
        return (image_id, hashlib.blake2b(arr.tobytes(), digest_size=16).digest())

    @torch.no_grad()
    def _encode(self, image_id, mask) -> torch.Tensor:
        img = torch.tensor(self.loader.image(image_id)).permute(2, 0, 1).unsqueeze(0).contiguous()
        m = None
        if self.encoder.input_channels == 4:
            m = torch.from_numpy(np.asarray(mask, dtype=np.float32)).unsqueeze(0)
        return self.encoder(img, m)[0]

    def embed(self, items, persist: bool = True) -> torch.Tensor:
        """``items`` is a list of ``(image_id, mask or None)``; returns ``B x d``."""
        out, local = [], {}
        for image_id, mask in items:
            key = self._key(image_id, mask)
            emb = self.store.get(key)
            if emb is None:
                emb = local.get(key)
            if emb is None:
                emb = self._encode(image_id, mask)
                (self.store if persist else local)[key] = emb
            out.append(emb)
        return torch.stack(out)


class ProposalSource:
    """Per-class RPN proposals for an episode's queries at classifier resolution."""

    def __init__(self, rpn: RegionProposalNetwork, loader: SampleLoader, out_size: int | None):
        self.rpn = rpn.eval()
        self.loader = loader
        self.out_size = out_size

    @torch.no_grad()
    def __call__(self, episode: Episode) -> np.ndarray:
        """Array ``Q x c x s x s``: proposal for query q conditioned on class k."""
        si, sm = self.loader.batch(episode.support_samples(), "gt")
        qi, _ = self.loader.batch([q for q, _ in episode.queries], "none")
        p = self.rpn.episode_proposals(si, sm, qi, episode.ways, episode.shots)
        size = tuple(qi.shape[-2:])
        if self.out_size is not None and self.out_size != size[0]:
            p = F.interpolate(p, size=(self.out_size, self.out_size), mode="area")
        return p.numpy()


def _mask_for(loader: SampleLoader, sample, kind):
    if kind == "none":
        return None
    if kind == "ones":
        shape = (loader.image_size,) * 2 if loader.image_size else sample.shape
        return np.ones(shape, dtype=np.float32)
    return loader.mask(sample)


@torch.no_grad()
def episode_predictions(cache: EmbeddingCache, episode: Episode, mode: str, proposals=None,
                        query_mask_override=None) -> tuple[np.ndarray, np.ndarray]:
    """Predicted and true class indices for every query of ``episode``."""
    loader = cache.loader
    s_kind = "none" if mode == "none" else "gt"
    sup = episode.support_samples()
    s_emb = cache.embed([(s.image_id, _mask_for(loader, s, s_kind)) for s in sup])
    centroids = class_centroids(s_emb.view(episode.ways, episode.shots, -1))
    truth = np.array([k for _, k in episode.queries])
    if mode != "propnet":
        q_kind = QUERY_MASK[mode]
        q_emb = cache.embed([(q.image_id, _mask_for(loader, q, q_kind)) for q, _ in episode.queries])
        scores = classify_query(q_emb, centroids)
    else:
        items = []
        for qi, (q, _) in enumerate(episode.queries):
            for k in range(episode.ways):
                if query_mask_override is not None:
                    m = query_mask_override(q, k)
                else:
                    m = proposals[qi, k]
                items.append((q.image_id, m))
        q_emb = cache.embed(items, persist=False).view(len(episode.queries), episode.ways, -1)
        scores = classify_query(q_emb, centroids, per_class=True)
    return scores.predicted.numpy(), truth


def evaluate_split(encoder, split: FewShotDataset, mode: str, episodes: int, episode_config: EpisodeConfig,
                   image_size: int | None = None, rpn: RegionProposalNetwork | None = None,
                   rpn_image_size: int | None = None, query_mask_override=None) -> EvalReport:
    """Accuracy over ``episodes`` episodes of the stream ``episode_config.seed``."""
    if mode not in QUERY_MASK:
        raise ValueError(f"unknown mode {mode!r}")
    want = 3 if mode == "none" else 4
    if encoder.input_channels != want:
        raise ValueError(f"mode {mode!r} needs a {want}-channel encoder")
    if mode == "propnet" and rpn is None and query_mask_override is None:
        raise ValueError("propnet mode needs an RPN checkpoint")
    encoder.eval()
    loader = SampleLoader(split, image_size)
    cache = EmbeddingCache(encoder, loader)
    source = None
    if mode == "propnet" and query_mask_override is None:
        source = ProposalSource(rpn, SampleLoader(split, rpn_image_size), image_size)
    correct = total = 0
    for e in range(episodes):
        ep = sample_episode(split, episode_config, e)
        proposals = source(ep) if source is not None else None
        pred, truth = episode_predictions(cache, ep, mode, proposals, query_mask_override)
        correct += int((pred == truth).sum())
        total += len(truth)
    acc = correct / total
    return EvalReport(mode, acc, episodes, episode_config.queries_per_episode, correct, total,
                      confidence_half_width(acc, total), {episode_config.seed: acc})


IOU_THRESHOLDS = tuple(round(0.4 + 0.025 * i, 3) for i in range(23))


@torch.no_grad()
def rpn_quality(rpn: RegionProposalNetwork, split: FewShotDataset, episodes: int, shots: int, seed: int,
                image_size: int | None = None, threshold: float = 0.5, thresholds=None) -> dict:
    """1-way episodes: mean IoU of proposals binarized at ``threshold`` and the
    fraction of episodes whose mean proposal on foreground exceeds that on background.

    With ``thresholds`` the mean IoU at each of them is reported as well, along
    with the best one.
    """
    rpn.eval()
    loader = SampleLoader(split, image_size)
    cfg = EpisodeConfig(ways=1, shots=shots, queries_per_episode=1, seed=seed)
    grid = [threshold] + list(thresholds or ())
    ious, separated = [], []
    for e in range(episodes):
        ep = sample_episode(split, cfg, e)
        si, sm = loader.batch(ep.support_samples(), "gt")
        qi, qm = loader.batch([ep.queries[0][0]], "gt")
        p = rpn(si, sm, qi)[0]
        gt = qm[0] >= 0.5
        row = []
        for t in grid:
            pred = p >= t
            union = (gt | pred).sum().item()
            row.append((gt & pred).sum().item() / union if union else 1.0)
        ious.append(row)
        separated.append(bool(p[gt].mean() > p[~gt].mean()))
    mean_iou = np.mean(ious, axis=0)
    out = {"iou": float(mean_iou[0]), "threshold": threshold, "fg_over_bg": float(np.mean(separated)),
           "episodes": episodes}
    if thresholds:
        k = int(np.argmax(mean_iou[1:]))
        out.update(curve={float(t): float(v) for t, v in zip(grid[1:], mean_iou[1:])},
                   best_threshold=float(grid[1 + k]), best_iou=float(mean_iou[1 + k]))
    return out
