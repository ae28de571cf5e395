"""Prototypical-network scoring: class centroids, squared Euclidean distances,
softmax over negated distances and the negative log likelihood."""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch

from .errors import ShapeError

PROB_FLOOR = 1e-12


@dataclass
class ClassScores:
    distances: torch.Tensor  # (..., c)
    log_probabilities: torch.Tensor  # (..., c)

    @property
    def probabilities(self) -> torch.Tensor:
        return self.log_probabilities.exp()

    @property
    def predicted(self) -> torch.Tensor:
        # torch.argmax returns the first maximal index: ties go to the lowest class
        return self.log_probabilities.argmax(dim=-1)


def class_centroids(support) -> torch.Tensor:
    """Mean support embedding per class.

    ``support`` is a ``c x n x d`` tensor or a list of ``n_k x d`` tensors.
    """
    if isinstance(support, torch.Tensor):
        if support.ndim != 3:
            raise ShapeError(f"support must be c x n x d, got {tuple(support.shape)}")
        if support.shape[1] == 0:
            raise ValueError("empty support class")
        return support.mean(dim=1)
    rows = []
    for k, s in enumerate(support):
        s = torch.as_tensor(s)
        if s.ndim != 2 or s.shape[0] == 0:
            raise ValueError(f"support class {k} is empty or not n x d")
        rows.append(s.mean(dim=0))
    return torch.stack(rows)


def squared_distances(query: torch.Tensor, centroids: torch.Tensor, per_class: bool = False) -> torch.Tensor:
    """``||q - c_k||^2`` for every class k.

    Standard mode: ``query`` is ``(..., d)`` and the result ``(..., c)``.
    Per-class mode: ``query`` is ``(..., c, d)``; row k is compared with centroid k only.
    """
    c, d = centroids.shape
    if query.shape[-1] != d:
        raise ShapeError(f"query dim {query.shape[-1]} != centroid dim {d}")
    if per_class:
        if query.ndim < 2 or query.shape[-2] != c:
            raise ShapeError(f"per-class query must be (..., {c}, {d}), got {tuple(query.shape)}")
        diff = query - centroids
    else:
        diff = query.unsqueeze(-2) - centroids
    return (diff * diff).sum(dim=-1)


def classify_query(query: torch.Tensor, centroids: torch.Tensor, per_class: bool = False) -> ClassScores:
    d = squared_distances(query, centroids, per_class)
    return ClassScores(d, torch.log_softmax(-d, dim=-1))


def nll_loss(scores: ClassScores, true_class, reduction: str = "mean") -> torch.Tensor:
    """``-log max(y_true, 1e-12)``, averaged over any batch dimensions."""
    logp = scores.log_probabilities
    c = logp.shape[-1]
    target = torch.as_tensor(true_class, dtype=torch.long)
    if target.numel() and (target.min() < 0 or target.max() >= c):
        raise ValueError(f"true class out of range [0, {c})")
    picked = logp.gather(-1, target.unsqueeze(-1).expand(*logp.shape[:-1], 1)).squeeze(-1)
    loss = -picked.clamp(min=math.log(PROB_FLOOR))
    return loss.mean() if reduction == "mean" else loss
