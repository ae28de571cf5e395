"""Binary Lovász-Softmax loss: a convex surrogate of the Jaccard loss.

With per-pixel errors ``m = |y - p|`` sorted in decreasing order, the loss is
``sum_i m_(i) g_i`` where ``g_i = J(i) - J(i-1)`` and ``J(i)`` is the Jaccard
loss of the prediction that gets the first ``i`` sorted pixels wrong.
"""
from __future__ import annotations

import torch

from .errors import ShapeError


def lovasz_grad(sorted_labels: torch.Tensor) -> torch.Tensor:
    """Jaccard-loss increments for labels already sorted by decreasing error."""
    gt = sorted_labels.to(torch.float64 if sorted_labels.dtype == torch.float64 else torch.float32)
    n_fg = gt.sum()
    intersection = n_fg - gt.cumsum(0)
    union = n_fg + (1.0 - gt).cumsum(0)
    jaccard = 1.0 - intersection / union
    if gt.numel() > 1:
        jaccard = torch.cat([jaccard[:1], jaccard[1:] - jaccard[:-1]])
    return jaccard


def lovasz_flat(probs: torch.Tensor, labels: torch.Tensor, empty: str = "jaccard") -> torch.Tensor:
    """Loss for one flattened mask.

    For an all-background mask the Jaccard construction reduces to the largest
    error; ``empty="mean"`` scores such masks by ``mean(p)`` instead, which
    penalizes every false-positive pixel.
    """
    if probs.shape != labels.shape:
        raise ShapeError(f"predictions {tuple(probs.shape)} and labels {tuple(labels.shape)} differ")
    labels = labels.to(probs.dtype)
    if empty == "mean" and labels.sum() == 0:
        return probs.mean()
    errors = (labels - probs).abs()
    errors_sorted, perm = torch.sort(errors, descending=True, stable=True)
    return torch.dot(errors_sorted, lovasz_grad(labels[perm]))


def lovasz_loss(probs: torch.Tensor, labels: torch.Tensor, per_image: bool = True, empty: str = "jaccard") -> torch.Tensor:
    """Lovász loss of foreground probabilities in [0, 1] against binary labels.

    With ``per_image`` the leading dimension indexes images, each image's loss
    is computed separately and the mean is returned; otherwise all pixels are
    pooled into one set.
    """
    if probs.shape != labels.shape:
        raise ShapeError(f"predictions {tuple(probs.shape)} and labels {tuple(labels.shape)} differ")
    if not per_image or probs.ndim <= 1:
        return lovasz_flat(probs.reshape(-1), labels.reshape(-1), empty)
    losses = [lovasz_flat(p.reshape(-1), y.reshape(-1), empty) for p, y in zip(probs, labels)]
    return torch.stack(losses).mean()
