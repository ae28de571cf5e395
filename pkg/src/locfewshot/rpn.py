"""Few-shot region proposal.

A class prototype is the mean over support shots of the masked average pooled
support features. Each query pixel is scored by the cosine between its feature
vector and the prototype; cosines are mapped to [0, 1] by ``(s + 1) / 2`` and
upsampled bilinearly to image resolution.

Feature maps are channels-first: ``d x h x w`` (or batched ``B x d x h x w``).
"""
from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .encoder import FeatureMapEncoder, _check_images, image_to_tensor
from .errors import EmptyMaskError, ShapeError


def masked_average_pool(features: torch.Tensor, weights: torch.Tensor) -> torch.Tensor:
    """Weighted spatial mean ``sum m_ij f_ij / sum m_ij``; batched over a leading dim."""
    if features.shape[-2:] != weights.shape[-2:]:
        raise ShapeError(f"feature map {tuple(features.shape[-2:])} and mask {tuple(weights.shape[-2:])} differ")
    weights = weights.to(features.dtype)
    mass = weights.sum(dim=(-2, -1))
    if (mass <= 0).any():
        raise EmptyMaskError("support mask has no foreground mass")
    pooled = (features * weights.unsqueeze(-3)).sum(dim=(-2, -1))
    return pooled / mass.unsqueeze(-1)


def class_prototype(support_features, support_masks) -> torch.Tensor:
    """Unweighted mean over shots of each shot's masked average pool."""
    if isinstance(support_features, (list, tuple)):
        support_features = torch.stack(list(support_features))
    if isinstance(support_masks, (list, tuple)):
        support_masks = torch.stack([torch.as_tensor(m) for m in support_masks])
    if support_features.ndim != 4 or support_features.shape[0] == 0:
        raise ShapeError("support features must be n x d x h x w with n >= 1")
    return masked_average_pool(support_features, support_masks).mean(dim=0)


def similarity_map(prototype: torch.Tensor, query_features: torch.Tensor) -> torch.Tensor:
    """Pixel-wise cosine in [-1, 1]; zero-norm pixels score 0."""
    d = prototype.shape[-1]
    if query_features.shape[-3] != d:
        raise ShapeError(f"prototype dim {d} != feature channels {query_features.shape[-3]}")
    c_norm = prototype.norm()
    if c_norm == 0:
        raise ValueError("zero prototype: degenerate support class")
    dots = torch.einsum("...dhw,d->...hw", query_features, prototype)
    f_norm = query_features.norm(dim=-3)
    denom = torch.where(f_norm > 0, f_norm * c_norm, torch.ones_like(f_norm))
    sim = torch.where(f_norm > 0, dots / denom, torch.zeros_like(dots))
    return sim.clamp(-1.0, 1.0)


def downsample_mask(mask: torch.Tensor, factor: int) -> torch.Tensor:
    """Block means over ``factor x factor`` cells; sides are zero-padded up to a multiple."""
    mask = torch.as_tensor(mask)
    squeeze = mask.ndim == 2
    m = mask.to(torch.float64 if mask.dtype == torch.float64 else torch.float32)
    m = m.reshape(-1, 1, *m.shape[-2:])
    h, w = m.shape[-2:]
    m = F.pad(m, (0, (-w) % factor, 0, (-h) % factor))
    out = F.avg_pool2d(m, factor).squeeze(1)
    return out[0] if squeeze else out.reshape(*mask.shape[:-2], *out.shape[-2:])


def cosine_to_unit(sim: torch.Tensor) -> torch.Tensor:
    return (sim + 1.0) / 2.0


def upsample_proposal(proposal: torch.Tensor, factor: int, size: tuple[int, int]) -> torch.Tensor:
    """Bilinear upsample ``(..., h', w')`` by ``factor`` and crop to ``size``."""
    lead = proposal.shape[:-2]
    p = proposal.reshape(-1, 1, *proposal.shape[-2:])
    up = F.interpolate(p, scale_factor=factor, mode="bilinear", align_corners=False)
    up = up[..., : size[0], : size[1]].clamp(0.0, 1.0)
    return up.reshape(*lead, *size)


class RegionProposalNetwork(nn.Module):
    """n-shot, one-way proposals: ``(support images, support masks, queries) -> [0,1] masks``."""

    def __init__(self, encoder: FeatureMapEncoder, threshold: float | None = None):
        super().__init__()
        self.encoder = encoder
        self.threshold = threshold

    @property
    def factor(self) -> int:
        return self.encoder.downsample_factor

    def prototype_from_features(self, support_feats, support_masks) -> torch.Tensor:
        return class_prototype(support_feats, downsample_mask(support_masks, self.factor))

    def propose_from_features(self, prototype, query_feats, size) -> torch.Tensor:
        sim = similarity_map(prototype, query_feats)
        return upsample_proposal(cosine_to_unit(sim), self.factor, size)

    def episode_proposals(self, support_images, support_masks, query_images, ways: int, shots: int) -> torch.Tensor:
        """Proposals ``Q x ways x H x W`` for a class-major support batch of ``ways * shots`` images."""
        feats = self.encoder(torch.cat([support_images, query_images]))
        n_sup = ways * shots
        size = tuple(query_images.shape[-2:])
        props = []
        for k in range(ways):
            sl = slice(k * shots, (k + 1) * shots)
            proto = self.prototype_from_features(feats[sl], support_masks[sl])
            props.append(self.propose_from_features(proto, feats[n_sup:], size))
        p = torch.stack(props, dim=1)
        if self.threshold is not None and not self.training:
            p = (p >= self.threshold).to(p.dtype)
        return p

    def forward(self, support_images, support_masks, query_images) -> torch.Tensor:
        """``support_images`` n x 3 x H x W, ``support_masks`` n x H x W, ``query_images`` q x 3 x H x W."""
        _check_images(support_images)
        _check_images(query_images)
        if support_masks.shape != (support_images.shape[0], *support_images.shape[2:]):
            raise ShapeError(f"support masks {tuple(support_masks.shape)} do not match images")
        if (support_masks.flatten(1).sum(1) <= 0).any():
            raise EmptyMaskError("support mask has no foreground mass")
        feats = self.encoder(torch.cat([support_images, query_images]))
        n = support_images.shape[0]
        proto = self.prototype_from_features(feats[:n], support_masks)
        p = self.propose_from_features(proto, feats[n:], tuple(query_images.shape[-2:]))
        if self.threshold is not None and not self.training:
            p = (p >= self.threshold).to(p.dtype)
        return p


@torch.no_grad()
def propose_region(support_images, support_masks, query_image, encoder: FeatureMapEncoder, threshold=None):
    """Numpy-facing wrapper: ``H x W x 3`` images and ``H x W`` masks in, ``H x W`` proposal out."""
    encoder.eval()
    s = torch.stack([image_to_tensor(im) for im in support_images])
    m = torch.stack([torch.as_tensor(mk, dtype=torch.float32) for mk in support_masks])
    q = image_to_tensor(query_image).unsqueeze(0)
    rpn = RegionProposalNetwork(encoder, threshold).eval()
    return rpn(s, m, q)[0].numpy()
