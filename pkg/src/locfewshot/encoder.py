"""Image encoders: a dense feature-map encoder for region proposal and a pooled
embedding encoder, with an optional mask channel, for classification.

Tensors are channels-first (``B x C x H x W``). Images enter as floats scaled
to [0, 1]; each encoder standardizes RGB with its stored dataset statistics and
passes the mask channel through untouched.
"""
from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigurationError, InputError, ShapeError

DEFAULT_MEAN = (0.5, 0.5, 0.5)
DEFAULT_STD = (0.25, 0.25, 0.25)


def conv_block(in_channels: int, out_channels: int, groups: int = 8) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(in_channels, out_channels, 3, padding=1),
        nn.GroupNorm(min(groups, out_channels), out_channels),
        nn.ReLU(),
        nn.MaxPool2d(2),
    )


class _Standardize(nn.Module):
    def __init__(self, mean, std):
        super().__init__()
        self.register_buffer("mean", torch.tensor(mean, dtype=torch.float32).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor(std, dtype=torch.float32).view(1, 3, 1, 1))

    def forward(self, rgb):
        return (rgb - self.mean.to(rgb.dtype)) / self.std.to(rgb.dtype)

    def set_stats(self, mean, std):
        self.mean.copy_(torch.as_tensor(np.asarray(mean), dtype=torch.float32).view(1, 3, 1, 1))
        self.std.copy_(torch.as_tensor(np.asarray(std), dtype=torch.float32).view(1, 3, 1, 1))


def _check_images(images: torch.Tensor, channels: int = 3):
    if images.ndim != 4 or images.shape[1] != channels:
        raise ShapeError(f"expected B x {channels} x H x W images, got {tuple(images.shape)}")
    if not torch.isfinite(images).all():
        raise InputError("images contain non-finite values")


def reflect_pad_to(x: torch.Tensor, factor: int) -> torch.Tensor:
    h, w = x.shape[-2:]
    ph, pw = (-h) % factor, (-w) % factor
    if ph == 0 and pw == 0:
        return x
    mode = "reflect" if ph < h and pw < w else "replicate"
    return F.pad(x, (0, pw, 0, ph), mode=mode)


class FeatureMapEncoder(nn.Module):
    """Dense encoder ``B x 3 x H x W -> B x d x ceil(H/f) x ceil(W/f)``.

    All blocks but the last are full conv blocks; the last stops after its
    normalization, so features are signed and pixel cosines span [-1, 1].
    ``f = 2 ** (len(widths) - 1)`` and ``d = widths[-1]``. Inputs whose sides
    are not multiples of ``f`` are reflect-padded first.
    """

    def __init__(self, widths=(32, 64, 128), mean=DEFAULT_MEAN, std=DEFAULT_STD):
        super().__init__()
        self.widths = tuple(int(w) for w in widths)
        self.standardize = _Standardize(mean, std)
        blocks, c_in = [], 3
        for w in self.widths[:-1]:
            blocks.append(conv_block(c_in, w))
            c_in = w
        last = self.widths[-1]
        blocks.append(nn.Sequential(nn.Conv2d(c_in, last, 3, padding=1), nn.GroupNorm(min(8, last), last)))
        self.blocks = nn.Sequential(*blocks)

    @property
    def downsample_factor(self) -> int:
        return 2 ** (len(self.widths) - 1)

    @property
    def channels_out(self) -> int:
        return self.widths[-1]

    def config(self) -> dict:
        return {"type": "FeatureMapEncoder", "widths": list(self.widths)}

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        _check_images(images, 3)
        x = reflect_pad_to(self.standardize(images), self.downsample_factor)
        return self.blocks(x)


class EmbeddingEncoder(nn.Module):
    """Conv blocks followed by global average pooling to ``widths[-1]`` dims.

    With ``input_channels=4`` a soft mask in [0, 1] is concatenated to the
    standardized RGB as a fourth channel before the first convolution.
    """

    def __init__(self, input_channels: int = 3, widths=(32, 64, 128, 256), mean=DEFAULT_MEAN, std=DEFAULT_STD):
        super().__init__()
        if input_channels not in (3, 4):
            raise ConfigurationError(f"input_channels must be 3 or 4, got {input_channels}")
        self.input_channels = input_channels
        self.widths = tuple(int(w) for w in widths)
        self.standardize = _Standardize(mean, std)
        blocks, c_in = [], input_channels
        for w in self.widths:
            blocks.append(conv_block(c_in, w))
            c_in = w
        self.blocks = nn.Sequential(*blocks)

    @property
    def embedding_dim(self) -> int:
        return self.widths[-1]

    def config(self) -> dict:
        return {"type": "EmbeddingEncoder", "input_channels": self.input_channels, "widths": list(self.widths)}

    def final_layers(self) -> nn.Module:
        """The last conv block; everything after it is parameter-free pooling."""
        return self.blocks[-1]

    def forward(self, images: torch.Tensor, masks: torch.Tensor | None = None) -> torch.Tensor:
        _check_images(images, 3)
        x = self.standardize(images)
        if self.input_channels == 4:
            if masks is None:
                raise ConfigurationError("4-channel encoder needs a mask")
            if masks.ndim == 3:
                masks = masks.unsqueeze(1)
            if masks.shape != (images.shape[0], 1, *images.shape[2:]):
                raise ConfigurationError(f"mask shape {tuple(masks.shape)} does not match images {tuple(images.shape)}")
            if not torch.isfinite(masks).all() or masks.min() < 0 or masks.max() > 1:
                raise InputError("mask values must lie in [0, 1]")
            x = torch.cat([x, masks.to(x.dtype)], dim=1)
        elif masks is not None:
            raise ConfigurationError("3-channel encoder does not take a mask")
        return self.blocks(x).mean(dim=(2, 3))

    @classmethod
    def four_channel_from(cls, encoder3: "EmbeddingEncoder") -> "EmbeddingEncoder":
        """Copy a 3-channel encoder into a 4-channel one with zeroed mask kernels."""
        if encoder3.input_channels != 3:
            raise ConfigurationError("source encoder must be 3-channel")
        enc = cls(4, encoder3.widths)
        state = {k: v.clone() for k, v in encoder3.state_dict().items()}
        w = state["blocks.0.0.weight"]
        state["blocks.0.0.weight"] = torch.cat([w, torch.zeros_like(w[:, :1])], dim=1)
        enc.load_state_dict(state)
        return enc


def build_encoder(config: dict) -> nn.Module:
    kind = config["type"]
    if kind == "FeatureMapEncoder":
        return FeatureMapEncoder(config["widths"])
    if kind == "EmbeddingEncoder":
        return EmbeddingEncoder(config["input_channels"], config["widths"])
    raise ValueError(f"unknown encoder type {kind!r}")


def image_to_tensor(image) -> torch.Tensor:
    """``H x W x 3`` array (uint8 or float in [0, 1]) to a ``3 x H x W`` float tensor."""
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ShapeError(f"expected H x W x 3 image, got {arr.shape}")
    t = torch.from_numpy(np.ascontiguousarray(arr)).permute(2, 0, 1)
    return t.float() / 255.0 if arr.dtype == np.uint8 else t.float()


@torch.no_grad()
def encode_feature_map(encoder: FeatureMapEncoder, image) -> np.ndarray:
    """Single image ``H x W x 3`` to a ``h' x w' x d`` feature map."""
    encoder.eval()
    x = image_to_tensor(image).unsqueeze(0)
    return encoder(x)[0].permute(1, 2, 0).numpy()


@torch.no_grad()
def encode_embedding(encoder: EmbeddingEncoder, image, mask=None) -> np.ndarray:
    encoder.eval()
    x = image_to_tensor(image).unsqueeze(0)
    m = None
    if mask is not None:
        m = torch.as_tensor(np.asarray(mask, dtype=np.float32)).unsqueeze(0)
        if m.ndim != 3:
            raise ConfigurationError(f"mask must be H x W, got {tuple(m.shape[1:])}")
    return encoder(x, m)[0].numpy()


def feature_size(size: int, factor: int) -> int:
    return math.ceil(size / factor)
