import numpy as np
import pytest
import torch

from locfewshot.encoder import (EmbeddingEncoder, FeatureMapEncoder, build_encoder, encode_embedding,
                                encode_feature_map, feature_size)
from locfewshot.errors import ConfigurationError, InputError, ShapeError


class TestFeatureMapEncoder:
    def test_shape(self):
        enc = FeatureMapEncoder()
        out = enc(torch.rand(2, 3, 64, 48))
        assert out.shape == (2, 128, 16, 12)
        assert enc.downsample_factor == 4 and enc.channels_out == 128

    def test_ragged_input_is_padded(self):
        enc = FeatureMapEncoder()
        assert enc(torch.rand(1, 3, 30, 31)).shape[-2:] == (feature_size(30, 4), feature_size(31, 4))

    def test_numpy_channels_last(self):
        img = np.random.default_rng(0).integers(0, 256, (32, 32, 3), dtype=np.uint8)
        assert encode_feature_map(FeatureMapEncoder(), img).shape == (8, 8, 128)

    def test_rejects_bad_input(self):
        enc = FeatureMapEncoder()
        with pytest.raises(ShapeError):
            enc(torch.rand(1, 4, 16, 16))
        x = torch.rand(1, 3, 16, 16)
        x[0, 0, 0, 0] = float("nan")
        with pytest.raises(InputError):
            enc(x)


class TestEmbeddingEncoder:
    def test_dims(self):
        assert EmbeddingEncoder(3)(torch.rand(2, 3, 32, 32)).shape == (2, 256)
        assert EmbeddingEncoder(4)(torch.rand(2, 3, 32, 32), torch.rand(2, 32, 32)).shape == (2, 256)

    def test_channel_mismatch(self):
        with pytest.raises(ConfigurationError):
            EmbeddingEncoder(4)(torch.rand(1, 3, 16, 16))
        with pytest.raises(ConfigurationError):
            EmbeddingEncoder(3)(torch.rand(1, 3, 16, 16), torch.rand(1, 16, 16))
        with pytest.raises(ConfigurationError):
            EmbeddingEncoder(4)(torch.rand(1, 3, 16, 16), torch.rand(1, 8, 8))
        with pytest.raises(ConfigurationError):
            EmbeddingEncoder(5)

    def test_mask_range(self):
        with pytest.raises(InputError):
            EmbeddingEncoder(4)(torch.rand(1, 3, 16, 16), torch.full((1, 16, 16), 1.5))

    def test_mask_changes_embedding(self):
        enc = EmbeddingEncoder(4).eval()
        x = torch.rand(1, 3, 32, 32)
        a = enc(x, torch.ones(1, 32, 32))
        b = enc(x, torch.zeros(1, 32, 32))
        assert not torch.allclose(a, b)

    def test_four_channel_from_ignores_mask_initially(self):
        enc3 = EmbeddingEncoder(3).eval()
        enc4 = EmbeddingEncoder.four_channel_from(enc3).eval()
        x = torch.rand(2, 3, 32, 32)
        assert torch.allclose(enc3(x), enc4(x, torch.rand(2, 32, 32)), atol=1e-6)

    def test_final_layers_is_last_block(self):
        enc = EmbeddingEncoder(4)
        assert enc.final_layers() is enc.blocks[-1]

    def test_build_from_config(self):
        enc = EmbeddingEncoder(4, (8, 16))
        clone = build_encoder(enc.config())
        assert isinstance(clone, EmbeddingEncoder) and clone.input_channels == 4 and clone.widths == (8, 16)

    def test_numpy_wrapper(self):
        img = np.random.default_rng(0).random((16, 16, 3)).astype(np.float32)
        assert encode_embedding(EmbeddingEncoder(4), img, np.ones((16, 16))).shape == (256,)

    def test_gradient_matches_finite_differences(self):
        torch.manual_seed(0)
        enc = EmbeddingEncoder(4, (4, 8)).double()
        x = torch.rand(1, 3, 8, 8, dtype=torch.float64)
        m = torch.rand(1, 8, 8, dtype=torch.float64)
        w = enc.blocks[0][0].weight
        loss = lambda: enc(x, m).pow(2).sum()
        loss().backward()
        g = w.grad.clone()
        eps = 1e-6
        for idx in [(0, 3, 1, 1), (2, 0, 0, 2), (3, 1, 2, 0)]:
            with torch.no_grad():
                w[idx] += eps
                up = loss().item()
                w[idx] -= 2 * eps
                dn = loss().item()
                w[idx] += eps
            fd = (up - dn) / (2 * eps)
            assert abs(g[idx].item() - fd) <= 1e-4 * max(abs(fd), 1e-3)
