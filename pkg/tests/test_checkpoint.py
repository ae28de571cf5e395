import numpy as np
import pytest
import torch

from locfewshot.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from locfewshot.encoder import EmbeddingEncoder, FeatureMapEncoder


def test_roundtrip(tmp_path):
    enc = EmbeddingEncoder(4, (8, 16))
    fmap = FeatureMapEncoder((8, 16))
    path = save_checkpoint(tmp_path / "c.npz", {"cls": enc, "rpn": fmap}, {"val_accuracy": 0.5})
    modules, extra = load_checkpoint(path)
    assert extra == {"val_accuracy": 0.5}
    for name, ref in (("cls", enc), ("rpn", fmap)):
        for (k, a), (_, b) in zip(ref.state_dict().items(), modules[name].state_dict().items()):
            assert torch.equal(a, b), k
    x = torch.rand(1, 3, 16, 16)
    assert torch.equal(enc.eval()(x, torch.ones(1, 16, 16)), modules["cls"].eval()(x, torch.ones(1, 16, 16)))


def test_rejects_foreign_file(tmp_path):
    np.savez(tmp_path / "x.npz", a=np.zeros(2))
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "x.npz")
