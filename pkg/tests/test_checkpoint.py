import json
import struct

import numpy as np
import pytest

from cystseg.config import ModelConfig
from cystseg.errors import CorruptCheckpointError, VersionMismatchError
from cystseg.nn.checkpoint import MAGIC, load_checkpoint, save_checkpoint
from cystseg.nn.layers import PatchClassifier
from cystseg.nn.tensor import Tensor

TOY = ModelConfig(stem_channels=3, stage_channels=(3, 4), blocks_per_stage=1)


def _trained_ish_model(seed=7):
    """A model whose buffers differ from init, so round trips are non-trivial."""
    model = PatchClassifier(TOY, seed=seed)
    x = Tensor(np.random.default_rng(0).standard_normal((4, 1, 11, 11)).astype(np.float32))
    model.train()
    model.forward(x)  # updates BN running stats
    return model


def test_round_trip_restores_everything(tmp_path):
    model = _trained_ish_model()
    p = tmp_path / "m.ckpt"
    save_checkpoint(model, p, extra={"note": "hello", "k": 3})
    loaded, extra = load_checkpoint(p)
    assert extra == {"note": "hello", "k": 3}
    assert loaded.config == model.config
    assert loaded.seed == model.seed
    for (na, pa), (nb, pb) in zip(model.named_parameters(), loaded.named_parameters()):
        assert na == nb
        assert np.array_equal(pa.data, pb.data)
    for (na, ba), (nb, bb) in zip(model.named_buffers(), loaded.named_buffers()):
        assert na == nb
        assert np.array_equal(ba, bb)


def test_save_load_save_is_byte_identical(tmp_path):
    model = _trained_ish_model()
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(model, p1, extra={"z": 1})
    loaded, extra = load_checkpoint(p1)
    save_checkpoint(loaded, p2, extra=extra)
    assert p1.read_bytes() == p2.read_bytes()


def test_predictions_survive_round_trip(tmp_path):
    model = _trained_ish_model()
    model.eval()
    patches = np.random.default_rng(1).integers(0, 256, (6, 11, 11), dtype=np.uint8)
    before = model.logits(patches)
    p = tmp_path / "m.ckpt"
    save_checkpoint(model, p)
    loaded, _ = load_checkpoint(p)
    loaded.eval()
    assert np.array_equal(loaded.logits(patches), before)


def test_wrong_magic_is_version_mismatch(tmp_path):
    p = tmp_path / "bad.ckpt"
    p.write_bytes(b"NOTMODEL" + b"\x00" * 100)
    with pytest.raises(VersionMismatchError):
        load_checkpoint(p)


def test_wrong_format_version_rejected(tmp_path):
    model = PatchClassifier(TOY, seed=0)
    p = tmp_path / "m.ckpt"
    save_checkpoint(model, p)
    raw = bytearray(p.read_bytes())
    hlen = struct.unpack("<I", raw[len(MAGIC):len(MAGIC) + 4])[0]
    header = json.loads(raw[len(MAGIC) + 4:len(MAGIC) + 4 + hlen].decode())
    header["format"] = 999
    new_header = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    patched = bytes(raw[:len(MAGIC)]) + struct.pack("<I", len(new_header)) + new_header \
        + bytes(raw[len(MAGIC) + 4 + hlen:])
    p.write_bytes(patched)
    with pytest.raises(VersionMismatchError):
        load_checkpoint(p)


def test_truncated_payload_rejected(tmp_path):
    model = PatchClassifier(TOY, seed=0)
    p = tmp_path / "m.ckpt"
    save_checkpoint(model, p)
    data = p.read_bytes()
    p.write_bytes(data[:-20])
    with pytest.raises(CorruptCheckpointError):
        load_checkpoint(p)


def test_trailing_garbage_rejected(tmp_path):
    model = PatchClassifier(TOY, seed=0)
    p = tmp_path / "m.ckpt"
    save_checkpoint(model, p)
    p.write_bytes(p.read_bytes() + b"xx")
    with pytest.raises(CorruptCheckpointError):
        load_checkpoint(p)
