import numpy as np
import pytest

from cystseg.config import AugmentPolicy, ModelConfig, TrainConfig
from cystseg.errors import DivergedError, NoPositivesError
from cystseg.nn.layers import PatchClassifier
from cystseg.patches import PatchRecord
from cystseg.training import one_hot, train_model, write_training_log

TOY = ModelConfig(stem_channels=3, stage_channels=(3, 4), blocks_per_stage=1)
NO_AUG = AugmentPolicy(flip_prob=0.0, max_rotation_deg=0.0,
                       max_shift_frac=0.0, max_zoom_frac=0.0)


def _records(n_pos, n_neg, seed=0):
    """Brightness-separable patches: positives ~200, negatives ~30."""
    rng = np.random.default_rng(seed)
    records = []
    for i in range(n_pos + n_neg):
        positive = i < n_pos
        base = 200.0 if positive else 30.0
        pixels = np.clip(rng.normal(base, 12.0, (11, 11)), 0, 255).astype(np.uint8)
        records.append(PatchRecord(
            pixels=pixels, label=1 if positive else 0, volume_id="v0",
            volume_index=0, frame_index=0, grid_row=i % 5, grid_col=i % 7,
            is_central=True,
        ))
    return records


def test_one_hot():
    out = one_hot(np.array([0, 1, 1]), 2)
    assert out.tolist() == [[1.0, 0.0], [0.0, 1.0], [0.0, 1.0]]


def test_learns_separable_data():
    records = _records(32, 32)
    cfg = TrainConfig(batch_size=16, epochs=6, lr=3e-3, val_fraction=0.25, seed=0)
    result = train_model(records, TOY, cfg)
    assert result.log[-1].accuracy >= 0.99
    assert result.best_val_accuracy >= 0.99
    assert len(result.log) == 6
    # returned model is in eval mode and predicts the training set correctly
    pixels = np.stack([r.pixels for r in records])
    labels = np.array([r.label for r in records])
    pred = result.model.logits(pixels).argmax(axis=1)
    assert (pred == labels).mean() >= 0.99


def test_single_patch_loss_monotone_without_augment():
    records = _records(1, 0)
    cfg = TrainConfig(batch_size=1, epochs=10, lr=1e-2, val_fraction=0.0,
                      seed=3, augment=NO_AUG)
    result = train_model(records, TOY, cfg)
    losses = [e.loss for e in result.log]
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_lr_zero_leaves_parameters_bitwise_unchanged():
    records = _records(8, 8)
    cfg = TrainConfig(batch_size=4, epochs=2, lr=0.0, val_fraction=0.0,
                      seed=5, augment=NO_AUG)
    result = train_model(records, TOY, cfg)
    fresh = PatchClassifier(TOY, seed=5)
    for (_, pa), (_, pb) in zip(result.model.named_parameters(),
                                fresh.named_parameters()):
        assert pa.data.tobytes() == pb.data.tobytes()


def test_determinism_same_seed_same_weights():
    records = _records(16, 16)
    cfg = TrainConfig(batch_size=8, epochs=3, lr=3e-3, val_fraction=0.2, seed=1)
    a = train_model(records, TOY, cfg)
    b = train_model(records, TOY, cfg)
    for (_, pa), (_, pb) in zip(a.model.named_parameters(), b.model.named_parameters()):
        assert pa.data.tobytes() == pb.data.tobytes()
    assert [e.loss for e in a.log] == [e.loss for e in b.log]


def test_divergence_detected():
    records = _records(8, 8)
    cfg = TrainConfig(batch_size=4, epochs=3, lr=1e18, val_fraction=0.0,
                      seed=0, augment=NO_AUG)
    with np.errstate(all="ignore"), pytest.raises(DivergedError):
        train_model(records, TOY, cfg)


def test_empty_records_rejected():
    cfg = TrainConfig(epochs=1)
    with pytest.raises(NoPositivesError):
        train_model([], TOY, cfg)


def test_training_log_format(tmp_path):
    records = _records(4, 4)
    cfg = TrainConfig(batch_size=4, epochs=2, lr=1e-3, val_fraction=0.0,
                      seed=0, augment=NO_AUG)
    result = train_model(records, TOY, cfg)
    p = tmp_path / "log.csv"
    write_training_log(result.log, p)
    lines = p.read_text().splitlines()
    assert lines[0] == "epoch,loss,accuracy"
    assert len(lines) == 3
    epoch, loss, acc = lines[1].split(",")
    assert epoch == "1"
    float(loss), float(acc)  # parseable, 6 decimal places
    assert len(loss.split(".")[1]) == 6
