"""Built-in verification battery.

Each check recomputes something the library must get right (gradients,
oracle agreement, metric identities) from scratch and compares against an
independent implementation. Meant to run on a user's machine to confirm
the numerics behave there, not only in CI.
"""

from __future__ import annotations

import numpy as np

from . import evaluation, preprocess, reference
from .config import ModelConfig
from .nn import checkpoint, loss as nn_loss
from .nn import tensor as ops
from .nn.layers import PatchClassifier
from .nn.tensor import Tensor


def _rel_err(a: np.ndarray, b: np.ndarray) -> float:
    na = float(np.linalg.norm(a.ravel()))
    nb = float(np.linalg.norm(b.ravel()))
    return float(np.linalg.norm((a - b).ravel())) / max(na + nb, 1e-12)


def _gradcheck_param(build_loss, param: Tensor, h: float) -> float:
    """Relative error between backprop and central differences for one tensor."""
    out = build_loss()
    out.backward()
    analytic = param.grad.copy()

    def f(_x):
        return float(build_loss().data)

    numeric = reference.numeric_gradient(lambda _: f(None), param.data, h=h)
    return _rel_err(analytic, numeric)


def check_grad_layers(seeds: tuple[int, ...] = (11,)) -> tuple[bool, str]:
    worst = 0.0
    for seed in seeds:
        worst = max(worst, _grad_layers_once(np.random.default_rng(seed)))
    return worst < 1e-4, f"worst rel err {worst:.3e} over {len(seeds)} seeds (tol 1e-4)"


def _grad_layers_once(rng: np.random.Generator) -> float:
    worst = 0.0

    x = Tensor(rng.standard_normal((2, 3, 6, 6)), requires_grad=True, dtype=np.float64)
    w = Tensor(rng.standard_normal((4, 3, 3, 3)) * 0.3, requires_grad=True, dtype=np.float64)
    b = Tensor(rng.standard_normal(4) * 0.1, requires_grad=True, dtype=np.float64)
    targets = np.zeros((2, 4)); targets[np.arange(2), [1, 3]] = 1.0

    def conv_loss():
        for t in (x, w, b):
            t.grad = None
        y = ops.conv2d(x, w, b, stride=2, padding=1)
        return nn_loss.softmax_xent(ops.spatial_mean(y), targets)

    for p in (x, w, b):
        worst = max(worst, _gradcheck_param(conv_loss, p, h=1e-3))

    g = Tensor(rng.standard_normal(3) * 0.5 + 1.0, requires_grad=True, dtype=np.float64)
    beta = Tensor(rng.standard_normal(3) * 0.2, requires_grad=True, dtype=np.float64)
    rm = np.zeros(3); rv = np.ones(3)
    xb = Tensor(rng.standard_normal((4, 3, 5, 5)), requires_grad=True, dtype=np.float64)
    tb = np.zeros((4, 3)); tb[np.arange(4), [0, 1, 2, 0]] = 1.0

    def bn_loss():
        for t in (xb, g, beta):
            t.grad = None
        y = ops.batchnorm2d(xb, g, beta, rm.copy(), rv.copy(), 0.1, 1e-5, training=True)
        return nn_loss.softmax_xent(ops.spatial_mean(y), tb)

    for p in (xb, g, beta):
        worst = max(worst, _gradcheck_param(bn_loss, p, h=1e-3))

    xl = Tensor(rng.standard_normal((5, 7)), requires_grad=True, dtype=np.float64)
    wl = Tensor(rng.standard_normal((3, 7)) * 0.4, requires_grad=True, dtype=np.float64)
    bl = Tensor(rng.standard_normal(3) * 0.1, requires_grad=True, dtype=np.float64)
    tl = np.zeros((5, 3)); tl[np.arange(5), [0, 1, 2, 1, 0]] = 1.0

    def lin_loss():
        for t in (xl, wl, bl):
            t.grad = None
        return nn_loss.softmax_xent(ops.linear(xl, wl, bl), tl)

    for p in (xl, wl, bl):
        worst = max(worst, _gradcheck_param(lin_loss, p, h=1e-3))

    return worst


def check_grad_model(seeds: tuple[int, ...] = (0, 1, 2)) -> tuple[bool, str]:
    cfg = ModelConfig(stem_channels=3, stage_channels=(3, 4), blocks_per_stage=1)
    worst = 0.0
    for seed in seeds:
        rng = np.random.default_rng(1000 + seed)
        model = PatchClassifier(cfg, seed=seed, dtype=np.float64)
        model.train()
        x = Tensor(rng.standard_normal((2, 1, 11, 11)), dtype=np.float64)
        targets = np.zeros((2, 2)); targets[np.arange(2), [0, 1]] = 1.0

        def model_loss():
            model.zero_grad()
            return nn_loss.softmax_xent(model.forward(x), targets)

        for _, p in model.named_parameters():
            worst = max(worst, _gradcheck_param(model_loss, p, h=1e-5))
    return worst < 1e-4, f"worst rel err {worst:.3e} over {len(seeds)} seeds (tol 1e-4)"


def check_nlm_oracle(n: int = 8) -> tuple[bool, str]:
    rng = np.random.default_rng(23)
    for i in range(n):
        img = rng.integers(0, 256, size=(7, 7), dtype=np.uint8)
        fast = preprocess.nlm_denoise_u8(img, search_size=5, patch_size=3, h=10.0)
        slow = reference.nlm_reference(img, search_size=5, patch_size=3, h=10.0)
        if not np.array_equal(fast, slow):
            return False, f"mismatch on fixture {i}"
    return True, f"{n} random 7x7 fixtures bit-exact"


def check_clahe_oracle(n: int = 4) -> tuple[bool, str]:
    rng = np.random.default_rng(31)
    worst = 0
    for _ in range(n):
        img = rng.integers(0, 256, size=(48, 64), dtype=np.uint8)
        fast = preprocess.clahe_u8(img, grid=(4, 4), clip_limit=2.0)
        slow = reference.clahe_reference(img, grid=(4, 4), clip_limit=2.0)
        worst = max(worst, int(np.abs(fast.astype(int) - slow.astype(int)).max()))
    return worst <= 1, f"max abs diff {worst} over {n} images (tol 1)"


def check_conv_oracle() -> tuple[bool, str]:
    rng = np.random.default_rng(37)
    worst = 0.0
    for stride, padding in ((1, 1), (2, 1), (1, 0)):
        x = rng.standard_normal((2, 3, 8, 8)).astype(np.float32)
        w = rng.standard_normal((4, 3, 3, 3)).astype(np.float32)
        b = rng.standard_normal(4).astype(np.float32)
        fast = ops.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, padding=padding).data
        slow = reference.conv2d_reference(x, w, b, stride=stride, padding=padding)
        worst = max(worst, _rel_err(fast.astype(np.float64), slow))
    return worst <= 1e-5, f"worst rel err {worst:.3e} (tol 1e-5)"


def check_bilinear_oracle() -> tuple[bool, str]:
    rng = np.random.default_rng(41)
    for _ in range(4):
        img = rng.integers(0, 256, size=(13, 17), dtype=np.uint8)
        fast = preprocess.resize_bilinear_u8(img, 9, 23)
        slow = reference.bilinear_reference(img, 9, 23)
        if not np.array_equal(fast, slow):
            return False, "resize disagrees with scalar oracle"
    return True, "resize matches scalar oracle exactly"


def check_metric_identities(n: int = 200) -> tuple[bool, str]:
    rng = np.random.default_rng(43)
    worst = 0.0
    for _ in range(n):
        tp, fp, fn = (int(v) for v in rng.integers(1, 500, size=3))
        dice, precision, recall = evaluation.metrics_from_confusion(
            evaluation.ConfusionMatrix(tp, fp, 0, fn))
        harmonic = 2.0 * precision * recall / (precision + recall)
        worst = max(worst, abs(dice - harmonic))
    degenerate_ok = evaluation.metrics_from_confusion(
        evaluation.ConfusionMatrix(0, 0, 10, 0)) == (1.0, 1.0, 1.0)
    return worst < 1e-12 and degenerate_ok, f"worst |dice - harmonic| {worst:.3e}"


def check_residual_identity() -> tuple[bool, str]:
    cfg = ModelConfig(stem_channels=4, stage_channels=(4,), blocks_per_stage=1)
    model = PatchClassifier(cfg, seed=5)
    model.eval()
    block = model.blocks[0]
    block.bn2.gamma.data[:] = 0.0
    block.bn2.beta.data[:] = 0.0
    rng = np.random.default_rng(47)
    x = Tensor(rng.standard_normal((2, 4, 11, 11)).astype(np.float32))
    got = block.forward(x).data
    want = ops.relu(x).data
    return np.array_equal(got, want), "zeroed branch leaves relu(input) untouched"


def check_checkpoint_roundtrip(tmp_dir: str = "/tmp") -> tuple[bool, str]:
    import tempfile
    from pathlib import Path

    cfg = ModelConfig(stem_channels=3, stage_channels=(3,), blocks_per_stage=1)
    model = PatchClassifier(cfg, seed=9)
    with tempfile.TemporaryDirectory(dir=tmp_dir) as td:
        p1, p2 = Path(td) / "a.ckpt", Path(td) / "b.ckpt"
        checkpoint.save_checkpoint(model, p1, extra={"note": "selfcheck"})
        loaded, extra = checkpoint.load_checkpoint(p1)
        checkpoint.save_checkpoint(loaded, p2, extra=extra)
        same = p1.read_bytes() == p2.read_bytes()
    return same, "save/load/save is byte-identical"


CHECKS = (
    ("gradcheck-layers", check_grad_layers),
    ("gradcheck-model", check_grad_model),
    ("nlm-oracle", check_nlm_oracle),
    ("clahe-oracle", check_clahe_oracle),
    ("conv-oracle", check_conv_oracle),
    ("bilinear-oracle", check_bilinear_oracle),
    ("metric-identities", check_metric_identities),
    ("residual-identity", check_residual_identity),
    ("checkpoint-roundtrip", check_checkpoint_roundtrip),
)


def run_selfcheck(out=print) -> bool:
    all_ok = True
    for name, fn in CHECKS:
        try:
            ok, detail = fn()
        except Exception as exc:  # a crashed check is a failed check
            ok, detail = False, f"raised {type(exc).__name__}: {exc}"
        all_ok &= ok
        out(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    return all_ok
