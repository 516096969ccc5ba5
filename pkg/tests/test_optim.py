import numpy as np
import pytest

from cystseg.errors import ShapeError
from cystseg.nn.layers import Parameter
from cystseg.nn.optim import Adam


def test_first_step_closed_form():
    # t=1: m_hat = g, v_hat = g^2, update = lr * g / (|g| + eps)
    theta0 = np.array([1.0, -2.0, 3.0], dtype=np.float64)
    g = np.array([0.5, -1.5, 2.0], dtype=np.float64)
    p = Parameter(theta0.copy(), dtype=np.float64)
    p.grad = g.copy()
    opt = Adam([p], lr=0.01, eps=1e-8)
    opt.step()
    want = theta0 - 0.01 * g / (np.abs(g) + 1e-8)
    assert np.allclose(p.data, want, atol=1e-15)


def test_constant_gradient_gives_constant_update():
    # with a constant gradient, m_hat = g and v_hat = g^2 for every t,
    # so each step moves by exactly lr * g / (|g| + eps)
    p = Parameter(np.zeros(4, dtype=np.float64), dtype=np.float64)
    g = np.array([1.0, -2.0, 0.5, -0.25])
    opt = Adam([p], lr=0.1, eps=1e-8)
    prev = p.data.copy()
    step = 0.1 * g / (np.abs(g) + 1e-8)
    for _ in range(5):
        p.grad = g.copy()
        opt.step()
        assert np.allclose(prev - p.data, step, atol=1e-12)
        prev = p.data.copy()


def test_lr_zero_is_bitwise_identity():
    rng = np.random.default_rng(0)
    p = Parameter(rng.standard_normal(10).astype(np.float32))
    before = p.data.tobytes()
    opt = Adam([p], lr=0.0)
    for _ in range(3):
        p.grad = rng.standard_normal(10).astype(np.float32)
        opt.step()
    assert p.data.tobytes() == before


def test_none_grad_skipped():
    p = Parameter(np.ones(3))
    q = Parameter(np.ones(3))
    opt = Adam([p, q], lr=0.1)
    p.grad = np.ones(3)
    opt.step()  # q.grad is None
    assert not np.allclose(p.data, 1.0)
    assert np.allclose(q.data, 1.0)


def test_float32_params_stay_float32():
    p = Parameter(np.ones(3, dtype=np.float32))
    opt = Adam([p], lr=0.01)
    p.grad = np.full(3, 0.5, dtype=np.float32)
    opt.step()
    assert p.data.dtype == np.float32


def test_shape_mismatch_rejected():
    p = Parameter(np.ones(3))
    opt = Adam([p], lr=0.1)
    p.grad = np.ones(4)
    with pytest.raises(ShapeError):
        opt.step()


def test_zero_grad_clears():
    p = Parameter(np.ones(3))
    opt = Adam([p], lr=0.1)
    p.grad = np.ones(3)
    opt.zero_grad()
    assert p.grad is None
