import threading
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from cystseg.errors import ShapeError
from cystseg.nn import tensor as T
from cystseg.reference import numeric_gradient


def _rel(a, b):
    na, nb = np.linalg.norm(a.ravel()), np.linalg.norm(b.ravel())
    return np.linalg.norm((a - b).ravel()) / max(na + nb, 1e-12)


def _check(build, params, h=1e-3, tol=1e-4):
    """Compare backprop gradients against central differences for each param."""
    out = build()
    out.backward()
    grads = [p.grad.copy() for p in params]
    for p, analytic in zip(params, grads):
        numeric = numeric_gradient(lambda _: build().data.item(), p.data, h=h)
        assert _rel(analytic, numeric) < tol, f"param shape {p.data.shape}"


def _t(rng, *shape, scale=1.0):
    return T.Tensor(rng.standard_normal(shape) * scale, requires_grad=True,
                    dtype=np.float64)


def test_add_with_broadcast_gradients(rng):
    a = _t(rng, 4, 3)
    b = _t(rng, 3)  # broadcast over rows
    w = rng.standard_normal((4, 3))

    def build():
        a.grad = None
        b.grad = None
        s = T.add(a, b)
        return T.mul(s, T.Tensor(w, dtype=np.float64))  # elementwise weights

    out = build()
    assert out.data.shape == (4, 3)
    # reduce to scalar by backward with explicit ones is implicit: use sum loss
    loss = T.matmul(T.reshape(out, (1, 12)), T.Tensor(np.ones((12, 1))))
    loss.backward()
    assert a.grad.shape == (4, 3)
    assert b.grad.shape == (3,)
    assert np.allclose(b.grad, w.sum(axis=0))


def test_mul_relu_matmul_gradcheck(rng):
    x = _t(rng, 3, 4)
    w = _t(rng, 4, 2)

    def build():
        x.grad = None
        w.grad = None
        h = T.relu(T.mul(T.matmul(x, w), 0.7))
        return T.matmul(T.reshape(h, (1, 6)), T.Tensor(np.ones((6, 1))))

    _check(build, [x, w])


def test_linear_gradcheck(rng):
    x = _t(rng, 5, 7)
    w = _t(rng, 3, 7, scale=0.5)
    b = _t(rng, 3, scale=0.1)

    def build():
        for t in (x, w, b):
            t.grad = None
        y = T.linear(x, w, b)
        return T.matmul(T.reshape(y, (1, 15)), T.Tensor(np.ones((15, 1))))

    _check(build, [x, w, b])


def test_linear_matches_manual():
    x = T.Tensor(np.array([[1.0, 2.0]]))
    w = T.Tensor(np.array([[3.0, 4.0], [5.0, 6.0]]))  # (out=2, in=2)
    b = T.Tensor(np.array([0.5, -0.5]))
    y = T.linear(x, w, b)
    assert np.allclose(y.data, [[1 * 3 + 2 * 4 + 0.5, 1 * 5 + 2 * 6 - 0.5]])


@pytest.mark.parametrize("stride,padding", [(1, 1), (2, 1), (1, 0), (3, 2)])
def test_conv2d_gradcheck(rng, stride, padding):
    x = _t(rng, 2, 3, 6, 6)
    w = _t(rng, 4, 3, 3, 3, scale=0.4)
    b = _t(rng, 4, scale=0.1)

    def build():
        for t in (x, w, b):
            t.grad = None
        y = T.conv2d(x, w, b, stride=stride, padding=padding)
        flat = T.reshape(y, (1, int(np.prod(y.data.shape))))
        return T.matmul(flat, T.Tensor(np.ones((flat.data.shape[1], 1))))

    _check(build, [x, w, b])


def test_conv2d_shape_contract(rng):
    x = T.Tensor(rng.standard_normal((2, 3, 11, 11)).astype(np.float32))
    w = T.Tensor(rng.standard_normal((8, 3, 3, 3)).astype(np.float32))
    assert T.conv2d(x, w, None, stride=2, padding=1).data.shape == (2, 8, 6, 6)
    assert T.conv2d(x, w, None, stride=1, padding=1).data.shape == (2, 8, 11, 11)
    with pytest.raises(ShapeError):
        T.conv2d(x, T.Tensor(rng.standard_normal((8, 4, 3, 3))), None)


def test_batchnorm_train_gradcheck(rng):
    x = _t(rng, 4, 3, 5, 5)
    g = T.Tensor(rng.standard_normal(3) * 0.4 + 1.0, requires_grad=True, dtype=np.float64)
    b = _t(rng, 3, scale=0.2)
    rm, rv = np.zeros(3), np.ones(3)

    def build():
        for t in (x, g, b):
            t.grad = None
        y = T.batchnorm2d(x, g, b, rm.copy(), rv.copy(), 0.1, 1e-5, training=True)
        flat = T.reshape(y, (1, 300))
        return T.matmul(T.mul(flat, flat), T.Tensor(np.ones((300, 1))))

    _check(build, [x, g, b])


def test_batchnorm_train_normalizes_batch(rng):
    x = T.Tensor(rng.standard_normal((8, 2, 4, 4)) * 3 + 5, dtype=np.float64)
    g = T.Tensor(np.ones(2)); b = T.Tensor(np.zeros(2))
    rm, rv = np.zeros(2), np.ones(2)
    y = T.batchnorm2d(x, g, b, rm, rv, 0.1, 1e-5, training=True).data
    assert np.allclose(y.mean(axis=(0, 2, 3)), 0.0, atol=1e-10)
    assert np.allclose(y.var(axis=(0, 2, 3)), 1.0, atol=1e-3)


def test_batchnorm_running_stats_update(rng):
    x = T.Tensor(rng.standard_normal((8, 2, 4, 4)) * 2 + 3, dtype=np.float64)
    g = T.Tensor(np.ones(2)); b = T.Tensor(np.zeros(2))
    rm, rv = np.zeros(2), np.ones(2)
    T.batchnorm2d(x, g, b, rm, rv, 0.1, 1e-5, training=True)
    batch_mean = x.data.mean(axis=(0, 2, 3))
    batch_var = x.data.var(axis=(0, 2, 3))  # biased
    assert np.allclose(rm, 0.1 * batch_mean)
    assert np.allclose(rv, 0.9 * 1.0 + 0.1 * batch_var)


def test_batchnorm_eval_uses_running_stats(rng):
    x = T.Tensor(rng.standard_normal((4, 2, 3, 3)), dtype=np.float64)
    g = T.Tensor(np.full(2, 2.0)); b = T.Tensor(np.full(2, 1.0))
    rm = np.array([0.5, -0.5]); rv = np.array([4.0, 0.25])
    rm0, rv0 = rm.copy(), rv.copy()
    y = T.batchnorm2d(x, g, b, rm, rv, 0.1, 0.0, training=False).data
    want = 2.0 * (x.data - rm0.reshape(1, 2, 1, 1)) / np.sqrt(rv0.reshape(1, 2, 1, 1)) + 1.0
    assert np.allclose(y, want)
    assert np.array_equal(rm, rm0) and np.array_equal(rv, rv0)  # untouched in eval


def test_spatial_mean_gradcheck(rng):
    x = _t(rng, 3, 4, 5, 5)

    def build():
        x.grad = None
        y = T.spatial_mean(x)
        return T.matmul(T.reshape(y, (1, 12)), T.Tensor(np.ones((12, 1))))

    _check(build, [x])
    assert T.spatial_mean(T.Tensor(np.ones((2, 3, 4, 4)))).data.shape == (2, 3)


def test_relu_gradient_masks_negatives():
    x = T.Tensor(np.array([-2.0, -0.5, 0.5, 2.0]), requires_grad=True)
    y = T.relu(x)
    y.backward(np.ones(4))
    assert np.array_equal(x.grad, [0.0, 0.0, 1.0, 1.0])
    assert np.array_equal(y.data, [0.0, 0.0, 0.5, 2.0])


def test_no_grad_blocks_graph(rng):
    x = T.Tensor(rng.standard_normal((2, 2)), requires_grad=True)
    with T.no_grad():
        y = T.mul(x, 3.0)
    assert y._parents == ()
    assert not y.requires_grad
    z = T.mul(x, 3.0)
    assert z.requires_grad


def test_backward_reaches_shared_subgraph(rng):
    # diamond: x feeds two branches that rejoin; gradient must sum
    x = T.Tensor(np.array([[2.0]]), requires_grad=True)
    a = T.mul(x, 3.0)
    b = T.mul(x, 4.0)
    out = T.add(a, b)
    out.backward(np.ones((1, 1)))
    assert np.allclose(x.grad, [[7.0]])


def test_backward_requires_scalar_or_explicit_grad(rng):
    x = T.Tensor(rng.standard_normal((2, 3)), requires_grad=True)
    y = T.mul(x, 2.0)
    with pytest.raises(ShapeError):
        y.backward()  # non-scalar without seed gradient
    y.backward(np.ones((2, 3)))
    assert np.allclose(x.grad, 2.0)


def test_matmul_rejects_non_2d(rng):
    a = T.Tensor(rng.standard_normal((2, 3, 4)))
    b = T.Tensor(rng.standard_normal((4, 2)))
    with pytest.raises(ShapeError):
        T.matmul(a, b)


def test_float32_default_dtype():
    t = T.Tensor([[1, 2], [3, 4]])
    assert t.data.dtype == np.float32


def test_no_grad_is_thread_local():
    # two workers suspend recording at the same time; the interleaved
    # restores must never leak a disabled state into other threads
    barrier = threading.Barrier(2)

    def worker(_):
        with T.no_grad():
            barrier.wait(timeout=5)
            a = T.Tensor([1.0], requires_grad=True)
            return T.add(a, a).requires_grad

    with ThreadPoolExecutor(max_workers=2) as pool:
        assert list(pool.map(worker, range(2))) == [False, False]
    a = T.Tensor([1.0], requires_grad=True)
    assert T.add(a, a).requires_grad
