"""Reverse-mode autodiff over numpy arrays.

A Tensor wraps a float32/float64 array plus an optional gradient and the
closure that propagates gradients to its parents. backward() walks the
recorded graph in reverse topological order. Only the operations the
classifier needs exist here; each op defines its own backward in closed
form rather than composing smaller pieces, keeping training batches cheap.
"""

from __future__ import annotations

import contextlib
import threading

import numpy as np

from ..errors import ShapeError

# Per-thread so inference workers toggling recording cannot race each other.
_grad_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_grad_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording (inference paths; saves memory)."""
    prev = _grad_enabled()
    _grad_state.enabled = False
    try:
        yield
    finally:
        _grad_state.enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        data = np.asarray(data)
        if dtype is not None:
            data = data.astype(dtype, copy=False)
        elif data.dtype not in (np.float32, np.float64):
            data = data.astype(np.float32)
        self.data = data
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._backward = None
        self._parents = ()

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without a gradient needs a scalar tensor")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.data.dtype)
            if grad.shape != self.data.shape:
                raise ShapeError(f"gradient shape {grad.shape} != tensor shape {self.data.shape}")

        # Iterative topological sort; graphs are ~100 nodes deep but this
        # keeps us independent of the interpreter recursion limit.
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))

        _accumulate(self, grad)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward()

    # Operator sugar for the common cases.
    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def relu(self):
        return relu(self)

    def reshape(self, *shape):
        return reshape(self, shape)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not (t.requires_grad or t._backward is not None):
        return
    t.grad = g if t.grad is None else t.grad + g


def _track(*tensors: Tensor) -> bool:
    return _grad_enabled() and any(t.requires_grad or t._backward is not None for t in tensors)


def _result(data: np.ndarray, parents: tuple[Tensor, ...], tracked: bool) -> Tensor:
    out = Tensor(data)
    if tracked:
        out.requires_grad = True
        out._parents = parents
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a gradient back to the shape it was broadcast from."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    tracked = _track(a, b)
    out = _result(a.data + b.data, (a, b), tracked)
    if tracked:
        def backward():
            _accumulate(a, _unbroadcast(out.grad, a.data.shape))
            _accumulate(b, _unbroadcast(out.grad, b.data.shape))
        out._backward = backward
    return out


def mul(a: Tensor, b) -> Tensor:
    if isinstance(b, Tensor):
        tracked = _track(a, b)
        out = _result(a.data * b.data, (a, b), tracked)
        if tracked:
            def backward():
                _accumulate(a, _unbroadcast(out.grad * b.data, a.data.shape))
                _accumulate(b, _unbroadcast(out.grad * a.data, b.data.shape))
            out._backward = backward
        return out
    scale = float(b)
    tracked = _track(a)
    out = _result(a.data * scale, (a,), tracked)
    if tracked:
        def backward():
            _accumulate(a, out.grad * scale)
        out._backward = backward
    return out


def relu(a: Tensor) -> Tensor:
    tracked = _track(a)
    mask = a.data > 0
    out = _result(np.where(mask, a.data, 0), (a,), tracked)
    if tracked:
        def backward():
            _accumulate(a, out.grad * mask)
        out._backward = backward
    return out


def reshape(a: Tensor, shape) -> Tensor:
    tracked = _track(a)
    out = _result(a.data.reshape(shape), (a,), tracked)
    if tracked:
        def backward():
            _accumulate(a, out.grad.reshape(a.data.shape))
        out._backward = backward
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.data.shape} x {b.data.shape}")
    tracked = _track(a, b)
    out = _result(a.data @ b.data, (a, b), tracked)
    if tracked:
        def backward():
            _accumulate(a, out.grad @ b.data.T)
            _accumulate(b, a.data.T @ out.grad)
        out._backward = backward
    return out


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """x @ weight.T + bias with weight shaped (out_features, in_features)."""
    if x.data.ndim != 2:
        raise ShapeError(f"linear input must be 2-D, got {x.data.shape}")
    if x.data.shape[1] != weight.data.shape[1]:
        raise ShapeError(
            f"linear: input features {x.data.shape[1]} != weight features {weight.data.shape[1]}"
        )
    parents = (x, weight) if bias is None else (x, weight, bias)
    tracked = _track(*parents)
    data = x.data @ weight.data.T
    if bias is not None:
        data = data + bias.data
    out = _result(data, parents, tracked)
    if tracked:
        def backward():
            _accumulate(x, out.grad @ weight.data)
            _accumulate(weight, out.grad.T @ x.data)
            if bias is not None:
                _accumulate(bias, out.grad.sum(axis=0))
        out._backward = backward
    return out


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int) -> tuple[np.ndarray, int, int]:
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride]
    n, c, oh, ow = windows.shape[:4]
    return windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * kh * kw), oh, ow


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation over NCHW input, weight (out_ch, in_ch, kh, kw)."""
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ShapeError(f"conv2d needs 4-D tensors, got {x.data.shape} and {weight.data.shape}")
    n, cin, h, w = x.data.shape
    cout, cin_w, kh, kw = weight.data.shape
    if cin != cin_w:
        raise ShapeError(f"conv2d: input channels {cin} != weight channels {cin_w}")
    if h + 2 * padding < kh or w + 2 * padding < kw:
        raise ShapeError(
            f"conv2d: padded input {h + 2 * padding}x{w + 2 * padding} smaller than kernel {kh}x{kw}"
        )
    if padding:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xp = x.data
    cols, oh, ow = _im2col(xp, kh, kw, stride)
    w_mat = weight.data.reshape(cout, -1)
    out_cols = cols @ w_mat.T
    out_data = out_cols.reshape(n, oh, ow, cout).transpose(0, 3, 1, 2)
    if bias is not None:
        out_data = out_data + bias.data.reshape(1, cout, 1, 1)
    parents = (x, weight) if bias is None else (x, weight, bias)
    tracked = _track(*parents)
    out = _result(out_data, parents, tracked)
    if tracked:
        cols_saved = np.ascontiguousarray(cols)

        def backward():
            g = out.grad
            g_cols = g.transpose(0, 2, 3, 1).reshape(n * oh * ow, cout)
            _accumulate(weight, (g_cols.T @ cols_saved).reshape(weight.data.shape))
            if bias is not None:
                _accumulate(bias, g.sum(axis=(0, 2, 3)))
            if x.requires_grad or x._backward is not None:
                g_windows = (g_cols @ w_mat).reshape(n, oh, ow, cin, kh, kw)
                g_windows = g_windows.transpose(0, 3, 1, 2, 4, 5)
                gxp = np.zeros((n, cin, h + 2 * padding, w + 2 * padding), dtype=g.dtype)
                for ky in range(kh):
                    for kx in range(kw):
                        gxp[:, :, ky:ky + stride * oh:stride,
                            kx:kx + stride * ow:stride] += g_windows[:, :, :, :, ky, kx]
                if padding:
                    gxp = gxp[:, :, padding:padding + h, padding:padding + w]
                _accumulate(x, gxp)
        out._backward = backward
    return out


def batchnorm2d(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
                running_var: np.ndarray, momentum: float, eps: float,
                training: bool) -> Tensor:
    """Per-channel batch normalization over an NCHW tensor.

    Train mode normalizes by the batch's biased statistics and updates the
    running buffers in place; eval mode normalizes by the running buffers.
    """
    if x.data.ndim != 4:
        raise ShapeError(f"batchnorm2d needs a 4-D tensor, got {x.data.shape}")
    n, c, h, w = x.data.shape
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ShapeError(f"batchnorm2d: gamma/beta must have shape ({c},)")
    axes = (0, 2, 3)
    count = n * h * w
    if training:
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mean = running_mean.astype(x.data.dtype, copy=False)
        var = running_var.astype(x.data.dtype, copy=False)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean.reshape(1, c, 1, 1)) * inv_std.reshape(1, c, 1, 1)
    out_data = gamma.data.reshape(1, c, 1, 1) * xhat + beta.data.reshape(1, c, 1, 1)
    tracked = _track(x, gamma, beta)
    out = _result(out_data, (x, gamma, beta), tracked)
    if tracked:
        def backward():
            g = out.grad
            _accumulate(gamma, (g * xhat).sum(axis=axes))
            _accumulate(beta, g.sum(axis=axes))
            if not (x.requires_grad or x._backward is not None):
                return
            g_xhat = g * gamma.data.reshape(1, c, 1, 1)
            if training:
                sum_g = g_xhat.sum(axis=axes)
                sum_gx = (g_xhat * xhat).sum(axis=axes)
                gx = (g_xhat
                      - (sum_g / count).reshape(1, c, 1, 1)
                      - xhat * (sum_gx / count).reshape(1, c, 1, 1))
                gx = gx * inv_std.reshape(1, c, 1, 1)
            else:
                gx = g_xhat * inv_std.reshape(1, c, 1, 1)
            _accumulate(x, gx)
        out._backward = backward
    return out


def spatial_mean(x: Tensor) -> Tensor:
    """Global average pool: (N, C, H, W) -> (N, C)."""
    if x.data.ndim != 4:
        raise ShapeError(f"spatial_mean needs a 4-D tensor, got {x.data.shape}")
    n, c, h, w = x.data.shape
    tracked = _track(x)
    out = _result(x.data.mean(axis=(2, 3)), (x,), tracked)
    if tracked:
        def backward():
            g = out.grad[:, :, None, None] / (h * w)
            _accumulate(x, np.broadcast_to(g, x.data.shape).astype(x.data.dtype, copy=False))
        out._backward = backward
    return out
