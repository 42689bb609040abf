"""Tiny reverse-mode differentiation over dense numpy tensors.

Tensors are laid out ``(N, C, *spatial)`` with one, two or three spatial
axes. Each op builds a :class:`Node` whose ``_backward`` closure pushes the
node's gradient into its parents.
"""
from __future__ import annotations

import contextlib

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ConfigurationError, DimensionError, NumericError

_DEBUG = False


def set_debug(flag):
    """Raise :class:`NumericError` as soon as any op produces a non-finite value."""
    global _DEBUG
    _DEBUG = bool(flag)


@contextlib.contextmanager
def debug_mode(flag=True):
    previous = _DEBUG
    set_debug(flag)
    try:
        yield
    finally:
        set_debug(previous)


class Node:
    __slots__ = ("value", "grad", "parents", "op", "requires_grad", "_backward")

    def __init__(self, value, parents=(), op="leaf", requires_grad=False):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents = tuple(parents)
        self.op = op
        self.requires_grad = requires_grad or any(p.requires_grad for p in self.parents)
        self._backward = None
        if _DEBUG and not np.all(np.isfinite(self.value)):
            raise NumericError(f"non-finite value produced by op {op!r}")

    @property
    def shape(self):
        return self.value.shape

    def accumulate(self, grad):
        if not self.requires_grad:
            return
        if grad.shape != self.value.shape:
            raise DimensionError(f"gradient shape {grad.shape} != value shape {self.value.shape}")
        if self.grad is None:
            self.grad = np.array(grad, dtype=np.float64, copy=True)
        else:
            self.grad += grad

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Node(op={self.op!r}, shape={self.value.shape})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)


def leaf(value, requires_grad=True):
    return Node(value, requires_grad=requires_grad)


def _wrap(x):
    return x if isinstance(x, Node) else Node(x)


def _topological(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if id(parent) not in seen and parent.requires_grad:
                stack.append((parent, False))
    return order


def backward(root, grad=None):
    """Accumulate d(root)/d(node) into ``.grad`` of every upstream node.

    ``grad`` seeds the root (defaults to ones). Gradients add onto whatever
    is already stored, so several calls accumulate.
    """
    if grad is None:
        grad = np.ones_like(root.value)
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != root.value.shape:
        raise DimensionError(f"seed gradient shape {grad.shape} != root shape {root.value.shape}")
    order = _topological(root)
    pending = {id(root): grad}
    for node in reversed(order):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if _DEBUG and not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient reaching op {node.op!r}")
        if not node.parents:
            node.accumulate(g)
            continue
        contributions = node._backward(g)
        for parent, contrib in zip(node.parents, contributions):
            if contrib is None or not parent.requires_grad:
                continue
            if id(parent) in pending:
                pending[id(parent)] = pending[id(parent)] + contrib
            else:
                pending[id(parent)] = contrib


# -- elementwise ------------------------------------------------------------

def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a, b):
    a, b = _wrap(a), _wrap(b)
    out = Node(a.value + b.value, (a, b), "add")
    out._backward = lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))
    return out


def mul(a, b):
    a, b = _wrap(a), _wrap(b)
    out = Node(a.value * b.value, (a, b), "mul")
    out._backward = lambda g: (_unbroadcast(g * b.value, a.shape),
                               _unbroadcast(g * a.value, b.shape))
    return out


def relu(x):
    mask = x.value > 0
    out = Node(np.where(mask, x.value, 0.0), (x,), "relu")
    out._backward = lambda g: (g * mask,)
    return out


def sigmoid(x):
    s = 0.5 * (1.0 + np.tanh(0.5 * x.value))
    out = Node(s, (x,), "sigmoid")
    out._backward = lambda g: (g * s * (1.0 - s),)
    return out


def softmax_channels(x):
    """Softmax over axis 1."""
    shifted = x.value - x.value.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=1, keepdims=True)
    out = Node(p, (x,), "softmax")
    out._backward = lambda g: (p * (g - np.sum(g * p, axis=1, keepdims=True)),)
    return out


def sum(x):  # noqa: A001 - mirrors the op name
    out = Node(np.sum(x.value), (x,), "sum")
    out._backward = lambda g: (np.full(x.shape, g, dtype=np.float64),)
    return out


def mean(x):
    n = x.value.size
    out = Node(np.sum(x.value) / n, (x,), "mean")
    out._backward = lambda g: (np.full(x.shape, g / n, dtype=np.float64),)
    return out


def bias_add(x, b):
    """Add a per-channel bias ``b`` of shape ``(C,)`` to ``(N, C, *S)``."""
    if b.value.ndim != 1 or b.shape[0] != x.shape[1]:
        raise DimensionError(f"bias shape {b.shape} does not match {x.shape[1]} channels")
    view = (1, -1) + (1,) * (x.value.ndim - 2)
    out = Node(x.value + b.value.reshape(view), (x, b), "bias_add")
    reduce_axes = (0,) + tuple(range(2, x.value.ndim))
    out._backward = lambda g: (g, g.sum(axis=reduce_axes))
    return out


def dropout(x, rate, training, rng=None):
    """Inverted dropout; the identity (same node) when not training or ``rate == 0``."""
    if not 0 <= rate < 1:
        raise ConfigurationError(f"dropout rate must lie in [0, 1), got {rate}", field="dropout")
    if not training or rate == 0:
        return x
    if rng is None:
        raise ConfigurationError("dropout in training mode needs an rng", field="seed")
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    out = Node(x.value * keep, (x,), "dropout")
    out._backward = lambda g: (g * keep,)
    return out


# -- spatial ----------------------------------------------------------------

def _spatial_axes(ndim):
    return tuple(range(2, ndim))


def _im2col(xv, ksize):
    """Same-padded patches as a ``(N * prod(S), prod(K) * Cin)`` matrix (channel fastest)."""
    nsp = len(ksize)
    pads = [(0, 0)] + [(k // 2, k // 2) for k in ksize] + [(0, 0)]
    padded = np.pad(np.moveaxis(xv, 1, -1), pads)
    patches = sliding_window_view(padded, ksize, axis=tuple(range(1, 1 + nsp)))
    # (N, *S, Cin, *K) -> (N, *S, *K, Cin)
    perm = tuple(range(1 + nsp)) + tuple(range(2 + nsp, 2 + 2 * nsp)) + (1 + nsp,)
    return patches.transpose(perm).reshape(-1, xv.shape[1] * int(np.prod(ksize)))


def _kernel_matrix(wv):
    """``(Cout, Cin, *K)`` -> ``(Cout, prod(K) * Cin)`` matching :func:`_im2col`."""
    return np.moveaxis(wv, 1, -1).reshape(wv.shape[0], -1)


def _channels_first(flat, batch, spatial):
    out = flat.reshape((batch,) + tuple(spatial) + (flat.shape[-1],))
    return np.ascontiguousarray(np.moveaxis(out, -1, 1))


def conv(x, w, b=None):
    """Same-padded, stride-1 cross-correlation.

    ``x`` is ``(N, Cin, *S)`` and ``w`` is ``(Cout, Cin, *K)`` with odd
    kernel extents; works for 1, 2 or 3 spatial axes.
    """
    xv, wv = x.value, w.value
    nsp = xv.ndim - 2
    if wv.ndim != nsp + 2 or wv.shape[1] != xv.shape[1]:
        raise DimensionError(f"kernel {wv.shape} incompatible with input {xv.shape}")
    ksize = wv.shape[2:]
    if any(k % 2 == 0 for k in ksize):
        raise ConfigurationError(f"kernel extents must be odd, got {ksize}", field="kernel")
    batch, spatial = xv.shape[0], xv.shape[2:]
    cout = wv.shape[0]
    cols = _im2col(xv, ksize)
    wmat = _kernel_matrix(wv)
    out = Node(_channels_first(cols @ wmat.T, batch, spatial), (x, w), "conv")

    def _backward(g):
        gflat = np.moveaxis(g, 1, -1).reshape(-1, cout)
        gw = None
        if w.requires_grad:
            gw = np.moveaxis((gflat.T @ cols).reshape((cout,) + ksize + (wv.shape[1],)), -1, 1)
        gx = None
        if x.requires_grad:
            # correlate the output gradient with the flipped, transposed kernel
            wflip = np.flip(wv, axis=tuple(range(2, 2 + nsp))).swapaxes(0, 1)
            gx = _channels_first(_im2col(g, ksize) @ _kernel_matrix(wflip).T,
                                 batch, spatial)
        return gx, gw

    out._backward = _backward
    if b is not None:
        return bias_add(out, b)
    return out


conv2d = conv
conv3d = conv


def maxpool(x, size=2):
    """Non-overlapping max pooling with window ``size`` on every spatial axis.

    Ties route the gradient to the first maximal element in window order.
    """
    xv = x.value
    spatial = xv.shape[2:]
    if any(s % size for s in spatial):
        raise ConfigurationError(f"spatial extents {spatial} not divisible by pool size {size}",
                                 field="shape")
    nsp = len(spatial)
    split = list(xv.shape[:2])
    for s in spatial:
        split += [s // size, size]
    blocks = xv.reshape(split)
    # bring window axes to the end: (N, C, *S/size, *window)
    perm = [0, 1] + [2 + 2 * k for k in range(nsp)] + [3 + 2 * k for k in range(nsp)]
    blocks = blocks.transpose(perm)
    flat = blocks.reshape(blocks.shape[:2 + nsp] + (-1,))
    arg = np.argmax(flat, axis=-1)
    value = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    out = Node(value, (x,), "maxpool")

    def _backward(g):
        gflat = np.zeros_like(flat)
        np.put_along_axis(gflat, arg[..., None], g[..., None], axis=-1)
        gblocks = gflat.reshape(blocks.shape).transpose(np.argsort(perm))
        return (gblocks.reshape(xv.shape),)

    out._backward = _backward
    return out


def upsample_nearest(x, size=2):
    """Repeat every element ``size`` times along each spatial axis."""
    value = x.value
    sp = _spatial_axes(value.ndim)
    for axis in sp:
        value = np.repeat(value, size, axis=axis)
    out = Node(value, (x,), "upsample")

    def _backward(g):
        shape = list(g.shape[:2])
        for s in g.shape[2:]:
            shape += [s // size, size]
        summed = g.reshape(shape).sum(axis=tuple(3 + 2 * k for k in range(len(sp))))
        return (summed,)

    out._backward = _backward
    return out


maxpool2x2 = maxpool
upsample_nearest2x2 = upsample_nearest


def concat_channels(a, b):
    if a.shape[:1] != b.shape[:1] or a.shape[2:] != b.shape[2:]:
        raise DimensionError(f"cannot concatenate {a.shape} and {b.shape} along channels")
    ca = a.shape[1]
    out = Node(np.concatenate([a.value, b.value], axis=1), (a, b), "concat")
    out._backward = lambda g: (g[:, :ca], g[:, ca:])
    return out
