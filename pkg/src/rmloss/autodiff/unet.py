"""Two-level U-Net-lite built from the engine ops (2D or 3D)."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigurationError, DimensionError
from . import engine as E

DEFAULT_WIDTHS = (8, 16, 32)

# (name, input-channel rule, output-channel rule) in forward order
_LAYOUT = (
    ("enc1.conv1", "in", 0), ("enc1.conv2", 0, 0),
    ("enc2.conv1", 0, 1), ("enc2.conv2", 1, 1),
    ("bott.conv1", 1, 2), ("bott.conv2", 2, 2),
    ("dec2.conv1", (2, 1), 1), ("dec2.conv2", 1, 1),
    ("dec1.conv1", (1, 0), 0), ("dec1.conv2", 0, 0),
    ("out", 0, "classes"),
)


@dataclass
class UNetLiteParams:
    """Named kernels/biases plus the training-only dropout rate.

    Kernels are ``(Cout, Cin, *K)``; biases ``(Cout,)``. Names follow
    ``<block>.<layer>.weight`` / ``.bias``.
    """

    tensors: dict
    dropout: float = 0.1

    @property
    def ndim(self):
        return self.tensors["out.weight"].ndim - 2

    @property
    def in_channels(self):
        return self.tensors["enc1.conv1.weight"].shape[1]

    @property
    def n_classes(self):
        return self.tensors["out.weight"].shape[0]

    @property
    def widths(self):
        t = self.tensors
        return (t["enc1.conv1.weight"].shape[0], t["enc2.conv1.weight"].shape[0],
                t["bott.conv1.weight"].shape[0])

    def n_parameters(self):
        return int(sum(a.size for a in self.tensors.values()))

    def copy(self):
        return UNetLiteParams({k: v.copy() for k, v in self.tensors.items()}, self.dropout)

    def validate(self):
        expected = param_shapes(self.in_channels, self.n_classes, self.widths, self.ndim)
        if set(expected) != set(self.tensors):
            raise ConfigurationError("parameter table does not match the U-Net-lite layout",
                                     field="params")
        for name, shape in expected.items():
            if self.tensors[name].shape != shape:
                raise DimensionError(f"{name}: shape {self.tensors[name].shape} != {shape}")
            if not np.all(np.isfinite(self.tensors[name])):
                raise ConfigurationError(f"{name} holds non-finite values", field=name)
        if not 0 <= self.dropout < 1:
            raise ConfigurationError(f"dropout must lie in [0, 1), got {self.dropout}",
                                     field="dropout")
        return self


def param_shapes(in_channels, n_classes, widths=DEFAULT_WIDTHS, ndim=2):
    def width(rule):
        if rule == "in":
            return in_channels
        if rule == "classes":
            return n_classes
        if isinstance(rule, tuple):
            return sum(widths[r] for r in rule)
        return widths[rule]

    shapes = {}
    for name, cin, cout in _LAYOUT:
        k = 1 if name == "out" else 3
        shapes[f"{name}.weight"] = (width(cout), width(cin)) + (k,) * ndim
        shapes[f"{name}.bias"] = (width(cout),)
    return shapes


def init_params(in_channels=1, n_classes=3, widths=DEFAULT_WIDTHS, ndim=2, seed=0, dropout=0.1):
    """He-normal kernels and zero biases, deterministic in ``seed``."""
    if len(widths) != 3 or any(int(w) < 1 for w in widths):
        raise ConfigurationError(f"widths must be three positive ints, got {widths}",
                                 field="widths")
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in param_shapes(in_channels, n_classes, tuple(widths), ndim).items():
        if name.endswith(".weight"):
            fan_in = int(np.prod(shape[1:]))
            tensors[name] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
        else:
            tensors[name] = np.zeros(shape)
    return UNetLiteParams(tensors, dropout).validate()


def _block(x, leaves, prefix):
    x = E.relu(E.conv(x, leaves[f"{prefix}.conv1.weight"], leaves[f"{prefix}.conv1.bias"]))
    return E.relu(E.conv(x, leaves[f"{prefix}.conv2.weight"], leaves[f"{prefix}.conv2.bias"]))


def unet_lite_forward(params, image, training=False, rng=None, requires_grad=False):
    """Run the network on a ``(N, Cin, *S)`` batch.

    Returns ``(logits, leaves)`` where ``leaves`` maps parameter names to
    the graph leaves (for reading ``.grad`` after :func:`engine.backward`).
    Spatial extents must be divisible by 4.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != params.ndim + 2:
        raise DimensionError(f"expected a (N, C, {params.ndim} spatial) batch, got {image.shape}")
    if image.shape[1] != params.in_channels:
        raise DimensionError(f"input has {image.shape[1]} channels, params expect "
                             f"{params.in_channels}")
    if any(s % 4 for s in image.shape[2:]):
        raise ConfigurationError(f"spatial extents {image.shape[2:]} must be divisible by 4",
                                 field="shape")
    leaves = {k: E.leaf(v, requires_grad=requires_grad) for k, v in params.tensors.items()}
    x = E.Node(image)
    skip1 = _block(x, leaves, "enc1")
    skip2 = _block(E.maxpool(skip1), leaves, "enc2")
    bott = _block(E.maxpool(skip2), leaves, "bott")
    bott = E.dropout(bott, params.dropout, training, rng)
    up2 = _block(E.concat_channels(E.upsample_nearest(bott), skip2), leaves, "dec2")
    up1 = _block(E.concat_channels(E.upsample_nearest(up2), skip1), leaves, "dec1")
    logits = E.conv(up1, leaves["out.weight"], leaves["out.bias"])
    return logits, leaves
