"""Plain SGD training loop and the RMCK parameter checkpoint format."""
from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass

import numpy as np

from ..errors import (ConfigurationError, DimensionError, DivergenceError, NumericError,
                      VersionError)
from ..losses import softmax, total_loss
from . import engine as E
from .unet import UNetLiteParams, unet_lite_forward

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"RMCK"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class SgdConfig:
    learning_rate: float = 0.05
    iterations: int = 300
    batch_size: int = 4
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigurationError(f"learning_rate must be > 0, got {self.learning_rate}",
                                     field="learning_rate")
        if int(self.iterations) < 1:
            raise ConfigurationError("iterations must be >= 1", field="iterations")
        if int(self.batch_size) < 1:
            raise ConfigurationError("batch_size must be >= 1", field="batch_size")


def loss_and_grad(params, images, masks, config, training=False, rng=None):
    """Objective value on a batch and its gradient for every parameter.

    Returns ``(LossValue, grads)`` with ``grads`` keyed like ``params.tensors``.
    """
    logits, leaves = unet_lite_forward(params, images, training=training, rng=rng,
                                       requires_grad=True)
    loss = total_loss(logits.value, masks, config)
    E.backward(logits, loss.gradient)
    grads = {k: (leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value))
             for k, leaf in leaves.items()}
    return loss, grads


def _check_data(params, images, masks):
    images = np.asarray(images, dtype=np.float64)
    masks = np.asarray(masks)
    if len(images) == 0:
        raise ConfigurationError("training set is empty", field="dataset")
    if images.ndim == params.ndim + 1:
        images = images[:, None]
    if images.shape[:1] + images.shape[2:] != masks.shape:
        raise DimensionError(f"images {images.shape} and masks {masks.shape} disagree")
    return images, masks


def train(params, images, masks, config, sgd, callback=None):
    """Fit ``params`` with plain SGD (no momentum, no weight decay).

    Each iteration draws ``batch_size`` distinct samples (all samples when
    the set is smaller) from a generator seeded by ``sgd.seed``. Returns
    ``(trained_params, trace)`` where ``trace`` is a list of dicts with the
    total loss and its CE / Dice / RM components.
    """
    images, masks = _check_data(params, images, masks)
    params = params.copy()
    rng = np.random.default_rng(sgd.seed)
    n = len(images)
    batch = min(int(sgd.batch_size), n)
    trace = []
    for it in range(int(sgd.iterations)):
        idx = np.sort(rng.choice(n, size=batch, replace=False))
        drop_rng = np.random.default_rng(rng.integers(2**63))
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                loss, grads = loss_and_grad(params, images[idx], masks[idx], config,
                                            training=True, rng=drop_rng)
        except NumericError as exc:
            raise DivergenceError(f"non-finite values at iteration {it}: {exc}",
                                  iteration=it) from exc
        if not math.isfinite(loss.value):
            raise DivergenceError(f"non-finite loss at iteration {it}", iteration=it)
        for name in params.tensors:
            params.tensors[name] = params.tensors[name] - sgd.learning_rate * grads[name]
        row = {"iteration": it, "loss": loss.value, **loss.parts}
        trace.append(row)
        if callback is not None:
            callback(row)
        if it % 50 == 0:
            logger.debug("iter %d loss %.6f", it, loss.value)
    return params, trace


def predict_proba(params, images, batch_size=8):
    """Softmax class probabilities ``(N, C, *S)`` in inference mode."""
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == params.ndim + 1:
        images = images[:, None]
    out = []
    for start in range(0, len(images), batch_size):
        logits, _ = unet_lite_forward(params, images[start:start + batch_size], training=False)
        out.append(softmax(logits.value))
    return np.concatenate(out, axis=0)


def predict(params, images, batch_size=8):
    return np.argmax(predict_proba(params, images, batch_size), axis=1).astype(np.int64)


# -- checkpoint -------------------------------------------------------------
# magic "RMCK" | u32 version | f64 dropout | u32 count |
# count x (u32 name_len | name utf-8 | u32 rank | rank x u64 extent | f64 data)
# all little-endian.

def save_checkpoint(params, path):
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<d", params.dropout))
        fh.write(struct.pack("<I", len(params.tensors)))
        for name in sorted(params.tensors):
            arr = np.ascontiguousarray(params.tensors[name], dtype="<f8")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != CHECKPOINT_MAGIC:
        raise VersionError(f"{path}: not an RMCK checkpoint")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != CHECKPOINT_VERSION:
        raise VersionError(f"{path}: unsupported checkpoint version {version}")
    try:
        (dropout,) = struct.unpack_from("<d", data, 8)
        (count,) = struct.unpack_from("<I", data, 16)
        pos = 20
        tensors = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", data, pos)
            pos += 4
            name = data[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<I", data, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}Q", data, pos)
            pos += 8 * rank
            size = int(np.prod(shape, dtype=np.int64))
            arr = np.frombuffer(data, dtype="<f8", count=size, offset=pos).reshape(shape)
            pos += 8 * size
            tensors[name] = arr.astype(np.float64)
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise VersionError(f"{path}: truncated or corrupt checkpoint ({exc})") from exc
    return UNetLiteParams(tensors, dropout).validate()
