"""Residual-moment loss, standard segmentation losses and the combined objective.

Every loss returns a :class:`LossValue` carrying the scalar value and its
analytic gradient with respect to the first argument.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DimensionError, LabelError, NumericError
from .grid import GridConvention, make_grid
from .moments import as_order, fixed_sum, moment_weights, mu_map

DICE_SMOOTH = 1e-5


class Reduction(str, enum.Enum):
    SUM = "sum"
    MEAN = "mean"


@dataclass(frozen=True)
class LossValue:
    value: float
    gradient: np.ndarray
    parts: dict = field(default_factory=dict, compare=False)


@dataclass(frozen=True)
class RmConfig:
    """One residual-moment loss instance: an order set and its weight."""

    orders: tuple
    alpha: float = 1.0
    convention: GridConvention = GridConvention.ONE_BASED
    normalized: bool = True
    reduction: Reduction = Reduction.SUM

    def __post_init__(self):
        orders = tuple(as_order(o) for o in self.orders)
        if not orders:
            raise ValueError("RmConfig.orders must be non-empty")
        if len({o.ndim for o in orders}) != 1:
            raise DimensionError("all orders in an RmConfig must share one rank")
        if not self.alpha >= 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        object.__setattr__(self, "orders", orders)
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "convention", GridConvention(self.convention))
        object.__setattr__(self, "reduction", Reduction(self.reduction))

    @property
    def ndim(self):
        return self.orders[0].ndim

    def grid_for(self, shape):
        return make_grid(shape, self.convention, self.normalized)

    def to_dict(self):
        return {
            "orders": [list(o.powers()) for o in self.orders],
            "alpha": self.alpha,
            "convention": self.convention.value,
            "normalized": self.normalized,
            "reduction": self.reduction.value,
        }


def _as_pair(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionError(f"prediction shape {pred.shape} != target shape {target.shape}")
    if not (np.all(np.isfinite(pred)) and np.all(np.isfinite(target))):
        raise NumericError("loss inputs must be finite")
    return pred, target


def rm_loss(pred, target, grid, order, reduction=Reduction.SUM):
    """Squared difference of the moment maps of ``pred`` and ``target``.

    The gradient is ``2 * w**2 * (pred - target)`` with ``w`` the moment
    weight of each pixel. Leading batch/channel axes are summed over.
    """
    pred, target = _as_pair(pred, target)
    order = as_order(order)
    diff = mu_map(pred, grid, order) - mu_map(target, grid, order)
    value = fixed_sum(diff * diff)
    weights = moment_weights(grid, order)
    grad = 2.0 * (weights * weights) * (pred - target)
    if Reduction(reduction) is Reduction.MEAN:
        value /= pred.size
        grad = grad / pred.size
    return LossValue(value, grad)


def rm_loss_multi(pred, target, grid, config):
    """Sum of :func:`rm_loss` over ``config.orders`` (``alpha`` not applied)."""
    value = 0.0
    grad = None
    parts = {}
    for order in config.orders:
        term = rm_loss(pred, target, grid, order, config.reduction)
        parts[str(order)] = term.value
        value += term.value
        grad = term.gradient if grad is None else grad + term.gradient
    return LossValue(value, grad, parts)


def mse_loss(pred, target):
    """Sum of squared residuals; the zeroth-order residual-moment loss."""
    pred, target = _as_pair(pred, target)
    diff = pred - target
    return LossValue(fixed_sum(diff * diff), 2.0 * diff)


def dice_loss(pred_prob, target, smooth=DICE_SMOOTH):
    """Smoothed soft-Dice loss ``1 - (2*sum(p*t) + s) / (sum(p) + sum(t) + s)``."""
    p, t = _as_pair(pred_prob, target)
    if p.size and (p.min() < 0 or p.max() > 1):
        raise NumericError("dice_loss expects probabilities in [0, 1]")
    inter = fixed_sum(p * t)
    denom = fixed_sum(p) + fixed_sum(t) + smooth
    numer = 2.0 * inter + smooth
    value = 1.0 - numer / denom
    grad = -(2.0 * t * denom - numer) / (denom * denom)
    return LossValue(value, grad)


def softmax(logits, axis=1):
    shifted = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(logits, axis=1):
    shifted = logits - logits.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def one_hot(target, n_classes, axis=1):
    """Integer mask ``(N, *S)`` to float one-hot ``(N, C, *S)``."""
    target = np.asarray(target)
    if target.size and (target.min() < 0 or target.max() >= n_classes):
        raise LabelError(f"labels must lie in [0, {n_classes}), got range "
                         f"[{target.min()}, {target.max()}]")
    out = (np.arange(n_classes).reshape((1, n_classes) + (1,) * (target.ndim - 1))
           == target[:, None])
    return np.moveaxis(out.astype(np.float64), 1, axis)


def ce_loss(logits, target_class):
    """Mean pixel-wise softmax cross entropy over channel axis 1.

    ``logits`` is ``(N, C, *S)`` and ``target_class`` an integer mask ``(N, *S)``.
    """
    logits = np.asarray(logits, dtype=np.float64)
    target_class = np.asarray(target_class)
    if logits.ndim < 2 or target_class.shape != logits.shape[:1] + logits.shape[2:]:
        raise DimensionError(f"logits {logits.shape} incompatible with target {target_class.shape}")
    if not np.all(np.isfinite(logits)):
        raise NumericError("ce_loss logits must be finite")
    onehot = one_hot(target_class, logits.shape[1])
    n = target_class.size
    value = -fixed_sum(log_softmax(logits) * onehot) / n
    grad = (softmax(logits) - onehot) / n
    return LossValue(value, grad)


def softmax_backward(prob, grad_prob, axis=1):
    """Pull a gradient w.r.t. softmax outputs back to the logits."""
    return prob * (grad_prob - np.sum(grad_prob * prob, axis=axis, keepdims=True))


def total_loss(logits, target, config, pred_prob=None, grid=None, smooth=DICE_SMOOTH):
    """``CE + Dice + alpha * sum_orders RM`` with gradient w.r.t. ``logits``.

    Dice is averaged over the foreground channels and computed over the
    whole batch; the residual-moment term uses the softmax probability of
    each foreground channel against its one-hot target, summed over
    channels and averaged over the batch.
    """
    logits = np.asarray(logits, dtype=np.float64)
    target = np.asarray(target)
    n_classes = logits.shape[1]
    if pred_prob is None:
        pred_prob = softmax(logits)
    spatial = logits.shape[2:]
    if grid is None:
        grid = config.grid_for(spatial)
    onehot = one_hot(target, n_classes)
    batch = logits.shape[0]

    ce = ce_loss(logits, target)
    grad_prob = np.zeros_like(pred_prob)
    dice_value = 0.0
    foreground = range(1, n_classes)
    for c in foreground:
        d = dice_loss(pred_prob[:, c], onehot[:, c], smooth)
        dice_value += d.value / len(foreground)
        grad_prob[:, c] += d.gradient / len(foreground)

    rm_value = 0.0
    if config.alpha > 0:
        for c in foreground:
            rm = rm_loss_multi(pred_prob[:, c], onehot[:, c], grid, config)
            rm_value += rm.value / batch
            grad_prob[:, c] += config.alpha * rm.gradient / batch

    value = ce.value + dice_value + config.alpha * rm_value
    grad = ce.gradient + softmax_backward(pred_prob, grad_prob)
    return LossValue(value, grad, {"ce": ce.value, "dice": dice_value, "rm": rm_value})


PRESETS = {
    "baseline": dict(orders=((0, 0),), alpha=0.0),
    "mse": dict(orders=((0, 0),), alpha=1.0),
    "rm-2d-best": dict(orders=((2, 0), (0, 2), (2, 2)), alpha=1.0),
    "rm-2d-first": dict(orders=((1, 0), (0, 1)), alpha=1.0),
    "baseline-3d": dict(orders=((0, 0, 0),), alpha=0.0),
    "rm-3d": dict(orders=((2, 0, 0), (0, 2, 0), (0, 0, 2)), alpha=0.01),
    "rm-3d-best": dict(orders=((2, 0, 0), (0, 2, 0), (0, 0, 2), (2, 2, 2)), alpha=0.01),
    "mse-3d": dict(orders=((0, 0, 0),), alpha=0.01),
}

# rank-generic names: "rm" picks the best order set for the data rank
PRESET_ALIASES = {
    "rm": {2: "rm-2d-best", 3: "rm-3d-best"},
    "baseline": {2: "baseline", 3: "baseline-3d"},
    "mse": {2: "mse", 3: "mse-3d"},
}


def resolve_preset(name, ndim):
    """Preset name for data of rank ``ndim``; generic aliases map by rank."""
    if name in PRESET_ALIASES:
        return PRESET_ALIASES[name][ndim]
    if name not in PRESETS:
        raise ConfigurationError(f"unknown loss preset {name!r}", field="preset")
    return name


def preset(name, **overrides):
    """Expand a named loss preset into an :class:`RmConfig`."""
    try:
        kwargs = dict(PRESETS[name])
    except KeyError:
        raise ConfigurationError(f"unknown loss preset {name!r}; choose from {sorted(PRESETS)}",
                                 field="preset") from None
    kwargs.update(overrides)
    return RmConfig(**kwargs)
