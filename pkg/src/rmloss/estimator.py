"""scikit-learn compatible wrappers around the training stack."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .autodiff import SgdConfig, init_params, predict_proba, train
from .data import normalize_volume
from .errors import ConfigurationError, DimensionError, LabelError
from .grid import GridConvention, make_grid
from .losses import PRESETS, RmConfig
from .metrics import dice_jaccard
from .moments import as_order, central_moment


def _check_images(X, ndim=None):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim not in (3, 4, 5):
        raise DimensionError(f"expected (n, *spatial) or (n, C, *spatial) images, got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("images contain NaN or infinity")
    if ndim is not None and X.ndim == ndim + 1:
        X = X[:, None]
    return X


class RMSegmenter(ClassifierMixin, BaseEstimator):
    """U-Net-lite pixel classifier trained with CE + Dice + alpha * RM loss.

    ``X`` is ``(n, *spatial)`` (single channel) or ``(n, C, *spatial)``;
    ``y`` integer masks ``(n, *spatial)`` with labels ``0..n_classes-1``.
    ``spatial_dims`` disambiguates single-channel 3D volumes from
    multi-channel 2D images.

    Parameters
    ----------
    loss : str
        Preset name (``baseline``, ``mse``, ``rm-2d-best``, ...). ``orders``
        and ``alpha`` override the preset when given.
    """

    def __init__(self, loss="rm-2d-best", orders=None, alpha=None, convention="one-based",
                 normalized=True, reduction="sum", widths=(8, 16, 32), dropout=0.1,
                 learning_rate=0.01, iterations=2400, batch_size=2, spatial_dims=2,
                 standardize=False, random_state=0):
        self.loss = loss
        self.orders = orders
        self.alpha = alpha
        self.convention = convention
        self.normalized = normalized
        self.reduction = reduction
        self.widths = widths
        self.dropout = dropout
        self.learning_rate = learning_rate
        self.iterations = iterations
        self.batch_size = batch_size
        self.spatial_dims = spatial_dims
        self.standardize = standardize
        self.random_state = random_state

    def rm_config(self):
        if self.loss not in PRESETS:
            raise ConfigurationError(f"unknown loss preset {self.loss!r}", field="loss")
        kwargs = dict(PRESETS[self.loss])
        if self.orders is not None:
            kwargs["orders"] = tuple(as_order(o) for o in self.orders)
        if self.alpha is not None:
            kwargs["alpha"] = self.alpha
        return RmConfig(convention=GridConvention(self.convention), normalized=self.normalized,
                        reduction=self.reduction, **kwargs)

    def _prepare(self, X):
        X = _check_images(X, self.spatial_dims)
        if X.ndim != self.spatial_dims + 2:
            raise DimensionError(f"images {X.shape} do not have {self.spatial_dims} spatial axes")
        if self.standardize:
            X = np.stack([normalize_volume(x) for x in X])
        return X

    def fit(self, X, y):
        X = self._prepare(X)
        y = np.asarray(y)
        if y.shape != X.shape[:1] + X.shape[2:]:
            raise DimensionError(f"masks {y.shape} do not match images {X.shape}")
        if not np.issubdtype(y.dtype, np.integer):
            if not np.all(y == np.round(y)):
                raise LabelError("masks must hold integer labels")
            y = y.astype(np.int64)
        if y.min() < 0:
            raise LabelError("labels must be non-negative")
        config = self.rm_config()
        if config.ndim != self.spatial_dims:
            raise ConfigurationError(f"loss orders are {config.ndim}D but data is "
                                     f"{self.spatial_dims}D", field="orders")
        self.classes_ = np.arange(max(int(y.max()) + 1, 2))
        init_seed, sgd_seed = np.random.SeedSequence(self.random_state).generate_state(2)
        params = init_params(X.shape[1], len(self.classes_), tuple(self.widths),
                             self.spatial_dims, seed=int(init_seed), dropout=self.dropout)
        sgd = SgdConfig(self.learning_rate, self.iterations, self.batch_size, int(sgd_seed))
        self.params_, self.loss_trace_ = train(params, X, y, config, sgd)
        self.n_features_in_ = int(X.shape[1])
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "params_")
        return predict_proba(self.params_, self._prepare(X))

    def predict(self, X):
        return np.argmax(self.predict_proba(X), axis=1).astype(np.int64)

    def score(self, X, y, sample_weight=None):
        """Mean foreground Dice over samples and classes."""
        pred = self.predict(X)
        scores = [dice_jaccard(p, t, c)[0] for p, t in zip(pred, np.asarray(y))
                  for c in self.classes_[1:]]
        weights = None
        if sample_weight is not None:
            weights = np.repeat(np.asarray(sample_weight, dtype=np.float64), len(self.classes_) - 1)
        return float(np.average(scores, weights=weights))


class MomentFeatures(TransformerMixin, BaseEstimator):
    """Map each image to its central moments for a list of orders.

    Output is ``(n_samples, len(orders))``; orders must match the image rank.
    """

    def __init__(self, orders=((0, 0), (1, 0), (0, 1), (2, 0), (0, 2)), convention="one-based",
                 normalized=True):
        self.orders = orders
        self.convention = convention
        self.normalized = normalized

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=np.float64)
        orders = [as_order(o) for o in self.orders]
        if any(o.ndim != X.ndim - 1 for o in orders):
            raise DimensionError(f"orders {self.orders} do not match images of shape {X.shape[1:]}")
        self.image_shape_ = X.shape[1:]
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        return self

    def transform(self, X):
        check_is_fitted(self, "image_shape_")
        X = np.asarray(X, dtype=np.float64)
        if X.shape[1:] != self.image_shape_:
            raise DimensionError(f"fitted on {self.image_shape_}, got {X.shape[1:]}")
        grid = make_grid(self.image_shape_, self.convention, self.normalized)
        return np.array([[central_moment(x, grid, o) for o in self.orders] for x in X])
