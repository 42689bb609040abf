"""Central finite differences for checking analytic gradients."""
from __future__ import annotations

import numpy as np

FD_STEP = 1e-6
# denominators below this are treated as this, so gradients that are zero up
# to rounding do not produce meaningless relative errors
REL_FLOOR = 1e-6


def numerical_gradient(f, x, indices=None, step=FD_STEP):
    """Central-difference estimate of ``df/dx`` for a scalar function ``f``.

    ``x`` is perturbed in place and restored. ``indices`` restricts the
    estimate to a list of flat indices (others are left as NaN).
    """
    flat = x.reshape(-1)
    grad = np.full(flat.shape, np.nan)
    todo = range(flat.size) if indices is None else indices
    for i in todo:
        orig = flat[i]
        flat[i] = orig + step
        fp = f()
        flat[i] = orig - step
        fm = f()
        flat[i] = orig
        grad[i] = (fp - fm) / (2 * step)
    return grad.reshape(x.shape)


def relative_error(analytic, numeric, floor=REL_FLOOR):
    """Element-wise ``|a - n| / max(|a|, |n|, floor)``."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def max_relative_error(analytic, numeric, indices=None, floor=REL_FLOOR):
    a = np.asarray(analytic).reshape(-1)
    n = np.asarray(numeric).reshape(-1)
    if indices is not None:
        a, n = a[list(indices)], n[list(indices)]
    if a.size == 0:
        return 0.0
    return float(relative_error(a, n, floor).max())
