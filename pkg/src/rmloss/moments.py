"""Discrete raw and central image moments and the dense moment map."""
from __future__ import annotations

import math
from typing import NamedTuple, Optional

import numpy as np

from .errors import DegenerateMassError, DimensionError


class MomentOrder(NamedTuple):
    """Order ``(p, q)`` for 2D images or ``(p, q, r)`` for volumes."""

    p: int
    q: int
    r: Optional[int] = None

    @property
    def ndim(self):
        return 2 if self.r is None else 3

    def powers(self):
        return (self.p, self.q) if self.r is None else (self.p, self.q, self.r)

    def doubled(self):
        return as_order(tuple(2 * k for k in self.powers()))

    def __str__(self):
        return "(" + ",".join(str(k) for k in self.powers()) + ")"


def as_order(order) -> MomentOrder:
    """Coerce a tuple/list/MomentOrder into a validated :class:`MomentOrder`."""
    if isinstance(order, MomentOrder):
        powers = order.powers()
    else:
        powers = tuple(order)
    if len(powers) not in (2, 3):
        raise DimensionError(f"moment order needs 2 or 3 components, got {powers!r}")
    if any(int(k) != k or k < 0 for k in powers):
        raise ValueError(f"moment order components must be non-negative integers, got {powers!r}")
    return MomentOrder(*(int(k) for k in powers))


def ipow(x, n):
    """Integer power by repeated multiplication (exact for dyadic values)."""
    if n == 0:
        return np.ones_like(x)
    out = x
    for _ in range(n - 1):
        out = out * x
    return out


def fixed_sum(a, compensated=False):
    """Sum in a fixed (row-major) order.

    ``compensated=True`` returns the correctly rounded sum via ``math.fsum``.
    """
    a = np.ascontiguousarray(a, dtype=np.float64)
    if compensated:
        return math.fsum(a.ravel().tolist())
    return float(np.sum(a.ravel()))


def _check_rank(f, ndim):
    if f.ndim != ndim:
        raise DimensionError(f"tensor rank {f.ndim} does not match order rank {ndim}")


def raw_moment(f, order):
    """Uncentered moment ``sum i^p j^q [k^r] f`` with 1-based coordinates."""
    order = as_order(order)
    f = np.asarray(f, dtype=np.float64)
    _check_rank(f, order.ndim)
    weights = np.ones_like(f)
    for axis, power in enumerate(order.powers()):
        view = [1] * f.ndim
        view[axis] = f.shape[axis]
        coords = np.arange(1, f.shape[axis] + 1, dtype=np.float64).reshape(view)
        weights = weights * ipow(coords, power)
    return fixed_sum(weights * f)


def centroid(f):
    """Mass centroid in 1-based coordinates, one entry per axis."""
    f = np.asarray(f, dtype=np.float64)
    if f.ndim not in (2, 3):
        raise DimensionError(f"centroid needs a 2D or 3D tensor, got rank {f.ndim}")
    mass = raw_moment(f, (0,) * f.ndim)
    if mass == 0:
        raise DegenerateMassError("zeroth moment is zero; centroid undefined")
    out = []
    for axis in range(f.ndim):
        order = [0] * f.ndim
        order[axis] = 1
        out.append(raw_moment(f, order) / mass)
    return tuple(out)


def moment_weights(grid, order):
    """Product of per-axis coordinate powers, shape ``grid.shape``."""
    order = as_order(order)
    if order.ndim != grid.ndim:
        raise DimensionError(f"order {order} does not match {grid.ndim}D grid")
    weights = None
    for axis, power in zip(grid.axes, order.powers()):
        if power == 0:
            continue
        term = ipow(axis, power)
        weights = term if weights is None else weights * term
    if weights is None:
        return np.ones(grid.shape)
    return weights


def _check_grid(f, grid):
    if tuple(f.shape[-grid.ndim:]) != tuple(grid.shape) or f.ndim < grid.ndim:
        raise DimensionError(f"tensor shape {f.shape} does not match grid shape {grid.shape}")


def mu_map(f, grid, order):
    """Coordinate-weighted image, element-wise product of axis powers and ``f``.

    Leading axes beyond the grid rank (batch, channel) are broadcast over.
    """
    order = as_order(order)
    f = np.asarray(f, dtype=np.float64)
    _check_grid(f, grid)
    if order.ndim != grid.ndim:
        raise DimensionError(f"order {order} does not match {grid.ndim}D grid")
    return moment_weights(grid, order) * f


def central_moment(f, grid, order, compensated=False):
    """Image-center central moment, the sum of :func:`mu_map`."""
    return fixed_sum(mu_map(f, grid, order), compensated=compensated)
