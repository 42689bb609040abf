"""Centered coordinate matrices used to weight pixels by their location."""
from __future__ import annotations

import enum
import functools
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError


class GridConvention(str, enum.Enum):
    """Indexing/centering rule for coordinate matrices.

    ``ONE_BASED`` uses 1-based indices ``1..H`` centered at ``H/2`` which is
    half a pixel off the geometric middle. ``SYMMETRIC`` uses ``0..H-1``
    centered at ``(H-1)/2`` so flipping an axis negates its coordinates.
    """

    ONE_BASED = "one-based"
    SYMMETRIC = "symmetric"


@dataclass(frozen=True, eq=False)
class CoordGrid:
    """Per-axis centered coordinate rasters of a fixed image shape.

    ``axes[k]`` has the full image shape and holds the (optionally
    normalized) centered coordinate of axis ``k`` at every element.
    """

    shape: tuple
    axes: tuple
    normalized: bool
    convention: GridConvention

    @property
    def ndim(self):
        return len(self.shape)

    def __repr__(self):
        return (f"CoordGrid(shape={self.shape}, convention={self.convention.value}, "
                f"normalized={self.normalized})")


def _axis_values(extent, convention, normalized):
    if convention is GridConvention.ONE_BASED:
        values = np.arange(1, extent + 1, dtype=np.float64) - extent / 2.0
    else:
        values = np.arange(extent, dtype=np.float64) - (extent - 1) / 2.0
    if normalized:
        values = values / extent
    return values


@functools.lru_cache(maxsize=64)
def _cached_grid(shape, convention, normalized):
    axes = []
    for k, extent in enumerate(shape):
        values = _axis_values(extent, convention, normalized)
        view = [1] * len(shape)
        view[k] = extent
        axis = np.broadcast_to(values.reshape(view), shape).copy()
        axis.setflags(write=False)
        axes.append(axis)
    return CoordGrid(shape=shape, axes=tuple(axes), normalized=normalized,
                     convention=convention)


def make_grid(shape, convention=GridConvention.ONE_BASED, normalized=True):
    """Build (or fetch from cache) the coordinate grid for ``shape``.

    Parameters
    ----------
    shape : tuple of int
        Two or three positive extents.
    convention : GridConvention or str
        Centering rule, ``"one-based"`` (default) or ``"symmetric"``.
    normalized : bool
        Divide each axis by its own extent.

    Returns
    -------
    CoordGrid
        Immutable grid; arrays are read-only.
    """
    shape = tuple(int(s) for s in shape)
    if len(shape) not in (2, 3):
        raise DimensionError(f"grid must have 2 or 3 axes, got {len(shape)}")
    if any(s < 1 for s in shape):
        raise DimensionError(f"grid extents must be >= 1, got {shape}")
    return _cached_grid(shape, GridConvention(convention), bool(normalized))


def make_grid_2d(height, width, convention=GridConvention.ONE_BASED, normalized=True):
    return make_grid((height, width), convention, normalized)


def make_grid_3d(depth, height, width, convention=GridConvention.ONE_BASED, normalized=True):
    return make_grid((depth, height, width), convention, normalized)
