"""Region overlap and surface distance metrics for integer label masks.

Conventions (not fixed by the source evaluation protocol, stated here so
reported numbers are interpretable):

* both masks empty for a class -> Dice = Jaccard = 1;
* surface points are foreground elements with a face-adjacent background
  or out-of-bounds neighbour;
* ASD is the mean and 95HD the 95th percentile (linear interpolation) of
  the nearest-neighbour distances pooled over both directions;
* distances are in pixel/voxel units, optionally scaled per axis.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, UndefinedDistanceError

REPORT_SCHEMA_VERSION = 1
CSV_COLUMNS = ("sample", "class_id", "dice", "jaccard", "hd95", "asd", "pred_empty", "target_empty")
CONVENTIONS = ("both-empty dice/jaccard = 1; surface = face-adjacent boundary; "
               "asd = mean, hd95 = 95th percentile (linear) of pooled bidirectional "
               "nearest-surface distances; empty prediction -> distances recorded as "
               "image diagonal")


def _check(pred, target):
    pred, target = np.asarray(pred), np.asarray(target)
    if pred.shape != target.shape:
        raise DimensionError(f"mask shapes differ: {pred.shape} vs {target.shape}")
    return pred, target


def dice_jaccard(pred_mask, target_mask, class_id):
    """Dice and Jaccard of ``class_id``; ``(1.0, 1.0)`` if both are empty."""
    pred_mask, target_mask = _check(pred_mask, target_mask)
    a = pred_mask == class_id
    b = target_mask == class_id
    inter = int(np.count_nonzero(a & b))
    na, nb = int(np.count_nonzero(a)), int(np.count_nonzero(b))
    if na + nb == 0:
        return 1.0, 1.0
    return 2.0 * inter / (na + nb), inter / (na + nb - inter)


def surface_points(mask, class_id):
    """Integer coordinates ``(n, ndim)`` of the boundary elements of ``class_id``."""
    fg = np.asarray(mask) == class_id
    padded = np.pad(fg, 1, constant_values=False)
    interior = np.ones_like(fg)
    core = tuple(slice(1, -1) for _ in range(fg.ndim))
    for axis in range(fg.ndim):
        for shift in (-1, 1):
            sl = list(core)
            sl[axis] = slice(1 + shift, padded.shape[axis] - 1 + shift)
            interior &= padded[tuple(sl)]
    return np.argwhere(fg & ~interior)


def _nearest_distances(src, dst, spacing):
    """Distance from every point of ``src`` to its nearest point of ``dst``."""
    src = src.astype(np.float64) * spacing
    dst = dst.astype(np.float64) * spacing
    out = np.empty(len(src))
    step = max(1, 2_000_000 // max(len(dst), 1))
    for start in range(0, len(src), step):
        block = src[start:start + step]
        d2 = ((block[:, None, :] - dst[None, :, :]) ** 2).sum(axis=-1)
        out[start:start + step] = np.sqrt(d2.min(axis=1))
    return out


def percentile_linear(values, q):
    """``q``-th percentile with linear interpolation between order statistics."""
    v = sorted(values)
    pos = (len(v) - 1) * (q / 100.0)
    lo = math.floor(pos)
    hi = min(lo + 1, len(v) - 1)
    return v[lo] + (v[hi] - v[lo]) * (pos - lo)


def pooled_distances(pred_mask, target_mask, class_id, spacing=None):
    pred_mask, target_mask = _check(pred_mask, target_mask)
    a = surface_points(pred_mask, class_id)
    b = surface_points(target_mask, class_id)
    if len(a) == 0 or len(b) == 0:
        side = "prediction" if len(a) == 0 else "target"
        raise UndefinedDistanceError(f"class {class_id}: empty {side} surface")
    spacing = np.ones(pred_mask.ndim) if spacing is None else np.asarray(spacing, dtype=np.float64)
    return np.concatenate([_nearest_distances(a, b, spacing), _nearest_distances(b, a, spacing)])


def hd95_asd(pred_mask, target_mask, class_id, spacing=None):
    """95% Hausdorff distance and average surface distance of ``class_id``."""
    d = pooled_distances(pred_mask, target_mask, class_id, spacing)
    values = d.tolist()
    return percentile_linear(values, 95.0), math.fsum(values) / len(values)


@dataclass
class MetricsReport:
    """Per-sample, per-class metric rows plus mean/std aggregates."""

    rows: list = field(default_factory=list)

    def add(self, sample, class_id, pred_mask, target_mask, spacing=None):
        dice, jac = dice_jaccard(pred_mask, target_mask, class_id)
        pred_empty = not np.any(pred_mask == class_id)
        target_empty = not np.any(target_mask == class_id)
        try:
            hd95, asd = hd95_asd(pred_mask, target_mask, class_id, spacing)
        except UndefinedDistanceError:
            if pred_empty and target_empty:
                hd95 = asd = 0.0
            else:
                # worst case: the whole field of view
                hd95 = asd = float(np.linalg.norm(np.asarray(pred_mask.shape, dtype=float)))
        row = {"sample": sample, "class_id": int(class_id), "dice": dice, "jaccard": jac,
               "hd95": hd95, "asd": asd, "pred_empty": pred_empty, "target_empty": target_empty}
        self.rows.append(row)
        return row

    def summary(self):
        """Mean and std (population) of each metric per class, in class order."""
        out = {}
        for c in sorted({r["class_id"] for r in self.rows}):
            rows = [r for r in self.rows if r["class_id"] == c]
            out[str(c)] = {
                m: {"mean": float(np.mean([r[m] for r in rows])),
                    "std": float(np.std([r[m] for r in rows]))}
                for m in ("dice", "jaccard", "hd95", "asd")
            }
            out[str(c)]["n"] = len(rows)
        return out

    def mean(self, metric):
        """Mean of ``metric`` over all rows (samples and classes)."""
        return float(np.mean([r[metric] for r in self.rows]))

    def to_csv(self):
        buf = io.StringIO()
        buf.write(f"# rmloss metrics report v{REPORT_SCHEMA_VERSION}; {CONVENTIONS}\n")
        writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for r in self.rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
        return buf.getvalue()

    def to_json(self):
        return json.dumps({"schema_version": REPORT_SCHEMA_VERSION, "conventions": CONVENTIONS,
                           "summary": self.summary()}, indent=2, sort_keys=True)


def evaluate_masks(pred_masks, target_masks, class_ids, spacing=None):
    """Build a :class:`MetricsReport` for stacked masks ``(n, *S)``."""
    report = MetricsReport()
    for i, (p, t) in enumerate(zip(pred_masks, target_masks)):
        for c in class_ids:
            report.add(i, c, p, t, spacing)
    return report
