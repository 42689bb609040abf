"""Executable property suite behind ``rmloss verify``.

Each check returns ``(passed, detail)``; :func:`run_suite` collects them
into a machine-readable summary.
"""
from __future__ import annotations

import math
import time

import numpy as np

from .autodiff import engine as E
from .autodiff import init_params, loss_and_grad, unet_lite_forward
from .gradcheck import max_relative_error, numerical_gradient
from .grid import make_grid
from .losses import (PRESETS, ce_loss, dice_loss, mse_loss, preset, rm_loss, rm_loss_multi,
                     total_loss)
from .metrics import dice_jaccard, hd95_asd
from .moments import central_moment

THEOREM_TOL = 1e-10
GRAD_TOL = 1e-4
E2E_TOL = 1e-3


def check_theorem(rng, trials_2d=150, trials_3d=60):
    worst = 0.0
    for k in range(trials_2d + trials_3d):
        if k < trials_2d:
            shape = tuple(int(s) for s in rng.integers(1, [34, 30]))
            order = tuple(int(o) for o in rng.integers(0, 3, 2))
        else:
            shape = tuple(int(s) for s in rng.integers(1, [10, 11, 12]))
            order = tuple(int(o) for o in rng.integers(0, 3, 3))
        pred, target = rng.random(shape), rng.random(shape)
        grid = make_grid(shape)
        lhs = rm_loss(pred, target, grid, order).value
        rhs = central_moment((pred - target) ** 2, grid, tuple(2 * o for o in order))
        worst = max(worst, abs(lhs - rhs) / (abs(lhs) + 1e-30))
    return worst <= THEOREM_TOL, {"trials": trials_2d + trials_3d, "max_rel_gap": worst}


def check_mse_collapse(rng, trials=50):
    for _ in range(trials):
        shape = tuple(int(s) for s in rng.integers(1, 20, 2))
        pred, target = rng.normal(size=shape), rng.normal(size=shape)
        a = rm_loss(pred, target, make_grid(shape), (0, 0))
        b = mse_loss(pred, target)
        if a.value != b.value or not np.array_equal(a.gradient, b.gradient):
            return False, {"shape": shape}
    return True, {"trials": trials}


def _fd(f, x, grad):
    return max_relative_error(grad, numerical_gradient(f, x))


def check_loss_gradients(rng, trials=20):
    worst = {}
    for _ in range(trials):
        p = rng.uniform(0.05, 0.95, (5, 6))
        t = (rng.random((5, 6)) > 0.5).astype(float)
        worst["dice"] = max(worst.get("dice", 0), _fd(lambda: dice_loss(p, t).value, p,
                                                      dice_loss(p, t).gradient))
        logits = rng.normal(size=(2, 3, 3, 4))
        y = rng.integers(0, 3, (2, 3, 4))
        worst["ce"] = max(worst.get("ce", 0), _fd(lambda: ce_loss(logits, y).value, logits,
                                                  ce_loss(logits, y).gradient))
    for name in PRESETS:
        cfg = preset(name)
        shape = (5, 6) if cfg.ndim == 2 else (3, 4, 5)
        for _ in range(max(1, trials // 5)):
            p = rng.random(shape)
            t = (rng.random(shape) > 0.5).astype(float)
            g = cfg.grid_for(shape)
            err = _fd(lambda: rm_loss_multi(p, t, g, cfg).value, p,
                      rm_loss_multi(p, t, g, cfg).gradient)
            worst[f"rm:{name}"] = max(worst.get(f"rm:{name}", 0), err)
            c = 3 if cfg.ndim == 2 else 2
            logits = rng.normal(size=(2, c) + shape)
            y = rng.integers(0, c, (2,) + shape)
            err = _fd(lambda: total_loss(logits, y, cfg).value, logits,
                      total_loss(logits, y, cfg).gradient)
            worst[f"total:{name}"] = max(worst.get(f"total:{name}", 0), err)
    return max(worst.values()) <= GRAD_TOL, {"max_rel_err": worst}


def check_op_gradients(rng):
    cases = {
        "conv2d": (E.conv, [rng.normal(size=(2, 2, 4, 5)), rng.normal(size=(3, 2, 3, 3))]),
        "conv3d": (E.conv, [rng.normal(size=(1, 2, 4, 3, 3)), rng.normal(size=(2, 2, 3, 3, 3))]),
        "bias_add": (E.bias_add, [rng.normal(size=(2, 3, 2, 2)), rng.normal(size=3)]),
        "relu": (E.relu, [rng.normal(size=(2, 3, 3))]),
        "sigmoid": (E.sigmoid, [rng.normal(size=(2, 3, 3))]),
        "softmax": (E.softmax_channels, [rng.normal(size=(2, 3, 2, 2))]),
        "maxpool": (E.maxpool, [rng.normal(size=(1, 2, 4, 4))]),
        "upsample": (E.upsample_nearest, [rng.normal(size=(1, 2, 2, 3))]),
        "concat": (E.concat_channels, [rng.normal(size=(1, 1, 2, 2)), rng.normal(size=(1, 2, 2, 2))]),
        "add": (E.add, [rng.normal(size=(3, 3)), rng.normal(size=(3, 3))]),
        "mul": (E.mul, [rng.normal(size=(3, 3)), rng.normal(size=(3, 3))]),
        "sum": (E.sum, [rng.normal(size=(3, 3))]),
        "mean": (E.mean, [rng.normal(size=(3, 3))]),
        "dropout": (lambda x: E.dropout(x, 0.25, True, 3), [rng.normal(size=(2, 4))]),
    }
    worst = {}
    for name, (build, inputs) in cases.items():
        nodes = [E.leaf(x) for x in inputs]
        out = build(*nodes)
        weights = rng.normal(size=out.shape)
        E.backward(out, weights)

        def f():
            return float(np.sum(build(*[E.leaf(x, False) for x in inputs]).value * weights))

        worst[name] = max(_fd(f, x, n.grad) for x, n in zip(inputs, nodes))
    return max(worst.values()) <= GRAD_TOL, {"max_rel_err": worst}


def check_end_to_end(rng):
    cfg = preset("rm-2d-best")
    params = init_params(1, 3, seed=int(rng.integers(2**31)))
    x = rng.random((1, 1, 16, 16))
    y = rng.integers(0, 3, (1, 16, 16))
    _, grads = loss_and_grad(params, x, y, cfg)
    worst = 0.0
    for name, arr in params.tensors.items():
        idx = rng.choice(arr.size, size=max(1, arr.size // 100), replace=False)

        def f():
            return total_loss(unet_lite_forward(params, x)[0].value, y, cfg).value

        worst = max(worst, max_relative_error(grads[name], numerical_gradient(f, arr, idx), idx))
    return worst <= E2E_TOL, {"max_rel_err": worst}


def _oracle_hd95_asd(pred, target, class_id):
    def surface(mask):
        pts = []
        h, w = mask.shape
        for i in range(h):
            for j in range(w):
                if mask[i, j] == class_id and any(
                        not (0 <= i + di < h and 0 <= j + dj < w) or mask[i + di, j + dj] != class_id
                        for di, dj in ((-1, 0), (1, 0), (0, -1), (0, 1))):
                    pts.append((i, j))
        return pts

    a, b = surface(pred), surface(target)
    d = [min(math.sqrt((p[0] - q[0]) ** 2 + (p[1] - q[1]) ** 2) for q in b) for p in a]
    d += [min(math.sqrt((p[0] - q[0]) ** 2 + (p[1] - q[1]) ** 2) for q in a) for p in b]
    d.sort()
    pos = (len(d) - 1) * 0.95
    lo = math.floor(pos)
    hi = min(lo + 1, len(d) - 1)
    return d[lo] + (d[hi] - d[lo]) * (pos - lo), math.fsum(d) / len(d)


def check_metric_oracle(rng, trials=100):
    compared = 0
    while compared < trials:
        h, w = (int(s) for s in rng.integers(2, 25, 2))
        pred = (rng.random((h, w)) > rng.uniform(0.2, 0.9)).astype(int)
        target = (rng.random((h, w)) > rng.uniform(0.2, 0.9)).astype(int)
        if not pred.any() or not target.any():
            continue
        compared += 1
        if hd95_asd(pred, target, 1) != _oracle_hd95_asd(pred, target, 1):
            return False, {"shape": (h, w)}
        a, b = pred == 1, target == 1
        inter = int((a & b).sum())
        if dice_jaccard(pred, target, 1) != (2 * inter / (a.sum() + b.sum()),
                                              inter / int((a | b).sum())):
            return False, {"shape": (h, w), "metric": "dice/jaccard"}
    return True, {"trials": compared}


def check_grid_symmetry(rng):
    for _ in range(20):
        shape = tuple(int(s) for s in rng.integers(1, 12, int(rng.integers(2, 4))))
        g = make_grid(shape, "symmetric", bool(rng.integers(2)))
        for k, axis in enumerate(g.axes):
            if not np.array_equal(np.flip(axis, axis=k), -axis):
                return False, {"shape": shape, "axis": k}
    return True, {}


CHECKS = {
    "theorem_equivalence": check_theorem,
    "mse_collapse": check_mse_collapse,
    "loss_gradients": check_loss_gradients,
    "op_gradients": check_op_gradients,
    "end_to_end_gradient": check_end_to_end,
    "metric_oracle": check_metric_oracle,
    "grid_symmetry": check_grid_symmetry,
}


def run_suite(seed=0, only=None):
    """Run every check (or those named in ``only``); returns a summary dict."""
    results = {}
    for name, fn in CHECKS.items():
        if only is not None and name not in only:
            continue
        rng = np.random.default_rng([seed, len(results)])
        start = time.perf_counter()
        try:
            passed, detail = fn(rng)
        except Exception as exc:  # a crashing check is a failing check
            passed, detail = False, {"error": f"{type(exc).__name__}: {exc}"}
        results[name] = {"passed": bool(passed), "detail": detail,
                         "seconds": round(time.perf_counter() - start, 3)}
    failed = [k for k, v in results.items() if not v["passed"]]
    return {"passed": not failed, "failed": failed, "checks": results, "seed": seed}
