"""Acceptance criteria 1-7.

Every tolerance, trial count and runtime budget is pinned below; pass/fail is
decided here from the measured quantities, not from library constants. Each
test prints one ``CRITERION n ... PASS|FAIL`` line.

Criteria 5-7 train real models (about 25 minutes on one CPU core in total).
"""
import math
import time

import numpy as np
import pytest

from rmloss.experiment import ReplicationConfig, run_replication, run_smoke_3d
from rmloss.verify import (check_end_to_end, check_loss_gradients, check_metric_oracle,
                           check_mse_collapse, check_op_gradients, check_theorem)

SEED = 20240601

# 1. theorem equivalence
THEOREM_TRIALS_MIN = 200
THEOREM_TOL = 1e-10
THEOREM_BUDGET_S = 10.0
# 2. MSE collapse (bit-exact)
MSE_TRIALS = 50
MSE_BUDGET_S = 1.0
# 3. gradient checks (f64, central differences)
GRAD_TOL = 1e-4
E2E_TOL = 1e-3
GRAD_BUDGET_S = 120.0
# 4. metric oracle (exact)
ORACLE_TRIALS = 100
ORACLE_BUDGET_S = 30.0
# 5. directional replication
REPLICATION_SEEDS = (0, 1, 2, 3, 4)
REPLICATION_BUDGET_S = 15 * 60.0
# 6. 3D smoke
SMOKE_VOLUMES = 8
SMOKE_SIZE = 32
SMOKE_ITERATIONS = 100
SMOKE_WINDOW = 20
SMOKE_BUDGET_S = 10 * 60.0

_cache = {}


def _line(capsys, n, name, passed, detail):
    with capsys.disabled():
        print(f"\nCRITERION {n} {name}: {'PASS' if passed else 'FAIL'} ({detail})", flush=True)


def _timed(fn, *args, **kwargs):
    start = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - start


def test_criterion_1_theorem_equivalence(capsys):
    (_, detail), secs = _timed(check_theorem, np.random.default_rng([SEED, 1]))
    gap = detail["max_rel_gap"]
    ok = detail["trials"] >= THEOREM_TRIALS_MIN and gap <= THEOREM_TOL and secs < THEOREM_BUDGET_S
    _line(capsys, 1, "theorem equivalence", ok,
          f"{detail['trials']} pairs, max rel gap {gap:.3e} <= {THEOREM_TOL:g}, {secs:.2f}s")
    assert ok


def test_criterion_2_mse_collapse(capsys):
    (passed, detail), secs = _timed(check_mse_collapse, np.random.default_rng([SEED, 2]),
                                    trials=MSE_TRIALS)
    ok = passed and secs < MSE_BUDGET_S
    _line(capsys, 2, "MSE collapse", ok, f"{MSE_TRIALS} pairs bit-exact={passed}, {secs:.3f}s")
    assert ok


def test_criterion_3_gradient_checks(capsys):
    start = time.perf_counter()
    _, losses = check_loss_gradients(np.random.default_rng([SEED, 3]))
    _, ops = check_op_gradients(np.random.default_rng([SEED, 4]))
    _, e2e = check_end_to_end(np.random.default_rng([SEED, 5]))
    secs = time.perf_counter() - start
    worst_local = max(list(losses["max_rel_err"].values()) + list(ops["max_rel_err"].values()))
    worst_e2e = e2e["max_rel_err"]
    ok = worst_local <= GRAD_TOL and worst_e2e <= E2E_TOL and secs < GRAD_BUDGET_S
    _line(capsys, 3, "gradient checks", ok,
          f"losses/ops max rel err {worst_local:.2e} <= {GRAD_TOL:g}, "
          f"end-to-end {worst_e2e:.2e} <= {E2E_TOL:g}, {secs:.1f}s")
    assert ok


def test_criterion_4_metric_oracle(capsys):
    (passed, detail), secs = _timed(check_metric_oracle, np.random.default_rng([SEED, 6]),
                                    trials=ORACLE_TRIALS)
    ok = passed and detail.get("trials") == ORACLE_TRIALS and secs < ORACLE_BUDGET_S
    _line(capsys, 4, "metric oracle", ok, f"{detail}, exact={passed}, {secs:.1f}s")
    assert ok


def _replication():
    cfg = ReplicationConfig(seeds=REPLICATION_SEEDS, presets=("baseline", "rm-2d-best"))
    assert (cfg.size, cfg.n_train, cfg.n_test) == (64, 40, 40) and cfg.distractor_count > 0
    return _timed(run_replication, cfg)


def _smoke():
    return _timed(run_smoke_3d, count=SMOKE_VOLUMES, iterations=SMOKE_ITERATIONS, size=SMOKE_SIZE)


def test_criterion_5_directional_replication(capsys):
    result, secs = _cache.setdefault("rep", _replication())
    med = {(p, m): result.median(p, m) for p in ("baseline", "rm-2d-best") for m in ("dice", "hd95")}
    dice_ok = med["rm-2d-best", "dice"] >= med["baseline", "dice"]
    hd_ok = med["rm-2d-best", "hd95"] <= med["baseline", "hd95"]
    ok = dice_ok and hd_ok and secs < REPLICATION_BUDGET_S
    with capsys.disabled():
        print("\n" + result.table())
    _line(capsys, 5, "directional replication", ok,
          f"median dice rm {med['rm-2d-best', 'dice']:.4f} vs base {med['baseline', 'dice']:.4f}; "
          f"median hd95 rm {med['rm-2d-best', 'hd95']:.3f} vs base {med['baseline', 'hd95']:.3f}; "
          f"{len(REPLICATION_SEEDS)} seeds, {secs:.0f}s")
    assert ok


def test_criterion_6_smoke_3d(capsys):
    (params, trace), secs = _cache.setdefault("smoke", _smoke())
    losses = [r["loss"] for r in trace]
    head = math.fsum(losses[:SMOKE_WINDOW]) / SMOKE_WINDOW
    tail = math.fsum(losses[-SMOKE_WINDOW:]) / SMOKE_WINDOW
    ok = (len(losses) == SMOKE_ITERATIONS and all(math.isfinite(v) for v in losses)
          and tail < head and secs < SMOKE_BUDGET_S)
    _line(capsys, 6, "3D smoke", ok,
          f"initial-{SMOKE_WINDOW} mean {head:.4f}, trailing-{SMOKE_WINDOW} mean {tail:.4f}, {secs:.0f}s")
    assert ok


def _fingerprint_run(run):
    return ([run[k] for k in ("preset", "seed", "dice", "jaccard", "hd95", "asd", "final_loss")],
            [r["loss"] for r in run["trace"]],
            {k: v.tobytes() for k, v in run["params"].tensors.items()})


def test_criterion_7_determinism(capsys):
    first_rep, _ = _cache.setdefault("rep", _replication())
    first_smoke, _ = _cache.setdefault("smoke", _smoke())
    again_rep, _ = _replication()
    again_smoke, _ = _smoke()
    rep_same = ([_fingerprint_run(r) for r in first_rep.runs]
                == [_fingerprint_run(r) for r in again_rep.runs])
    smoke_same = ([r["loss"] for r in first_smoke[1]] == [r["loss"] for r in again_smoke[1]]
                  and all(first_smoke[0].tensors[k].tobytes() == again_smoke[0].tensors[k].tobytes()
                          for k in first_smoke[0].tensors))
    ok = rep_same and smoke_same
    _line(capsys, 7, "determinism", ok,
          f"replication metrics/traces/params identical={rep_same}, 3D trace/params identical={smoke_same}")
    assert ok


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
