"""``rmloss`` command line: gen-data | train | eval | verify.

Exit codes: 0 success, 1 usage/config error, 2 runtime/numeric error,
3 verification failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import config as C
from .autodiff import (SgdConfig, init_params, load_checkpoint, predict, save_checkpoint, train)
from .data import config_from_dict, config_to_dict, generate, load_dataset, normalize_volume, save_dataset, write_ppm
from .errors import ConfigurationError, DatasetError, RMLossError
from .grid import GridConvention
from .losses import PRESET_ALIASES, PRESETS, RmConfig, resolve_preset
from .metrics import evaluate_masks, surface_points
from .moments import as_order

log = logging.getLogger("rmloss")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_VERIFY = 0, 1, 2, 3


def _dump(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# -- gen-data ---------------------------------------------------------------

def cmd_gen_data(args):
    cfg = C.validate(C.load_json(args.config), C.GEN_SCHEMA)
    synth = dict(cfg.get("synth", {}))
    if args.seed is not None:
        synth["seed"] = args.seed
    out = Path(args.out or cfg.get("out") or "data")
    synth_cfg = config_from_dict(synth)
    dataset = generate(synth_cfg)
    save_dataset(dataset, out)
    summary = {"out": str(out), "count": len(dataset), "ndim": dataset.ndim,
               "shape": list(dataset.images.shape[1:]), "seed": synth_cfg.seed}
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


# -- train ------------------------------------------------------------------

def _rm_config(cfg):
    kwargs = dict(PRESETS[cfg["preset"]])
    loss = cfg.get("loss", {})
    if "orders" in loss:
        kwargs["orders"] = tuple(as_order(o) for o in loss["orders"])
    if "alpha" in loss:
        kwargs["alpha"] = loss["alpha"]
    return RmConfig(convention=GridConvention(loss.get("convention", "one-based")),
                    normalized=loss.get("normalized", True),
                    reduction=loss.get("reduction", "sum"), **kwargs)


def _prepare_images(dataset, standardize):
    images = dataset.images
    if standardize:
        images = np.stack([normalize_volume(v) for v in images])
    return images


def _train_seed(cfg, dataset_dir, seed, out):
    out.mkdir(parents=True, exist_ok=True)
    dataset = load_dataset(dataset_dir)
    rm_cfg = _rm_config(cfg)
    if rm_cfg.ndim != dataset.ndim:
        raise ConfigurationError(f"loss orders are {rm_cfg.ndim}D but the dataset is "
                                 f"{dataset.ndim}D", field="loss.orders")
    images = _prepare_images(dataset, cfg["standardize"])
    init_seed, sgd_seed = np.random.SeedSequence(seed).generate_state(2)
    params = init_params(1, dataset.n_classes, tuple(cfg["model"]["widths"]), dataset.ndim,
                         seed=int(init_seed), dropout=cfg["model"]["dropout"])
    sgd = SgdConfig(cfg["sgd"]["learning_rate"], cfg["sgd"]["iterations"],
                    cfg["sgd"]["batch_size"], int(sgd_seed))
    params, trace = train(params, images, dataset.masks, rm_cfg, sgd)
    save_checkpoint(params, out / "checkpoint.rmck")
    with open(out / "loss_trace.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["iteration", "loss", "ce", "dice", "rm"],
                                lineterminator="\n")
        writer.writeheader()
        for row in trace:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    report = evaluate_masks(predict(params, images), dataset.masks, range(1, dataset.n_classes))
    summary = {"seed": seed, "final_loss": trace[-1]["loss"], "train_dice": report.mean("dice"),
               "train_hd95": report.mean("hd95"), "rm_config": rm_cfg.to_dict(),
               "n_parameters": params.n_parameters()}
    _dump(out / "train_summary.json", summary)
    return summary


def cmd_train(args):
    raw = C.validate(C.load_json(args.config), C.TRAIN_SCHEMA)
    if args.preset is not None:
        if args.preset not in PRESETS and args.preset not in PRESET_ALIASES:
            raise ConfigurationError(f"unknown preset {args.preset!r}", field="preset")
        raw["preset"] = args.preset
    if args.seed is not None:
        raw["seeds"] = [args.seed]
    out = Path(args.out or raw.get("out") or "run")
    out.mkdir(parents=True, exist_ok=True)

    if "dataset" in raw:
        dataset_dir = Path(raw["dataset"])
        if not (dataset_dir / "manifest.json").is_file():
            raise ConfigurationError(f"dataset not found: {dataset_dir}", field="dataset")
        ndim = int(json.loads((dataset_dir / "manifest.json").read_text())["ndim"])
    else:
        synth = config_from_dict(raw.get("synth", {}))
        dataset_dir = out / "data"
        save_dataset(generate(synth), dataset_dir)
        ndim = config_to_dict(synth)["ndim"]
    cfg = C.resolve_train(raw, ndim)
    cfg["preset"] = resolve_preset(cfg["preset"], ndim)
    if _rm_config(cfg).ndim != ndim:
        raise ConfigurationError(f"preset {cfg['preset']!r} does not fit {ndim}D data",
                                 field="preset")
    cfg["dataset"] = str(dataset_dir)
    cfg["out"] = str(out)
    _dump(out / "config.json", cfg)

    seeds = cfg["seeds"]
    dirs = [out if len(seeds) == 1 else out / f"seed_{s}" for s in seeds]
    if cfg["parallel"] and len(seeds) > 1:
        workers = max(1, min(len(seeds), int(os.environ.get("RMLOSS_THREADS", os.cpu_count() or 1))))
        with ProcessPoolExecutor(max_workers=workers) as pool:
            summaries = list(pool.map(_train_seed, [cfg] * len(seeds), [dataset_dir] * len(seeds),
                                      seeds, dirs))
    else:
        summaries = [_train_seed(cfg, dataset_dir, s, d) for s, d in zip(seeds, dirs)]
    for s in summaries:
        print(json.dumps({k: s[k] for k in ("seed", "final_loss", "train_dice")}, sort_keys=True))
    return EXIT_OK


# -- eval -------------------------------------------------------------------

def _overlay(image, pred, target, path):
    """Grayscale image with ground-truth contours green and predicted contours blue."""
    if image.ndim == 3:
        mid = image.shape[0] // 2
        image, pred, target = image[mid], pred[mid], target[mid]
    lo, hi = float(image.min()), float(image.max())
    gray = np.zeros(image.shape) if hi == lo else (image - lo) / (hi - lo)
    rgb = np.repeat((gray * 255).astype(np.uint8)[..., None], 3, axis=-1)
    for c in range(1, int(max(pred.max(), target.max())) + 1):
        for i, j in surface_points(target >= c, True):
            rgb[i, j] = (0, 255, 0)
        for i, j in surface_points(pred >= c, True):
            rgb[i, j] = (0, 0, 255)
    write_ppm(path, rgb)


def cmd_eval(args):
    raw = C.validate(C.load_json(args.config), C.EVAL_SCHEMA)
    ckpt = Path(args.checkpoint or raw.get("checkpoint") or "")
    data_dir = Path(args.data or raw.get("dataset") or "")
    if not ckpt.is_file():
        raise ConfigurationError(f"checkpoint not found: {ckpt}", field="checkpoint")
    if not (data_dir / "manifest.json").is_file():
        raise ConfigurationError(f"dataset not found: {data_dir}", field="dataset")
    params = load_checkpoint(ckpt)
    dataset = load_dataset(data_dir)
    out = Path(args.out or raw.get("out") or "eval")
    out.mkdir(parents=True, exist_ok=True)
    standardize = raw.get("standardize", dataset.ndim == 3)
    images = _prepare_images(dataset, standardize)
    pred = predict(params, images)
    report = evaluate_masks(pred, dataset.masks, range(1, params.n_classes))
    (out / "report.csv").write_text(report.to_csv())
    (out / "summary.json").write_text(report.to_json() + "\n")
    if args.overlays or raw.get("overlays", False):
        (out / "overlays").mkdir(exist_ok=True)
        for i in range(len(dataset)):
            _overlay(dataset.images[i], pred[i], dataset.masks[i], out / "overlays" / f"{i:04d}.ppm")
    print(json.dumps({"dice": report.mean("dice"), "jaccard": report.mean("jaccard"),
                      "hd95": report.mean("hd95"), "asd": report.mean("asd")}, sort_keys=True))
    return EXIT_OK


# -- verify -----------------------------------------------------------------

def cmd_verify(args):
    from .verify import run_suite

    summary = run_suite(seed=args.seed or 0)
    print(json.dumps(summary, indent=2, sort_keys=True))
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        _dump(Path(args.out) / "verify.json", summary)
    if not summary["passed"]:
        print("FAILED: " + ", ".join(summary["failed"]), file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval, "verify": cmd_verify}


def build_parser():
    parser = argparse.ArgumentParser(prog="rmloss", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("--preset", help="loss preset: "
                       + ", ".join(sorted(set(PRESETS) | set(PRESET_ALIASES))))
        if name == "eval":
            p.add_argument("--checkpoint")
            p.add_argument("--data", help="dataset directory")
            p.add_argument("--overlays", action="store_true", help="write PPM contour overlays")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigurationError as exc:
        field = f" [{exc.field}]" if exc.field else ""
        print(f"rmloss: config error{field}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RMLossError, OSError, ArithmeticError) as exc:
        print(f"rmloss: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
