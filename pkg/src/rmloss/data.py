"""Synthetic segmentation datasets with positional regularity, and their on-disk format.

2D samples mimic optic disc/cup images: a disc ellipse with a nested cup
ellipse, jittered around the image center, plus look-alike distractor blobs
placed uniformly elsewhere. 3D samples are single ellipsoids in small
volumes. Labels are the exact thresholded geometry; only images carry noise.

Directory layout::

    manifest.json                       format version, config echo, seed, samples
    NNNN_img.pgm / NNNN_msk.pgm         2D (16-bit / 8-bit binary PGM)
    NNNN_img.raw + NNNN_img.meta.json   3D image, little-endian f32
    NNNN_msk.raw                        3D mask, u8
"""
from __future__ import annotations

import json
import os
import re
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import (ConfigurationError, ExtentMismatchError, IntegrityError, ManifestError,
                     VersionError)

FORMAT_VERSION = 1
_JITTER_CLIP = 3.0  # center offsets are clipped at this many standard deviations
# "plain": uniform bright ellipse without a nested core; "mimic": same profile as the target
DISTRACTOR_STYLES = ("plain", "mimic")


def _check_range(name, rng, lo=None, hi=None):
    if len(rng) != 2 or not rng[0] <= rng[1]:
        raise ConfigurationError(f"{name} must be an ordered [min, max] pair, got {rng}",
                                 field=name)
    if lo is not None and rng[0] <= lo or hi is not None and rng[1] >= hi:
        raise ConfigurationError(f"{name} must lie strictly within ({lo}, {hi}), got {rng}",
                                 field=name)


@dataclass(frozen=True)
class SynthConfig2D:
    count: int = 40
    height: int = 64
    width: int = 64
    disk_radius_range: tuple = (0.13, 0.18)
    cup_ratio_range: tuple = (0.45, 0.65)
    eccentricity: float = 0.15
    center_jitter: float = 0.05
    noise_std: float = 0.06
    distractor_count: int = 2
    distractor_style: str = "plain"
    distractor_intensity: float = 0.3
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "disk_radius_range", tuple(self.disk_radius_range))
        if self.distractor_style not in DISTRACTOR_STYLES:
            raise ConfigurationError(f"distractor_style must be one of {DISTRACTOR_STYLES}",
                                     field="distractor_style")
        object.__setattr__(self, "cup_ratio_range", tuple(self.cup_ratio_range))
        if int(self.count) < 1:
            raise ConfigurationError("count must be positive", field="count")
        for name in ("height", "width"):
            v = getattr(self, name)
            if int(v) < 4 or v % 4:
                raise ConfigurationError(f"{name} must be a positive multiple of 4, got {v}",
                                         field=name)
        _check_range("disk_radius_range", self.disk_radius_range, 0, 0.5)
        _check_range("cup_ratio_range", self.cup_ratio_range, 0, 1)
        if not 0 <= self.eccentricity < 1:
            raise ConfigurationError("eccentricity must lie in [0, 1)", field="eccentricity")
        if self.center_jitter < 0:
            raise ConfigurationError("center_jitter must be >= 0", field="center_jitter")
        if self.noise_std < 0:
            raise ConfigurationError("noise_std must be >= 0", field="noise_std")
        if int(self.distractor_count) < 0:
            raise ConfigurationError("distractor_count must be >= 0", field="distractor_count")
        if not 0 <= self.distractor_intensity <= 1:
            raise ConfigurationError("distractor_intensity must lie in [0, 1]",
                                     field="distractor_intensity")
        extent = min(self.height, self.width)
        reach = (self.disk_radius_range[1] * (1 + self.eccentricity)
                 + _JITTER_CLIP * self.center_jitter) * extent
        if reach >= extent / 2 - 1:
            raise ConfigurationError(
                f"center_jitter={self.center_jitter} with disk radius up to "
                f"{self.disk_radius_range[1]} can push targets out of frame", field="center_jitter")


@dataclass(frozen=True)
class SynthConfig3D:
    count: int = 8
    depth: int = 32
    height: int = 32
    width: int = 32
    radius_range: tuple = (0.16, 0.24)
    eccentricity: float = 0.15
    center_jitter: float = 0.05
    noise_std: float = 0.06
    distractor_count: int = 1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "radius_range", tuple(self.radius_range))
        if int(self.count) < 1:
            raise ConfigurationError("count must be positive", field="count")
        for name in ("depth", "height", "width"):
            v = getattr(self, name)
            if int(v) < 4 or v % 4:
                raise ConfigurationError(f"{name} must be a positive multiple of 4, got {v}",
                                         field=name)
        _check_range("radius_range", self.radius_range, 0, 0.5)
        if self.center_jitter < 0:
            raise ConfigurationError("center_jitter must be >= 0", field="center_jitter")
        if self.noise_std < 0:
            raise ConfigurationError("noise_std must be >= 0", field="noise_std")
        extent = min(self.depth, self.height, self.width)
        reach = (self.radius_range[1] * (1 + self.eccentricity)
                 + _JITTER_CLIP * self.center_jitter) * extent
        if reach >= extent / 2 - 1:
            raise ConfigurationError(
                f"center_jitter={self.center_jitter} with radius up to {self.radius_range[1]} "
                "can push targets out of frame", field="center_jitter")


def config_from_dict(d):
    """Rebuild a synth config from its ``asdict`` echo (``ndim`` selects the type)."""
    d = dict(d)
    ndim = d.pop("ndim", 2)
    cls = SynthConfig2D if ndim == 2 else SynthConfig3D
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ConfigurationError(f"unknown synth config keys {sorted(unknown)}",
                                 field=sorted(unknown)[0])
    return cls(**d)


def config_to_dict(cfg):
    d = asdict(cfg)
    d["ndim"] = 2 if isinstance(cfg, SynthConfig2D) else 3
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


@dataclass
class Sample:
    image: np.ndarray
    mask: np.ndarray
    meta: dict = field(default_factory=dict)


@dataclass
class Dataset:
    """Stacked images ``(n, *S)`` in [0, 1], integer masks and per-sample metadata."""

    images: np.ndarray
    masks: np.ndarray
    metas: list
    config: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.images)

    def __getitem__(self, i):
        return Sample(self.images[i], self.masks[i], self.metas[i])

    @property
    def ndim(self):
        return self.images.ndim - 1

    @property
    def n_classes(self):
        return 3 if self.ndim == 2 else 2

    def subset(self, idx):
        idx = list(idx)
        return Dataset(self.images[idx], self.masks[idx], [self.metas[i] for i in idx],
                       self.config)


def _ellipse(coords, center, axes, angle):
    """Normalized radial coordinate of an ellipse rotated by ``angle`` (2D)."""
    di, dj = coords[0] - center[0], coords[1] - center[1]
    c, s = np.cos(angle), np.sin(angle)
    u = c * di + s * dj
    v = -s * di + c * dj
    return (u / axes[0]) ** 2 + (v / axes[1]) ** 2


def _ellipsoid(coords, center, axes):
    return sum(((x - c) / a) ** 2 for x, c, a in zip(coords, center, axes))


def _jitter(rng, sigma, ndim):
    if sigma == 0:
        return np.zeros(ndim)
    return np.clip(rng.normal(0.0, sigma, ndim), -_JITTER_CLIP * sigma, _JITTER_CLIP * sigma)


def _axes(rng, radius, ecc, ndim):
    return radius * (1.0 + rng.uniform(-ecc, ecc, ndim))


def _paint_blob(image, rho_outer, rho_inner, level_outer, level_inner):
    """Intensity ramp: brighter towards the middle of each ellipse."""
    image += np.where(rho_outer <= 1, level_outer * (1.0 - 0.3 * rho_outer), 0.0)
    image += np.where(rho_inner <= 1, level_inner * (1.0 - 0.3 * rho_inner), 0.0)


def _gen_sample_2d(cfg, rng):
    h, w = cfg.height, cfg.width
    extent = min(h, w)
    coords = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64),
                         indexing="ij")
    middle = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    center = middle + _jitter(rng, cfg.center_jitter * extent, 2)
    radius = rng.uniform(*cfg.disk_radius_range) * extent
    disk_axes = _axes(rng, radius, cfg.eccentricity, 2)
    cup_axes = disk_axes * rng.uniform(*cfg.cup_ratio_range)
    angle = rng.uniform(0, np.pi)
    rho_disk = _ellipse(coords, center, disk_axes, angle)
    rho_cup = _ellipse(coords, center, cup_axes, angle)

    ramp_dir = rng.normal(size=2)
    ramp_dir /= np.linalg.norm(ramp_dir)
    background = 0.15 + 0.1 * ((coords[0] - middle[0]) * ramp_dir[0]
                               + (coords[1] - middle[1]) * ramp_dir[1]) / extent
    image = background.copy()
    _paint_blob(image, rho_disk, rho_cup, 0.4, 0.3)

    distractors = []
    tries = 0
    while len(distractors) < cfg.distractor_count and tries < 1000:
        tries += 1
        d_radius = rng.uniform(0.7, 1.0) * rng.uniform(*cfg.disk_radius_range) * extent
        d_axes = _axes(rng, d_radius, cfg.eccentricity, 2)
        reach = d_axes.max()
        d_center = np.array([rng.uniform(reach, h - 1 - reach), rng.uniform(reach, w - 1 - reach)])
        clear = np.linalg.norm(d_center - center) > reach + disk_axes.max() + 2
        clear = clear and all(np.linalg.norm(d_center - np.array(o["center"])) > reach + o["reach"] + 2
                              for o in distractors)
        if not clear:
            continue
        d_angle = rng.uniform(0, np.pi)
        d_inner = d_axes * rng.uniform(*cfg.cup_ratio_range)
        if cfg.distractor_style == "mimic":
            outer_level, inner_level = 0.4, 0.3
        else:
            outer_level, inner_level = cfg.distractor_intensity, 0.0
        _paint_blob(image, _ellipse(coords, d_center, d_axes, d_angle),
                    _ellipse(coords, d_center, d_inner, d_angle), outer_level, inner_level)
        distractors.append({"center": d_center.tolist(), "axes": d_axes.tolist(),
                            "angle": float(d_angle), "reach": float(reach)})

    if cfg.noise_std:
        image = image + rng.normal(0.0, cfg.noise_std, image.shape)
    image = np.clip(image, 0.0, 1.0)
    mask = np.zeros((h, w), dtype=np.int64)
    mask[rho_disk <= 1] = 1
    mask[rho_cup <= 1] = 2
    meta = {"center": center.tolist(), "disk_axes": disk_axes.tolist(),
            "cup_axes": cup_axes.tolist(), "angle": float(angle), "distractors": distractors}
    return image, mask, meta


def _gen_sample_3d(cfg, rng):
    shape = (cfg.depth, cfg.height, cfg.width)
    extent = min(shape)
    coords = np.meshgrid(*(np.arange(s, dtype=np.float64) for s in shape), indexing="ij")
    middle = np.array([(s - 1) / 2.0 for s in shape])
    center = middle + _jitter(rng, cfg.center_jitter * extent, 3)
    axes = _axes(rng, rng.uniform(*cfg.radius_range) * extent, cfg.eccentricity, 3)
    rho = _ellipsoid(coords, center, axes)
    image = np.full(shape, 0.15)
    image += np.where(rho <= 1, 0.6 * (1.0 - 0.3 * rho), 0.0)
    distractors = []
    tries = 0
    while len(distractors) < cfg.distractor_count and tries < 1000:
        tries += 1
        d_axes = _axes(rng, 0.6 * rng.uniform(*cfg.radius_range) * extent, cfg.eccentricity, 3)
        reach = d_axes.max()
        d_center = np.array([rng.uniform(reach, s - 1 - reach) for s in shape])
        if np.linalg.norm(d_center - center) <= reach + axes.max() + 2:
            continue
        d_rho = _ellipsoid(coords, d_center, d_axes)
        image += np.where(d_rho <= 1, 0.6 * (1.0 - 0.3 * d_rho), 0.0)
        distractors.append({"center": d_center.tolist(), "axes": d_axes.tolist()})
    if cfg.noise_std:
        image = image + rng.normal(0.0, cfg.noise_std, shape)
    image = np.clip(image, 0.0, 1.0)
    mask = (rho <= 1).astype(np.int64)
    meta = {"center": center.tolist(), "axes": axes.tolist(), "distractors": distractors}
    return image, mask, meta


def _generate(cfg, sample_fn):
    streams = np.random.SeedSequence(int(cfg.seed)).spawn(int(cfg.count))
    images, masks, metas = [], [], []
    for ss in streams:
        image, mask, meta = sample_fn(cfg, np.random.default_rng(ss))
        images.append(image)
        masks.append(mask)
        metas.append(meta)
    return Dataset(np.stack(images), np.stack(masks), metas, config_to_dict(cfg))


def gen_2d(config=None):
    """Generate a 2D disc/cup dataset; deterministic in ``config.seed``."""
    return _generate(config or SynthConfig2D(), _gen_sample_2d)


def gen_3d(config=None):
    """Generate a 3D single-ellipsoid dataset; deterministic in ``config.seed``."""
    return _generate(config or SynthConfig3D(), _gen_sample_3d)


def generate(config):
    return gen_2d(config) if isinstance(config, SynthConfig2D) else gen_3d(config)


def normalize_volume(v):
    """Zero-mean, unit-std rescaling of a single image or volume."""
    v = np.asarray(v, dtype=np.float64)
    std = v.std()
    if std == 0:
        return v - v.mean()
    return (v - v.mean()) / std


# -- PGM --------------------------------------------------------------------

def write_pgm(path, array, maxval):
    """Binary (P5) PGM; 16-bit samples are big-endian as the format requires."""
    array = np.asarray(array)
    h, w = array.shape
    dtype = ">u2" if maxval > 255 else "u1"
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
        fh.write(array.astype(dtype).tobytes())


_PGM_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n)*(\S+)")


def read_pgm(path):
    """Read a binary PGM; returns ``(array, maxval)``."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] != b"P5":
        raise VersionError(f"{path}: bad PGM magic {data[:2]!r}")
    pos = 2
    header = []
    for _ in range(3):
        m = _PGM_TOKEN.match(data, pos)
        if m is None:
            raise IntegrityError(f"{path}: truncated PGM header")
        header.append(int(m.group(1)))
        pos = m.end()
    w, h, maxval = header
    pos += 1  # single whitespace byte before the raster
    dtype = ">u2" if maxval > 255 else "u1"
    nbytes = w * h * np.dtype(dtype).itemsize
    if len(data) - pos != nbytes:
        raise IntegrityError(f"{path}: expected {nbytes} raster bytes, found {len(data) - pos}")
    return np.frombuffer(data, dtype=dtype, offset=pos).reshape(h, w), maxval


def write_ppm(path, rgb):
    rgb = np.asarray(rgb, dtype=np.uint8)
    h, w, _ = rgb.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(rgb.tobytes())


# -- dataset persistence ----------------------------------------------------

_IMG16 = 65535


def save_dataset(dataset, directory):
    """Write ``dataset`` under ``directory`` (created if needed)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    samples = []
    for i in range(len(dataset)):
        image, mask = dataset.images[i], dataset.masks[i]
        stem = f"{i:04d}"
        if dataset.ndim == 2:
            write_pgm(directory / f"{stem}_img.pgm", np.rint(np.clip(image, 0, 1) * _IMG16), _IMG16)
            write_pgm(directory / f"{stem}_msk.pgm", mask, 255)
            samples.append({"image": f"{stem}_img.pgm", "mask": f"{stem}_msk.pgm",
                            "meta": dataset.metas[i]})
        else:
            (directory / f"{stem}_img.raw").write_bytes(image.astype("<f4").tobytes())
            (directory / f"{stem}_img.meta.json").write_text(json.dumps(
                {"shape": list(image.shape), "dtype": "<f4", "order": "C"}, sort_keys=True))
            (directory / f"{stem}_msk.raw").write_bytes(mask.astype("u1").tobytes())
            samples.append({"image": f"{stem}_img.raw", "mask": f"{stem}_msk.raw",
                            "descriptor": f"{stem}_img.meta.json", "meta": dataset.metas[i]})
    manifest = {
        "format_version": FORMAT_VERSION,
        "ndim": dataset.ndim,
        "shape": list(dataset.images.shape[1:]),
        "count": len(dataset),
        "image_scale": 1.0 / _IMG16 if dataset.ndim == 2 else 1.0,
        "seed": dataset.config.get("seed"),
        "config": dataset.config,
        "samples": samples,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return directory


def load_dataset(directory):
    """Read a dataset written by :func:`save_dataset`.

    Raises
    ------
    ManifestError
        ``manifest.json`` missing or not valid JSON / missing keys.
    VersionError
        Unknown ``format_version`` or bad file magic.
    IntegrityError
        Declared count disagrees with the sample list or files are missing.
    ExtentMismatchError
        A stored raster's extents differ from the manifest shape.
    """
    directory = Path(directory)
    path = directory / "manifest.json"
    if not path.is_file():
        raise ManifestError(f"{path}: manifest not found")
    try:
        manifest = json.loads(path.read_text())
        version = manifest["format_version"]
        ndim, shape = int(manifest["ndim"]), tuple(manifest["shape"])
        count, samples = int(manifest["count"]), manifest["samples"]
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ManifestError(f"{path}: malformed manifest ({exc})") from exc
    if version != FORMAT_VERSION:
        raise VersionError(f"{path}: unsupported format_version {version!r}")
    if count != len(samples):
        raise IntegrityError(f"{path}: manifest declares {count} samples, lists {len(samples)}")
    images, masks, metas = [], [], []
    for entry in samples:
        img_path, msk_path = directory / entry["image"], directory / entry["mask"]
        for p in (img_path, msk_path):
            if not p.is_file():
                raise IntegrityError(f"{p}: listed in manifest but missing")
        if ndim == 2:
            raw, maxval = read_pgm(img_path)
            image = raw.astype(np.float64) * float(manifest["image_scale"])
            mask, _ = read_pgm(msk_path)
        else:
            desc = json.loads((directory / entry["descriptor"]).read_text())
            if tuple(desc["shape"]) != shape:
                raise ExtentMismatchError(f"{img_path}: descriptor shape {desc['shape']} != {shape}")
            buf = img_path.read_bytes()
            if len(buf) != 4 * int(np.prod(shape)):
                raise ExtentMismatchError(f"{img_path}: {len(buf)} bytes for shape {shape}")
            image = np.frombuffer(buf, dtype="<f4").reshape(shape).astype(np.float64)
            mbuf = msk_path.read_bytes()
            if len(mbuf) != int(np.prod(shape)):
                raise ExtentMismatchError(f"{msk_path}: {len(mbuf)} bytes for shape {shape}")
            mask = np.frombuffer(mbuf, dtype="u1").reshape(shape)
        if image.shape != shape or mask.shape != shape:
            raise ExtentMismatchError(f"{img_path}: extents {image.shape} != manifest {shape}")
        images.append(image)
        masks.append(mask.astype(np.int64))
        metas.append(entry.get("meta", {}))
    extra = sorted(f for f in os.listdir(directory)
                   if re.fullmatch(r"\d{4}_img\.(pgm|raw)", f)
                   and f not in {e["image"] for e in samples})
    if extra:
        raise IntegrityError(f"{directory}: {len(extra)} image files not listed in the manifest")
    return Dataset(np.stack(images), np.stack(masks), metas, manifest.get("config", {}))
