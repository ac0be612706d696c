"""Procedural crack-image corpus with exact ground-truth masks.

A sample is a dark random-walk polyline (with optional branches) rasterized
over a smooth value-noise background.  Every sample is a pure function of
``(master_seed, index)``, so corpora regenerate bit-identically from their
manifest.  External image directories can be ingested through the same
``Sample`` carrier via bilinear resize (no masks in that case).
"""

from __future__ import annotations

import logging
import os
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import pngio
from .errors import ConfigError, IntegrityError
from .rng import Prng, derive_seed

log = logging.getLogger("crackcs")

# Rejection band for the crack-pixel fraction of generated masks; fixed
# before any tuning and asserted by the corpus properties.
_FRACTION_LO = 0.005
_FRACTION_HI = 0.15


def _is_pow2(n):
    return n >= 1 and (n & (n - 1)) == 0


@dataclass
class CorpusConfig:
    image_size: tuple = (64, 64)
    channels: int = 1
    train_count: int = 2000
    validation_count: int = 40
    master_seed: int = 1
    width_min: float = 1.0
    width_max: float = 4.0
    branch_probability: float = 0.15
    waviness: float = 1.0
    background_level: float = 0.3
    noise_amplitude: float = 0.1

    def __post_init__(self):
        h, w = self.image_size
        if not (_is_pow2(h) and _is_pow2(w) and h >= 32 and w >= 32):
            raise ConfigError(f"image_size must be powers of two >= 32, got {self.image_size}")
        if self.channels not in (1, 3):
            raise ConfigError("channels must be 1 or 3")
        if self.train_count < 1 or self.validation_count < 1:
            raise ConfigError("sample counts must be >= 1")
        if not (1.0 <= self.width_min <= self.width_max):
            raise ConfigError("width range must satisfy 1 <= width_min <= width_max")
        if not 0.0 <= self.branch_probability <= 1.0:
            raise ConfigError("branch_probability must lie in [0, 1]")

    def to_dict(self):
        return {
            "image_size": f"{self.image_size[0]} {self.image_size[1]}",
            "channels": str(self.channels),
            "train_count": str(self.train_count),
            "validation_count": str(self.validation_count),
            "master_seed": str(self.master_seed),
            "width_min": repr(self.width_min),
            "width_max": repr(self.width_max),
            "branch_probability": repr(self.branch_probability),
            "waviness": repr(self.waviness),
            "background_level": repr(self.background_level),
            "noise_amplitude": repr(self.noise_amplitude),
        }

    @classmethod
    def from_dict(cls, d):
        h, w = d["image_size"].split()
        return cls(
            image_size=(int(h), int(w)),
            channels=int(d["channels"]),
            train_count=int(d["train_count"]),
            validation_count=int(d["validation_count"]),
            master_seed=int(d["master_seed"]),
            width_min=float(d["width_min"]),
            width_max=float(d["width_max"]),
            branch_probability=float(d["branch_probability"]),
            waviness=float(d["waviness"]),
            background_level=float(d["background_level"]),
            noise_amplitude=float(d["noise_amplitude"]),
        )


@dataclass
class Sample:
    image: np.ndarray  # (C, H, W) float64 in [-1, 1]
    mask: np.ndarray | None  # (H, W) uint8 in {0, 1}; None for ingested data
    seed: int


@dataclass
class Corpus:
    train: list
    validation: list
    config: CorpusConfig
    kind: str = "generated"  # or "ingested"

    def all_samples(self):
        return list(self.train) + list(self.validation)


def resize_bilinear(image, out_size):
    """Bilinear resample of (C, H, W) to (C, out_h, out_w).

    Samples at pixel centers (align-corners disabled): source coordinate
    of output pixel j is (j + 0.5) * in/out - 0.5, clamped to the grid.
    """
    c, h, w = image.shape
    oh, ow = out_size

    def axis_coords(n_in, n_out):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0.0, n_in - 1.0)
        lo = np.floor(src).astype(np.int64)
        lo = np.minimum(lo, n_in - 2) if n_in > 1 else np.zeros_like(lo)
        frac = src - lo
        return lo, frac

    ylo, yfrac = axis_coords(h, oh)
    xlo, xfrac = axis_coords(w, ow)
    yf = yfrac[None, :, None]
    xf = xfrac[None, None, :]
    tl = image[:, ylo][:, :, xlo]
    tr = image[:, ylo][:, :, xlo + 1] if w > 1 else tl
    bl = image[:, ylo + 1][:, :, xlo] if h > 1 else tl
    br = image[:, ylo + 1][:, :, xlo + 1] if (h > 1 and w > 1) else tl
    top = tl * (1 - xf) + tr * xf
    bot = bl * (1 - xf) + br * xf
    return top * (1 - yf) + bot * yf


def _value_noise(prng, size, amplitude):
    """Multi-octave value noise: bilinear-upsampled random lattices."""
    h, w = size
    noise = np.zeros((1, h, w))
    weights = [0.5**k for k in range(4)]
    total = sum(weights)
    for k, wt in enumerate(weights):
        lattice = max(2, min(h, 4 * 2**k))
        grid = (prng.uniform((1, lattice, lattice)) * 2.0 - 1.0) * (wt / total)
        noise += resize_bilinear(grid, (h, w))
    return amplitude * noise[0]


def _stamp_disc(canvas_mask, canvas_val, y, x, radius, value):
    """Paint a disc of ``value`` (darker wins) and mark its support.

    The pixel nearest the disc center is always painted, so unit-step
    walks stay 8-connected even at the minimum width.
    """
    h, w = canvas_mask.shape
    r_int = int(np.ceil(radius))
    y0, y1 = max(0, int(y) - r_int), min(h, int(y) + r_int + 1)
    x0, x1 = max(0, int(x) - r_int), min(w, int(x) + r_int + 1)
    if y0 >= y1 or x0 >= x1:
        return
    yy, xx = np.mgrid[y0:y1, x0:x1]
    inside = (yy - y) ** 2 + (xx - x) ** 2 <= radius**2
    ny, nx = int(np.round(y)), int(np.round(x))
    if y0 <= ny < y1 and x0 <= nx < x1:
        inside[ny - y0, nx - x0] = True
    canvas_mask[y0:y1, x0:x1] |= inside
    region = canvas_val[y0:y1, x0:x1]
    canvas_val[y0:y1, x0:x1] = np.where(inside, np.minimum(region, value), region)


def _walk_crack(prng, config, mask, values, start, angle, max_steps, width, level, allow_branch):
    h, w = mask.shape
    y, x = start
    branches = []
    for step in range(max_steps):
        if not (0 <= y < h and 0 <= x < w):
            break
        jitter = 0.1 * (prng.uniform() - 0.5)
        step_width = float(np.clip(width * (1.0 + 0.3 * (prng.uniform() - 0.5)), config.width_min, config.width_max))
        _stamp_disc(mask, values, y, x, step_width / 2.0, level + jitter)
        if allow_branch and len(branches) < 2 and prng.uniform() < config.branch_probability / 16.0:
            side = 1.0 if prng.uniform() < 0.5 else -1.0
            branches.append(
                (
                    (y, x),
                    angle + side * (np.pi / 4 + (np.pi / 6) * prng.uniform()),
                    (max_steps - step) // 2,
                    max(config.width_min, 0.7 * width),
                )
            )
        angle += config.waviness * 0.3 * prng.normal()
        y += np.sin(angle)
        x += np.cos(angle)
    for (by, bx), bangle, bsteps, bwidth in branches:
        _walk_crack(prng, config, mask, values, (by, bx), bangle, bsteps, bwidth, level, False)


def _render_sample(prng, config):
    h, w = config.image_size
    background = config.background_level + 0.2 * (prng.uniform() - 0.5)
    image = np.full((h, w), background) + _value_noise(prng, (h, w), config.noise_amplitude)

    mask = np.zeros((h, w), dtype=bool)
    values = np.full((h, w), np.inf)
    side = int(prng.integers(4))
    offset = prng.uniform()
    starts = {
        0: ((0.0, offset * (w - 1)), np.pi / 2),  # top border, heading down
        1: ((h - 1.0, offset * (w - 1)), -np.pi / 2),
        2: ((offset * (h - 1), 0.0), 0.0),
        3: ((offset * (h - 1), w - 1.0), np.pi),
    }
    (y0, x0), inward = starts[side]
    angle = inward + (np.pi / 3) * (prng.uniform() - 0.5)
    width = config.width_min + prng.uniform() * (config.width_max - config.width_min)
    level = -0.75 + 0.15 * prng.uniform()
    _walk_crack(prng, config, mask, values, (y0, x0), angle, 4 * max(h, w), width, level, True)

    image = np.where(mask, np.minimum(image, values), image)
    image = np.clip(image, -1.0, 1.0)[None]
    if config.channels == 3:
        image = np.repeat(image, 3, axis=0)
    return image, mask.astype(np.uint8)


def generate_sample(config, index):
    """Deterministic sample for (config.master_seed, index).

    Draws are rejected until the crack covers between 0.5% and 15% of the
    pixels, so every mask is a strict minority class; each attempt uses a
    freshly derived seed, keeping the whole procedure reproducible.
    """
    if index < 0:
        raise ValueError("index must be >= 0")
    sample_seed = derive_seed(config.master_seed, "sample", index)
    for attempt in range(100):
        prng = Prng(derive_seed(sample_seed, "attempt", attempt))
        image, mask = _render_sample(prng, config)
        fraction = float(mask.mean())
        if _FRACTION_LO <= fraction <= _FRACTION_HI:
            return Sample(image=image, mask=mask, seed=sample_seed)
    raise RuntimeError(f"sample {index}: no admissible crack after 100 attempts")


def generate_corpus(config):
    train = [generate_sample(config, i) for i in range(config.train_count)]
    validation = [
        generate_sample(config, config.train_count + i) for i in range(config.validation_count)
    ]
    return Corpus(train=train, validation=validation, config=config, kind="generated")


def ingest_directory(path, config):
    """Load every decodable image under ``path`` resized to the config grid.

    Undecodable files are skipped with a warning in the run log; an empty
    or fully undecodable directory is an error.  Masks are absent.
    """
    names = sorted(os.listdir(path))
    samples = []
    for name in names:
        full = os.path.join(path, name)
        if not os.path.isfile(full):
            continue
        try:
            image = pngio.load_image(full)
        except Exception as exc:  # noqa: BLE001 - any decode failure is a skip
            log.warning("ingest: skipping undecodable file %s (%s)", full, exc)
            continue
        if image.shape[0] == 3 and config.channels == 1:
            image = image.mean(axis=0, keepdims=True)
        elif image.shape[0] == 1 and config.channels == 3:
            image = np.repeat(image, 3, axis=0)
        image = resize_bilinear(image, config.image_size)
        samples.append(Sample(image=np.clip(image, -1.0, 1.0), mask=None, seed=0))
    if not samples:
        raise ValueError(f"no decodable images in {path!r}")
    return Corpus(train=samples, validation=[], config=config, kind="ingested")


def _sample_crcs(sample):
    img_crc = zlib.crc32(pngio.to_uint8(sample.image).tobytes())
    mask_crc = zlib.crc32(sample.mask.tobytes()) if sample.mask is not None else None
    return img_crc, mask_crc


def save_corpus(corpus, path):
    """Write images/masks as 8-bit PNG plus a checksummed manifest."""
    os.makedirs(path, exist_ok=True)
    lines = ["crackcs-corpus 1", f"kind {corpus.kind}"]
    for key, value in corpus.config.to_dict().items():
        lines.append(f"{key} {value}")
    for split, samples in (("train", corpus.train), ("validation", corpus.validation)):
        img_dir = os.path.join(path, split, "images")
        mask_dir = os.path.join(path, split, "masks")
        os.makedirs(img_dir, exist_ok=True)
        os.makedirs(mask_dir, exist_ok=True)
        for i, sample in enumerate(samples):
            pngio.save_image(os.path.join(img_dir, f"{i:05d}.png"), sample.image)
            img_crc, mask_crc = _sample_crcs(sample)
            if sample.mask is not None:
                pngio.save_mask(os.path.join(mask_dir, f"{i:05d}.png"), sample.mask)
            lines.append(
                f"sample {split} {i} {sample.seed} {img_crc} {mask_crc if mask_crc is not None else '-'}"
            )
    with open(os.path.join(path, "manifest.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_corpus(path):
    manifest = os.path.join(path, "manifest.txt")
    with open(manifest, encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or lines[0] != "crackcs-corpus 1":
        raise IntegrityError(f"{manifest}: not a crackcs corpus manifest")
    header = {}
    records = []
    for line in lines[1:]:
        key, rest = line.split(" ", 1)
        if key == "sample":
            records.append(rest.split())
        else:
            header[key] = rest
    kind = header.pop("kind")
    config = CorpusConfig.from_dict(header)
    splits = {"train": [], "validation": []}
    for split, idx, seed, img_crc, mask_crc in records:
        img_path = os.path.join(path, split, "images", f"{int(idx):05d}.png")
        image = pngio.load_image(img_path)
        if zlib.crc32(pngio.to_uint8(image).tobytes()) != int(img_crc):
            raise IntegrityError(f"{img_path}: image checksum mismatch")
        mask = None
        if mask_crc != "-":
            mask_path = os.path.join(path, split, "masks", f"{int(idx):05d}.png")
            mask = pngio.load_mask(mask_path)
            if zlib.crc32(mask.tobytes()) != int(mask_crc):
                raise IntegrityError(f"{mask_path}: mask checksum mismatch")
        splits[split].append(Sample(image=image, mask=mask, seed=int(seed)))
    return Corpus(train=splits["train"], validation=splits["validation"], config=config, kind=kind)


def regenerate_masks(path):
    """Re-run generation from the manifest seeds; returns the fresh corpus."""
    corpus = load_corpus(path)
    if corpus.kind != "generated":
        raise ValueError("only generated corpora can be regenerated")
    config = corpus.config
    return generate_corpus(config)
