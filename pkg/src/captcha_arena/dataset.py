"""Procedural, duplicate-free CAPTCHA dataset generation and persistence."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np
from scipy import ndimage

from .container import read_container, write_container
from .errors import ConfigError, FormatError
from .glyphs import GLYPH_HEIGHT, GLYPH_WIDTH, glyph_bitmap

ALPHABET = tuple("ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789")
NUM_CLASSES = len(ALPHABET)
LABEL_LENGTH = 4
LABEL_SPACE = NUM_CLASSES ** LABEL_LENGTH

DATASET_MAGIC = b"CAPDSET\x00"
DATASET_VERSION = 1

# Stream tags mixed into the master seed; keeps label sampling and splitting
# on independent random streams.
_LABEL_STREAM = 0
_SPLIT_STREAM = 1


def label_to_string(label) -> str:
    return "".join(ALPHABET[int(i)] for i in label)


def string_to_label(text: str) -> np.ndarray:
    if len(text) != LABEL_LENGTH:
        raise ConfigError(f"label {text!r} must have exactly {LABEL_LENGTH} characters")
    try:
        return np.array([ALPHABET.index(c) for c in text.upper()], dtype=np.int64)
    except ValueError:
        raise ConfigError(f"label {text!r} contains a symbol outside A-Z, 0-9") from None


@dataclass(frozen=True)
class Distortion:
    rotation_deg: float = 8.0
    jitter_px: int = 2
    noise: float = 0.1


@dataclass(frozen=True)
class GenConfig:
    count: int = 2500
    image_height: int = 24
    image_width: int = 72
    channels: int = 1
    distortion: Distortion = field(default_factory=Distortion)

    def __post_init__(self):
        if isinstance(self.distortion, dict):
            object.__setattr__(self, "distortion", Distortion(**self.distortion))
        if not 1 <= self.count <= LABEL_SPACE:
            raise ConfigError(f"count={self.count} must be in [1, {LABEL_SPACE}] "
                              f"(the 4-character label space has {LABEL_SPACE} labels)")
        if self.channels not in (1, 3):
            raise ConfigError(f"channels must be 1 or 3, got {self.channels}")
        if self.image_height < GLYPH_HEIGHT or self.image_width < LABEL_LENGTH * GLYPH_WIDTH:
            raise ConfigError(f"image {self.image_height}x{self.image_width} too small "
                              f"for four {GLYPH_HEIGHT}x{GLYPH_WIDTH} glyphs")
        d = self.distortion
        if d.rotation_deg < 0 or d.jitter_px < 0 or not 0 <= d.noise <= 1:
            raise ConfigError("distortion ranges must be non-negative and noise in [0, 1]")

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.channels, self.image_height, self.image_width)

    def to_dict(self) -> dict:
        return asdict(self)


class Sample(NamedTuple):
    image: np.ndarray
    label: np.ndarray
    render_seed: int


def glyph_scale(cfg: GenConfig) -> int:
    slot = cfg.image_width // LABEL_LENGTH
    return max(1, min(cfg.image_height // (GLYPH_HEIGHT + 3), slot // (GLYPH_WIDTH + 2)))


def render_captcha(label, seed: int, cfg: GenConfig) -> np.ndarray:
    """Render a 4-character label into a ``(channels, H, W)`` float32 image in [0, 1].

    Each glyph is centred in its quarter of the canvas, then rotated and
    shifted by amounts drawn from ``seed``.  Uniform noise is added last.
    """
    rng = np.random.default_rng(seed)
    h, w = cfg.image_height, cfg.image_width
    d = cfg.distortion
    scale = glyph_scale(cfg)
    slot_w = w / LABEL_LENGTH
    canvas = np.zeros((h, w))
    for slot, idx in enumerate(label):
        glyph = glyph_bitmap(ALPHABET[int(idx)], scale)
        angle = rng.uniform(-d.rotation_deg, d.rotation_deg)
        dy, dx = rng.integers(-d.jitter_px, d.jitter_px + 1, size=2)
        if angle != 0.0:
            glyph = np.clip(ndimage.rotate(glyph, angle, reshape=True, order=1), 0.0, 1.0)
        gh, gw = glyph.shape
        top = int(math.floor(h / 2 + dy - gh / 2 + 0.5))
        left = int(math.floor(slot_w * (slot + 0.5) + dx - gw / 2 + 0.5))
        _paste_max(canvas, glyph, top, left)
    if d.noise > 0:
        canvas += rng.uniform(-d.noise, d.noise, size=canvas.shape)
    np.clip(canvas, 0.0, 1.0, out=canvas)
    return np.repeat(canvas[None].astype(np.float32), cfg.channels, axis=0)


def _paste_max(canvas: np.ndarray, glyph: np.ndarray, top: int, left: int) -> None:
    h, w = canvas.shape
    gh, gw = glyph.shape
    r0, c0 = max(top, 0), max(left, 0)
    r1, c1 = min(top + gh, h), min(left + gw, w)
    if r0 >= r1 or c0 >= c1:
        return
    region = glyph[r0 - top:r1 - top, c0 - left:c1 - left]
    np.maximum(canvas[r0:r1, c0:c1], region, out=canvas[r0:r1, c0:c1])


@dataclass
class Dataset:
    """Struct-of-arrays CAPTCHA dataset.

    ``images`` is ``(N, C, H, W)`` float32, ``labels`` is ``(N, 4)`` class
    indices and ``seeds`` holds the per-sample render seeds.
    """

    images: np.ndarray
    labels: np.ndarray
    seeds: np.ndarray
    config: GenConfig
    master_seed: int

    def __post_init__(self):
        n = len(self.labels)
        if self.images.shape[0] != n or self.seeds.shape[0] != n:
            raise ConfigError("images, labels and seeds must have the same length")
        if self.labels.ndim != 2 or self.labels.shape[1] != LABEL_LENGTH:
            raise ConfigError(f"labels must have shape (N, {LABEL_LENGTH})")
        codes = self.labels @ (NUM_CLASSES ** np.arange(LABEL_LENGTH - 1, -1, -1))
        if len(np.unique(codes)) != n:
            raise ConfigError("dataset contains duplicate labels")

    def __len__(self) -> int:
        return len(self.labels)

    def __iter__(self) -> Iterator[Sample]:
        for i in range(len(self)):
            yield Sample(self.images[i], self.labels[i], int(self.seeds[i]))

    @property
    def samples(self) -> list[Sample]:
        return list(self)

    def label_strings(self) -> list[str]:
        return [label_to_string(lab) for lab in self.labels]

    def subset(self, indices) -> Dataset:
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(self.images[indices], self.labels[indices], self.seeds[indices],
                       self.config, self.master_seed)


def _code_to_label(code: int) -> np.ndarray:
    digits = []
    for _ in range(LABEL_LENGTH):
        code, r = divmod(code, NUM_CLASSES)
        digits.append(r)
    return np.array(digits[::-1], dtype=np.int64)


def generate_dataset(cfg: GenConfig, master_seed: int, workers: int = 1) -> Dataset:
    """Generate ``cfg.count`` samples with distinct labels.

    Labels are drawn uniformly from the label space with rejection of
    repeats.  Rendering is a pure function of (label, seed, cfg), so the
    result does not depend on ``workers``.
    """
    if cfg.count > LABEL_SPACE:
        raise ConfigError(f"count={cfg.count} exceeds the label space of {LABEL_SPACE}")
    rng = np.random.default_rng([master_seed, _LABEL_STREAM])
    seen: set[int] = set()
    codes = []
    while len(codes) < cfg.count:
        code = int(rng.integers(LABEL_SPACE))
        if code not in seen:
            seen.add(code)
            codes.append(code)
    labels = np.stack([_code_to_label(c) for c in codes])
    seeds = rng.integers(0, 2**63, size=cfg.count, dtype=np.uint64)

    def render(i: int) -> np.ndarray:
        return render_captcha(labels[i], int(seeds[i]), cfg)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            images = list(pool.map(render, range(cfg.count)))
    else:
        images = [render(i) for i in range(cfg.count)]
    return Dataset(np.stack(images), labels, seeds, cfg, master_seed)


def split(ds: Dataset, test_fraction: float) -> tuple[Dataset, Dataset]:
    """Deterministically partition ``ds`` into (train, test)."""
    if not 0 < test_fraction < 1:
        raise ConfigError(f"test_fraction must be in (0, 1), got {test_fraction}")
    n = len(ds)
    n_test = int(math.floor(test_fraction * n + 0.5))
    perm = np.random.default_rng([ds.master_seed, _SPLIT_STREAM]).permutation(n)
    test_idx = np.sort(perm[:n_test])
    train_idx = np.sort(perm[n_test:])
    return ds.subset(train_idx), ds.subset(test_idx)


def save_dataset(ds: Dataset, path) -> None:
    meta = {"config": ds.config.to_dict(), "master_seed": int(ds.master_seed),
            "labels": ds.label_strings()}
    write_container(path, DATASET_MAGIC, DATASET_VERSION, meta,
                    {"images": ds.images, "labels": ds.labels, "seeds": ds.seeds})


def load_dataset(path) -> Dataset:
    _, meta, arrays = read_container(path, DATASET_MAGIC, DATASET_VERSION)
    try:
        cfg = GenConfig(**meta["config"])
        ds = Dataset(arrays["images"], arrays["labels"], arrays["seeds"], cfg,
                     int(meta["master_seed"]))
    except (KeyError, TypeError, ConfigError) as exc:
        raise FormatError(f"{path}: inconsistent dataset payload: {exc}") from exc
    if ds.label_strings() != meta["labels"]:
        raise FormatError(f"{path}: label manifest does not match label block")
    return ds


def write_manifest(ds: Dataset, path) -> None:
    lines = [f"{s},{int(seed)}" for s, seed in zip(ds.label_strings(), ds.seeds)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def export_pgm(image: np.ndarray, path) -> None:
    """Write an image as a binary portable graymap (P5); colour is averaged."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3:
        img = img.mean(axis=0)
    h, w = img.shape
    pixels = np.round(np.clip(img, 0, 1) * 255).astype(np.uint8)
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes())
