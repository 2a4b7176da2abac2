"""Procedurally generated desk dataset: 10 shape/texture classes at 40x40.

Samples are rendered at 4x supersampling and box-downsampled, giving smooth
edges, then lightly noised. Rendering is fully determined by (class, rng), so
dataset splits regenerate bit-identically from a seed. Images are written as
16-bit PNGs plus a labels.tsv index; experiments then run them through the
standard resize/crop preprocessing like any other image folder.
"""

from __future__ import annotations

import os

import numpy as np

from . import imaging
from .imaging import LabeledImage

CLASS_NAMES = [
    "disk", "square", "triangle", "ring", "cross",
    "hstripes", "vstripes", "checker", "diag", "dots",
]
NUM_CLASSES = len(CLASS_NAMES)
CANVAS = 40
_SS = 4  # supersampling factor


def _pick_colors(rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    bg = rng.uniform(0.15, 0.85, size=3)
    while True:
        fg = rng.uniform(0.05, 0.95, size=3)
        if np.abs(fg - bg).max() >= 0.35:
            return fg, bg


def _mask(class_idx: int, rng: np.random.Generator, side: int) -> np.ndarray:
    """Binary foreground mask on the supersampled canvas."""
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64)
    cx = side / 2 + rng.uniform(-0.1, 0.1) * side
    cy = side / 2 + rng.uniform(-0.1, 0.1) * side
    r = side * rng.uniform(0.22, 0.34)
    name = CLASS_NAMES[class_idx]
    if name == "disk":
        return (xx - cx) ** 2 + (yy - cy) ** 2 <= r**2
    if name == "square":
        return (np.abs(xx - cx) <= r) & (np.abs(yy - cy) <= r)
    if name == "triangle":
        # upright isoceles triangle; apex orientation varies
        flip = rng.random() < 0.5
        ys = (cy - yy) if flip else (yy - cy)
        return (ys >= -r) & (np.abs(xx - cx) <= (r - ys) * 0.75) & (ys <= r)
    if name == "ring":
        d2 = (xx - cx) ** 2 + (yy - cy) ** 2
        return (d2 <= r**2) & (d2 >= (0.55 * r) ** 2)
    if name == "cross":
        t = r * rng.uniform(0.3, 0.45)
        arm = (np.abs(xx - cx) <= t) & (np.abs(yy - cy) <= r)
        return arm | ((np.abs(yy - cy) <= t) & (np.abs(xx - cx) <= r))
    if name == "hstripes":
        period = side / rng.integers(4, 8)
        phase = rng.uniform(0, period)
        return ((yy + phase) % period) < period / 2
    if name == "vstripes":
        period = side / rng.integers(4, 8)
        phase = rng.uniform(0, period)
        return ((xx + phase) % period) < period / 2
    if name == "checker":
        period = side / rng.integers(3, 6)
        phase_x = rng.uniform(0, period)
        phase_y = rng.uniform(0, period)
        cells = (((xx + phase_x) // (period / 2)) + ((yy + phase_y) // (period / 2)))
        return cells % 2 < 1
    if name == "diag":
        period = side / rng.integers(4, 8)
        phase = rng.uniform(0, period)
        sign = 1.0 if rng.random() < 0.5 else -1.0
        return ((xx + sign * yy + phase) % period) < period / 2
    if name == "dots":
        sep = r * rng.uniform(0.9, 1.2)
        rr = r * rng.uniform(0.35, 0.5)
        horizontal = rng.random() < 0.5
        dx, dy = (sep, 0.0) if horizontal else (0.0, sep)
        d1 = (xx - cx + dx) ** 2 + (yy - cy + dy) ** 2 <= rr**2
        d2 = (xx - cx - dx) ** 2 + (yy - cy - dy) ** 2 <= rr**2
        return d1 | d2
    raise ValueError(f"unknown class index {class_idx}")


def render_sample(class_idx: int, rng: np.random.Generator) -> np.ndarray:
    """Render one (3, CANVAS, CANVAS) float32 sample in [0, 1]."""
    side = CANVAS * _SS
    fg, bg = _pick_colors(rng)
    mask = _mask(class_idx, rng, side).astype(np.float64)
    img = bg[:, None, None] + mask[None] * (fg - bg)[:, None, None]
    # mild illumination ramp across a random direction
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64) / side
    angle = rng.uniform(0, 2 * np.pi)
    ramp = (np.cos(angle) * xx + np.sin(angle) * yy) * rng.uniform(-0.12, 0.12)
    img = img + ramp[None]
    # box-downsample the supersampled canvas
    img = img.reshape(3, CANVAS, _SS, CANVAS, _SS).mean(axis=(2, 4))
    img = img + rng.normal(0.0, 0.012, size=img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def generate_split(n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Generate n samples with balanced round-robin labels."""
    rng = np.random.default_rng(seed)
    labels = np.arange(n, dtype=np.int64) % NUM_CLASSES
    images = np.stack([render_sample(int(c), rng) for c in labels])
    return images, labels


def materialize(directory: str, n: int, seed: int) -> str:
    """Write a generated split to disk (PNG files + labels.tsv); returns the dir."""
    os.makedirs(directory, exist_ok=True)
    images, labels = generate_split(n, seed)
    lines = []
    for i, (img, label) in enumerate(zip(images, labels)):
        sample_id = f"s{seed:04d}_{i:05d}"
        imaging.save_image(img, os.path.join(directory, f"{sample_id}.png"))
        lines.append(f"{sample_id}\t{int(label)}")
    with open(os.path.join(directory, "labels.tsv"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    return directory


def load_labeled(directory: str, resize_to: int = 36, crop_to: int = 32) -> list[LabeledImage]:
    """Load a materialized dataset directory, preprocessing every image."""
    index = os.path.join(directory, "labels.tsv")
    if not os.path.isfile(index):
        raise FileNotFoundError(f"dataset index not found: {index}")
    samples = []
    with open(index, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            sample_id, label_s = line.split("\t")
            img = imaging.load_and_preprocess(
                os.path.join(directory, f"{sample_id}.png"), resize_to, crop_to
            )
            samples.append(LabeledImage(image=img, label=int(label_s), sample_id=sample_id))
    return samples


def preprocessed_split(n: int, seed: int, resize_to: int = 36,
                       crop_to: int = 32) -> tuple[np.ndarray, np.ndarray]:
    """In-memory generate + preprocess, for training and tests."""
    images, labels = generate_split(n, seed)
    out = np.stack([
        imaging.preprocess(np.transpose(img, (1, 2, 0)), resize_to, crop_to)
        for img in images
    ])
    return out, labels
