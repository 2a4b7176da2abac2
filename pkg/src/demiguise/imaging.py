"""Image tensors, ingestion/preprocessing, PSNR/SSIM, and lossless 16-bit PNG I/O.

Images are numpy arrays of shape (3, H, W), dtype float32, values in [0, 1].
Resizing uses bilinear interpolation with half-pixel sample centers (the
"align_corners disabled" convention) and no antialias filter, so results are
reproducible across implementations that follow the same convention.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import cv2
import numpy as np
from scipy.signal import correlate2d

# PSNR of identical images; also caps the metric so sweep code stays total.
PSNR_SENTINEL_DB = 300.0

# Standard SSIM constants (the source text never specifies them).
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2

PNG_MAX = 65535  # 16 bits per channel


def validate_image(img: np.ndarray, name: str = "image") -> np.ndarray:
    """Check the (3, H, W) float [0,1] contract and return a float32 view."""
    arr = np.asarray(img)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ValueError(f"{name}: expected shape (3, H, W), got {arr.shape}")
    if arr.shape[1] < 1 or arr.shape[2] < 1:
        raise ValueError(f"{name}: dimensions must be positive, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError(
            f"{name}: values outside [0, 1] (min={arr.min()}, max={arr.max()})"
        )
    return np.ascontiguousarray(arr, dtype=np.float32)


@dataclass(frozen=True)
class LabeledImage:
    """An image plus its ground-truth class index and an opaque sample id."""

    image: np.ndarray
    label: int
    sample_id: str


def _require_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")


def preprocess(raw_hwc: np.ndarray, resize_to: int, crop_to: int) -> np.ndarray:
    """Scale the shorter side to ``resize_to``, center-crop ``crop_to``.

    ``raw_hwc`` is an (H, W, 3) float array in [0, 1]; returns (3, crop, crop).
    """
    h, w = raw_hwc.shape[:2]
    if h <= w:
        new_h = resize_to
        new_w = max(1, round(w * resize_to / h))
    else:
        new_w = resize_to
        new_h = max(1, round(h * resize_to / w))
    resized = cv2.resize(
        raw_hwc.astype(np.float32), (new_w, new_h), interpolation=cv2.INTER_LINEAR
    )
    if new_h < crop_to or new_w < crop_to:
        raise ValueError(
            f"image too small after resize: {new_h}x{new_w} < crop {crop_to}"
        )
    top = (new_h - crop_to) // 2
    left = (new_w - crop_to) // 2
    crop = resized[top : top + crop_to, left : left + crop_to, :]
    chw = np.transpose(crop, (2, 0, 1))
    return np.clip(np.ascontiguousarray(chw, dtype=np.float32), 0.0, 1.0)


def _decode_file(path: str) -> np.ndarray:
    """Decode an image file to (H, W, 3) float32 RGB in [0, 1]."""
    try:
        with open(path, "rb") as fh:
            payload = fh.read()
    except OSError as exc:
        raise ValueError(f"unreadable file: {path} ({exc})") from exc
    buf = np.frombuffer(payload, dtype=np.uint8)
    decoded = cv2.imdecode(buf, cv2.IMREAD_UNCHANGED)
    if decoded is None:
        raise ValueError(f"unreadable file: {path} (not a decodable image)")
    if decoded.ndim != 3 or decoded.shape[2] < 3:
        raise ValueError(f"{path}: expected an RGB image, got shape {decoded.shape}")
    decoded = decoded[:, :, :3]
    if decoded.dtype == np.uint8:
        scale = 255.0
    elif decoded.dtype == np.uint16:
        scale = float(PNG_MAX)
    else:
        raise ValueError(f"{path}: unsupported sample type {decoded.dtype}")
    rgb = cv2.cvtColor(decoded, cv2.COLOR_BGR2RGB)
    return rgb.astype(np.float32) / scale


def load_and_preprocess(path: str, resize_to: int = 36, crop_to: int = 32) -> np.ndarray:
    """Load an RGB image file, resize shorter side, center-crop, scale to [0,1]."""
    raw = _decode_file(path)
    return preprocess(raw, resize_to, crop_to)


def load_image(path: str) -> np.ndarray:
    """Load an image file at native size as a (3, H, W) float32 tensor."""
    raw = _decode_file(path)
    return np.ascontiguousarray(np.transpose(raw, (2, 0, 1)))


def save_image(img: np.ndarray, path: str) -> None:
    """Persist an image as a 16-bit-per-channel PNG (round-trip error <= 1/65535)."""
    arr = validate_image(img)
    hwc = np.transpose(arr.astype(np.float64), (1, 2, 0))
    u16 = np.round(hwc * PNG_MAX).astype(np.uint16)
    bgr = cv2.cvtColor(u16, cv2.COLOR_RGB2BGR)
    ok, encoded = cv2.imencode(".png", bgr)
    if not ok:
        raise ValueError(f"PNG encoding failed for {path}")
    directory = os.path.dirname(os.path.abspath(path))
    if directory and not os.path.isdir(directory):
        raise ValueError(f"unwritable path: {path} (no such directory)")
    try:
        with open(path, "wb") as fh:
            fh.write(encoded.tobytes())
    except OSError as exc:
        raise ValueError(f"unwritable path: {path} ({exc})") from exc


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB with peak 1.0.

    Identical inputs return ``PSNR_SENTINEL_DB`` rather than raising, and the
    sentinel also caps the score, keeping it the maximum of the metric.
    """
    _require_same_shape(np.asarray(a), np.asarray(b))
    diff = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return PSNR_SENTINEL_DB
    return float(min(10.0 * np.log10(1.0 / mse), PSNR_SENTINEL_DB))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """2-D Gaussian weights normalized to sum 1."""
    half = (size - 1) / 2.0
    coords = np.arange(size, dtype=np.float64) - half
    g = np.exp(-(coords**2) / (2.0 * sigma**2))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean local SSIM over an 11x11 Gaussian window (sigma 1.5), channel-averaged.

    Local statistics are taken over windows fully inside the image ("valid"
    placement); stabilizers are the standard C1=(0.01)^2, C2=(0.03)^2 for unit
    dynamic range.
    """
    av = np.asarray(a, dtype=np.float64)
    bv = np.asarray(b, dtype=np.float64)
    _require_same_shape(av, bv)
    if av.ndim != 3:
        raise ValueError(f"expected (C, H, W) images, got shape {av.shape}")
    _, h, w = av.shape
    if SSIM_WINDOW > h or SSIM_WINDOW > w:
        raise ValueError(f"window {SSIM_WINDOW} exceeds image size {h}x{w}")
    window = gaussian_window()
    scores = []
    for c in range(av.shape[0]):
        x, y = av[c], bv[c]
        mu_x = correlate2d(x, window, mode="valid")
        mu_y = correlate2d(y, window, mode="valid")
        xx = correlate2d(x * x, window, mode="valid") - mu_x * mu_x
        yy = correlate2d(y * y, window, mode="valid") - mu_y * mu_y
        xy = correlate2d(x * y, window, mode="valid") - mu_x * mu_y
        num = (2.0 * mu_x * mu_y + SSIM_C1) * (2.0 * xy + SSIM_C2)
        den = (mu_x * mu_x + mu_y * mu_y + SSIM_C1) * (xx + yy + SSIM_C2)
        scores.append(np.mean(num / den))
    return float(np.mean(scores))
