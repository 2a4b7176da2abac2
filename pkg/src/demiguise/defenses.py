"""Input-preprocessing defenses: JPEG round-trip and bit-depth reduction."""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from PIL import Image


@dataclass(frozen=True)
class DefenseSpec:
    """One defense configuration; the parameter matching ``kind`` must be set."""

    kind: str  # "jpeg" | "bit_depth" | "none"
    quality: int | None = None
    bits: int | None = None

    def __post_init__(self):
        if self.kind == "jpeg":
            if self.quality is None or not 1 <= self.quality <= 100:
                raise ValueError("jpeg defense requires quality in [1, 100]")
            if self.bits is not None:
                raise ValueError("jpeg defense takes no bit depth")
        elif self.kind == "bit_depth":
            if self.bits is None or not 1 <= self.bits <= 8:
                raise ValueError("bit_depth defense requires bits in [1, 8]")
            if self.quality is not None:
                raise ValueError("bit_depth defense takes no quality")
        elif self.kind == "none":
            if self.quality is not None or self.bits is not None:
                raise ValueError("identity defense takes no parameters")
        else:
            raise ValueError(f"unknown defense kind: {self.kind!r}")

    def describe(self) -> str:
        if self.kind == "jpeg":
            return f"jpeg(q={self.quality})"
        if self.kind == "bit_depth":
            return f"bit_depth(b={self.bits})"
        return "none"


def apply_defense(spec: DefenseSpec, x: np.ndarray) -> np.ndarray:
    """Preprocess an image per the given DefenseSpec; output stays a valid [0, 1] image."""
    arr = np.asarray(x, dtype=np.float64)
    if spec.kind == "none":
        return arr.astype(np.float32).copy()
    if spec.kind == "bit_depth":
        levels = 2**spec.bits - 1
        squeezed = np.round(arr * levels) / levels
        return squeezed.astype(np.float32)
    # JPEG round-trip; chroma subsampling stays off so small images survive
    hwc = np.transpose(np.clip(arr, 0.0, 1.0), (1, 2, 0))
    u8 = np.round(hwc * 255.0).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(u8, mode="RGB").save(
        buf, format="JPEG", quality=spec.quality, subsampling=0
    )
    buf.seek(0)
    decoded = np.asarray(Image.open(buf).convert("RGB"), dtype=np.float64) / 255.0
    return np.transpose(decoded, (2, 0, 1)).astype(np.float32)


def defense_sweep_specs() -> list[DefenseSpec]:
    """The evaluation sweep: JPEG quality 100 down to 10 by 15, bit depth 7..1."""
    specs = [DefenseSpec(kind="jpeg", quality=q) for q in range(100, 9, -15)]
    specs += [DefenseSpec(kind="bit_depth", bits=b) for b in range(7, 0, -1)]
    return specs
