"""Grayscale windowing of HU-like images and lossless bitmap encoding."""

from __future__ import annotations

import io

import numpy as np
from PIL import Image

from . import HU_PER_UNIT

DEFAULT_WINDOW_HU = (-150.0, 200.0)
DEFAULT_PSTD_WINDOW_HU = (0.0, 50.0)


def window_image(img_units: np.ndarray, lo_hu: float, hi_hu: float) -> np.ndarray:
    """Map [lo, hi] HU to [0, 255] with clamping; input is in scaled units."""
    if not hi_hu > lo_hu:
        raise ValueError(f"window must have lo < hi, got [{lo_hu}, {hi_hu}]")
    hu = np.asarray(img_units, dtype=np.float64) * HU_PER_UNIT
    frac = np.clip((hu - lo_hu) / (hi_hu - lo_hu), 0.0, 1.0)
    return np.round(frac * 255.0).astype(np.uint8)


def encode_png(gray: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.asarray(gray, dtype=np.uint8), mode="L").save(buf, format="PNG")
    return buf.getvalue()
