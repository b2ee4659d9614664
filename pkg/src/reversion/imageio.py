from __future__ import annotations

import os
from pathlib import Path

import numpy as np
from PIL import Image


def load_image(path) -> np.ndarray:
    """Grayscale image as float64 array in [0, 1]."""
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.float64) / 255.0


def save_png(image: np.ndarray, path) -> Path:
    """Write a [0, 1] grayscale array as an 8-bit PNG (atomic rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = (np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) * 255.0).round().astype(np.uint8)
    tmp = path.with_name(path.name + ".tmp")
    Image.fromarray(data).save(tmp, format="PNG")
    os.replace(tmp, path)
    return path
