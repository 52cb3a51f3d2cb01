"""Frame reading/writing and deterministic downscaling.

Frames are 8-bit single-channel images (PNG/PGM/JPG/BMP by extension); color
inputs are collapsed to luma = 0.299 R + 0.587 G + 0.114 B, rounded to
nearest.  Inputs are downscaled by 2x2 box averaging, label images by
nearest neighbor so categorical values never blend.
"""

from __future__ import annotations

import numpy as np
from PIL import Image

FRAME_EXTENSIONS = (".png", ".pgm", ".jpg", ".jpeg", ".bmp")


class DecodeError(ValueError):
    """Image file could not be decoded."""


def read_gray(path) -> np.ndarray:
    """Load an image as float64 gray values in [0, 255]."""
    try:
        with Image.open(path) as img:
            if img.mode in ("P", "CMYK", "RGBA", "LA"):
                img = img.convert("RGB" if img.mode in ("P", "CMYK", "RGBA") else "L")
            if img.mode == "L":
                return np.asarray(img, dtype=np.float64)
            if img.mode == "RGB":
                rgb = np.asarray(img, dtype=np.float64)
                luma = 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]
                return np.rint(luma)
            return np.asarray(img.convert("L"), dtype=np.float64)
    except (OSError, SyntaxError) as exc:
        raise DecodeError(f"cannot decode {path}: {exc}") from exc


def write_gray(path, arr: np.ndarray) -> None:
    data = np.clip(np.rint(np.asarray(arr, dtype=np.float64)), 0, 255).astype(np.uint8)
    Image.fromarray(data, mode="L").save(path)


def write_rgb(path, arr: np.ndarray) -> None:
    Image.fromarray(np.asarray(arr, dtype=np.uint8), mode="RGB").save(path)


def downscale_box2(img: np.ndarray) -> np.ndarray:
    """Half-resolution by 2x2 box averaging, rounded back to 8-bit values.

    Output is ceil(h/2) x ceil(w/2); odd edges replicate, so a lone row or
    column averages with itself.
    """
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    if h % 2 or w % 2:
        img = np.pad(img, ((0, h % 2), (0, w % 2)), mode="edge")
    out = (img[0::2, 0::2] + img[0::2, 1::2] + img[1::2, 0::2] + img[1::2, 1::2]) / 4.0
    return np.rint(out)


def downscale_nearest(labels: np.ndarray) -> np.ndarray:
    """Half-resolution label image; picks the top-left pixel of each 2x2 block."""
    return np.asarray(labels)[0::2, 0::2].copy()
