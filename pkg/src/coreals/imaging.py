"""Grayscale image restoration by factorizing the unmasked pixels.

An image is a fully observed rating matrix (rows = users); masking removes an
exact-count uniform subset of pixels, and restoration fits the configured
low-rank estimator to the survivors and predicts every cell back.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .driver import fit_method
from .errors import ConfigError, DataError
from .ratings import RatingMatrix

__all__ = [
    "GrayImage", "mask_image", "restore", "psnr",
    "load_pgm", "save_pgm", "load_image_csv", "save_image_csv",
]

PSNR_CAP_DB = 100.0


@dataclass(frozen=True)
class GrayImage:
    """Grayscale pixels in [0, 1], row-major (height, width)."""

    pixels: np.ndarray

    def __post_init__(self):
        p = np.ascontiguousarray(self.pixels, dtype=np.float64)
        if p.ndim != 2 or p.size == 0:
            raise DataError("image pixels must form a non-empty 2-d array")
        object.__setattr__(self, "pixels", p)

    @property
    def height(self):
        return int(self.pixels.shape[0])

    @property
    def width(self):
        return int(self.pixels.shape[1])

    def clamped(self):
        return GrayImage(np.clip(self.pixels, 0.0, 1.0))


def mask_image(img, mask_fraction, seed):
    """Remove exactly round(mask_fraction * W * H) pixels uniformly at random.

    Surviving pixels become the observed entries of a rating matrix with
    users = pixel rows and items = pixel columns.
    """
    if not 0.0 <= mask_fraction < 1.0:
        raise ConfigError(f"mask_fraction must be in [0, 1), got {mask_fraction}")
    h, w = img.pixels.shape
    total = h * w
    n_drop = int(round(mask_fraction * total))
    rng = np.random.default_rng(int(seed))
    dropped = rng.permutation(total)[:n_drop]
    keep = np.ones(total, dtype=bool)
    keep[dropped] = False
    rows, cols = np.nonzero(keep.reshape(h, w))
    return RatingMatrix(rows, cols, img.pixels[rows, cols], n_users=h, n_items=w)


def restore(masked, cfg, keep_observed=False):
    """Fit the configured estimator and predict every pixel, clamped to [0, 1].

    With keep_observed, surviving pixels pass through unchanged and only
    masked cells take the low-rank prediction. Returns (image, fit report).
    """
    factors, report = fit_method(masked, cfg)
    pred = factors.user_factors @ factors.item_factors.T
    if keep_observed:
        users, items, vals = masked.entries()
        pred[users, items] = vals
    return GrayImage(np.clip(pred, 0.0, 1.0)), report


def psnr(a, b):
    """Peak signal-to-noise ratio in dB for unit-range images, capped at 100."""
    if a.pixels.shape != b.pixels.shape:
        raise DataError(f"image shapes differ: {a.pixels.shape} vs {b.pixels.shape}")
    diff = a.pixels - b.pixels
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return PSNR_CAP_DB
    return float(min(10.0 * np.log10(1.0 / mse), PSNR_CAP_DB))


# -- file formats -------------------------------------------------------------

def save_pgm(path, img):
    """Binary PGM (P5, maxval 255); pixels quantized from [0, 1]."""
    data = np.round(np.clip(img.pixels, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.width} {img.height}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def _pgm_tokens(blob):
    """Header tokens of a PGM, skipping '#' comments."""
    pos = 0
    tokens = []
    while len(tokens) < 4 and pos < len(blob):
        ch = blob[pos:pos + 1]
        if ch.isspace():
            pos += 1
        elif ch == b"#":
            pos = blob.index(b"\n", pos) + 1
        else:
            end = pos
            while end < len(blob) and not blob[end:end + 1].isspace():
                end += 1
            tokens.append(blob[pos:end])
            pos = end
    return tokens, pos + 1


def load_pgm(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    tokens, offset = _pgm_tokens(blob)
    if len(tokens) != 4 or tokens[0] != b"P5":
        raise DataError(f"{path}: not a binary (P5) PGM file")
    width, height, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise DataError(f"{path}: only maxval 255 is supported, got {maxval}")
    payload = blob[offset:offset + width * height]
    if len(payload) != width * height:
        raise DataError(f"{path}: truncated pixel payload")
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
    return GrayImage(pixels / 255.0)


def save_image_csv(path, img):
    np.savetxt(path, img.pixels, fmt="%.10g", delimiter=",")


def load_image_csv(path):
    arr = np.loadtxt(path, delimiter=",", ndmin=2)
    return GrayImage(arr)
