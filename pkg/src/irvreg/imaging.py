"""Raster images: warping, pyramids, gradients, and file I/O.

An image is a float64 array with values in [0, 1], shaped ``(h, w)`` for
grayscale or ``(h, w, 3)`` for RGB. Pixel centers sit at integer
coordinates; position ``(x, y)`` indexes column ``x`` of row ``y``.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from . import geometry
from .errors import ImageTooSmall, ShapeMismatch

PYRAMID_LEVELS = 3
_MIN_PYRAMID_SIDE = 64

# Rec. 601 luma weights used for every color-to-gray conversion.
_LUMA = np.array([0.299, 0.587, 0.114])


def _check_image(img: np.ndarray, name: str = "image") -> np.ndarray:
    img = np.asarray(img, dtype=float)
    if img.ndim == 2:
        return img
    if img.ndim == 3 and img.shape[2] == 3:
        return img
    raise ValueError(f"{name} must be (h, w) grayscale or (h, w, 3) RGB")


def to_gray(img: np.ndarray) -> np.ndarray:
    """Luma conversion (0.299 R + 0.587 G + 0.114 B); grayscale passes through."""
    img = _check_image(img)
    if img.ndim == 2:
        return img
    return img @ _LUMA


def _as_planes(img: np.ndarray):
    """View an image as (channels, h, w) planes plus a flag to restore layout."""
    if img.ndim == 2:
        return img[None, :, :], False
    return np.moveaxis(img, 2, 0), True


def warp_planes(planes: np.ndarray, h: np.ndarray, out_shape=None):
    """Backward bilinear warp of a (channels, rows, cols) stack.

    Every output pixel is sampled at ``invert(h) @ (x, y)``; positions
    landing outside the source frame produce zeros and a False mask entry.

    Returns
    -------
    (warped, mask) where warped has shape (channels, *out_shape) and mask
    is a boolean (rows, cols) validity raster.
    """
    planes = np.asarray(planes, dtype=float)
    if planes.ndim != 3:
        raise ValueError("expected a (channels, rows, cols) stack")
    _, src_h, src_w = planes.shape
    if out_shape is None:
        out_shape = (src_h, src_w)
    out_h, out_w = out_shape

    hinv = geometry.invert(h)
    xs, ys = np.meshgrid(np.arange(out_w, dtype=float), np.arange(out_h, dtype=float))
    denom = hinv[2, 0] * xs + hinv[2, 1] * ys + hinv[2, 2]
    safe = np.abs(denom) > 1e-12
    denom_safe = np.where(safe, denom, 1.0)
    sx = (hinv[0, 0] * xs + hinv[0, 1] * ys + hinv[0, 2]) / denom_safe
    sy = (hinv[1, 0] * xs + hinv[1, 1] * ys + hinv[1, 2]) / denom_safe

    mask = safe & (sx >= 0.0) & (sx <= src_w - 1.0) & (sy >= 0.0) & (sy <= src_h - 1.0)

    sxc = np.clip(sx, 0.0, src_w - 1.0)
    syc = np.clip(sy, 0.0, src_h - 1.0)
    x0 = np.floor(sxc).astype(np.intp)
    y0 = np.floor(syc).astype(np.intp)
    x1 = np.minimum(x0 + 1, src_w - 1)
    y1 = np.minimum(y0 + 1, src_h - 1)
    fx = sxc - x0
    fy = syc - y0

    w00 = (1.0 - fx) * (1.0 - fy)
    w01 = fx * (1.0 - fy)
    w10 = (1.0 - fx) * fy
    w11 = fx * fy

    warped = (
        planes[:, y0, x0] * w00
        + planes[:, y0, x1] * w01
        + planes[:, y1, x0] * w10
        + planes[:, y1, x1] * w11
    )
    warped *= mask
    return warped, mask


def warp(img: np.ndarray, h: np.ndarray, out_shape=None):
    """Warp an image by a homography with backward bilinear sampling.

    Parameters
    ----------
    img : (h, w) or (h, w, 3) array
    h : (3, 3) homography mapping source coordinates to output coordinates
    out_shape : optional (rows, cols) of the output raster; defaults to the
        input size.

    Returns
    -------
    (warped, mask): the warped image (invalid pixels zero-filled) and the
    boolean validity mask.
    """
    img = _check_image(img)
    planes, is_color = _as_planes(img)
    warped, mask = warp_planes(planes, h, out_shape)
    if is_color:
        return np.moveaxis(warped, 0, 2), mask
    return warped[0], mask


def warp_mask(src_shape, h: np.ndarray, out_shape=None) -> np.ndarray:
    """Validity mask a warp would produce, without touching pixel data."""
    src_h, src_w = src_shape
    dummy = np.zeros((1, src_h, src_w))
    _, mask = warp_planes(dummy, h, out_shape)
    return mask


def downsample(img: np.ndarray) -> np.ndarray:
    """Halve an image by area averaging over 2x2 blocks.

    Output size is ceil(h / 2) x ceil(w / 2); edge blocks of odd-sized
    images average the pixels that exist.
    """
    img = _check_image(img)
    h, w = img.shape[:2]
    if h < 2 or w < 2:
        raise ImageTooSmall("downsample needs at least 2 pixels per side")
    row_idx = np.arange(0, h, 2)
    col_idx = np.arange(0, w, 2)
    sums = np.add.reduceat(np.add.reduceat(img, row_idx, axis=0), col_idx, axis=1)
    row_counts = np.minimum(row_idx + 2, h) - row_idx
    col_counts = np.minimum(col_idx + 2, w) - col_idx
    counts = np.multiply.outer(row_counts, col_counts).astype(float)
    if img.ndim == 3:
        counts = counts[:, :, None]
    return sums / counts


def build_pyramid(img: np.ndarray) -> list:
    """Three area-averaged reductions of an image: 1/2, 1/4 and 1/8 scale."""
    img = _check_image(img)
    h, w = img.shape[:2]
    if min(h, w) < _MIN_PYRAMID_SIDE:
        raise ImageTooSmall(
            f"pyramid needs min(h, w) >= {_MIN_PYRAMID_SIDE}, got {h}x{w}"
        )
    levels = []
    cur = img
    for _ in range(PYRAMID_LEVELS):
        cur = downsample(cur)
        levels.append(cur)
    return levels


def gradient(img: np.ndarray):
    """Per-axis intensity derivatives of a grayscale image.

    Central differences in the interior, one-sided at the borders.
    Returns ``(gx, gy)``.
    """
    img = np.asarray(img, dtype=float)
    if img.ndim != 2:
        raise ValueError("gradient expects a single-channel image")
    if img.shape[0] < 2 or img.shape[1] < 2:
        raise ImageTooSmall("gradient needs at least 2 pixels per side")
    gy, gx = np.gradient(img)
    return gx, gy


def invert_intensity(img: np.ndarray) -> np.ndarray:
    """Map every value v to 1 - v."""
    return 1.0 - _check_image(img)


def load_image(path) -> np.ndarray:
    """Read PNG/PGM/PPM into a float image in [0, 1].

    8-bit data maps as v / 255, 16-bit grayscale as v / 65535. Palette or
    alpha images are converted to RGB first.
    """
    with PILImage.open(path) as im:
        mode = im.mode
        if mode in ("I;16", "I;16B", "I;16L", "I"):
            arr = np.asarray(im, dtype=np.float64)
            return arr / 65535.0
        if mode == "L":
            return np.asarray(im, dtype=np.float64) / 255.0
        if mode != "RGB":
            im = im.convert("RGB")
        return np.asarray(im, dtype=np.float64) / 255.0


def save_image(path, img: np.ndarray, bits: int = 8) -> None:
    """Write an image as PNG/PGM/PPM (by extension).

    Grayscale supports 8- or 16-bit PNG output; RGB is always 8-bit.
    Values are clipped to [0, 1] and rounded to the integer range. The
    file is written atomically (temp file plus rename).
    """
    img = _check_image(img)
    data = np.clip(img, 0.0, 1.0)
    if img.ndim == 3:
        if bits != 8:
            raise ValueError("RGB output supports 8-bit depth only")
        raw = np.rint(data * 255.0).astype(np.uint8)
        pil = PILImage.fromarray(raw, mode="RGB")
    elif bits == 8:
        raw = np.rint(data * 255.0).astype(np.uint8)
        pil = PILImage.fromarray(raw, mode="L")
    elif bits == 16:
        raw = np.rint(data * 65535.0).astype("<u2")
        pil = PILImage.frombytes("I;16", (raw.shape[1], raw.shape[0]), raw.tobytes())
    else:
        raise ValueError("bit depth must be 8 or 16")

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    fmt = {".png": "PNG", ".pgm": "PPM", ".ppm": "PPM"}.get(path.suffix.lower())
    if fmt is None:
        raise ValueError(f"unsupported image extension {path.suffix!r}")
    pil.save(tmp, format=fmt)
    os.replace(tmp, path)


def require_same_shape(a: np.ndarray, b: np.ndarray, what: str = "images") -> None:
    if np.shape(a) != np.shape(b):
        raise ShapeMismatch(f"{what} differ in shape: {np.shape(a)} vs {np.shape(b)}")
