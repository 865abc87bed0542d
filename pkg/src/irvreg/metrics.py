"""Registration quality metrics.

All metrics run on grayscale intensities in [0, 1] over a validity
mask. Conventions pinned for reproducibility: RMSE is reported on the
0-255 scale; MI uses a 256-bin joint histogram with base-2 logarithms
(bin index = floor(v * 256), top edge clamped); SSIM uses an 11x11
Gaussian window with sigma 1.5, K1 = 0.01, K2 = 0.03, dynamic range
1.0, averaged over windows that lie fully inside the frame and fully
on valid pixels. Reductions run in fixed row-major order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import imaging
from .errors import EmptyMask, ShapeMismatch

MI_BINS = 256
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass(frozen=True)
class MetricReport:
    """Similarity metrics for one registered pair."""

    rmse: float
    ncc: float
    mi: float
    ssim: float
    ace: float = None
    offset_errors: dict = None

    def to_dict(self):
        out = {"rmse": self.rmse, "ncc": self.ncc,
               "mi": self.mi, "ssim": self.ssim}
        if self.ace is not None:
            out["ace"] = self.ace
        if self.offset_errors is not None:
            out["offset_errors"] = dict(self.offset_errors)
        return out


def _gaussian_kernel():
    half = SSIM_WINDOW // 2
    coords = np.arange(-half, half + 1, dtype=np.float64)
    gx, gy = np.meshgrid(coords, coords)
    kernel = np.exp(-(gx * gx + gy * gy) / (2.0 * SSIM_SIGMA ** 2))
    return kernel / kernel.sum()

_SSIM_KERNEL = _gaussian_kernel()


def _rmse(x, y):
    diff = x - y
    return float(np.sqrt(np.mean(diff * diff)) * 255.0)


def _ncc(x, y):
    xc = x - x.mean()
    yc = y - y.mean()
    denom = np.sqrt((xc * xc).sum() * (yc * yc).sum())
    if denom == 0.0:
        return 0.0
    return float((xc * yc).sum() / denom)


def _bin_index(values):
    idx = (values * MI_BINS).astype(np.int64)
    return np.clip(idx, 0, MI_BINS - 1)


def _mi(x, y):
    ix = _bin_index(x)
    iy = _bin_index(y)
    joint = np.bincount(ix * MI_BINS + iy,
                        minlength=MI_BINS * MI_BINS).astype(np.float64)
    joint = joint.reshape(MI_BINS, MI_BINS) / len(ix)
    px = joint.sum(axis=1)
    py = joint.sum(axis=0)
    nz = joint > 0
    outer = np.outer(px, py)
    return float((joint[nz] * np.log2(joint[nz] / outer[nz])).sum())


def _windowed(plane):
    view = np.lib.stride_tricks.sliding_window_view(
        plane, (SSIM_WINDOW, SSIM_WINDOW)
    )
    return np.einsum("hwij,ij->hw", view, _SSIM_KERNEL)


def _ssim(x, y, mask):
    if x.shape[0] < SSIM_WINDOW or x.shape[1] < SSIM_WINDOW:
        raise EmptyMask("image smaller than one structural window")
    window_ok = np.lib.stride_tricks.sliding_window_view(
        mask, (SSIM_WINDOW, SSIM_WINDOW)
    ).all(axis=(2, 3))
    if not window_ok.any():
        raise EmptyMask("no fully valid structural window")
    mu_x = _windowed(x)
    mu_y = _windowed(y)
    var_x = _windowed(x * x) - mu_x * mu_x
    var_y = _windowed(y * y) - mu_y * mu_y
    cov = _windowed(x * y) - mu_x * mu_y
    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2
    score = ((2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)) / (
        (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    )
    return float(score[window_ok].mean())


def evaluate_pair(registered, truth, mask=None):
    """Score a registered image against its reference.

    ``mask`` restricts RMSE/NCC/MI to its true pixels and SSIM to
    windows made entirely of them; by default every pixel counts, in
    which case masked and unmasked results coincide exactly.
    """
    registered = np.asarray(registered, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if registered.shape[:2] != truth.shape[:2]:
        raise ShapeMismatch(
            f"image dimensions disagree: {registered.shape[:2]} "
            f"vs {truth.shape[:2]}"
        )
    x = imaging.to_gray(registered)
    y = imaging.to_gray(truth)
    if mask is None:
        mask = np.ones(x.shape, dtype=bool)
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != x.shape:
            raise ShapeMismatch(
                f"mask shape {mask.shape} does not match image {x.shape}"
            )
    if not mask.any():
        raise EmptyMask("mask selects no pixels")
    xv = x[mask]
    yv = y[mask]
    return MetricReport(
        rmse=_rmse(xv, yv),
        ncc=_ncc(xv, yv),
        mi=_mi(xv, yv),
        ssim=_ssim(x, y, mask),
    )


def offset_error(pred, gt):
    """Euclidean norm of the difference of two corner-offset sets."""
    diff = np.asarray(pred, dtype=np.float64) - np.asarray(gt, dtype=np.float64)
    return float(np.linalg.norm(diff.ravel()))


_TABLE_FIELDS = ("rmse", "ncc", "mi", "ssim", "ace")


def report_table(rows):
    """Render (label, MetricReport) pairs as an aligned text table."""
    rows = list(rows)
    with_ace = any(r.ace is not None for _, r in rows)
    fields = _TABLE_FIELDS if with_ace else _TABLE_FIELDS[:-1]
    label_width = max([len(label) for label, _ in rows] + [4])
    header = "pair".ljust(label_width) + "".join(
        f"{name:>10}" for name in fields
    )
    lines = [header]
    for label, rep in rows:
        cells = []
        for name in fields:
            value = getattr(rep, name)
            cells.append(f"{value:10.4f}" if value is not None
                         else f"{'-':>10}")
        lines.append(label.ljust(label_width) + "".join(cells))
    return "\n".join(lines)
