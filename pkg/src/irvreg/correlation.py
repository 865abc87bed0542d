"""Local correlation search between two feature maps.

Scores follow one convention everywhere: for features with ``c`` channels,

    score(x, y, j) = (1/c) * sum_i f_src[i, y, x] * f_tgt[i, y + dy_j, x + dx_j]

with the channel sum accumulated in ascending channel order. A shift
``(dx, dy)`` therefore compares the source at ``(x, y)`` against the
target at ``(x + dx, y + dy)``; shifts whose target position leaves the
frame score exactly 0. When both maps hold unit vectors scaled by
``sqrt(c)`` (see scale_for_matching) every score lies in [-1, 1].
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmptyShiftSet, InputTooLarge, InvalidRadius, ShapeMismatch

MODE_1D_H = "1d-h"
MODE_1D_V = "1d-v"
MODE_2D = "2d"
MODE_CUSTOM = "custom"

_ORACLE_MAX_PIXELS = 4096


def scale_for_matching(fmap: np.ndarray) -> np.ndarray:
    """Scale unit-normalized features by sqrt(channels).

    With this scaling the 1/c factor in the score turns the channel inner
    product back into a plain cosine, so scores stay in [-1, 1].
    """
    fmap = np.asarray(fmap, dtype=float)
    return fmap * np.sqrt(fmap.shape[0])


class ShiftSet:
    """Ordered list of integer (dx, dy) candidate shifts.

    Modes: a horizontal or vertical line of ``2r + 1`` unit steps, or a
    square grid of ``2r + 1`` shifts spaced ``dilation`` pixels apart.
    """

    def __init__(self, shifts, mode: str = MODE_CUSTOM, spacing: int = 1, side: int = 0):
        shifts = np.asarray(shifts, dtype=int)
        if shifts.size == 0:
            raise EmptyShiftSet("a shift set needs at least one candidate")
        if shifts.ndim != 2 or shifts.shape[1] != 2:
            raise ValueError("shifts must be an (k, 2) integer array")
        if len({(int(dx), int(dy)) for dx, dy in shifts}) != len(shifts):
            raise ValueError("shifts must be distinct")
        self.shifts = shifts
        self.mode = mode
        self.spacing = int(spacing)
        self.side = int(side)

    def __len__(self) -> int:
        return len(self.shifts)

    def __iter__(self):
        return iter(self.shifts)

    @classmethod
    def horizontal(cls, radius: int) -> "ShiftSet":
        """Unit steps (-r..r, 0), ascending dx."""
        if radius < 1:
            raise InvalidRadius("radius must be at least 1")
        shifts = [(dx, 0) for dx in range(-radius, radius + 1)]
        return cls(shifts, mode=MODE_1D_H, spacing=1, side=2 * radius + 1)

    @classmethod
    def vertical(cls, radius: int) -> "ShiftSet":
        """Unit steps (0, -r..r), ascending dy."""
        if radius < 1:
            raise InvalidRadius("radius must be at least 1")
        shifts = [(0, dy) for dy in range(-radius, radius + 1)]
        return cls(shifts, mode=MODE_1D_V, spacing=1, side=2 * radius + 1)

    @classmethod
    def grid(cls, radius: int, dilation: int = 1) -> "ShiftSet":
        """Square sqrt(2r + 1) grid spaced ``dilation`` pixels apart.

        Requires ``2r + 1`` to be a perfect square (r = 4 gives 3x3).
        Shifts are ordered row-major: dy ascending, dx ascending inside.
        """
        if radius < 1:
            raise InvalidRadius("radius must be at least 1")
        if dilation < 1:
            raise ValueError("dilation must be at least 1")
        count = 2 * radius + 1
        side = int(round(np.sqrt(count)))
        if side * side != count:
            raise InvalidRadius(
                f"2r + 1 = {count} is not a perfect square; no grid pattern exists"
            )
        half = (side - 1) // 2
        steps = [(i - half) * dilation for i in range(side)]
        shifts = [(dx, dy) for dy in steps for dx in steps]
        return cls(shifts, mode=MODE_2D, spacing=dilation, side=side)


@dataclass
class CorrelationVolume:
    """Scores stacked per shift: ``scores[j]`` matches ``shift_set.shifts[j]``."""

    scores: np.ndarray
    shift_set: ShiftSet

    @property
    def k(self) -> int:
        return self.scores.shape[0]


def _check_features(f_src: np.ndarray, f_tgt: np.ndarray):
    f_src = np.asarray(f_src, dtype=float)
    f_tgt = np.asarray(f_tgt, dtype=float)
    if f_src.ndim != 3 or f_tgt.ndim != 3:
        raise ValueError("feature maps must be (channels, h, w)")
    if f_src.shape != f_tgt.shape:
        raise ShapeMismatch(
            f"feature maps differ in shape: {f_src.shape} vs {f_tgt.shape}"
        )
    return f_src, f_tgt


def local_correlation(
    f_src: np.ndarray, f_tgt: np.ndarray, shift_set: ShiftSet
) -> CorrelationVolume:
    """Correlation scores of every position against every candidate shift."""
    f_src, f_tgt = _check_features(f_src, f_tgt)
    c, h, w = f_src.shape
    scores = np.zeros((len(shift_set), h, w))
    for j, (dx, dy) in enumerate(shift_set):
        x0 = max(0, -dx)
        x1 = min(w, w - dx)
        y0 = max(0, -dy)
        y1 = min(h, h - dy)
        if x1 <= x0 or y1 <= y0:
            continue
        acc = np.zeros((y1 - y0, x1 - x0))
        for i in range(c):  # fixed ascending-channel order
            acc += (
                f_src[i, y0:y1, x0:x1]
                * f_tgt[i, y0 + dy : y1 + dy, x0 + dx : x1 + dx]
            )
        scores[j, y0:y1, x0:x1] = acc / c
    return CorrelationVolume(scores=scores, shift_set=shift_set)


def search_1d(
    f_src: np.ndarray, f_tgt: np.ndarray, radius: int = 4, axis: str = "horizontal"
) -> CorrelationVolume:
    """Line search along one axis with unit steps in [-radius, radius]."""
    if axis == "horizontal":
        return local_correlation(f_src, f_tgt, ShiftSet.horizontal(radius))
    if axis == "vertical":
        return local_correlation(f_src, f_tgt, ShiftSet.vertical(radius))
    raise ValueError("axis must be 'horizontal' or 'vertical'")


def search_2d(
    f_src: np.ndarray, f_tgt: np.ndarray, radius: int = 4, dilation: int = 1
) -> CorrelationVolume:
    """Square grid search with the same candidate count as the line search."""
    return local_correlation(f_src, f_tgt, ShiftSet.grid(radius, dilation))


def global_correlation_oracle(f_src: np.ndarray, f_tgt: np.ndarray) -> np.ndarray:
    """All-pairs brute-force scores, indexed [y, x, y_tgt, x_tgt].

    Reference computation for equivalence tests; refuses inputs beyond
    4096 pixels. Uses the same ascending-channel summation order as
    local_correlation so matching entries are bitwise equal.
    """
    f_src, f_tgt = _check_features(f_src, f_tgt)
    c, h, w = f_src.shape
    if h * w > _ORACLE_MAX_PIXELS:
        raise InputTooLarge(
            f"oracle limited to {_ORACLE_MAX_PIXELS} pixels, got {h * w}"
        )
    acc = np.zeros((h, w, h, w))
    for i in range(c):  # fixed ascending-channel order
        acc += f_src[i, :, :, None, None] * f_tgt[i, None, None, :, :]
    return acc / c


@dataclass
class ShiftField:
    """Best shift per position with a confidence in [0, 1].

    ``dx``/``dy`` may carry sub-pixel refinements; ``best_index`` is the
    winning candidate in the generating shift set.
    """

    dx: np.ndarray
    dy: np.ndarray
    confidence: np.ndarray
    best_index: np.ndarray


def _parabolic_offset(prev: np.ndarray, mid: np.ndarray, nxt: np.ndarray) -> np.ndarray:
    """Vertex of the parabola through three samples, in cell units.

    Zero when the samples are not strictly concave; clamped to half a cell.
    """
    denom = prev - 2.0 * mid + nxt
    concave = denom < -1e-12
    offset = np.where(concave, (prev - nxt) / (2.0 * np.where(concave, denom, 1.0)), 0.0)
    return np.clip(offset, -0.5, 0.5)


def shift_field(volume: CorrelationVolume, subpixel: bool = True) -> ShiftField:
    """Argmax-with-tie-breaks over a correlation volume.

    Ties resolve to the smallest shift magnitude, then lexicographically
    by (dx, dy). Confidence is the softmax margin (temperature 1) between
    the best and second-best candidate; a single-candidate volume has
    confidence 1 everywhere. With ``subpixel`` a 1D parabolic fit refines
    each axis of the winning shift, clamped to half a cell.
    """
    scores = volume.scores
    shifts = volume.shift_set.shifts
    k, h, w = scores.shape

    mag2 = (shifts**2).sum(axis=1)
    priority = np.lexsort((shifts[:, 1], shifts[:, 0], mag2))
    best_ordered = np.argmax(scores[priority], axis=0)
    best_index = priority[best_ordered]

    dx = shifts[best_index, 0].astype(float)
    dy = shifts[best_index, 1].astype(float)

    if k == 1:
        confidence = np.ones((h, w))
    else:
        peak = scores.max(axis=0)
        weights = np.exp(scores - peak)
        probs = weights / weights.sum(axis=0)
        p_best = np.take_along_axis(probs, best_index[None], axis=0)[0]
        masked = probs.copy()
        np.put_along_axis(masked, best_index[None], -np.inf, axis=0)
        p_second = masked.max(axis=0)
        confidence = p_best - p_second

    if subpixel:
        mode = volume.shift_set.mode
        spacing = float(volume.shift_set.spacing)
        side = volume.shift_set.side
        if mode in (MODE_1D_H, MODE_1D_V):
            pos = best_index  # candidates are stored in ascending axis order
            interior = (pos > 0) & (pos < k - 1)
            prev = np.take_along_axis(scores, np.maximum(pos - 1, 0)[None], axis=0)[0]
            nxt = np.take_along_axis(scores, np.minimum(pos + 1, k - 1)[None], axis=0)[0]
            mid = np.take_along_axis(scores, pos[None], axis=0)[0]
            delta = np.where(interior, _parabolic_offset(prev, mid, nxt), 0.0) * spacing
            if mode == MODE_1D_H:
                dx = dx + delta
            else:
                dy = dy + delta
        elif mode == MODE_2D:
            gy, gx = np.divmod(best_index, side)
            mid = np.take_along_axis(scores, best_index[None], axis=0)[0]

            ix = (gx > 0) & (gx < side - 1)
            left = np.take_along_axis(
                scores, (best_index - 1).clip(0, k - 1)[None], axis=0
            )[0]
            right = np.take_along_axis(
                scores, (best_index + 1).clip(0, k - 1)[None], axis=0
            )[0]
            dx = dx + np.where(ix, _parabolic_offset(left, mid, right), 0.0) * spacing

            iy = (gy > 0) & (gy < side - 1)
            up = np.take_along_axis(
                scores, (best_index - side).clip(0, k - 1)[None], axis=0
            )[0]
            down = np.take_along_axis(
                scores, (best_index + side).clip(0, k - 1)[None], axis=0
            )[0]
            dy = dy + np.where(iy, _parabolic_offset(up, mid, down), 0.0) * spacing

    return ShiftField(dx=dx, dy=dy, confidence=confidence, best_index=best_index)


def dump_volume(volume: CorrelationVolume, base_path) -> None:
    """Write a volume as raw little-endian float32 plus a JSON header.

    Produces ``<base>.bin`` (scores, C-order ``k, h, w``) and ``<base>.json``.
    """
    base = Path(base_path)
    k, h, w = volume.scores.shape
    header = {
        "type": "correlation-volume",
        "dtype": "<f4",
        "layout": ["k", "height", "width"],
        "k": k,
        "height": h,
        "width": w,
        "mode": volume.shift_set.mode,
        "spacing": volume.shift_set.spacing,
        "shifts": [[int(dx), int(dy)] for dx, dy in volume.shift_set.shifts],
    }
    _write_raw_with_header(base, volume.scores, header)


def dump_shift_field(field: ShiftField, base_path) -> None:
    """Write a shift field as raw float32 planes (dx, dy, confidence)."""
    base = Path(base_path)
    planes = np.stack([field.dx, field.dy, field.confidence])
    header = {
        "type": "shift-field",
        "dtype": "<f4",
        "layout": ["plane", "height", "width"],
        "planes": ["dx", "dy", "confidence"],
        "height": planes.shape[1],
        "width": planes.shape[2],
    }
    _write_raw_with_header(base, planes, header)


def _write_raw_with_header(base: Path, data: np.ndarray, header: dict) -> None:
    base.parent.mkdir(parents=True, exist_ok=True)
    bin_path = base.with_suffix(".bin")
    json_path = base.with_suffix(".json")
    tmp = bin_path.with_name(bin_path.name + ".tmp")
    tmp.write_bytes(np.ascontiguousarray(data, dtype="<f4").tobytes())
    os.replace(tmp, bin_path)
    tmp = json_path.with_name(json_path.name + ".tmp")
    tmp.write_text(json.dumps(header, sort_keys=True, indent=2) + "\n")
    os.replace(tmp, json_path)
