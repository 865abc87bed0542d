"""Feature transforms that make both modalities comparable.

A feature map is a float64 ``(channels, h, w)`` array. The default
transform summarizes local gradient structure: gradient magnitude is
soft-binned into orientation channels (orientation taken modulo pi, so an
intensity inversion of the input leaves the features unchanged), each
channel is aggregated over a 3x3 window, and every position's channel
vector is scaled to unit length.

An invertible coupling transform (see ``coupling``) can be selected as an
alternative; its retained channels then serve as the feature map.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import imaging
from .errors import ShapeMismatch, UnknownTransform

GRAD_STRUCT = "grad-struct"
COUPLING = "coupling"
TRANSFORM_NAMES = (GRAD_STRUCT, COUPLING)

ORIENTATION_CHANNELS = 8


def _box3_sum(plane: np.ndarray) -> np.ndarray:
    """Sum over the 3x3 neighborhood, zero padding at the borders."""
    h, w = plane.shape
    p = np.pad(plane, 1)
    out = np.zeros((h, w))
    for dy in range(3):
        for dx in range(3):
            out += p[dy : dy + h, dx : dx + w]
    return out


def gradient_structure_features(img: np.ndarray) -> np.ndarray:
    """Orientation-binned gradient energy, aggregated over 3x3 windows.

    Returns a raw (unnormalized) ``(8, h, w)`` stack. Constant regions
    produce all-zero vectors.
    """
    gray = imaging.to_gray(img)
    gx, gy = imaging.gradient(gray)
    magnitude = np.hypot(gx, gy)
    orientation = np.mod(np.arctan2(gy, gx), np.pi)

    bins = ORIENTATION_CHANNELS
    width = np.pi / bins
    t = orientation / width
    lower = np.floor(t).astype(np.intp) % bins
    upper = (lower + 1) % bins
    frac = t - np.floor(t)

    h, w = gray.shape
    raw = np.zeros((bins, h, w))
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    raw[lower, yy, xx] = (1.0 - frac) * magnitude
    raw[upper, yy, xx] += frac * magnitude

    for c in range(bins):
        raw[c] = _box3_sum(raw[c])
    return raw


def normalize_features(fmap: np.ndarray) -> np.ndarray:
    """Scale each position's channel vector to unit L2 norm.

    All-zero vectors stay zero; vectors that already have unit norm pass
    through unchanged.
    """
    fmap = np.asarray(fmap, dtype=float)
    if fmap.ndim != 3:
        raise ValueError("feature map must be (channels, h, w)")
    norms = np.sqrt(np.einsum("chw,chw->hw", fmap, fmap))
    scale = np.where(norms > 0.0, norms, 1.0)
    return fmap / scale


@dataclass
class FeaturePyramid:
    """Per-level feature maps, finest (1/2 scale) first.

    ``image_shape`` is the (h, w) of the full-resolution source image, so
    users can recover each level's coordinate scale from the map sizes.
    """

    levels: list = field(default_factory=list)
    image_shape: tuple = (0, 0)
    transform: str = GRAD_STRUCT

    @property
    def channels(self) -> int:
        return self.levels[0].shape[0] if self.levels else 0

    @property
    def f1(self) -> np.ndarray:
        return self.levels[0]

    @property
    def f2(self) -> np.ndarray:
        return self.levels[1]

    @property
    def f3(self) -> np.ndarray:
        return self.levels[2]

    def scale_of(self, index: int) -> float:
        """Full-resolution pixels per feature cell at ``levels[index]``."""
        return self.image_shape[1] / float(self.levels[index].shape[2])


def extract_features(
    img: np.ndarray,
    transform: str = GRAD_STRUCT,
    coupling_params=None,
) -> FeaturePyramid:
    """Feature pyramid of an image at 1/2, 1/4 and 1/8 scale.

    The image is converted to luma, reduced with the area-mean pyramid,
    and each level is mapped through the chosen transform and then
    unit-normalized per position.
    """
    gray = imaging.to_gray(img)
    pyramid = imaging.build_pyramid(gray)

    if transform == GRAD_STRUCT:
        maps = [gradient_structure_features(level) for level in pyramid]
    elif transform == COUPLING:
        from . import coupling as coupling_mod

        if coupling_params is None:
            raise ValueError("coupling transform needs coupling_params")
        maps = []
        for level in pyramid:
            level = level[: level.shape[0] - level.shape[0] % 2,
                          : level.shape[1] - level.shape[1] % 2]
            retained, _ = coupling_mod.coupling_forward(level, coupling_params)
            maps.append(retained)
    else:
        raise UnknownTransform(
            f"unknown transform {transform!r}; expected one of {TRANSFORM_NAMES}"
        )

    maps = [normalize_features(m) for m in maps]
    return FeaturePyramid(levels=maps, image_shape=gray.shape, transform=transform)


@dataclass(frozen=True)
class ConsistencyMetrics:
    """Agreement between two images: intensity and gradient-structure terms."""

    l1: float
    l_str: float


def consistency_metrics(a: np.ndarray, b: np.ndarray, mask=None) -> ConsistencyMetrics:
    """Mean absolute intensity and gradient differences over valid pixels."""
    ga = imaging.to_gray(a)
    gb = imaging.to_gray(b)
    imaging.require_same_shape(ga, gb)
    if mask is None:
        mask = np.ones(ga.shape, dtype=bool)
    else:
        mask = np.asarray(mask, dtype=bool)
        imaging.require_same_shape(ga, mask, "image and mask")
        if not mask.any():
            from .errors import EmptyMask

            raise EmptyMask("consistency metrics need at least one valid pixel")

    l1 = float(np.abs(ga - gb)[mask].mean())
    gxa, gya = imaging.gradient(ga)
    gxb, gyb = imaging.gradient(gb)
    gx_err = np.abs(gxa - gxb)[mask]
    gy_err = np.abs(gya - gyb)[mask]
    l_str = float((gx_err.sum() + gy_err.sum()) / (2.0 * mask.sum()))
    return ConsistencyMetrics(l1=l1, l_str=l_str)
