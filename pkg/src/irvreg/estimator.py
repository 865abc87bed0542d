"""Hierarchical coarse-to-fine homography estimation.

Runs on a three-level feature pyramid from coarsest (1/8 scale) to
finest (1/2 scale). Each level executes a fixed number of rounds; a
round is a line-search stage (horizontal and vertical, one axis each)
followed by a dilated grid-search stage. Every stage warps the source
features by the accumulated homography, reads a shift field off the
correlation volume, samples correspondences on a stride-2 grid, and
folds a robustly fitted update into the accumulated homography.

Stages that cannot produce a usable fit are skipped and flagged in the
diagnostics; the level then carries its input homography forward. Level
scales are taken from width ratios, which is exact for the power-of-two
frame sizes the pipeline targets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import correlation, features, geometry, imaging
from .errors import (
    DegenerateConfiguration,
    DegenerateCorrespondence,
    InsufficientCorrespondences,
    InvalidRadius,
    ShapeMismatch,
    SingularMatrix,
)

FIT_IRLS = "irls"
FIT_RANSAC = "ransac"

_STAGE_1D = "1d"
_STAGE_2D = "2d"

# chance that adaptive sampling has seen one outlier-free hypothesis
_RANSAC_CONFIDENCE = 0.99
_COLLINEAR_EPS = 1e-9
_CORRESPONDENCE_STRIDE = 2


@dataclass(frozen=True)
class EstimatorConfig:
    """Knobs for the hierarchical estimator.

    ``dilation_schedule`` gives the grid-stage dilation per round; the
    last entry repeats when there are more rounds than entries.
    """

    levels: int = 3
    rounds: int = 2
    radius: int = 4
    dilation_schedule: tuple = (2, 1)
    # parabolic refinement around an exact integer peak picks up the
    # asymmetry of neighboring scores, which breaks the fixed point on
    # identical inputs; leave it opt-in
    subpixel: bool = False
    fit_method: str = FIT_RANSAC
    inlier_px: float = 2.0
    max_iter: int = 1000
    # temperature-1 softmax margins over nine correlated scores are small
    # in practice; this floor keeps roughly the upper two thirds of them
    confidence_floor: float = 0.001
    transform: str = features.GRAD_STRUCT
    seed: int = 0

    def __post_init__(self):
        if not 1 <= int(self.levels) <= imaging.PYRAMID_LEVELS:
            raise ValueError(f"levels must be in 1..{imaging.PYRAMID_LEVELS}")
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.radius < 1:
            raise InvalidRadius("search radius must be >= 1")
        side = math.isqrt(2 * self.radius + 1)
        if side * side != 2 * self.radius + 1:
            raise InvalidRadius(
                f"radius {self.radius} does not give a square candidate grid"
            )
        object.__setattr__(self, "dilation_schedule", tuple(self.dilation_schedule))
        if not self.dilation_schedule:
            raise ValueError("dilation_schedule must not be empty")
        if any(int(d) < 1 for d in self.dilation_schedule):
            raise ValueError("dilations must be >= 1")
        if self.fit_method not in (FIT_IRLS, FIT_RANSAC):
            raise ValueError(f"unknown fit method: {self.fit_method!r}")
        if self.inlier_px <= 0:
            raise ValueError("inlier_px must be > 0")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not 0.0 <= self.confidence_floor < 1.0:
            raise ValueError("confidence_floor must be in [0, 1)")
        if self.seed < 0:
            raise ValueError("seed must be >= 0")

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        fit = dict(data.pop("fit", {}))
        kwargs = {}
        for key in ("levels", "rounds", "radius", "dilation_schedule", "subpixel",
                    "confidence_floor", "transform", "seed"):
            if key in data:
                kwargs[key] = data.pop(key)
        if data:
            raise ValueError(f"unknown config keys: {sorted(data)}")
        renames = {"method": "fit_method", "inlier_px": "inlier_px",
                   "max_iter": "max_iter"}
        for key, attr in renames.items():
            if key in fit:
                kwargs[attr] = fit.pop(key)
        if fit:
            raise ValueError(f"unknown fit config keys: {sorted(fit)}")
        return cls(**kwargs)

    def to_dict(self):
        return {
            "levels": self.levels,
            "rounds": self.rounds,
            "radius": self.radius,
            "dilation_schedule": list(self.dilation_schedule),
            "subpixel": self.subpixel,
            "fit": {
                "method": self.fit_method,
                "inlier_px": self.inlier_px,
                "max_iter": self.max_iter,
            },
            "confidence_floor": self.confidence_floor,
            "transform": self.transform,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class FitResult:
    """A fitted homography with the statistics of its supporting set."""

    h: np.ndarray
    n_used: int
    inlier_ratio: float
    mean_residual: float
    iterations: int
    method: str


@dataclass(frozen=True)
class StageRecord:
    level: int
    round_index: int
    stage: str
    n_candidates: int
    n_used: int
    inlier_ratio: float
    mean_confidence: float
    residual: float
    degraded: bool
    reason: str = ""


@dataclass(frozen=True)
class LevelResult:
    """Outcome of one pyramid level, in that level's pixel units."""

    level: int
    h: np.ndarray
    offsets: np.ndarray
    stages: tuple

    @property
    def degraded(self):
        return any(s.degraded for s in self.stages)

    @property
    def inlier_ratio(self):
        good = [s.inlier_ratio for s in self.stages if not s.degraded]
        return good[-1] if good else 0.0

    @property
    def residual(self):
        good = [s.residual for s in self.stages if not s.degraded]
        return good[-1] if good else float("inf")

    @property
    def mean_confidence(self):
        vals = [s.mean_confidence for s in self.stages]
        return float(np.mean(vals)) if vals else 0.0


@dataclass(frozen=True)
class RegistrationResult:
    """Corner offsets per scale (full-image pixels) plus the homography."""

    delta3: np.ndarray
    delta2: np.ndarray
    delta1: np.ndarray
    h_full: np.ndarray
    levels: tuple

    @property
    def degraded(self):
        return any(lv.degraded for lv in self.levels)


def _conditioning(points):
    center = points.mean(axis=0)
    spread = np.sqrt(((points - center) ** 2).sum(axis=1)).mean()
    scale = math.sqrt(2.0) / spread if spread > 0 else 1.0
    return np.array(
        [
            [scale, 0.0, -scale * center[0]],
            [0.0, scale, -scale * center[1]],
            [0.0, 0.0, 1.0],
        ]
    )


def _collinear(points):
    centered = points - points.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    return sv[1] <= _COLLINEAR_EPS * max(1.0, sv[0])


def _weighted_dlt(src, dst, weights):
    """Least-squares homography; four points reduce to the exact solve."""
    if len(src) == 4:
        return geometry.homography_from_points(src, dst)
    t_src = _conditioning(src)
    t_dst = _conditioning(dst)
    sn = geometry.project_points(t_src, src)
    dn = geometry.project_points(t_dst, dst)
    n = len(src)
    rows = np.zeros((2 * n, 9))
    x, y = sn[:, 0], sn[:, 1]
    u, v = dn[:, 0], dn[:, 1]
    rows[0::2, 0] = x
    rows[0::2, 1] = y
    rows[0::2, 2] = 1.0
    rows[0::2, 6] = -u * x
    rows[0::2, 7] = -u * y
    rows[0::2, 8] = -u
    rows[1::2, 3] = x
    rows[1::2, 4] = y
    rows[1::2, 5] = 1.0
    rows[1::2, 6] = -v * x
    rows[1::2, 7] = -v * y
    rows[1::2, 8] = -v
    rows *= np.sqrt(np.maximum(weights, 0.0)).repeat(2)[:, None]
    _, _, vt = np.linalg.svd(rows, full_matrices=False)
    h_cond = vt[-1].reshape(3, 3)
    h = geometry.invert(t_dst) @ h_cond @ t_src
    return geometry.normalized(h)


def _point_residuals(h, src, dst):
    projected, valid = geometry.project_points_masked(h, src)
    res = np.full(len(src), np.inf)
    diff = projected[valid] - dst[valid]
    res[valid] = np.hypot(diff[:, 0], diff[:, 1])
    return res


def _fit_stats(h, src, dst, threshold):
    res = _point_residuals(h, src, dst)
    inliers = res < threshold
    ratio = float(inliers.mean())
    finite = res[np.isfinite(res)]
    if inliers.any():
        mean_res = float(res[inliers].mean())
    elif finite.size:
        mean_res = float(finite.mean())
    else:
        mean_res = float("inf")
    return ratio, mean_res


def _irls_fit(src, dst, weights, cfg):
    try:
        h = _weighted_dlt(src, dst, weights)
    except (SingularMatrix, DegenerateCorrespondence) as exc:
        raise DegenerateConfiguration(str(exc)) from exc
    iterations = 1
    delta = cfg.inlier_px
    for _ in range(cfg.max_iter - 1):
        res = _point_residuals(h, src, dst)
        damp = np.where(res > delta, delta / np.maximum(res, 1e-12), 1.0)
        try:
            h_new = _weighted_dlt(src, dst, weights * damp)
        except (SingularMatrix, DegenerateCorrespondence) as exc:
            raise DegenerateConfiguration(str(exc)) from exc
        iterations += 1
        moved = np.abs(h_new - h).max()
        h = h_new
        if moved < 1e-12:
            break
    ratio, mean_res = _fit_stats(h, src, dst, cfg.inlier_px)
    return FitResult(h, len(src), ratio, mean_res, iterations, FIT_IRLS)


def _ransac_fit(src, dst, weights, cfg, rng):
    n = len(src)
    best_h = None
    best_inliers = None
    best_count = -1
    best_res = np.inf
    needed = cfg.max_iter
    tried = 0
    while tried < needed:
        tried += 1
        idx = rng.choice(n, size=4, replace=False)
        try:
            hyp = geometry.homography_from_points(src[idx], dst[idx])
        except (DegenerateCorrespondence, SingularMatrix):
            continue
        res = _point_residuals(hyp, src, dst)
        inliers = res < cfg.inlier_px
        count = int(inliers.sum())
        mean_res = float(res[inliers].mean()) if count else np.inf
        if count > best_count or (count == best_count and mean_res < best_res):
            best_h, best_inliers = hyp, inliers
            best_count, best_res = count, mean_res
        if count == n:
            break
        if count >= 4:
            p_good = (count / n) ** 4
            if p_good < 1.0:
                bound = math.log(1.0 - _RANSAC_CONFIDENCE) / math.log(1.0 - p_good)
                needed = min(needed, max(tried, math.ceil(bound)))
    if best_h is None or best_count < 4:
        raise DegenerateConfiguration("no non-degenerate hypothesis found")
    h = best_h
    if not _collinear(src[best_inliers]) and not _collinear(dst[best_inliers]):
        try:
            h = _weighted_dlt(src[best_inliers], dst[best_inliers],
                              weights[best_inliers])
        except (SingularMatrix, DegenerateCorrespondence):
            h = best_h  # keep the raw hypothesis when the refit is unstable
    ratio, mean_res = _fit_stats(h, src, dst, cfg.inlier_px)
    return FitResult(h, n, ratio, mean_res, tried, FIT_RANSAC)


def _fit_arrays(src, dst, weights, cfg, rng=None):
    src = np.asarray(src, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 2)
    weights = np.asarray(weights, dtype=np.float64).reshape(-1)
    if not (len(src) == len(dst) == len(weights)):
        raise ShapeMismatch("correspondence arrays disagree in length")
    usable = (weights >= cfg.confidence_floor) & (weights > 0)
    if int(usable.sum()) < 4:
        raise InsufficientCorrespondences(
            f"{int(usable.sum())} usable correspondences, need at least 4"
        )
    src, dst, weights = src[usable], dst[usable], weights[usable]
    if _collinear(src) or _collinear(dst):
        raise DegenerateConfiguration("correspondences are collinear")
    if cfg.fit_method == FIT_IRLS:
        return _irls_fit(src, dst, weights, cfg)
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    return _ransac_fit(src, dst, weights, cfg, rng)


def fit_homography_robust(correspondences, cfg, rng=None):
    """Fit a homography to weighted point pairs.

    ``correspondences`` is a sequence of (source point, target point,
    weight) triples. Pairs whose weight falls below the confidence
    floor are dropped before fitting.
    """
    src = np.asarray([c[0] for c in correspondences], dtype=np.float64)
    dst = np.asarray([c[1] for c in correspondences], dtype=np.float64)
    weights = np.asarray([c[2] for c in correspondences], dtype=np.float64)
    return _fit_arrays(src, dst, weights, cfg, rng=rng)


def _grid_correspondences(dx, dy, conf, mask, cfg):
    """Sample (source, target, weight) triples on a stride-2 grid.

    Positions closer than the search radius to the border are skipped:
    their candidate windows are truncated, which biases the argmax.
    """
    h, w = dx.shape
    margin = cfg.radius
    ys = np.arange(margin, h - margin, _CORRESPONDENCE_STRIDE)
    xs = np.arange(margin, w - margin, _CORRESPONDENCE_STRIDE)
    if ys.size == 0 or xs.size == 0:
        empty = np.zeros((0, 2))
        return empty, empty, np.zeros(0)
    xx, yy = np.meshgrid(xs, ys)
    keep = mask[yy, xx]
    xx, yy = xx[keep], yy[keep]
    src = np.stack([xx, yy], axis=1).astype(np.float64)
    tgt = src + np.stack([dx[yy, xx], dy[yy, xx]], axis=1)
    return src, tgt, conf[yy, xx]


def refine_level(f_src, f_tgt, h_init, cfg, *, level=1, capture=None):
    """Refine a homography on one pyramid level.

    ``f_src`` and ``f_tgt`` are unit-normalized feature maps of equal
    shape; ``h_init`` maps source to target pixels at this level's
    scale. Returns the accumulated homography, its corner offsets in
    this level's units, and per-stage diagnostics. Stages whose fit
    finds too few or degenerate correspondences are skipped and
    flagged, so a level that never fits returns ``h_init`` unchanged.
    """
    f_src = np.asarray(f_src, dtype=np.float64)
    f_tgt = np.asarray(f_tgt, dtype=np.float64)
    if f_src.shape != f_tgt.shape:
        raise ShapeMismatch(
            f"feature maps disagree: {f_src.shape} vs {f_tgt.shape}"
        )
    _, height, width = f_src.shape
    h_acc = geometry.normalized(np.asarray(h_init, dtype=np.float64))
    tgt_scaled = correlation.scale_for_matching(f_tgt)
    stages = []
    for round_index in range(cfg.rounds):
        for stage_index, stage in enumerate((_STAGE_1D, _STAGE_2D)):
            warped, mask = imaging.warp_planes(f_src, h_acc)
            src_scaled = correlation.scale_for_matching(
                features.normalize_features(warped)
            )
            if stage == _STAGE_1D:
                vol_h = correlation.search_1d(
                    src_scaled, tgt_scaled, cfg.radius, axis="horizontal"
                )
                vol_v = correlation.search_1d(
                    src_scaled, tgt_scaled, cfg.radius, axis="vertical"
                )
                fld_h = correlation.shift_field(vol_h, subpixel=cfg.subpixel)
                fld_v = correlation.shift_field(vol_v, subpixel=cfg.subpixel)
                dx, dy = fld_h.dx, fld_v.dy
                conf = np.minimum(fld_h.confidence, fld_v.confidence)
                if capture is not None:
                    capture({"level": level, "round": round_index,
                             "stage": "1d-h", "volume": vol_h, "field": fld_h})
                    capture({"level": level, "round": round_index,
                             "stage": "1d-v", "volume": vol_v, "field": fld_v})
            else:
                dilation = cfg.dilation_schedule[
                    min(round_index, len(cfg.dilation_schedule) - 1)
                ]
                vol = correlation.search_2d(
                    src_scaled, tgt_scaled, cfg.radius, dilation=dilation
                )
                fld = correlation.shift_field(vol, subpixel=cfg.subpixel)
                dx, dy, conf = fld.dx, fld.dy, fld.confidence
                if capture is not None:
                    capture({"level": level, "round": round_index,
                             "stage": "2d", "volume": vol, "field": fld})
            src_pts, tgt_pts, weights = _grid_correspondences(
                dx, dy, conf, mask, cfg
            )
            mean_conf = float(weights.mean()) if weights.size else 0.0
            rng = np.random.default_rng(
                [cfg.seed, level, round_index, stage_index]
            )
            try:
                fit = _fit_arrays(src_pts, tgt_pts, weights, cfg, rng=rng)
            except (InsufficientCorrespondences, DegenerateConfiguration) as exc:
                stages.append(StageRecord(
                    level=level, round_index=round_index, stage=stage,
                    n_candidates=len(src_pts), n_used=0, inlier_ratio=0.0,
                    mean_confidence=mean_conf, residual=float("inf"),
                    degraded=True, reason=type(exc).__name__,
                ))
                continue
            h_acc = geometry.normalized(geometry.compose(fit.h, h_acc))
            stages.append(StageRecord(
                level=level, round_index=round_index, stage=stage,
                n_candidates=len(src_pts), n_used=fit.n_used,
                inlier_ratio=fit.inlier_ratio, mean_confidence=mean_conf,
                residual=fit.mean_residual, degraded=False,
            ))
    offsets = geometry.offsets_from_homography(
        h_acc, geometry.frame_corners(width, height)
    )
    return LevelResult(level=level, h=h_acc, offsets=offsets,
                       stages=tuple(stages))


def register_hierarchical(src, tgt, transform=None, cfg=None, *,
                          coupling_params=None, capture=None):
    """Register ``src`` onto ``tgt`` and report per-scale corner offsets.

    Feature pyramids are matched from the coarsest level upward; each
    finished level's homography seeds the next through a scale change.
    Offsets are reported in full-image pixels for all three scales, and
    ``h_full`` is the finest-level homography lifted to full resolution.
    """
    if cfg is None:
        cfg = EstimatorConfig()
    if transform is None:
        transform = cfg.transform
    src = np.asarray(src, dtype=np.float64)
    tgt = np.asarray(tgt, dtype=np.float64)
    if src.shape[:2] != tgt.shape[:2]:
        raise ShapeMismatch(
            f"image dimensions disagree: {src.shape[:2]} vs {tgt.shape[:2]}"
        )
    pyr_src = features.extract_features(src, transform,
                                        coupling_params=coupling_params)
    pyr_tgt = features.extract_features(tgt, transform,
                                        coupling_params=coupling_params)
    height, width = pyr_src.image_shape
    full_frame = geometry.frame_corners(width, height)

    level_indices = [imaging.PYRAMID_LEVELS - 1 - k for k in range(cfg.levels)]
    h_acc = geometry.identity()
    deltas = {}
    level_results = []
    h_full = geometry.identity()
    for pos, idx in enumerate(level_indices):
        result = refine_level(
            pyr_src.levels[idx], pyr_tgt.levels[idx], h_acc, cfg,
            level=idx + 1, capture=capture,
        )
        level_results.append(result)
        scale = pyr_src.scale_of(idx)
        h_full = geometry.normalized(
            geometry.rescale_homography(result.h, scale)
        )
        deltas[idx + 1] = geometry.offsets_from_homography(h_full, full_frame)
        if pos + 1 < len(level_indices):
            next_scale = pyr_src.scale_of(level_indices[pos + 1])
            h_acc = geometry.normalized(
                geometry.rescale_homography(result.h, scale / next_scale)
            )
    finest = min(deltas)
    for lvl in (1, 2):
        if lvl not in deltas:
            deltas[lvl] = deltas[finest]
    return RegistrationResult(
        delta3=deltas[3], delta2=deltas[2], delta1=deltas[1],
        h_full=h_full, levels=tuple(level_results),
    )
