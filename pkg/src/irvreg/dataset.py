"""Synthetic misaligned-pair generation and benchmark-set management.

A sample starts from a co-registered infrared/visible source pair: a
square crop marks the reference frame, the frame's corners are
perturbed uniformly within the disturbance range, and the visible
content under the perturbed quadrilateral is deformed back into the
square. The sampled corner offsets are the ground truth: warping the
distorted image by the homography those offsets define reproduces the
aligned crop up to interpolation error.

Sets are written as 8-bit PNGs under ``ir/``, ``vis_distorted/`` and
``vis_aligned/`` with zero-padded names plus a ``manifest.json``;
generation is deterministic per (sources, size, rho, count, seed), so
regeneration is byte-identical.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from . import geometry, imaging
from .errors import (
    CropOutOfBounds,
    DegenerateCorrespondence,
    DegenerateQuad,
    NoSourcePairs,
    ShapeMismatch,
)

DEFAULT_SIZE = 256
DEFAULT_RHO = 8.0
_RESAMPLE_ATTEMPTS = 8
_MANIFEST_NAME = "manifest.json"
_SUBDIRS = ("ir", "vis_distorted", "vis_aligned")


@dataclass(frozen=True)
class SampleSpec:
    """Where and how strongly to disturb one crop."""

    x: int
    y: int
    size: int
    rho: float
    seed: int

    def __post_init__(self):
        if self.size < 2:
            raise ValueError("crop size must be at least 2")
        if self.rho < 0:
            raise ValueError("disturbance range must be >= 0")
        if self.x < 0 or self.y < 0:
            raise CropOutOfBounds("crop origin must be non-negative")


@dataclass(frozen=True)
class DatasetSample:
    ir: np.ndarray
    vis_distorted: np.ndarray
    vis_aligned: np.ndarray
    offsets: np.ndarray
    overlap: float
    spec: SampleSpec

    @property
    def frame(self):
        return geometry.frame_corners(self.spec.size, self.spec.size)

    def h_gt(self):
        """Homography that registers the distorted image onto the crop."""
        if not self.offsets.any():
            return geometry.identity()
        return geometry.dlt_from_offsets(self.offsets, self.frame)


def _check_margins(spec, height, width):
    margin = math.ceil(spec.rho)
    if (spec.x < margin or spec.y < margin
            or spec.x + spec.size + margin > width
            or spec.y + spec.size + margin > height):
        raise CropOutOfBounds(
            f"crop {spec.size} at ({spec.x}, {spec.y}) with margin {margin} "
            f"exceeds source {width}x{height}"
        )


def _sample_offsets(rng, spec, frame):
    last_error = None
    for _ in range(_RESAMPLE_ATTEMPTS):
        offsets = rng.uniform(-spec.rho, spec.rho, size=(4, 2))
        if spec.rho == 0:
            offsets = np.zeros((4, 2))
        try:
            if offsets.any():
                geometry.dlt_from_offsets(offsets, frame)
            return offsets
        except DegenerateCorrespondence as exc:
            last_error = exc
    raise DegenerateCorrespondence(
        f"no usable corner draw in {_RESAMPLE_ATTEMPTS} attempts"
    ) from last_error


def synthesize_pair(ir, vis, spec):
    """Build one misaligned sample from co-registered source images."""
    ir = np.asarray(ir, dtype=np.float64)
    vis = np.asarray(vis, dtype=np.float64)
    if ir.shape[:2] != vis.shape[:2]:
        raise ShapeMismatch(
            f"source dimensions disagree: {ir.shape[:2]} vs {vis.shape[:2]}"
        )
    _check_margins(spec, *vis.shape[:2])
    frame = geometry.frame_corners(spec.size, spec.size)
    rng = np.random.default_rng(spec.seed)
    offsets = _sample_offsets(rng, spec, frame)

    rows = slice(spec.y, spec.y + spec.size)
    cols = slice(spec.x, spec.x + spec.size)
    ir_crop = ir[rows, cols].copy()
    aligned = vis[rows, cols].copy()

    if offsets.any():
        h_gt = geometry.dlt_from_offsets(offsets, frame)
    else:
        h_gt = geometry.identity()
    # the distorted image holds the perturbed quadrilateral's content
    # deformed into the square frame, so h_gt registers it onto the crop
    to_source = geometry.compose(
        geometry.translation(spec.x, spec.y), h_gt
    )
    distorted, _ = imaging.warp(
        vis, geometry.invert(to_source), out_shape=(spec.size, spec.size)
    )
    return DatasetSample(
        ir=ir_crop,
        vis_distorted=distorted,
        vis_aligned=aligned,
        offsets=offsets,
        overlap=overlap_rate(offsets, frame),
        spec=spec,
    )


def reconstruction_residual(sample, border=2):
    """Mean abs difference between the GT-warped distortion and the crop.

    The comparison skips ``border`` pixels on each side and positions
    the warp cannot reach (content pulled from outside the frame).
    """
    recon, mask = imaging.warp(sample.vis_distorted, sample.h_gt())
    a = imaging.to_gray(recon)
    b = imaging.to_gray(sample.vis_aligned)
    keep = mask.copy()
    if border > 0:
        keep[:border, :] = False
        keep[-border:, :] = False
        keep[:, :border] = False
        keep[:, -border:] = False
    if not keep.any():
        raise ValueError("no pixels left to compare")
    return float(np.abs(a - b)[keep].mean())


def _segments_cross(p, q, r, s):
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1 = orient(p, q, r)
    d2 = orient(p, q, s)
    d3 = orient(r, s, p)
    d4 = orient(r, s, q)
    return d1 * d2 < 0 and d3 * d4 < 0


def _polygon_area(points):
    if len(points) < 3:
        return 0.0
    pts = np.asarray(points)
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * abs(
        float((x * np.roll(y, -1) - np.roll(x, -1) * y).sum())
    )


def _clip_polygon(points, lo, hi):
    """Sutherland-Hodgman clip against an axis-aligned rectangle."""

    def clip_edge(poly, axis, bound, keep_less):
        out = []
        for i in range(len(poly)):
            prev = poly[i - 1]
            cur = poly[i]
            prev_in = (prev[axis] <= bound) if keep_less else (prev[axis] >= bound)
            cur_in = (cur[axis] <= bound) if keep_less else (cur[axis] >= bound)
            if cur_in != prev_in:
                t = (bound - prev[axis]) / (cur[axis] - prev[axis])
                out.append((
                    prev[0] + t * (cur[0] - prev[0]),
                    prev[1] + t * (cur[1] - prev[1]),
                ))
            if cur_in:
                out.append(tuple(cur))
        return out

    poly = [tuple(p) for p in points]
    for axis, bound, keep_less in (
        (0, lo[0], False), (0, hi[0], True),
        (1, lo[1], False), (1, hi[1], True),
    ):
        poly = clip_edge(poly, axis, bound, keep_less)
        if not poly:
            return []
    return poly


def overlap_rate(offsets, frame):
    """Percent of the frame covered by the perturbed quadrilateral."""
    offsets = np.asarray(offsets, dtype=np.float64)
    frame = np.asarray(frame, dtype=np.float64)
    quad = frame + offsets
    # corner order is TL, TR, BL, BR; the polygon cycle is TL-TR-BR-BL
    cycle = quad[[0, 1, 3, 2]]
    for (a, b), (c, d) in (((0, 1), (2, 3)), ((1, 2), (3, 0))):
        if _segments_cross(cycle[a], cycle[b], cycle[c], cycle[d]):
            raise DegenerateQuad("perturbed quadrilateral self-intersects")
    lo = frame.min(axis=0)
    hi = frame.max(axis=0)
    frame_area = (hi[0] - lo[0]) * (hi[1] - lo[1])
    clipped = _clip_polygon(cycle, lo, hi)
    return 100.0 * _polygon_area(clipped) / frame_area


@dataclass(frozen=True)
class Manifest:
    name: str
    size: int
    rho: float
    seed: int
    records: tuple
    skipped: int = 0

    def to_dict(self):
        return {
            "name": self.name,
            "config": {"size": self.size, "rho": self.rho, "seed": self.seed},
            "records": list(self.records),
            "skipped": self.skipped,
        }

    @classmethod
    def from_dict(cls, data):
        cfg = data["config"]
        return cls(
            name=data["name"], size=int(cfg["size"]), rho=float(cfg["rho"]),
            seed=int(cfg["seed"]),
            records=tuple(data["records"]), skipped=int(data.get("skipped", 0)),
        )


def save_manifest(manifest, out_dir):
    path = os.path.join(out_dir, _MANIFEST_NAME)
    text = json.dumps(manifest.to_dict(), indent=2, sort_keys=True)
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as handle:
        handle.write(text + "\n")
    os.replace(tmp, path)
    return path


def load_manifest(out_dir):
    """Read a manifest back and check its files and offsets."""
    path = os.path.join(out_dir, _MANIFEST_NAME)
    with open(path, "r", encoding="utf-8") as handle:
        manifest = Manifest.from_dict(json.load(handle))
    for record in manifest.records:
        for key in ("ir", "vis_distorted", "vis_aligned"):
            rel = record[key]
            if not os.path.exists(os.path.join(out_dir, rel)):
                raise FileNotFoundError(f"manifest names missing file {rel}")
        offsets = np.asarray(record["offsets"], dtype=np.float64)
        if offsets.shape != (4, 2):
            raise ValueError(f"record {record['id']} has malformed offsets")
        if np.abs(offsets).max() > manifest.rho + 1e-9:
            raise ValueError(
                f"record {record['id']} offsets exceed rho={manifest.rho}"
            )
    return manifest


def discover_source_pairs(src_dir):
    """Find co-registered sources named ``<stem>_ir.*`` / ``<stem>_vis.*``."""
    files = sorted(os.listdir(src_dir))
    by_stem = {}
    for fname in files:
        base, ext = os.path.splitext(fname)
        if ext.lower() not in (".png", ".pgm", ".ppm"):
            continue
        for role in ("ir", "vis"):
            if base.endswith("_" + role):
                by_stem.setdefault(base[: -len(role) - 1], {})[role] = fname
    pairs = [
        (stem, roles["ir"], roles["vis"])
        for stem, roles in sorted(by_stem.items())
        if "ir" in roles and "vis" in roles
    ]
    if not pairs:
        raise NoSourcePairs(f"no *_ir/*_vis pairs found in {src_dir}")
    return pairs


def synthesize_set(src_dir, out_dir, size=DEFAULT_SIZE, rho=DEFAULT_RHO,
                   count=50, seed=0, name=None, log=None):
    """Generate ``count`` samples round-robin over the source pairs.

    Failed draws (for instance crops that cannot fit) are logged and
    skipped; their indices leave no files. Returns the saved manifest.
    """
    pairs = discover_source_pairs(src_dir)
    sources = []
    for stem, ir_name, vis_name in pairs:
        sources.append((
            stem,
            imaging.load_image(os.path.join(src_dir, ir_name)),
            imaging.load_image(os.path.join(src_dir, vis_name)),
        ))
    os.makedirs(out_dir, exist_ok=True)
    for sub in _SUBDIRS:
        os.makedirs(os.path.join(out_dir, sub), exist_ok=True)

    margin = math.ceil(rho)
    records = []
    skipped = 0
    for index in range(count):
        stem, ir, vis = sources[index % len(sources)]
        rng = np.random.default_rng([seed, index])
        height, width = vis.shape[:2]
        x_hi = width - size - margin
        y_hi = height - size - margin
        try:
            if x_hi < margin or y_hi < margin:
                raise CropOutOfBounds(
                    f"source {stem} is too small for size={size} rho={rho}"
                )
            x0 = int(rng.integers(margin, x_hi + 1))
            y0 = int(rng.integers(margin, y_hi + 1))
            sample_seed = int(rng.integers(1 << 31))
            spec = SampleSpec(x=x0, y=y0, size=size, rho=rho,
                              seed=sample_seed)
            sample = synthesize_pair(ir, vis, spec)
        except (CropOutOfBounds, DegenerateCorrespondence,
                DegenerateQuad) as exc:
            skipped += 1
            if log is not None:
                log(f"skip {index:06d}: {exc}")
            continue
        fname = f"{index:06d}.png"
        imaging.save_image(os.path.join(out_dir, "ir", fname), sample.ir)
        imaging.save_image(
            os.path.join(out_dir, "vis_distorted", fname),
            sample.vis_distorted,
        )
        imaging.save_image(
            os.path.join(out_dir, "vis_aligned", fname), sample.vis_aligned
        )
        records.append({
            "id": f"{index:06d}",
            "ir": f"ir/{fname}",
            "vis_distorted": f"vis_distorted/{fname}",
            "vis_aligned": f"vis_aligned/{fname}",
            "source": stem,
            "offsets": [[float(v) for v in row] for row in sample.offsets],
            "crop": {"x": spec.x, "y": spec.y},
            "seed": spec.seed,
            "overlap": sample.overlap,
        })
    manifest = Manifest(
        name=name if name is not None else os.path.basename(
            os.path.normpath(out_dir)
        ),
        size=size, rho=rho, seed=seed,
        records=tuple(records), skipped=skipped,
    )
    save_manifest(manifest, out_dir)
    if log is not None:
        log(format_summary(manifest))
    return manifest


def format_summary(manifest):
    """One-row dataset summary table: name, pair count, mean overlap."""
    if manifest.records:
        mean_overlap = float(
            np.mean([r["overlap"] for r in manifest.records])
        )
        overlap_text = f"{mean_overlap:.1f}%"
    else:
        overlap_text = "-"
    header = f"{'Dataset':<16}{'Pairs':>8}{'Overlap':>10}"
    row = f"{manifest.name:<16}{len(manifest.records):>8}{overlap_text:>10}"
    return header + "\n" + row


def load_sample(out_dir, record):
    """Load one manifest record back into a DatasetSample."""
    ir = imaging.load_image(os.path.join(out_dir, record["ir"]))
    distorted = imaging.load_image(os.path.join(out_dir, record["vis_distorted"]))
    aligned = imaging.load_image(os.path.join(out_dir, record["vis_aligned"]))
    offsets = np.asarray(record["offsets"], dtype=np.float64)
    spec = SampleSpec(
        x=int(record["crop"]["x"]), y=int(record["crop"]["y"]),
        size=ir.shape[0], rho=float(np.abs(offsets).max()),
        seed=int(record["seed"]),
    )
    return DatasetSample(
        ir=ir, vis_distorted=distorted, vis_aligned=aligned,
        offsets=offsets, overlap=float(record["overlap"]), spec=spec,
    )
