"""Homography algebra on the four-corner offset parameterization.

Conventions used throughout the package:

* Pixel centers sit at integer coordinates. The reference frame of a
  ``width x height`` image is the rectangle with corners ``(0, 0)`` and
  ``(width - 1, height - 1)``.
* Corner order is fixed: top-left, top-right, bottom-left, bottom-right.
* A homography is a ``(3, 3)`` float array normalized so ``m[2, 2] == 1``.
  It maps source coordinates to target coordinates.
* Corner offsets are a ``(4, 2)`` float array of per-corner ``(dx, dy)``
  displacements in the fixed corner order.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateCorrespondence, ProjectiveDegenerate, SingularMatrix

CORNER_NAMES = ("top-left", "top-right", "bottom-left", "bottom-right")

# Extent above which corner coordinates are conditioned before the linear
# solve; below it the raw 8x8 system is already well conditioned.
_NORMALIZE_EXTENT = 64.0
_W_EPS = 1e-9
_DET_EPS = 1e-12


def frame_corners(width: int, height: int) -> np.ndarray:
    """Reference corner quadrilateral of a ``width x height`` image.

    Returns
    -------
    (4, 2) array of corner coordinates in the fixed order
    top-left, top-right, bottom-left, bottom-right.
    """
    if width < 2 or height < 2:
        raise ValueError("frame needs width and height of at least 2 pixels")
    w = float(width - 1)
    h = float(height - 1)
    return np.array([[0.0, 0.0], [w, 0.0], [0.0, h], [w, h]])


def identity() -> np.ndarray:
    """3x3 identity homography."""
    return np.eye(3)


def translation(dx: float, dy: float) -> np.ndarray:
    """Homography translating points by ``(dx, dy)``."""
    m = np.eye(3)
    m[0, 2] = dx
    m[1, 2] = dy
    return m


def normalized(m: np.ndarray) -> np.ndarray:
    """Scale a homography so its bottom-right entry equals 1."""
    m = np.asarray(m, dtype=float)
    if m.shape != (3, 3):
        raise ValueError("homography must be a 3x3 matrix")
    if not np.all(np.isfinite(m)):
        raise ValueError("homography entries must be finite")
    w = m[2, 2]
    if abs(w) < _DET_EPS:
        raise SingularMatrix("bottom-right entry is (near) zero; cannot normalize")
    if w == 1.0:
        return m
    return m / w


def _as_points(pts, name: str) -> np.ndarray:
    pts = np.asarray(pts, dtype=float)
    if pts.shape != (4, 2):
        raise ValueError(f"{name} must have shape (4, 2)")
    if not np.all(np.isfinite(pts)):
        raise ValueError(f"{name} must be finite")
    return pts


def _check_quad(pts: np.ndarray, what: str) -> None:
    """Reject corner sets with any coincident or collinear triple."""
    extent = max(np.ptp(pts[:, 0]), np.ptp(pts[:, 1]))
    tol = 1e-9 * max(1.0, extent * extent)
    idx = ((0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3))
    for a, b, c in idx:
        u = pts[b] - pts[a]
        v = pts[c] - pts[a]
        if abs(u[0] * v[1] - u[1] * v[0]) <= tol:
            raise DegenerateCorrespondence(
                f"{what}: corners {a}, {b}, {c} are collinear or coincident"
            )


def _conditioning_transform(pts: np.ndarray):
    """Similarity moving points to zero mean and sqrt(2) mean radius."""
    center = pts.mean(axis=0)
    scale = np.mean(np.linalg.norm(pts - center, axis=1))
    if scale < _DET_EPS:
        raise DegenerateCorrespondence("corner set collapses to a point")
    s = np.sqrt(2.0) / scale
    t = np.array([[s, 0.0, -s * center[0]], [0.0, s, -s * center[1]], [0.0, 0.0, 1.0]])
    return (pts - center) * s, t


def _solve_h33_one(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Exact 8x8 linear solve for the homography with m[2, 2] fixed to 1."""
    a = np.zeros((8, 8))
    b = np.zeros(8)
    for i in range(4):
        x, y = src[i]
        u, v = dst[i]
        a[2 * i] = [x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y]
        a[2 * i + 1] = [0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y]
        b[2 * i] = u
        b[2 * i + 1] = v
    try:
        h = np.linalg.solve(a, b)
    except np.linalg.LinAlgError as exc:
        raise DegenerateCorrespondence("corner system is singular") from exc
    if not np.all(np.isfinite(h)):
        raise DegenerateCorrespondence("corner system produced a non-finite solution")
    return np.array(
        [[h[0], h[1], h[2]], [h[3], h[4], h[5]], [h[6], h[7], 1.0]]
    )


def homography_from_points(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Homography mapping four source points onto four target points.

    Both inputs are ``(4, 2)`` arrays. Raises DegenerateCorrespondence when
    either quadruple has a collinear or coincident triple.
    """
    src = _as_points(src, "source corners")
    dst = _as_points(dst, "target corners")
    _check_quad(src, "source corners")
    _check_quad(dst, "target corners")

    extent = max(np.ptp(src[:, 0]), np.ptp(src[:, 1]))
    if extent > _NORMALIZE_EXTENT:
        src_n, t_src = _conditioning_transform(src)
        dst_n, t_dst = _conditioning_transform(dst)
        h_n = _solve_h33_one(src_n, dst_n)
        h = invert(t_dst) @ h_n @ t_src
    else:
        h = _solve_h33_one(src, dst)
    return normalized(h)


def dlt_from_offsets(offsets: np.ndarray, frame: np.ndarray) -> np.ndarray:
    """Homography sending each frame corner to its offset position.

    Parameters
    ----------
    offsets : (4, 2) array
        Per-corner (dx, dy) displacements, corner order top-left,
        top-right, bottom-left, bottom-right.
    frame : (4, 2) array
        Reference corners, typically ``frame_corners(width, height)``.

    Returns
    -------
    (3, 3) homography with ``m[2, 2] == 1`` that maps ``frame[i]`` to
    ``frame[i] + offsets[i]`` exactly (up to solver round-off).
    """
    offsets = _as_points(offsets, "offsets")
    frame = _as_points(frame, "frame")
    return homography_from_points(frame, frame + offsets)


def project_points(h: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Apply a homography to an ``(n, 2)`` array of points.

    Raises ProjectiveDegenerate when any point maps too close to the line
    at infinity (|w| < 1e-9).
    """
    h = np.asarray(h, dtype=float)
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    w = h[2, 0] * pts[:, 0] + h[2, 1] * pts[:, 1] + h[2, 2]
    if np.any(np.abs(w) < _W_EPS):
        raise ProjectiveDegenerate("point projects to the line at infinity")
    u = (h[0, 0] * pts[:, 0] + h[0, 1] * pts[:, 1] + h[0, 2]) / w
    v = (h[1, 0] * pts[:, 0] + h[1, 1] * pts[:, 1] + h[1, 2]) / w
    return np.stack([u, v], axis=1)


def project_points_masked(h: np.ndarray, pts: np.ndarray):
    """Like project_points but flags bad denominators instead of raising.

    Returns ``(projected, valid)`` where invalid rows hold zeros.
    """
    h = np.asarray(h, dtype=float)
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    w = h[2, 0] * pts[:, 0] + h[2, 1] * pts[:, 1] + h[2, 2]
    valid = np.abs(w) >= _W_EPS
    w_safe = np.where(valid, w, 1.0)
    u = (h[0, 0] * pts[:, 0] + h[0, 1] * pts[:, 1] + h[0, 2]) / w_safe
    v = (h[1, 0] * pts[:, 0] + h[1, 1] * pts[:, 1] + h[1, 2]) / w_safe
    out = np.stack([np.where(valid, u, 0.0), np.where(valid, v, 0.0)], axis=1)
    return out, valid


def offsets_from_homography(h: np.ndarray, frame: np.ndarray) -> np.ndarray:
    """Corner offsets induced by a homography on a reference frame.

    Inverse of dlt_from_offsets: projects every frame corner through ``h``
    and subtracts the corner.
    """
    frame = _as_points(frame, "frame")
    try:
        projected = project_points(h, frame)
    except ProjectiveDegenerate:
        raise ProjectiveDegenerate(
            "a frame corner projects to the line at infinity; offsets undefined"
        ) from None
    return projected - frame


def compose(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Homography applying ``b`` first, then ``a``."""
    return normalized(np.asarray(a, dtype=float) @ np.asarray(b, dtype=float))


def invert(h: np.ndarray) -> np.ndarray:
    """Inverse homography via the closed-form 3x3 adjugate.

    The adjugate keeps integer-entry matrices (e.g. pure translations)
    exact in floating point. Raises SingularMatrix when |det| < 1e-12.
    """
    h = np.asarray(h, dtype=float)
    if h.shape != (3, 3):
        raise ValueError("homography must be a 3x3 matrix")
    c00 = h[1, 1] * h[2, 2] - h[1, 2] * h[2, 1]
    c01 = h[1, 2] * h[2, 0] - h[1, 0] * h[2, 2]
    c02 = h[1, 0] * h[2, 1] - h[1, 1] * h[2, 0]
    det = h[0, 0] * c00 + h[0, 1] * c01 + h[0, 2] * c02
    if not np.isfinite(det) or abs(det) < _DET_EPS:
        raise SingularMatrix(f"homography determinant {det!r} is (near) zero")
    adj = np.array(
        [
            [c00, h[0, 2] * h[2, 1] - h[0, 1] * h[2, 2], h[0, 1] * h[1, 2] - h[0, 2] * h[1, 1]],
            [c01, h[0, 0] * h[2, 2] - h[0, 2] * h[2, 0], h[0, 2] * h[1, 0] - h[0, 0] * h[1, 2]],
            [c02, h[0, 1] * h[2, 0] - h[0, 0] * h[2, 1], h[0, 0] * h[1, 1] - h[0, 1] * h[1, 0]],
        ]
    )
    return normalized(adj / det)


def rescale_homography(h: np.ndarray, s: float) -> np.ndarray:
    """Express a homography in coordinates scaled by ``s``.

    If ``h`` maps points at one resolution, the result maps the same
    transform at a resolution where every coordinate is multiplied by
    ``s`` (conjugation by diag(s, s, 1)).
    """
    if not np.isfinite(s) or s <= 0:
        raise ValueError("scale must be a positive finite number")
    h = np.asarray(h, dtype=float)
    scale = np.diag([s, s, 1.0])
    inv_scale = np.diag([1.0 / s, 1.0 / s, 1.0])
    return normalized(scale @ h @ inv_scale)


def average_corner_error(predicted: np.ndarray, truth: np.ndarray) -> float:
    """Mean Euclidean distance between two corner-offset sets, in pixels."""
    predicted = _as_points(predicted, "predicted offsets")
    truth = _as_points(truth, "true offsets")
    return float(np.mean(np.linalg.norm(predicted - truth, axis=1)))


def homography_to_list(h: np.ndarray) -> list:
    """Row-major list of the nine matrix entries (JSON layout)."""
    h = normalized(h)
    return [float(v) for v in h.reshape(-1)]


def homography_from_list(values) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.shape != (9,):
        raise ValueError("expected nine row-major homography entries")
    return normalized(values.reshape(3, 3))


def offsets_to_list(offsets: np.ndarray) -> list:
    """Nested [[dx, dy], ...] list in fixed corner order (JSON layout)."""
    offsets = _as_points(offsets, "offsets")
    return [[float(dx), float(dy)] for dx, dy in offsets]


def offsets_from_list(values) -> np.ndarray:
    return _as_points(values, "offsets")
