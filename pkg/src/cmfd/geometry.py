"""Homography estimation: DLT, RANSAC, and orientation validation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DEGENERACY_SV_RATIO = 1e-8


class DegenerateConfigurationError(ValueError):
    """Point configuration too degenerate for DLT."""


class PointAtInfinityError(ValueError):
    """Homography maps the point to (near) infinity."""


class InsufficientDataError(ValueError):
    """Fewer than 4 correspondences."""


class NoModelError(RuntimeError):
    """RANSAC found no adequately supported hypothesis."""


@dataclass
class Homography:
    """3x3 projective transform, normalized so m[2][2] == 1 when nonzero."""

    m: np.ndarray

    def __post_init__(self) -> None:
        m = np.asarray(self.m, dtype=np.float64).reshape(3, 3)
        if abs(m[2, 2]) > 1e-12:
            m = m / m[2, 2]
        sv = np.linalg.svd(m, compute_uv=False)
        if sv[0] <= 0 or sv[-1] / sv[0] <= 1e-12:
            raise DegenerateConfigurationError("homography is not invertible")
        self.m = m

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.m))

    @staticmethod
    def identity() -> "Homography":
        return Homography(np.eye(3))


@dataclass
class RansacParams:
    t_in: float = 3.0
    max_iters: int = 2000
    confidence: float = 0.995
    theta_tol: float = 10.0

    def __post_init__(self) -> None:
        if self.t_in <= 0:
            raise ValueError("t_in must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not (0.0 < self.confidence < 1.0):
            raise ValueError("confidence must be in (0, 1)")


def apply(h: Homography, x: float, y: float) -> tuple[float, float]:
    """Apply the homogeneous transform to a single point."""
    m = h.m
    d = m[2, 0] * x + m[2, 1] * y + m[2, 2]
    if abs(d) <= 1e-12:
        raise PointAtInfinityError(f"point ({x}, {y}) maps to infinity")
    return (
        (m[0, 0] * x + m[0, 1] * y + m[0, 2]) / d,
        (m[1, 0] * x + m[1, 1] * y + m[1, 2]) / d,
    )


def apply_points(h: Homography, pts: np.ndarray) -> np.ndarray:
    """Apply to an (n, 2) array; points at infinity come back as NaN."""
    m = h.m
    x, y = pts[:, 0], pts[:, 1]
    d = m[2, 0] * x + m[2, 1] * y + m[2, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.stack(
            [
                (m[0, 0] * x + m[0, 1] * y + m[0, 2]) / d,
                (m[1, 0] * x + m[1, 1] * y + m[1, 2]) / d,
            ],
            axis=1,
        )
    out[np.abs(d) <= 1e-12] = np.nan
    return out


def _normalizer(pts: np.ndarray) -> np.ndarray:
    """Hartley normalization: centroid to origin, mean distance sqrt(2)."""
    centroid = pts.mean(axis=0)
    dists = np.linalg.norm(pts - centroid, axis=1)
    mean_dist = dists.mean()
    scale = math.sqrt(2.0) / mean_dist if mean_dist > 1e-12 else 1.0
    return np.array(
        [
            [scale, 0.0, -scale * centroid[0]],
            [0.0, scale, -scale * centroid[1]],
            [0.0, 0.0, 1.0],
        ]
    )


def estimate_dlt(src: np.ndarray, dst: np.ndarray) -> Homography:
    """Least-squares DLT via the normalized 8-parameter linear system.

    Exact for 4 non-degenerate correspondences.
    """
    src = np.asarray(src, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 2)
    n = src.shape[0]
    if n < 4 or dst.shape[0] != n:
        raise InsufficientDataError(f"need >= 4 correspondences, got {n}")

    t_src = _normalizer(src)
    t_dst = _normalizer(dst)
    sn = (src @ t_src[:2, :2].T) + t_src[:2, 2]
    dn = (dst @ t_dst[:2, :2].T) + t_dst[:2, 2]

    a = np.zeros((2 * n, 8))
    b = np.zeros(2 * n)
    x, y = sn[:, 0], sn[:, 1]
    xp, yp = dn[:, 0], dn[:, 1]
    a[0::2, 0] = x
    a[0::2, 1] = y
    a[0::2, 2] = 1.0
    a[0::2, 6] = -x * xp
    a[0::2, 7] = -y * xp
    b[0::2] = xp
    a[1::2, 3] = x
    a[1::2, 4] = y
    a[1::2, 5] = 1.0
    a[1::2, 6] = -x * yp
    a[1::2, 7] = -y * yp
    b[1::2] = yp

    sv = np.linalg.svd(a, compute_uv=False)
    if sv[0] <= 0 or sv[-1] / sv[0] < DEGENERACY_SV_RATIO:
        raise DegenerateConfigurationError("rank-deficient DLT system")
    sol, *_ = np.linalg.lstsq(a, b, rcond=None)
    hn = np.append(sol, 1.0).reshape(3, 3)
    h = np.linalg.inv(t_dst) @ hn @ t_src
    return Homography(h)


def reprojection_errors(h: Homography, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Forward reprojection error ||H*src - dst|| per correspondence."""
    proj = apply_points(h, src)
    err = np.linalg.norm(proj - dst, axis=1)
    return np.where(np.isfinite(err), err, np.inf)


def ransac_homography(
    src: np.ndarray,
    dst: np.ndarray,
    params: RansacParams | None = None,
    rng_seed: int = 0,
) -> tuple[Homography, np.ndarray]:
    """RANSAC with adaptive early exit and a final all-inlier refit.

    A hypothesis counts as a model only if, besides its own minimal
    sample, it is supported by at least one further correspondence
    (whenever more than 4 correspondences exist). Deterministic for a
    fixed seed. Returns (model, inlier index array); the inliers are
    exactly the correspondences with reprojection error < t_in under the
    returned model.
    """
    params = params or RansacParams()
    src = np.asarray(src, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 2)
    n = src.shape[0]
    if n < 4:
        raise InsufficientDataError(f"need >= 4 correspondences, got {n}")

    min_support = 4 if n == 4 else 5
    rng = np.random.default_rng(rng_seed)
    best_count = 0
    best_h: Homography | None = None
    needed = float(params.max_iters)

    for it in range(params.max_iters):
        if it >= needed:
            break
        sample = rng.choice(n, size=4, replace=False)
        try:
            h = estimate_dlt(src[sample], dst[sample])
        except DegenerateConfigurationError:
            continue
        count = int(np.sum(reprojection_errors(h, src, dst) < params.t_in))
        if count >= min_support and count > best_count:
            best_count = count
            best_h = h
            w = count / n
            denom = math.log(max(1e-12, 1.0 - w**4))
            if denom < 0:
                needed = math.log(1.0 - params.confidence) / denom

    if best_h is None:
        raise NoModelError("no hypothesis reached the minimum support")

    inliers = np.nonzero(reprojection_errors(best_h, src, dst) < params.t_in)[0]
    try:
        refit = estimate_dlt(src[inliers], dst[inliers])
        refit_inliers = np.nonzero(
            reprojection_errors(refit, src, dst) < params.t_in
        )[0]
        if refit_inliers.size >= 4:
            return refit, refit_inliers
    except (DegenerateConfigurationError, InsufficientDataError):
        pass
    return best_h, inliers


def rotation_angle(h: Homography) -> float:
    """Rotation (degrees) of the polar decomposition of the 2x2 block."""
    a = h.m[:2, :2]
    u, _, vt = np.linalg.svd(a)
    r = u @ vt
    if np.linalg.det(r) < 0:
        r = u @ np.diag([1.0, -1.0]) @ vt
    return math.degrees(math.atan2(r[1, 0], r[0, 0]))


def circular_difference(a: float, b: float) -> float:
    """Absolute angular difference in degrees, in [0, 180]."""
    d = abs(a - b) % 360.0
    return min(d, 360.0 - d)


def circular_median(angles: np.ndarray) -> float:
    """Sample angle minimizing total circular deviation (first on ties)."""
    angles = np.asarray(angles, dtype=np.float64) % 360.0
    if angles.size == 0:
        raise ValueError("empty angle set")
    diffs = np.abs(angles[:, None] - angles[None, :]) % 360.0
    diffs = np.minimum(diffs, 360.0 - diffs)
    costs = diffs.sum(axis=1)
    return float(angles[int(np.argmin(costs))])


def validate_orientation(
    h: Homography,
    theta_left: np.ndarray,
    theta_right: np.ndarray,
    tol: float = 10.0,
) -> bool:
    """Check the homography rotation against matched orientation deltas.

    Compares the polar-decomposition rotation of h with the circular
    median of (theta_right - theta_left) over the inliers.
    """
    theta_left = np.asarray(theta_left, dtype=np.float64)
    theta_right = np.asarray(theta_right, dtype=np.float64)
    if theta_left.size == 0:
        raise ValueError("inlier set must be non-empty")
    # Cap the O(n^2) median at a deterministic subsample.
    deltas = (theta_right - theta_left) % 360.0
    if deltas.size > 512:
        stride = int(math.ceil(deltas.size / 512))
        deltas = deltas[::stride]
    med = circular_median(deltas)
    return circular_difference(rotation_angle(h), med) <= tol
