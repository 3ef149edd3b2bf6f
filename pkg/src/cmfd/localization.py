"""Iterative forgery localization.

Repeatedly picks the densest neighborhood of unvisited matches, fits a
local homography, removes its inliers, and (when the inlier count clears
the SGO gate and the orientation check) verifies scale-proportional
suspicious regions with robust grayscale-difference bounds. Verified
pixels accumulate into the tamper mask.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np
from scipy.spatial import cKDTree

from cmfd.geometry import (
    DegenerateConfigurationError,
    Homography,
    NoModelError,
    RansacParams,
    apply_points,
    ransac_homography,
    reprojection_errors,
    validate_orientation,
)
from cmfd.keypoints import KeypointSet
from cmfd.matching import MatchSet

MORPH_RADIUS = 3


@dataclass
class LocalizationParams:
    r_sam: float = 64.0          # sampling radius, upscaled pixels
    n_in: int = 20               # minimum inliers (strict >) for acceptance
    region_gamma: float = 16.0   # disk radius multiplier on keypoint scale
    max_iters: int = 200
    morphology: bool = True      # closing/opening cleanup of the final mask

    def __post_init__(self) -> None:
        if self.r_sam <= 0:
            raise ValueError("r_sam must be positive")
        if self.n_in < 0:
            raise ValueError("n_in must be >= 0")
        if self.region_gamma <= 0:
            raise ValueError("region_gamma must be positive")


@dataclass
class IterationTrace:
    seed_match: tuple[int, int]
    sample_size: int
    inlier_count: int
    accepted: bool
    homography: Homography | None = None
    reason: str = ""


def densest_sampling_set(
    unvisited: MatchSet, kps: KeypointSet, r_sam: float
) -> tuple[int, np.ndarray]:
    """Pick the match whose endpoints gather the most nearby matches.

    A match belongs to a candidate's sampling set when either of its
    endpoints lies within r_sam of either endpoint of the candidate.
    Returns (index of the seed within unvisited, indices of its sample).
    Ties break toward the lowest match index.
    """
    n = len(unvisited)
    if n == 0:
        raise ValueError("unvisited match set is empty")
    lpts = kps.xy[unvisited.pairs[:, 0]].astype(np.float64)
    rpts = kps.xy[unvisited.pairs[:, 1]].astype(np.float64)
    endpoints = np.vstack([lpts, rpts])
    tree = cKDTree(endpoints)
    near_l = tree.query_ball_point(lpts, r_sam)
    near_r = tree.query_ball_point(rpts, r_sam)

    best_i = 0
    best_count = -1
    best_sample: np.ndarray = np.zeros(0, dtype=np.int64)
    for i in range(n):
        ids = np.fromiter(near_l[i] + near_r[i], dtype=np.int64)
        members = np.unique(ids % n)
        if members.size > best_count:
            best_count = members.size
            best_i = i
            best_sample = members
    return best_i, best_sample


def select_inliers(
    h: Homography, all_matches: MatchSet, kps: KeypointSet, t_in: float
) -> np.ndarray:
    """Indices of matches whose transfer error in either direction is < t_in.

    Canonical match ordering hides the true copy direction, so a match
    also counts when its reverse satisfies the model:
    min(||H*k_l - k_r||, ||H*k_r - k_l||) < t_in.
    """
    if len(all_matches) == 0:
        return np.zeros(0, dtype=np.int64)
    lpts = kps.xy[all_matches.pairs[:, 0]].astype(np.float64)
    rpts = kps.xy[all_matches.pairs[:, 1]].astype(np.float64)
    fwd = reprojection_errors(h, lpts, rpts)
    rev = reprojection_errors(h, rpts, lpts)
    return np.nonzero(np.minimum(fwd, rev) < t_in)[0]


def remove_inliers(unvisited: MatchSet, inlier_pairs: np.ndarray) -> MatchSet:
    """Set difference on canonical pairs."""
    if len(unvisited) == 0 or inlier_pairs.size == 0:
        return unvisited
    scale = int(max(unvisited.pairs.max(), inlier_pairs.max())) + 1
    keys = unvisited.pairs[:, 0] * scale + unvisited.pairs[:, 1]
    drop = inlier_pairs[:, 0] * scale + inlier_pairs[:, 1]
    keep = ~np.isin(keys, drop)
    return MatchSet(pairs=unvisited.pairs[keep])


def gate_sgo(inlier_count: int, n_in: int) -> bool:
    """True iff the inlier count strictly exceeds the SGO gate."""
    return inlier_count > n_in


def suspicious_regions(
    inlier_pairs: np.ndarray,
    kps: KeypointSet,
    gamma: float,
    dims: tuple[int, int],
) -> tuple[np.ndarray, np.ndarray]:
    """Union of scale-proportional disks around left / right inlier keypoints.

    Returns boolean masks (SR_l, SR_r) of shape dims = (h, w), clipped to
    the image bounds.
    """
    if inlier_pairs.size == 0:
        raise ValueError("inlier set must be non-empty")
    h, w = dims
    masks = []
    for side in (0, 1):
        mask = np.zeros((h, w), dtype=np.uint8)
        idx = inlier_pairs[:, side]
        for i in idx:
            cx = int(round(float(kps.xy[i, 0])))
            cy = int(round(float(kps.xy[i, 1])))
            radius = max(1, int(round(gamma * float(kps.sigma[i]))))
            cv2.circle(mask, (cx, cy), radius, 1, thickness=-1)
        masks.append(mask.astype(bool))
    return masks[0], masks[1]


def robust_diff_bounds(
    inlier_pairs: np.ndarray, kps: KeypointSet, gray: np.ndarray
) -> tuple[float, float]:
    """IQR-filtered min/max of left-minus-right grayscale differences.

    Quartiles use linear interpolation between order statistics. If the
    filter empties the set, falls back to the unfiltered min/max.
    """
    if inlier_pairs.size == 0:
        raise ValueError("inlier set must be non-empty")
    hh, ww = gray.shape
    vals = []
    for side in (0, 1):
        xs = np.clip(np.round(kps.xy[inlier_pairs[:, side], 0]).astype(np.int64), 0, ww - 1)
        ys = np.clip(np.round(kps.xy[inlier_pairs[:, side], 1]).astype(np.int64), 0, hh - 1)
        vals.append(gray[ys, xs].astype(np.float64))
    diff = vals[0] - vals[1]
    q1, q3 = np.percentile(diff, [25.0, 75.0])
    iqr = q3 - q1
    kept = diff[(diff >= q1 - 1.5 * iqr) & (diff <= q3 + 1.5 * iqr)]
    if kept.size == 0:
        kept = diff
    return float(kept.min()), float(kept.max())


def _bilinear(gray_f: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    h, w = gray_f.shape
    x0 = np.clip(x0, 0, w - 2) if w > 1 else np.zeros_like(x0)
    y0 = np.clip(y0, 0, h - 2) if h > 1 else np.zeros_like(y0)
    fx = xs - x0
    fy = ys - y0
    v00 = gray_f[y0, x0]
    v01 = gray_f[y0, x0 + 1] if w > 1 else v00
    v10 = gray_f[y0 + 1, x0] if h > 1 else v00
    v11 = gray_f[y0 + 1, x0 + 1] if h > 1 and w > 1 else v00
    return (
        v00 * (1 - fx) * (1 - fy)
        + v01 * fx * (1 - fy)
        + v10 * (1 - fx) * fy
        + v11 * fx * fy
    )


def verify_regions(
    sr_l: np.ndarray,
    sr_r: np.ndarray,
    h: Homography,
    gray: np.ndarray,
    d_l: float,
    d_h: float,
) -> np.ndarray:
    """Grayscale-difference verification of suspicious pixels.

    A pixel k in SR_l passes when its forward image k' = H*k is in bounds
    and gray(k) - gray(k') lies in [d_l, d_h] (bilinear sample at k');
    both k and round(k') are then marked. SR_r is handled symmetrically
    with H^-1. Returns the union as a boolean mask.
    """
    hh, ww = gray.shape
    gray_f = gray.astype(np.float64)
    out = np.zeros((hh, ww), dtype=bool)
    eps = 1e-9
    for sr, hom, forward in ((sr_l, h, True), (sr_r, h.inverse(), False)):
        ys, xs = np.nonzero(sr)
        if ys.size == 0:
            continue
        pts = np.stack([xs, ys], axis=1).astype(np.float64)
        proj = apply_points(hom, pts)
        ok = (
            np.isfinite(proj).all(axis=1)
            & (proj[:, 0] >= 0)
            & (proj[:, 0] <= ww - 1)
            & (proj[:, 1] >= 0)
            & (proj[:, 1] <= hh - 1)
        )
        if not ok.any():
            continue
        ys_ok, xs_ok = ys[ok], xs[ok]
        px, py = proj[ok, 0], proj[ok, 1]
        sample = _bilinear(gray_f, px, py)
        here = gray_f[ys_ok, xs_ok]
        # Eq. direction: SR_l compares gray(k) - gray(H*k); SR_r compares
        # gray(H^-1*k) - gray(k).
        diff = here - sample if forward else sample - here
        passed = (diff >= d_l - eps) & (diff <= d_h + eps)
        out[ys_ok[passed], xs_ok[passed]] = True
        rx = np.clip(np.round(px[passed]).astype(np.int64), 0, ww - 1)
        ry = np.clip(np.round(py[passed]).astype(np.int64), 0, hh - 1)
        out[ry, rx] = True
    return out


def downscale_mask(mask_up: np.ndarray, s: int, original_dims: tuple[int, int]) -> np.ndarray:
    """Block-majority downscale: tampered iff > 50% of the s x s block is."""
    h0, w0 = original_dims
    if s == 1:
        return mask_up[:h0, :w0].copy()
    blocks = mask_up[: s * h0, : s * w0].reshape(h0, s, w0, s)
    frac = blocks.mean(axis=(1, 3))
    return frac > 0.5


def morph_clean(mask: np.ndarray, radius: int = MORPH_RADIUS) -> np.ndarray:
    """Morphological closing then opening with a disk structuring element."""
    k = 2 * radius + 1
    kernel = cv2.getStructuringElement(cv2.MORPH_ELLIPSE, (k, k))
    m = mask.astype(np.uint8)
    m = cv2.morphologyEx(m, cv2.MORPH_CLOSE, kernel)
    m = cv2.morphologyEx(m, cv2.MORPH_OPEN, kernel)
    return m.astype(bool)


def refine_on_inliers(
    h: Homography,
    all_matches: MatchSet,
    kps: KeypointSet,
    t_in: float,
    rounds: int = 2,
) -> tuple[Homography, np.ndarray]:
    """Refit the model on its full-set inliers to stabilize verification.

    The sampling set is spatially local, so its model can extrapolate
    poorly across the whole region; a least-squares refit on all selected
    inliers (orientation-corrected for reversed pairs) fixes that.
    """
    from cmfd.geometry import DegenerateConfigurationError, InsufficientDataError, estimate_dlt

    inlier_idx = select_inliers(h, all_matches, kps, t_in)
    for _ in range(rounds):
        if inlier_idx.size < 4:
            break
        pairs = all_matches.pairs[inlier_idx]
        lpts = kps.xy[pairs[:, 0]].astype(np.float64)
        rpts = kps.xy[pairs[:, 1]].astype(np.float64)
        fwd = reprojection_errors(h, lpts, rpts)
        use_fwd = fwd < t_in
        src = np.where(use_fwd[:, None], lpts, rpts)
        dst = np.where(use_fwd[:, None], rpts, lpts)
        try:
            refit = estimate_dlt(src, dst)
        except (DegenerateConfigurationError, InsufficientDataError):
            break
        refit_idx = select_inliers(refit, all_matches, kps, t_in)
        if refit_idx.size < inlier_idx.size:
            break
        h, inlier_idx = refit, refit_idx
    return h, inlier_idx


def _validation_deltas(
    h: Homography, inlier_pairs: np.ndarray, kps: KeypointSet, t_in: float
) -> tuple[np.ndarray, np.ndarray]:
    """Orientation pairs oriented along the model's forward direction.

    Symmetric inlier selection can admit matches satisfying the model in
    reverse; flip those so the theta deltas stay comparable to the model
    rotation.
    """
    lpts = kps.xy[inlier_pairs[:, 0]].astype(np.float64)
    rpts = kps.xy[inlier_pairs[:, 1]].astype(np.float64)
    fwd = reprojection_errors(h, lpts, rpts)
    use_fwd = fwd < t_in
    tl = np.where(use_fwd, kps.theta[inlier_pairs[:, 0]], kps.theta[inlier_pairs[:, 1]])
    tr = np.where(use_fwd, kps.theta[inlier_pairs[:, 1]], kps.theta[inlier_pairs[:, 0]])
    return tl, tr


def localize(
    matches: MatchSet,
    kps: KeypointSet,
    gray: np.ndarray,
    geo: RansacParams | None = None,
    p: LocalizationParams | None = None,
    s: int = 1,
    original_dims: tuple[int, int] | None = None,
    rng_seed: int = 0,
) -> tuple[np.ndarray, list[IterationTrace]]:
    """Run the full iterative localization loop.

    gray and keypoints live in upscaled coordinates; the returned boolean
    mask is at original_dims resolution. Each iteration strictly shrinks
    the unvisited set, so the loop terminates in at most len(matches)
    iterations (max_iters is a secondary cap).
    """
    geo = geo or RansacParams()
    p = p or LocalizationParams()
    hup, wup = gray.shape
    if original_dims is None:
        original_dims = (hup // s, wup // s)
    traces: list[IterationTrace] = []
    mask_up = np.zeros((hup, wup), dtype=bool)

    unvisited = MatchSet(pairs=matches.pairs.copy())
    iteration = 0
    while len(unvisited) > 0 and iteration < p.max_iters:
        iteration += 1
        it_seed = int(np.random.SeedSequence([rng_seed, iteration]).generate_state(1)[0])

        seed_i, sample_idx = densest_sampling_set(unvisited, kps, p.r_sam)
        seed_pair = (
            int(unvisited.pairs[seed_i, 0]),
            int(unvisited.pairs[seed_i, 1]),
        )
        if sample_idx.size < 4:
            traces.append(
                IterationTrace(seed_pair, int(sample_idx.size), 0, False, reason="sample-too-small")
            )
            unvisited = remove_inliers(unvisited, unvisited.pairs[[seed_i]])
            continue

        sample_pairs = unvisited.pairs[sample_idx]
        src = kps.xy[sample_pairs[:, 0]].astype(np.float64)
        dst = kps.xy[sample_pairs[:, 1]].astype(np.float64)
        try:
            h, _ = ransac_homography(src, dst, geo, rng_seed=it_seed)
        except NoModelError:
            traces.append(
                IterationTrace(seed_pair, int(sample_idx.size), 0, False, reason="no-model")
            )
            unvisited = remove_inliers(unvisited, unvisited.pairs[[seed_i]])
            continue

        try:
            h, inlier_idx = refine_on_inliers(h, matches, kps, geo.t_in)
        except DegenerateConfigurationError:
            traces.append(
                IterationTrace(seed_pair, int(sample_idx.size), 0, False, reason="no-model")
            )
            unvisited = remove_inliers(unvisited, unvisited.pairs[[seed_i]])
            continue
        inlier_pairs = matches.pairs[inlier_idx]

        before = len(unvisited)
        unvisited = remove_inliers(unvisited, inlier_pairs)
        if len(unvisited) == before:
            # Guarantee progress even when the model misses the seed.
            unvisited = remove_inliers(unvisited, np.array([seed_pair], dtype=np.int64))

        if not gate_sgo(inlier_pairs.shape[0], p.n_in):
            traces.append(
                IterationTrace(
                    seed_pair, int(sample_idx.size), int(inlier_pairs.shape[0]), False,
                    homography=h, reason="sgo-gate",
                )
            )
            continue
        tl, tr = _validation_deltas(h, inlier_pairs, kps, geo.t_in)
        if not validate_orientation(h, tl, tr, tol=geo.theta_tol):
            traces.append(
                IterationTrace(
                    seed_pair, int(sample_idx.size), int(inlier_pairs.shape[0]), False,
                    homography=h, reason="orientation",
                )
            )
            continue

        sr_l, sr_r = suspicious_regions(inlier_pairs, kps, p.region_gamma, (hup, wup))
        d_l, d_h = robust_diff_bounds(inlier_pairs, kps, gray)
        verified = verify_regions(sr_l, sr_r, h, gray, d_l, d_h)
        mask_up |= verified
        traces.append(
            IterationTrace(
                seed_pair, int(sample_idx.size), int(inlier_pairs.shape[0]), True,
                homography=h, reason="accepted",
            )
        )

    mask = downscale_mask(mask_up, s, original_dims)
    if p.morphology:
        mask = morph_clean(mask)
    return mask, traces


def write_mask_png(mask: np.ndarray, path: str | Path) -> None:
    """Write the mask as 8-bit PNG, 0 = authentic, 255 = tampered."""
    cv2.imwrite(str(path), mask.astype(np.uint8) * 255)


def traces_to_jsonl(traces: list[IterationTrace], path: str | Path) -> None:
    with open(path, "w") as fh:
        for i, t in enumerate(traces, start=1):
            row = {
                "iter": i,
                "seed": list(t.seed_match),
                "sample_size": t.sample_size,
                "inliers": t.inlier_count,
                "accepted": t.accepted,
                "homography": (
                    [float(v) for v in t.homography.m.ravel()] if t.homography else None
                ),
                "reason": t.reason,
            }
            fh.write(json.dumps(row) + "\n")
