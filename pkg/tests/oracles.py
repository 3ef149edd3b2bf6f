"""Independent reference implementations used as test oracles.

These are deliberately written as straightforward per-element loops with
no code shared with the package, so agreement between the two is
meaningful evidence of correctness rather than a tautology.
"""

from __future__ import annotations

import math

import numpy as np

from cmfd.keypoints import KeypointSet


def brute_force_g2nn(
    kps: KeypointSet, t_match: float = 0.5, min_spatial: float = 10.0
) -> set[tuple[int, int]]:
    """G2NN ratio test over every keypoint pair, no clustering or grouping.

    Returns the set of canonical (left, right) index pairs where the left
    keypoint precedes the right under (y, x, index) ordering.
    """
    n = len(kps)
    if n < 2:
        return set()
    desc = kps.descriptors.astype(np.float64)
    xy = kps.xy.astype(np.float64)
    found: set[tuple[int, int]] = set()
    all_j = np.arange(n)
    for i in range(n):
        spatial = np.hypot(xy[:, 0] - xy[i, 0], xy[:, 1] - xy[i, 1])
        valid = (all_j != i) & (spatial >= min_spatial)
        idx = all_j[valid]
        if idx.size == 0:
            continue
        dists = np.sqrt(((desc[idx] - desc[i]) ** 2).sum(axis=1))
        # Stable sort over ascending j matches ordering ties by index.
        order = np.argsort(dists, kind="stable")
        sorted_d = dists[order]
        sorted_j = idx[order]
        for k in range(sorted_j.size):
            if k + 1 >= sorted_j.size:
                # No successor distance to test against: stop.
                break
            d_cur = float(sorted_d[k])
            d_next = float(sorted_d[k + 1])
            if d_next > 0 and d_cur / d_next >= t_match:
                break
            found.add(canonical_pair(i, int(sorted_j[k]), kps))
    return found


def canonical_pair(a: int, b: int, kps: KeypointSet) -> tuple[int, int]:
    ka = (float(kps.xy[a, 1]), float(kps.xy[a, 0]), a)
    kb = (float(kps.xy[b, 1]), float(kps.xy[b, 0]), b)
    return (a, b) if ka <= kb else (b, a)


def entropy_map_reference(gray: np.ndarray, window: int) -> np.ndarray:
    """Per-pixel Shannon entropy over a symmetric-padded square window."""
    r = window // 2
    padded = np.pad(gray, r, mode="symmetric")
    h, w = gray.shape
    out = np.zeros((h, w), dtype=np.float64)
    for y in range(h):
        for x in range(w):
            block = padded[y : y + window, x : x + window]
            _, counts = np.unique(block, return_counts=True)
            p = counts / counts.sum()
            out[y, x] = float(-(p * np.log2(p)).sum())
    return out


def quartiles_reference(values: list[float]) -> tuple[float, float]:
    """Linear-interpolation quartiles at positions (n-1)*q."""

    def interp(sorted_vals: list[float], q: float) -> float:
        pos = (len(sorted_vals) - 1) * q
        lo = math.floor(pos)
        hi = math.ceil(pos)
        frac = pos - lo
        return sorted_vals[lo] * (1 - frac) + sorted_vals[hi] * frac

    s = sorted(values)
    return interp(s, 0.25), interp(s, 0.75)
