"""Fast group matching.

Keypoints are clustered by grayscale and local entropy, each cluster is
split into overlapping lexicographically sorted groups, and a G2NN ratio
test runs inside every group. The resulting directed matches are
canonicalized and deduplicated.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from cmfd.keypoints import KeypointSet

DEFAULT_T_MATCH = 0.5
DEFAULT_MIN_SPATIAL = 10.0

# Lexicographic sort quantization (decimal places) for cross-platform
# stability of the descriptor ordering.
LEX_QUANT_DECIMALS = 3


@dataclass
class ClusterParams:
    """Gray-level and entropy clustering steps (gray units / bits)."""

    step1: float = 40.0
    step2: float = 10.0
    step3: float = 1.0
    step4: float = 0.0
    entropy_max: float = 7.0

    def __post_init__(self) -> None:
        if not (self.step1 > self.step2 >= 0):
            raise ValueError("require step1 > step2 >= 0")
        if not (self.step3 > self.step4 >= 0):
            raise ValueError("require step3 > step4 >= 0")


@dataclass
class GroupParams:
    """Lexicographic grouping window size and overlap factor."""

    step5: int = 500
    beta: float = 1.1

    def __post_init__(self) -> None:
        if self.step5 < 1:
            raise ValueError("step5 must be >= 1")
        if not (1.0 <= self.beta <= 2.0):
            raise ValueError("beta must be in [1, 2]")


@dataclass
class MatchSet:
    """Canonical directed matches as an (n, 2) array of keypoint indices."""

    pairs: np.ndarray

    def __len__(self) -> int:
        return self.pairs.shape[0]

    @staticmethod
    def empty() -> "MatchSet":
        return MatchSet(pairs=np.zeros((0, 2), dtype=np.int64))


@dataclass
class MatchStats:
    """Diagnostics from a matching run."""

    comparisons: int = 0
    n_groups: int = 0
    n_clusters: int = 0
    stages: dict = field(default_factory=dict)


def _lookup(values: np.ndarray, kps: KeypointSet, indices: np.ndarray) -> np.ndarray:
    """Sample a per-pixel map at rounded keypoint coordinates."""
    h, w = values.shape
    xs = np.clip(np.round(kps.xy[indices, 0]).astype(np.int64), 0, w - 1)
    ys = np.clip(np.round(kps.xy[indices, 1]).astype(np.int64), 0, h - 1)
    return values[ys, xs]


def gray_clusters(
    kps: KeypointSet, gray: np.ndarray, p: ClusterParams
) -> list[np.ndarray]:
    """Overlapping gray-level clusters of keypoint indices.

    A final cluster covering [255 - step1, 255] is appended when the base
    ranges stop short of 255, so no keypoint is dropped.
    """
    n = len(kps)
    all_idx = np.arange(n, dtype=np.int64)
    if n == 0:
        return []
    g = _lookup(gray, kps, all_idx).astype(np.float64)
    n_u = math.ceil((255.0 - p.step1) / (p.step1 - p.step2))
    clusters = []
    last_high = -1.0
    for u in range(1, n_u + 1):
        a_l = (u - 1) * (p.step1 - p.step2)
        a_h = min(a_l + p.step1, 255.0)
        clusters.append(all_idx[(g >= a_l) & (g <= a_h)])
        last_high = a_h
    if last_high < 255.0:
        a_l = 255.0 - p.step1
        clusters.append(all_idx[(g >= a_l) & (g <= 255.0)])
    return clusters


def entropy_clusters(
    cluster: np.ndarray, kps: KeypointSet, emap: np.ndarray, p: ClusterParams
) -> list[np.ndarray]:
    """Overlapping entropy sub-clusters of a gray cluster."""
    if cluster.size == 0:
        return []
    e = _lookup(emap, kps, cluster).astype(np.float64)
    n_v = math.ceil((p.entropy_max - p.step4) / p.step3)
    subs = []
    for v in range(1, n_v + 1):
        a_l = max(0.0, (v - 1) * p.step3 - p.step4)
        a_h = min(p.entropy_max, v * p.step3 + p.step4)
        subs.append(cluster[(e >= a_l) & (e <= a_h)])
    return subs


def lexicographic_groups(
    cluster: np.ndarray, descriptors: np.ndarray, p: GroupParams
) -> list[np.ndarray]:
    """Split a cluster into overlapping windows of descriptor-sorted members.

    Descriptor components are quantized to 3 decimals before ordering;
    ties fall back to original index order (stable sort).
    """
    n = cluster.size
    if n == 0:
        return []
    desc = descriptors[cluster]
    quant = np.clip(np.round(desc * 10.0**LEX_QUANT_DECIMALS), 0, 32767)
    # Big-endian int16 bytes compare lexicographically for non-negative values.
    keys = np.ascontiguousarray(quant.astype(">i2")).view("S256").ravel()
    order = np.argsort(keys, kind="stable")
    sorted_members = cluster[order]
    n_w = math.ceil(n / p.step5)
    groups = []
    for w in range(1, n_w + 1):
        lo = max(1, int(round((w - p.beta) * p.step5)))
        hi = min(n, w * p.step5)
        groups.append(sorted_members[lo - 1 : hi])
    return groups


def g2nn_match(
    group: np.ndarray,
    kps: KeypointSet,
    t_match: float = DEFAULT_T_MATCH,
    min_spatial: float = DEFAULT_MIN_SPATIAL,
    stats: MatchStats | None = None,
) -> np.ndarray:
    """G2NN ratio test inside one group; returns canonical (left, right) pairs.

    For each member, candidate neighbors closer than min_spatial in the
    image plane are excluded, remaining descriptor distances are sorted
    ascending, and neighbors are accepted while d_j / d_{j+1} < t_match
    (a zero d_{j+1} counts as a pass). Acceptance stops at the first
    failing ratio.
    """
    if not (0.0 < t_match < 1.0):
        raise ValueError("t_match must be in (0, 1)")
    m = group.size
    if m < 2:
        return np.zeros((0, 2), dtype=np.int64)
    if stats is not None:
        stats.comparisons += m * (m - 1) // 2
        stats.n_groups += 1

    desc = kps.descriptors[group].astype(np.float64)
    gram = desc @ desc.T
    dist2 = np.clip(2.0 - 2.0 * gram, 0.0, None)
    dist = np.sqrt(dist2)

    xy = kps.xy[group].astype(np.float64)
    dx = xy[:, 0:1] - xy[None, :, 0]
    dy = xy[:, 1:2] - xy[None, :, 1]
    spat = np.hypot(dx, dy)

    invalid = spat < min_spatial
    np.fill_diagonal(invalid, True)
    dist[invalid] = np.inf

    order = np.argsort(dist, axis=1, kind="stable")
    sd = np.take_along_axis(dist, order, axis=1)

    # Acceptance count per row: neighbors up to (exclusive) the first
    # failing ratio; a candidate without a finite successor is untestable.
    cur = sd[:, :-1]
    nxt = sd[:, 1:]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(nxt > 0, cur / nxt, 0.0)
    fail = ~np.isfinite(cur) | ~np.isfinite(nxt) | ((nxt > 0) & (ratio >= t_match))
    any_fail = fail.any(axis=1)
    accepted = np.where(any_fail, fail.argmax(axis=1), m - 1)

    pairs: list[tuple[int, int]] = []
    ys = kps.xy[:, 1]
    xs = kps.xy[:, 0]
    for i in np.nonzero(accepted > 0)[0]:
        gi = group[i]
        for j in range(accepted[i]):
            gj = group[order[i, j]]
            pairs.append(_canonical(gi, gj, ys, xs))
    if not pairs:
        return np.zeros((0, 2), dtype=np.int64)
    return np.array(pairs, dtype=np.int64)


def _canonical(a: int, b: int, ys: np.ndarray, xs: np.ndarray) -> tuple[int, int]:
    """Order a pair so the left keypoint precedes the right in (y, x)."""
    ka = (float(ys[a]), float(xs[a]), int(a))
    kb = (float(ys[b]), float(xs[b]), int(b))
    return (int(a), int(b)) if ka <= kb else (int(b), int(a))


def assemble_matches(group_matches: list[np.ndarray]) -> MatchSet:
    """Deduplicate per-group matches into a sorted canonical MatchSet."""
    nonempty = [gm for gm in group_matches if gm.size]
    if not nonempty:
        return MatchSet.empty()
    allp = np.vstack(nonempty)
    allp = np.unique(allp, axis=0)
    order = np.lexsort((allp[:, 1], allp[:, 0]))
    return MatchSet(pairs=allp[order])


def match_pipeline(
    kps: KeypointSet,
    gray: np.ndarray,
    emap: np.ndarray,
    cp: ClusterParams | None = None,
    gp: GroupParams | None = None,
    t_match: float = DEFAULT_T_MATCH,
    min_spatial: float = DEFAULT_MIN_SPATIAL,
    use_gray: bool = True,
    use_entropy: bool = True,
    use_lg: bool = True,
) -> tuple[MatchSet, MatchStats]:
    """Full matching stage with each clustering/grouping stage toggleable.

    Disabling all three stages degenerates to brute-force G2NN over the
    whole keypoint set.
    """
    cp = cp or ClusterParams()
    gp = gp or GroupParams()
    stats = MatchStats(
        stages={"gray": use_gray, "entropy": use_entropy, "lg": use_lg}
    )
    n = len(kps)
    if n == 0:
        return MatchSet.empty(), stats

    if use_gray:
        clusters = gray_clusters(kps, gray, cp)
    else:
        clusters = [np.arange(n, dtype=np.int64)]

    if use_entropy:
        clusters = [
            sub for c in clusters for sub in entropy_clusters(c, kps, emap, cp)
        ]
    clusters = [c for c in clusters if c.size >= 2]
    stats.n_clusters = len(clusters)

    if use_lg:
        groups = [g for c in clusters for g in lexicographic_groups(c, kps.descriptors, gp)]
    else:
        groups = clusters

    per_group = [
        g2nn_match(g, kps, t_match=t_match, min_spatial=min_spatial, stats=stats)
        for g in groups
    ]
    return assemble_matches(per_group), stats


def matches_to_csv(matches: MatchSet, kps: KeypointSet, path: str | Path) -> None:
    """Debug dump: left_x, left_y, right_x, right_y per directed match."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["left_x", "left_y", "right_x", "right_y"])
        for l, r in matches.pairs:
            writer.writerow(
                [
                    f"{kps.xy[l, 0]:.4f}",
                    f"{kps.xy[l, 1]:.4f}",
                    f"{kps.xy[r, 0]:.4f}",
                    f"{kps.xy[r, 1]:.4f}",
                ]
            )
