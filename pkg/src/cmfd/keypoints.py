"""Scale-space keypoint detection with the excessive keypoint strategy.

Detection runs SIFT with a configurable (default zero) contrast threshold
on the upscaled grayscale image, so even smooth areas contribute
keypoints. Descriptors are L2-normalized.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

MIN_IMAGE_SIDE = 16
DEFAULT_EDGE_THRESHOLD = 10.0
DEFAULT_CONTRAST_THRESHOLD = 0.0

COVERAGE_WINDOW = 16
COVERAGE_MIN_COUNT = 4


class ImageTooSmallError(ValueError):
    """Input smaller than one scale-space octave."""


@dataclass
class KeypointSet:
    """Parallel arrays of keypoints and descriptors.

    xy: (n, 2) float32 sub-pixel coordinates (x, y) in image coordinates.
    sigma: (n,) float32 scale in pixels.
    theta: (n,) float32 dominant orientation in degrees [0, 360).
    descriptors: (n, 128) float32, each row unit L2 norm.
    """

    xy: np.ndarray
    sigma: np.ndarray
    theta: np.ndarray
    descriptors: np.ndarray

    def __len__(self) -> int:
        return self.xy.shape[0]

    @staticmethod
    def empty() -> "KeypointSet":
        return KeypointSet(
            xy=np.zeros((0, 2), np.float32),
            sigma=np.zeros((0,), np.float32),
            theta=np.zeros((0,), np.float32),
            descriptors=np.zeros((0, 128), np.float32),
        )


def detect_keypoints(
    gray: np.ndarray,
    contrast_threshold: float = DEFAULT_CONTRAST_THRESHOLD,
    edge_threshold: float = DEFAULT_EDGE_THRESHOLD,
) -> KeypointSet:
    """DoG extrema with sub-pixel refinement, one entry per orientation peak.

    Deterministic: results are sorted by (sigma, y, x, theta).
    """
    if gray.ndim != 2:
        raise ValueError("expected a single-channel image")
    h, w = gray.shape
    if min(h, w) < MIN_IMAGE_SIDE:
        raise ImageTooSmallError(f"image {h}x{w} smaller than {MIN_IMAGE_SIDE} px")
    if contrast_threshold < 0:
        raise ValueError("contrast_threshold must be >= 0")

    sift = cv2.SIFT_create(
        nfeatures=0,
        nOctaveLayers=3,
        contrastThreshold=float(contrast_threshold),
        edgeThreshold=float(edge_threshold),
        sigma=1.6,
    )
    kps, desc = sift.detectAndCompute(gray, None)
    if not kps:
        return KeypointSet.empty()

    xy = np.array([kp.pt for kp in kps], dtype=np.float32)
    sigma = np.array([kp.size / 2.0 for kp in kps], dtype=np.float32)
    theta = np.array([kp.angle % 360.0 for kp in kps], dtype=np.float32)
    desc = desc.astype(np.float32)
    norms = np.linalg.norm(desc, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    desc = desc / norms

    # Enforce strictly in-bounds coordinates and positive scale.
    keep = (
        (xy[:, 0] >= 0)
        & (xy[:, 0] < w)
        & (xy[:, 1] >= 0)
        & (xy[:, 1] < h)
        & (sigma > 0)
    )
    xy, sigma, theta, desc = xy[keep], sigma[keep], theta[keep], desc[keep]

    order = np.lexsort((theta, xy[:, 0], xy[:, 1], sigma))
    return KeypointSet(
        xy=np.ascontiguousarray(xy[order]),
        sigma=np.ascontiguousarray(sigma[order]),
        theta=np.ascontiguousarray(theta[order]),
        descriptors=np.ascontiguousarray(desc[order]),
    )


def coverage_rate(
    kps: KeypointSet,
    img_dims: tuple[int, int],
    window: int = COVERAGE_WINDOW,
    min_count: int = COVERAGE_MIN_COUNT,
) -> float:
    """Fraction of pixels whose centered window holds >= min_count keypoints.

    Windows are clipped at the image borders. img_dims is (h, w).
    """
    h, w = img_dims
    if len(kps) == 0:
        return 0.0
    counts = np.zeros((h, w), dtype=np.float32)
    xs = np.clip(np.round(kps.xy[:, 0]).astype(np.int64), 0, w - 1)
    ys = np.clip(np.round(kps.xy[:, 1]).astype(np.int64), 0, h - 1)
    np.add.at(counts, (ys, xs), 1.0)
    sums = cv2.boxFilter(
        counts,
        cv2.CV_32F,
        (window, window),
        normalize=False,
        borderType=cv2.BORDER_CONSTANT,
    )
    return float(np.mean(sums >= min_count - 0.5))


def keypoints_to_csv(kps: KeypointSet, path: str | Path) -> None:
    """Debug dump: one row per keypoint with columns x,y,sigma,theta."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "sigma", "theta"])
        for i in range(len(kps)):
            writer.writerow(
                [
                    f"{kps.xy[i, 0]:.4f}",
                    f"{kps.xy[i, 1]:.4f}",
                    f"{kps.sigma[i]:.4f}",
                    f"{kps.theta[i]:.4f}",
                ]
            )
