"""Keypoint detection, descriptors, and the coverage-rate experiment."""

import numpy as np
import pytest

from cmfd.imaging import upscale
from cmfd.keypoints import (
    ImageTooSmallError,
    KeypointSet,
    coverage_rate,
    detect_keypoints,
    keypoints_to_csv,
)
from tests.conftest import ellipse_scene, make_keypoints


def gaussian_blob(size=64, center=(32, 32), sigma=4.0, amplitude=200.0):
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    cx, cy = center
    blob = amplitude * np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2 * sigma**2))
    return np.clip(blob + 20.0, 0, 255).astype(np.uint8)


class TestDetectKeypoints:
    def test_constant_image_empty(self):
        kps = detect_keypoints(np.full((64, 64), 90, np.uint8))
        assert len(kps) == 0

    def test_blob_localization(self):
        img = gaussian_blob(sigma=4.0)
        kps = detect_keypoints(img)
        assert len(kps) >= 1
        d = np.linalg.norm(kps.xy - np.array([32.0, 32.0]), axis=1)
        near = d < 2.0
        assert near.any()
        sigmas = kps.sigma[near]
        assert ((sigmas > 2.0) & (sigmas < 8.0)).any()

    def test_rotation_invariance(self):
        img = ellipse_scene(21, size=256, n_shapes=250, ax_hi=14)
        rot = np.rot90(img).copy()
        k0 = detect_keypoints(img)
        k90 = detect_keypoints(rot)
        assert len(k0) > 50
        assert abs(len(k0) - len(k90)) <= 0.10 * len(k0)
        # Nearest-descriptor distances between the two sets stay small.
        d0 = k0.descriptors.astype(np.float64)
        d90 = k90.descriptors.astype(np.float64)
        sub = d0[:: max(1, len(k0) // 200)]
        gram = sub @ d90.T
        dists = np.sqrt(np.clip(2.0 - 2.0 * gram.max(axis=1), 0.0, None))
        assert np.median(dists) < 0.3

    def test_descriptor_unit_norm(self, scene_256):
        kps = detect_keypoints(scene_256)
        norms = np.linalg.norm(kps.descriptors, axis=1)
        np.testing.assert_allclose(norms, 1.0, atol=1e-6)

    def test_lower_contrast_threshold_never_fewer(self, scene_256):
        high = detect_keypoints(scene_256, contrast_threshold=0.04)
        low = detect_keypoints(scene_256, contrast_threshold=0.0)
        assert len(low) >= len(high)

    def test_coordinates_in_bounds(self, scene_256):
        kps = detect_keypoints(scene_256)
        h, w = scene_256.shape
        assert (kps.xy[:, 0] >= 0).all() and (kps.xy[:, 0] < w).all()
        assert (kps.xy[:, 1] >= 0).all() and (kps.xy[:, 1] < h).all()
        assert (kps.sigma > 0).all()
        assert (kps.theta >= 0).all() and (kps.theta < 360).all()

    def test_deterministic(self, scene_256):
        a = detect_keypoints(scene_256)
        b = detect_keypoints(scene_256)
        np.testing.assert_array_equal(a.xy, b.xy)
        np.testing.assert_array_equal(a.sigma, b.sigma)
        np.testing.assert_array_equal(a.theta, b.theta)
        np.testing.assert_array_equal(a.descriptors, b.descriptors)

    def test_too_small_image(self):
        with pytest.raises(ImageTooSmallError):
            detect_keypoints(np.zeros((8, 8), np.uint8))

    def test_negative_contrast_rejected(self, scene_256):
        with pytest.raises(ValueError):
            detect_keypoints(scene_256, contrast_threshold=-0.1)

    def test_parallel_lengths(self, scene_256):
        kps = detect_keypoints(scene_256)
        n = len(kps)
        assert kps.xy.shape == (n, 2)
        assert kps.sigma.shape == (n,)
        assert kps.theta.shape == (n,)
        assert kps.descriptors.shape == (n, 128)


class TestCoverageRate:
    def test_empty_set_zero(self):
        assert coverage_rate(KeypointSet.empty(), (32, 32)) == 0.0

    def test_saturated(self):
        ys, xs = np.mgrid[0:32, 0:32]
        kps = make_keypoints(np.stack([xs.ravel(), ys.ravel()], axis=1))
        assert coverage_rate(kps, (32, 32), window=16, min_count=4) == 1.0

    def test_monotone_in_scale(self):
        img = ellipse_scene(33, size=128, n_shapes=120, ax_hi=12)
        rates = []
        for s in (1, 2, 4):
            up = upscale(img, s) if s > 1 else img
            kps = detect_keypoints(up, contrast_threshold=0.0)
            if s > 1 and len(kps):
                fx = (img.shape[1] - 1) / (up.shape[1] - 1)
                fy = (img.shape[0] - 1) / (up.shape[0] - 1)
                kps.xy = kps.xy * np.array([fx, fy], dtype=np.float32)
            rates.append(coverage_rate(kps, img.shape, window=16, min_count=4))
        assert rates[0] <= rates[1] <= rates[2]

    def test_in_unit_interval(self, scene_256):
        kps = detect_keypoints(scene_256)
        r = coverage_rate(kps, scene_256.shape)
        assert 0.0 <= r <= 1.0


class TestCsvDump:
    def test_round_trip_columns(self, tmp_path, scene_256):
        kps = detect_keypoints(scene_256)
        path = tmp_path / "kps.csv"
        keypoints_to_csv(kps, path)
        lines = path.read_text().strip().splitlines()
        assert lines[0].split(",") == ["x", "y", "sigma", "theta"]
        assert len(lines) == len(kps) + 1
