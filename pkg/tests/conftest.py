"""Shared deterministic fixtures for the test suite.

All synthetic imagery is seeded so every test run sees byte-identical
inputs. Two families of images are used:

* noise_texture: hard high-frequency texture (upsampled integer noise),
  dense in corners — ideal for translation-only copy-move fixtures.
* ellipse_scene: random filled ellipses over a flat background plus mild
  sensor noise — closer to natural-image statistics, which the detector
  needs for rotation/scale robustness fixtures.
"""

from __future__ import annotations

import cv2
import numpy as np
import pytest

from cmfd.keypoints import KeypointSet


def noise_texture(seed: int, size: int = 512, cell: int = 64) -> np.ndarray:
    rng = np.random.default_rng(seed)
    base = rng.integers(0, 256, (cell, cell)).astype(np.uint8)
    return cv2.resize(base, (size, size), interpolation=cv2.INTER_CUBIC)


def ellipse_scene(
    seed: int,
    size: int = 512,
    n_shapes: int = 500,
    ax_lo: int = 2,
    ax_hi: int = 18,
    noise_sigma: float = 3.0,
) -> np.ndarray:
    rng = np.random.default_rng(seed)
    img = np.full((size, size), int(rng.integers(80, 180)), np.uint8)
    for _ in range(n_shapes):
        cx, cy = rng.integers(0, size, 2)
        ax, ay = rng.integers(ax_lo, ax_hi, 2)
        ang = rng.integers(0, 180)
        val = int(rng.integers(0, 256))
        cv2.ellipse(
            img, (int(cx), int(cy)), (int(ax), int(ay)), int(ang), 0, 360, val, -1
        )
    noise = rng.normal(0.0, noise_sigma, (size, size))
    return np.clip(img.astype(np.float64) + noise, 0, 255).astype(np.uint8)


def make_keypoints(
    xy,
    sigma=None,
    theta=None,
    descriptors=None,
) -> KeypointSet:
    """Build a KeypointSet from plain arrays, filling defaults."""
    xy = np.asarray(xy, dtype=np.float32).reshape(-1, 2)
    n = xy.shape[0]
    if sigma is None:
        sigma = np.full(n, 2.0, np.float32)
    else:
        sigma = np.broadcast_to(np.asarray(sigma, np.float32), (n,)).copy()
    if theta is None:
        theta = np.zeros(n, np.float32)
    else:
        theta = np.broadcast_to(np.asarray(theta, np.float32), (n,)).copy()
    if descriptors is None:
        descriptors = np.zeros((n, 128), np.float32)
        descriptors[:, 0] = 1.0
    else:
        descriptors = np.asarray(descriptors, np.float32).reshape(n, -1)
    return KeypointSet(xy=xy, sigma=sigma, theta=theta, descriptors=descriptors)


def unit_descriptors(rng: np.random.Generator, n: int, dim: int = 128) -> np.ndarray:
    """Random non-negative unit-norm descriptor rows (SIFT-like)."""
    d = rng.random((n, dim)).astype(np.float32)
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return d


@pytest.fixture(scope="session")
def textured_512() -> np.ndarray:
    return noise_texture(7, 512)


@pytest.fixture(scope="session")
def scene_256() -> np.ndarray:
    return ellipse_scene(3, size=256, n_shapes=250, ax_hi=14)
