"""Image ingestion, grayscale conversion, upsampling and local entropy."""

from __future__ import annotations

import enum
from pathlib import Path

import cv2
import numpy as np
from PIL import Image, UnidentifiedImageError

# BT.601 luma weights.
LUMA_WEIGHTS = (0.299, 0.587, 0.114)

DEFAULT_ENTROPY_WINDOW = 9

# Post-upscale pixel budget guarding against pathological inputs.
DEFAULT_MAX_PIXELS = 64 * 1024 * 1024


class ImageFormatError(ValueError):
    """The file is not a decodable raster image."""


class PixelBudgetError(RuntimeError):
    """Upscaled output would exceed the configured pixel budget."""


class ResolutionClass(enum.Enum):
    SMALL = "small"
    MEDIUM = "medium"
    LARGE = "large"


def load_image(path: str | Path) -> np.ndarray:
    """Decode a raster file to an 8-bit array of shape (h, w) or (h, w, 3).

    16-bit sources are rescaled to 8-bit. Raises OSError for unreadable
    paths and ImageFormatError for undecodable content.
    """
    path = Path(path)
    if not path.exists():
        raise OSError(f"no such file: {path}")
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode in ("I", "I;16", "I;16B", "I;16L"):
                arr16 = np.asarray(im, dtype=np.float64)
                arr = np.clip(np.floor(arr16 / 257.0 + 0.5), 0, 255).astype(np.uint8)
                return arr
            if im.mode == "L":
                return np.asarray(im, dtype=np.uint8)
            if im.mode != "RGB":
                im = im.convert("RGB")
            return np.asarray(im, dtype=np.uint8)
    except UnidentifiedImageError as exc:
        raise ImageFormatError(f"unsupported or corrupt image: {path}") from exc
    except OSError as exc:
        # PIL raises OSError for truncated files during load().
        raise ImageFormatError(f"corrupt image data: {path}") from exc


def to_gray(img: np.ndarray) -> np.ndarray:
    """BT.601 luma conversion, rounded to nearest integer.

    1-channel input passes through unchanged.
    """
    if img.ndim == 2:
        return img
    if img.ndim == 3 and img.shape[2] == 1:
        return img[:, :, 0]
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected 1 or 3 channels, got shape {img.shape}")
    r, g, b = (img[:, :, i].astype(np.float64) for i in range(3))
    luma = LUMA_WEIGHTS[0] * r + LUMA_WEIGHTS[1] * g + LUMA_WEIGHTS[2] * b
    return np.clip(np.floor(luma + 0.5), 0, 255).astype(np.uint8)


def scaling_factor(h: int, w: int) -> int:
    """Upsampling factor: 4 for low-resolution inputs, 2 otherwise."""
    if h < 1 or w < 1:
        raise ValueError("dimensions must be positive")
    return 4 if (h + w) / 2 < 1024 else 2


def resolution_class(h: int, w: int) -> ResolutionClass:
    m = max(h, w)
    if m < 1024:
        return ResolutionClass.SMALL
    if m < 2048:
        return ResolutionClass.MEDIUM
    return ResolutionClass.LARGE


def _resize_align_corners(gray: np.ndarray, s: int) -> np.ndarray:
    """Bicubic upscale by integer factor s with corner-aligned sampling.

    Output pixel (i, j) samples the source at
    (i*(h-1)/(s*h-1), j*(w-1)/(s*w-1)), so the four output corners
    reproduce the source corners exactly.
    """
    h, w = gray.shape
    oh, ow = s * h, s * w
    xs = np.arange(ow, dtype=np.float32) * ((w - 1) / (ow - 1)) if ow > 1 else np.zeros(ow, np.float32)
    ys = np.arange(oh, dtype=np.float32) * ((h - 1) / (oh - 1)) if oh > 1 else np.zeros(oh, np.float32)
    map_x, map_y = np.meshgrid(xs, ys)
    out = cv2.remap(
        gray.astype(np.float32),
        map_x,
        map_y,
        interpolation=cv2.INTER_CUBIC,
        borderMode=cv2.BORDER_REPLICATE,
    )
    return np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)


def upscale(gray: np.ndarray, s: int, max_pixels: int = DEFAULT_MAX_PIXELS) -> np.ndarray:
    """Bicubic upscale of a grayscale image by factor s in {2, 4}."""
    if s not in (2, 4):
        raise ValueError(f"scaling factor must be 2 or 4, got {s}")
    h, w = gray.shape
    if s * h * s * w > max_pixels:
        raise PixelBudgetError(
            f"upscaled size {s * h}x{s * w} exceeds budget of {max_pixels} pixels"
        )
    return _resize_align_corners(gray, s)


try:
    from numba import njit

    @njit(cache=True)
    def _entropy_rows(padded, h, w, window, clog):  # pragma: no cover - jit
        out = np.empty((h, w), dtype=np.float64)
        n = float(window * window)
        log_n = np.log2(n)
        hist = np.zeros(256, dtype=np.int64)
        for i in range(h):
            hist[:] = 0
            acc = 0.0
            for dy in range(window):
                for dx in range(window):
                    v = padded[i + dy, dx]
                    acc += clog[hist[v] + 1] - clog[hist[v]]
                    hist[v] += 1
            out[i, 0] = log_n - acc / n
            for j in range(1, w):
                for dy in range(window):
                    v = padded[i + dy, j - 1]
                    acc += clog[hist[v] - 1] - clog[hist[v]]
                    hist[v] -= 1
                    u = padded[i + dy, j + window - 1]
                    acc += clog[hist[u] + 1] - clog[hist[u]]
                    hist[u] += 1
                out[i, j] = log_n - acc / n
        return out

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _HAVE_NUMBA = False


def _entropy_map_boxfilter(padded: np.ndarray, h: int, w: int, window: int) -> np.ndarray:
    r = window // 2
    n = float(window * window)
    acc = np.zeros((h, w), dtype=np.float64)
    for level in np.unique(padded):
        mask = (padded == level).astype(np.float32)
        counts = cv2.boxFilter(mask, cv2.CV_32F, (window, window), normalize=False)
        counts = counts[r : r + h, r : r + w].astype(np.float64)
        counts = np.clip(np.floor(counts + 0.5), 0, n)
        nz = counts > 0
        acc[nz] += counts[nz] * np.log2(counts[nz])
    return np.log2(n) - acc / n


def entropy_map(gray: np.ndarray, window: int = DEFAULT_ENTROPY_WINDOW) -> np.ndarray:
    """Shannon entropy (bits) of the gray histogram in a window at each pixel.

    E = -sum_i P_i log2 P_i over the window's gray histogram; borders use
    symmetric padding, so every value stays in [0, log2(window^2)].
    """
    if window % 2 != 1 or window < 1:
        raise ValueError(f"window must be odd and positive, got {window}")
    h, w = gray.shape
    r = window // 2
    padded = np.pad(gray, r, mode="symmetric")
    if _HAVE_NUMBA:
        counts = np.arange(window * window + 1, dtype=np.float64)
        clog = np.zeros_like(counts)
        clog[1:] = counts[1:] * np.log2(counts[1:])
        ent = _entropy_rows(np.ascontiguousarray(padded), h, w, window, clog)
    else:
        ent = _entropy_map_boxfilter(padded, h, w, window)
    return np.clip(ent, 0.0, np.log2(float(window * window))).astype(np.float32)
