"""Metrics, dataset runner and synthetic forgery generation."""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from cmfd import imaging
from cmfd.pipeline import PipelineConfig, detect_array


@dataclass
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            self.tp + other.tp, self.fp + other.fp,
            self.fn + other.fn, self.tn + other.tn,
        )

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass
class MetricsReport:
    """TPR/FPR/F1; undefined ratios are None, never 0."""

    tpr: float | None
    fpr: float | None
    f1: float | None
    level: str  # "image" or "pixel"


def metrics_from_counts(c: ConfusionCounts, level: str) -> MetricsReport:
    tpr = c.tp / (c.tp + c.fn) if (c.tp + c.fn) > 0 else None
    fpr = c.fp / (c.tn + c.fp) if (c.tn + c.fp) > 0 else None
    f1 = 2 * c.tp / (2 * c.tp + c.fn + c.fp) if (2 * c.tp + c.fn + c.fp) > 0 else None
    return MetricsReport(tpr=tpr, fpr=fpr, f1=f1, level=level)


def pixel_confusion(predicted: np.ndarray, truth: np.ndarray) -> ConfusionCounts:
    """Per-pixel confusion tally of two equal-size boolean masks."""
    if predicted.shape != truth.shape:
        raise ValueError(f"shape mismatch: {predicted.shape} vs {truth.shape}")
    p = predicted.astype(bool)
    t = truth.astype(bool)
    return ConfusionCounts(
        tp=int(np.sum(p & t)),
        fp=int(np.sum(p & ~t)),
        fn=int(np.sum(~p & t)),
        tn=int(np.sum(~p & ~t)),
    )


def image_level_decision(mask: np.ndarray, min_pixels: int = 1) -> bool:
    """Tampered verdict: at least min_pixels marked pixels."""
    if min_pixels < 1:
        raise ValueError("min_pixels must be >= 1")
    return bool(np.count_nonzero(mask) >= min_pixels)


def aggregate_f_scores(per_image: list[ConfusionCounts]) -> tuple[float | None, float | None]:
    """(F-p, F-measure): F1 of summed counts, and mean of defined per-image F1."""
    if not per_image:
        raise ValueError("per_image must be non-empty")
    total = ConfusionCounts()
    for c in per_image:
        total = total + c
    f_p = metrics_from_counts(total, "pixel").f1
    per = [metrics_from_counts(c, "pixel").f1 for c in per_image]
    defined = [f for f in per if f is not None]
    f_measure = sum(defined) / len(defined) if defined else None
    return f_p, f_measure


@dataclass
class PostProcess:
    brightness: int | None = None           # additive gray delta
    contrast: tuple[float, float] | None = None  # remap (lo, hi) in [0, 1]
    color_levels: int | None = None          # quantize to N levels


@dataclass
class SyntheticForgerySpec:
    """Source rectangle plus per-copy similarity transforms.

    patch_rect: (x, y, w, h). Each copy is rotated/scaled about the patch
    center and translated; all transformed footprints must stay in bounds.
    """

    patch_rect: tuple[int, int, int, int]
    translations: list[tuple[float, float]] = field(default_factory=lambda: [(0.0, 0.0)])
    rotation_deg: float = 0.0
    scale: float = 1.0
    post_process: PostProcess | None = None

    @property
    def copies(self) -> int:
        return len(self.translations)


class ForgerySpecError(ValueError):
    """Transformed copy would land outside the image."""


def _copy_affine(spec: SyntheticForgerySpec, translation: tuple[float, float]) -> np.ndarray:
    x, y, w, h = spec.patch_rect
    cx, cy = x + (w - 1) / 2.0, y + (h - 1) / 2.0
    m = cv2.getRotationMatrix2D((cx, cy), -spec.rotation_deg, spec.scale)
    m[0, 2] += translation[0]
    m[1, 2] += translation[1]
    return m


def generate_forgery(
    source: np.ndarray, spec: SyntheticForgerySpec, rng_seed: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    """Paste transformed copies of a patch; returns (forged image, truth mask).

    The mask marks the source rectangle and every pasted footprint.
    Deterministic; rng_seed is accepted for interface stability.
    """
    del rng_seed
    img = source.copy()
    hh, ww = img.shape[:2]
    x, y, w, h = spec.patch_rect
    if x < 0 or y < 0 or x + w > ww or y + h > hh or w < 1 or h < 1:
        raise ForgerySpecError("patch rectangle out of bounds")

    patch_mask = np.zeros((hh, ww), dtype=np.float32)
    patch_mask[y : y + h, x : x + w] = 1.0
    truth = np.zeros((hh, ww), dtype=bool)
    truth[y : y + h, x : x + w] = True

    corners = np.array(
        [[x, y], [x + w - 1, y], [x, y + h - 1], [x + w - 1, y + h - 1]],
        dtype=np.float64,
    )
    out = img.astype(np.float32)
    for translation in spec.translations:
        m = _copy_affine(spec, translation)
        warped_corners = corners @ m[:, :2].T + m[:, 2]
        if (
            warped_corners.min() < -0.5
            or warped_corners[:, 0].max() > ww - 0.5
            or warped_corners[:, 1].max() > hh - 0.5
        ):
            raise ForgerySpecError(f"copy at {translation} lands out of bounds")
        warped = cv2.warpAffine(
            source.astype(np.float32), m, (ww, hh), flags=cv2.INTER_LINEAR
        )
        wmask = cv2.warpAffine(patch_mask, m, (ww, hh), flags=cv2.INTER_LINEAR)
        footprint = wmask >= 0.5
        if out.ndim == 3:
            out[footprint] = warped[footprint]
        else:
            out[footprint] = warped[footprint]
        truth |= footprint

    out8 = np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)
    if spec.post_process is not None:
        out8 = _apply_post(out8, spec.post_process)
    return out8, truth


def _apply_post(img: np.ndarray, post: PostProcess) -> np.ndarray:
    out = img.astype(np.float64)
    if post.brightness is not None:
        out = out + post.brightness
    if post.contrast is not None:
        lo, hi = post.contrast
        out = (out / 255.0 - lo) / (hi - lo)
        out = np.clip(out, 0.0, 1.0) * 255.0
    if post.color_levels is not None:
        levels = post.color_levels
        q = np.floor(np.clip(out, 0, 255) / 256.0 * levels)
        out = q * (255.0 / (levels - 1))
    return np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)


@dataclass
class ManifestEntry:
    image_path: str
    is_tampered: bool
    ground_truth_mask_path: str | None = None


def load_manifest(path: str | Path) -> list[ManifestEntry]:
    """Manifest: JSON array of {image_path, is_tampered, ground_truth_mask_path?}."""
    with open(path) as fh:
        data = json.load(fh)
    if not isinstance(data, list):
        raise ValueError("manifest must be a JSON array")
    entries = []
    for i, row in enumerate(data):
        if not isinstance(row, dict) or "image_path" not in row or "is_tampered" not in row:
            raise ValueError(f"manifest entry {i} missing required fields")
        entry = ManifestEntry(
            image_path=row["image_path"],
            is_tampered=bool(row["is_tampered"]),
            ground_truth_mask_path=row.get("ground_truth_mask_path"),
        )
        if entry.is_tampered and not entry.ground_truth_mask_path:
            raise ValueError(f"tampered entry {i} must carry a mask path")
        if not entry.is_tampered and entry.ground_truth_mask_path:
            raise ValueError(f"authentic entry {i} must not carry a mask path")
        entries.append(entry)
    return entries


def load_truth_mask(path: str | Path) -> np.ndarray:
    """Ground-truth mask as boolean; nonzero gray = tampered."""
    arr = imaging.load_image(path)
    return imaging.to_gray(arr) > 0


@dataclass
class DatasetRow:
    image_path: str
    is_tampered: bool
    decision: bool | None
    confusion: ConfusionCounts | None
    f1: float | None
    runtime_ms: float
    error: str = ""


@dataclass
class DatasetReport:
    rows: list[DatasetRow]
    image_metrics: MetricsReport | None
    f_p: float | None
    f_measure: float | None
    n_errors: int
    config_used: dict


def run_dataset(
    entries: list[ManifestEntry], config: PipelineConfig | None = None
) -> DatasetReport:
    """Run the pipeline over a manifest; per-entry errors don't stop the run."""
    config = config or PipelineConfig()
    rows: list[DatasetRow] = []
    image_counts = ConfusionCounts()
    pixel_per_image: list[ConfusionCounts] = []
    tampered_pixel_counts: list[ConfusionCounts] = []

    for entry in entries:
        t0 = time.perf_counter()
        try:
            result = detect_array(imaging.load_image(entry.image_path), config)
            decision = bool(np.count_nonzero(result.mask) >= config.min_pixels)
            confusion = None
            f1 = None
            if entry.is_tampered:
                truth = load_truth_mask(entry.ground_truth_mask_path)
                confusion = pixel_confusion(result.mask, truth)
                f1 = metrics_from_counts(confusion, "pixel").f1
                pixel_per_image.append(confusion)
                tampered_pixel_counts.append(confusion)
                if decision:
                    image_counts.tp += 1
                else:
                    image_counts.fn += 1
            else:
                if decision:
                    image_counts.fp += 1
                else:
                    image_counts.tn += 1
            rows.append(
                DatasetRow(
                    entry.image_path, entry.is_tampered, decision, confusion, f1,
                    (time.perf_counter() - t0) * 1000.0,
                )
            )
        except Exception as exc:  # per-entry failure is recorded, not fatal
            rows.append(
                DatasetRow(
                    entry.image_path, entry.is_tampered, None, None, None,
                    (time.perf_counter() - t0) * 1000.0, error=str(exc),
                )
            )

    image_metrics = metrics_from_counts(image_counts, "image") if rows else None
    if tampered_pixel_counts:
        f_p, f_measure = aggregate_f_scores(tampered_pixel_counts)
    else:
        f_p, f_measure = None, None
    return DatasetReport(
        rows=rows,
        image_metrics=image_metrics,
        f_p=f_p,
        f_measure=f_measure,
        n_errors=sum(1 for r in rows if r.error),
        config_used=config.to_dict(),
    )


def write_report_csv(report: DatasetReport, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["image_path", "is_tampered", "decision", "tp", "fp", "fn", "tn",
             "f1", "runtime_ms", "error"]
        )
        for r in report.rows:
            c = r.confusion
            writer.writerow(
                [
                    r.image_path,
                    int(r.is_tampered),
                    "" if r.decision is None else int(r.decision),
                    c.tp if c else "",
                    c.fp if c else "",
                    c.fn if c else "",
                    c.tn if c else "",
                    f"{r.f1:.4f}" if r.f1 is not None else "",
                    f"{r.runtime_ms:.1f}",
                    r.error,
                ]
            )


def write_report_json(report: DatasetReport, path: str | Path) -> None:
    im = report.image_metrics
    payload = {
        "schema": 1,
        "n_images": len(report.rows),
        "n_errors": report.n_errors,
        "image_level": {
            "tpr": im.tpr if im else None,
            "fpr": im.fpr if im else None,
            "f_i": im.f1 if im else None,
        },
        "pixel_level": {"f_p": report.f_p, "f_measure": report.f_measure},
        "config": report.config_used,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, default=_json_default)


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    raise TypeError(f"not JSON serializable: {type(obj)}")
