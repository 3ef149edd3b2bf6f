"""Command-line entry points.

Exit codes: 0 success, 2 usage/input error, 1 internal failure.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from cmfd import evaluation, imaging, keypoints, localization
from cmfd.pipeline import PipelineConfig, detect_array

ABLATABLE = {"gray", "entropy", "lg"}


class InputError(click.ClickException):
    exit_code = 2


def _load_config(
    config_path: str | None,
    seed: int | None,
    scale_override: int | None,
    min_pixels: int | None,
    ablate: str | None,
) -> PipelineConfig:
    """Precedence: defaults < config file < command-line flags."""
    data: dict = {}
    if config_path:
        try:
            with open(config_path) as fh:
                data = json.load(fh)
        except OSError as exc:
            raise InputError(f"cannot read config: {exc}")
        except json.JSONDecodeError as exc:
            raise InputError(f"malformed config file: {exc}")
    if seed is not None:
        data["rng_seed"] = seed
    if scale_override is not None:
        data["scale_override"] = scale_override
    if min_pixels is not None:
        data["min_pixels"] = min_pixels
    if ablate:
        stages = {s.strip() for s in ablate.split(",") if s.strip()}
        unknown = stages - ABLATABLE
        if unknown:
            raise InputError(f"unknown ablation stages: {sorted(unknown)}")
        if "gray" in stages:
            data["use_gray_clustering"] = False
        if "entropy" in stages:
            data["use_entropy_clustering"] = False
        if "lg" in stages:
            data["use_lexicographic_grouping"] = False
    try:
        return PipelineConfig.from_dict(data)
    except (ValueError, TypeError) as exc:
        raise InputError(f"invalid configuration: {exc}")


config_options = [
    click.option("--config", "config_path", type=str, default=None, help="JSON config file."),
    click.option("--seed", type=int, default=None, help="Pipeline RNG seed."),
    click.option("--scale-override", type=int, default=None, help="Force upscale factor (1, 2 or 4)."),
    click.option("--min-pixels", type=int, default=None, help="Image-level decision threshold."),
    click.option("--ablate", type=str, default=None, help="Comma list of matching stages to disable: gray,entropy,lg."),
]


def _with_config_options(f):
    for opt in reversed(config_options):
        f = opt(f)
    return f


@click.group()
def main() -> None:
    """Copy-move forgery detection and localization."""


@main.command()
@click.argument("image_path", type=str)
@click.option("--mask-out", type=str, default=None, help="Output mask PNG path.")
@click.option("--trace-out", type=str, default=None, help="Per-iteration trace JSONL path.")
@click.option("--summary-out", type=str, default=None, help="Write the JSON summary to a file as well.")
@_with_config_options
def detect(image_path, mask_out, trace_out, summary_out, config_path, seed,
           scale_override, min_pixels, ablate) -> None:
    """Detect copy-move forgery in a single image."""
    config = _load_config(config_path, seed, scale_override, min_pixels, ablate)
    try:
        img = imaging.load_image(image_path)
    except (OSError, imaging.ImageFormatError) as exc:
        raise InputError(str(exc))
    result = detect_array(img, config)
    mask_path = Path(mask_out) if mask_out else Path(image_path).with_suffix("").with_name(
        Path(image_path).stem + "_mask.png"
    )
    localization.write_mask_png(result.mask, mask_path)
    if trace_out:
        localization.traces_to_jsonl(result.traces, trace_out)
    summary = result.summary()
    summary["mask_path"] = str(mask_path)
    payload = json.dumps(summary, indent=2)
    click.echo(payload)
    if summary_out:
        Path(summary_out).write_text(payload + "\n")


@main.command(name="eval")
@click.argument("manifest_path", type=str)
@click.option("--out-dir", type=str, default=".", help="Directory for report files.")
@_with_config_options
def eval_cmd(manifest_path, out_dir, config_path, seed, scale_override,
             min_pixels, ablate) -> None:
    """Evaluate the pipeline over a dataset manifest."""
    config = _load_config(config_path, seed, scale_override, min_pixels, ablate)
    try:
        entries = evaluation.load_manifest(manifest_path)
    except (OSError, ValueError) as exc:
        raise InputError(f"manifest error: {exc}")
    report = evaluation.run_dataset(entries, config)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    evaluation.write_report_csv(report, out / "report.csv")
    evaluation.write_report_json(report, out / "report.json")
    im = report.image_metrics
    click.echo(
        json.dumps(
            {
                "n_images": len(report.rows),
                "n_errors": report.n_errors,
                "tpr": im.tpr if im else None,
                "fpr": im.fpr if im else None,
                "f_i": im.f1 if im else None,
                "f_p": report.f_p,
                "f_measure": report.f_measure,
            },
            indent=2,
        )
    )


@main.command()
@click.argument("image_path", type=str)
@click.option("--scales", type=str, default="1,2,4", help="Comma list of integer scales.")
@click.option("--window", type=int, default=16)
@click.option("--min-count", type=int, default=4)
def coverage(image_path, scales, window, min_count) -> None:
    """Keypoint coverage rate per upscale factor."""
    try:
        scale_list = [int(s) for s in scales.split(",") if s.strip()]
    except ValueError:
        raise InputError(f"scales must be integers: {scales}")
    if not scale_list or any(s < 1 for s in scale_list):
        raise InputError("scales must be positive integers")
    try:
        gray = imaging.to_gray(imaging.load_image(image_path))
    except (OSError, imaging.ImageFormatError) as exc:
        raise InputError(str(exc))
    click.echo("scale\tkeypoints\tcoverage")
    for s in scale_list:
        up = gray if s == 1 else imaging._resize_align_corners(gray, s)
        try:
            kps = keypoints.detect_keypoints(up)
        except keypoints.ImageTooSmallError as exc:
            raise InputError(str(exc))
        # Coverage is compared across scales on the ORIGINAL pixel grid,
        # so detected coordinates are mapped back before counting.
        if s > 1 and len(kps):
            fx = (gray.shape[1] - 1) / (up.shape[1] - 1)
            fy = (gray.shape[0] - 1) / (up.shape[0] - 1)
            kps.xy = kps.xy * np.array([fx, fy], dtype=np.float32)
        rate = keypoints.coverage_rate(kps, gray.shape, window=window, min_count=min_count)
        click.echo(f"{s}\t{len(kps)}\t{rate:.4f}")


@main.command()
@click.argument("source_path", type=str)
@click.argument("out_image", type=str)
@click.argument("out_mask", type=str)
@click.option("--patch", type=str, required=True, help="Source rect x,y,w,h.")
@click.option("--translate", "translations", type=str, multiple=True, required=True,
              help="dx,dy per copy (repeatable for one-to-many).")
@click.option("--rotate", type=float, default=0.0, help="Rotation in degrees.")
@click.option("--scale", type=float, default=1.0, help="Scale factor.")
@click.option("--brightness", type=int, default=None)
@click.option("--seed", type=int, default=0)
def generate(source_path, out_image, out_mask, patch, translations, rotate,
             scale, brightness, seed) -> None:
    """Create a synthetic copy-move forgery with its ground-truth mask."""
    try:
        rect = tuple(int(v) for v in patch.split(","))
        offsets = [tuple(float(v) for v in t.split(",")) for t in translations]
        if len(rect) != 4 or any(len(o) != 2 for o in offsets):
            raise ValueError
    except ValueError:
        raise InputError("bad --patch or --translate format")
    try:
        source = imaging.load_image(source_path)
    except (OSError, imaging.ImageFormatError) as exc:
        raise InputError(str(exc))
    post = evaluation.PostProcess(brightness=brightness) if brightness is not None else None
    spec = evaluation.SyntheticForgerySpec(
        patch_rect=rect, translations=offsets, rotation_deg=rotate, scale=scale,
        post_process=post,
    )
    try:
        forged, truth = evaluation.generate_forgery(source, spec, rng_seed=seed)
    except evaluation.ForgerySpecError as exc:
        raise InputError(str(exc))
    import cv2

    if forged.ndim == 3:
        cv2.imwrite(out_image, cv2.cvtColor(forged, cv2.COLOR_RGB2BGR))
    else:
        cv2.imwrite(out_image, forged)
    localization.write_mask_png(truth, out_mask)
    click.echo(json.dumps({"image": out_image, "mask": out_mask,
                           "tampered_pixels": int(truth.sum())}))


def run() -> None:
    try:
        main(standalone_mode=True)
    except Exception as exc:  # pragma: no cover - internal failure path
        click.echo(f"internal error: {exc}", err=True)
        sys.exit(1)


if __name__ == "__main__":
    run()
