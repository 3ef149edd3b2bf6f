"""End-to-end detection pipeline and its configuration."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from cmfd import imaging, keypoints, localization, matching
from cmfd.geometry import RansacParams
from cmfd.localization import IterationTrace, LocalizationParams
from cmfd.matching import ClusterParams, GroupParams


@dataclass
class PipelineConfig:
    """All tunables of the detection pipeline, with paper defaults."""

    contrast_threshold: float = 0.0
    edge_threshold: float = 10.0
    entropy_window: int = 9
    cluster: ClusterParams = field(default_factory=ClusterParams)
    group: GroupParams = field(default_factory=GroupParams)
    t_match: float = 0.5
    min_spatial: float = 10.0
    ransac: RansacParams = field(default_factory=RansacParams)
    localization: LocalizationParams = field(default_factory=LocalizationParams)
    min_pixels: int = 1
    rng_seed: int = 0
    scale_override: int | None = None   # force s in {1, 2, 4}
    max_pixels: int = imaging.DEFAULT_MAX_PIXELS
    use_gray_clustering: bool = True
    use_entropy_clustering: bool = True
    use_lexicographic_grouping: bool = True

    def __post_init__(self) -> None:
        if self.min_pixels < 1:
            raise ValueError("min_pixels must be >= 1")
        if self.scale_override is not None and self.scale_override not in (1, 2, 4):
            raise ValueError("scale_override must be 1, 2 or 4")
        if not (0.0 < self.t_match < 1.0):
            raise ValueError("t_match must be in (0, 1)")

    _NESTED = {
        "cluster": ClusterParams,
        "group": GroupParams,
        "ransac": RansacParams,
        "localization": LocalizationParams,
    }

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        """Build a config from a flat or nested mapping; unknown keys fail."""
        base = cls()
        kwargs: dict = {}
        flat_owner = {
            f: (name, typ)
            for name, typ in cls._NESTED.items()
            for f in typ.__dataclass_fields__
        }
        nested_updates: dict[str, dict] = {}
        for key, value in data.items():
            if key in cls._NESTED:
                if not isinstance(value, dict):
                    raise ValueError(f"config section '{key}' must be a mapping")
                typ = cls._NESTED[key]
                unknown = set(value) - set(typ.__dataclass_fields__)
                if unknown:
                    raise ValueError(f"unknown config keys in '{key}': {sorted(unknown)}")
                nested_updates.setdefault(key, {}).update(value)
            elif key in cls.__dataclass_fields__:
                kwargs[key] = value
            elif key in flat_owner:
                name, _ = flat_owner[key]
                nested_updates.setdefault(name, {})[key] = value
            else:
                raise ValueError(f"unknown config key: '{key}'")
        for name, updates in nested_updates.items():
            kwargs[name] = replace(getattr(base, name), **updates)
        return cls(**{**{k: v for k, v in kwargs.items()}})

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class DetectionResult:
    mask: np.ndarray                 # boolean, original resolution
    decision: bool
    n_keypoints: int
    n_matches: int
    iterations: int
    accepted_models: int
    runtime_ms: float
    scale: int
    traces: list[IterationTrace]
    comparisons: int

    def summary(self) -> dict:
        return {
            "schema": 1,
            "decision": bool(self.decision),
            "n_keypoints": self.n_keypoints,
            "n_matches": self.n_matches,
            "iterations": self.iterations,
            "accepted_models": self.accepted_models,
            "runtime_ms": round(self.runtime_ms, 1),
            "scale": self.scale,
        }


def detect_array(img: np.ndarray, config: PipelineConfig | None = None) -> DetectionResult:
    """Run the full pipeline on a decoded image array."""
    config = config or PipelineConfig()
    t0 = time.perf_counter()
    gray = imaging.to_gray(img)
    h0, w0 = gray.shape

    s = config.scale_override or imaging.scaling_factor(h0, w0)
    gray_up = gray if s == 1 else imaging.upscale(gray, s, max_pixels=config.max_pixels)

    kps = keypoints.detect_keypoints(
        gray_up,
        contrast_threshold=config.contrast_threshold,
        edge_threshold=config.edge_threshold,
    )

    if len(kps) == 0:
        mask = np.zeros((h0, w0), dtype=bool)
        return DetectionResult(
            mask, False, 0, 0, 0, 0,
            (time.perf_counter() - t0) * 1000.0, s, [], 0,
        )

    emap = imaging.entropy_map(gray_up, window=config.entropy_window)
    matches, stats = matching.match_pipeline(
        kps,
        gray_up,
        emap,
        cp=config.cluster,
        gp=config.group,
        t_match=config.t_match,
        min_spatial=config.min_spatial,
        use_gray=config.use_gray_clustering,
        use_entropy=config.use_entropy_clustering,
        use_lg=config.use_lexicographic_grouping,
    )

    mask, traces = localization.localize(
        matches,
        kps,
        gray_up,
        geo=config.ransac,
        p=config.localization,
        s=s,
        original_dims=(h0, w0),
        rng_seed=config.rng_seed,
    )
    decision = bool(mask.sum() >= config.min_pixels)
    return DetectionResult(
        mask=mask,
        decision=decision,
        n_keypoints=len(kps),
        n_matches=len(matches),
        iterations=len(traces),
        accepted_models=sum(1 for t in traces if t.accepted),
        runtime_ms=(time.perf_counter() - t0) * 1000.0,
        scale=s,
        traces=traces,
        comparisons=stats.comparisons,
    )


def detect(path: str | Path, config: PipelineConfig | None = None) -> DetectionResult:
    """Load an image file and run the full pipeline on it."""
    return detect_array(imaging.load_image(path), config)
