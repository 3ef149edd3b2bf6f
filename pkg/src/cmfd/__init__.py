"""Copy-move forgery detection and localization.

Pipeline: excessive keypoint extraction (upsampling + zero-contrast SIFT),
fast group matching (grayscale-entropy clustering, lexicographic grouping,
in-group G2NN), and iterative homography-based localization with robust
grayscale verification.
"""

from cmfd.pipeline import PipelineConfig, DetectionResult, detect

__all__ = ["PipelineConfig", "DetectionResult", "detect"]
