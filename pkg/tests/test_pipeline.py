"""Pipeline configuration handling and end-to-end determinism."""

import numpy as np
import pytest

from cmfd.pipeline import PipelineConfig, detect, detect_array
from tests.conftest import noise_texture


class TestConfig:
    def test_defaults(self):
        cfg = PipelineConfig()
        assert cfg.t_match == 0.5
        assert cfg.cluster.step1 == 40.0
        assert cfg.cluster.step2 == 10.0
        assert cfg.group.step5 == 500
        assert cfg.group.beta == 1.1
        assert cfg.ransac.t_in == 3.0
        assert cfg.localization.n_in == 20
        assert cfg.localization.r_sam == 64.0
        assert cfg.min_pixels == 1

    def test_from_dict_flat_keys(self):
        cfg = PipelineConfig.from_dict({"step1": 50, "t_in": 2.5, "n_in": 10})
        assert cfg.cluster.step1 == 50
        assert cfg.ransac.t_in == 2.5
        assert cfg.localization.n_in == 10

    def test_from_dict_nested_keys(self):
        cfg = PipelineConfig.from_dict(
            {"cluster": {"step1": 45}, "localization": {"r_sam": 32}}
        )
        assert cfg.cluster.step1 == 45
        assert cfg.localization.r_sam == 32

    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError, match="unknown config key"):
            PipelineConfig.from_dict({"no_such_option": 1})

    def test_unknown_nested_key_rejected(self):
        with pytest.raises(ValueError):
            PipelineConfig.from_dict({"cluster": {"bogus": 1}})

    def test_invalid_values_rejected(self):
        with pytest.raises(ValueError):
            PipelineConfig(min_pixels=0)
        with pytest.raises(ValueError):
            PipelineConfig(scale_override=3)
        with pytest.raises(ValueError):
            PipelineConfig(t_match=1.0)

    def test_round_trip(self):
        cfg = PipelineConfig.from_dict({"step5": 300, "rng_seed": 9})
        again = PipelineConfig.from_dict(cfg.to_dict())
        assert again == cfg


@pytest.fixture(scope="module")
def forged():
    img = noise_texture(77, size=192, cell=48)
    img[100:156, 110:166] = img[20:76, 20:76]
    return img


class TestDetect:
    def test_detects_copy_move(self, forged):
        res = detect_array(forged, PipelineConfig())
        assert res.decision is True
        assert res.mask.shape == forged.shape
        assert res.n_keypoints > 0
        assert res.n_matches >= 4
        assert res.accepted_models >= 1
        assert res.scale == 4

    def test_deterministic_end_to_end(self, forged):
        a = detect_array(forged, PipelineConfig())
        b = detect_array(forged, PipelineConfig())
        np.testing.assert_array_equal(a.mask, b.mask)
        assert a.summary()["decision"] == b.summary()["decision"]
        assert a.n_matches == b.n_matches

    def test_authentic_constant_image(self):
        img = np.full((128, 128), 200, np.uint8)
        res = detect_array(img, PipelineConfig())
        assert res.decision is False
        assert not res.mask.any()
        assert res.iterations == 0

    def test_scale_override(self, forged):
        res = detect_array(forged, PipelineConfig(scale_override=2))
        assert res.scale == 2

    def test_color_input(self, forged):
        color = np.stack([forged] * 3, axis=-1)
        res = detect_array(color, PipelineConfig())
        assert res.mask.shape == forged.shape

    def test_detect_from_file(self, forged, tmp_path):
        import cv2

        path = tmp_path / "img.png"
        cv2.imwrite(str(path), forged)
        res = detect(path, PipelineConfig())
        assert res.decision is True

    def test_summary_schema(self, forged):
        s = detect_array(forged, PipelineConfig()).summary()
        assert s["schema"] == 1
        for key in (
            "decision",
            "n_keypoints",
            "n_matches",
            "iterations",
            "accepted_models",
            "runtime_ms",
            "scale",
        ):
            assert key in s
