import importlib.util
import json
import warnings

import cv2
import numpy as np
import pytest

from phaseseg.feature_store import interpolate_to_full_rate, read_cache

from vidfeat.cli import main as cli_main
from vidfeat.extract import ExtractorConfig, extract_video
from vidfeat.registry import ENCODERS, encoder_spec
from vidfeat.video import DecodeError, load_frames, preprocess

HAS_TORCH = importlib.util.find_spec("torch") is not None


def write_frame_dir(path, frames=30, size=80, seed=0, constant=None):
    path.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    for i in range(frames):
        if constant is not None:
            image = np.full((size, size, 3), constant, dtype=np.uint8)
        else:
            image = rng.integers(0, 256, size=(size, size, 3), dtype=np.uint8)
        cv2.imwrite(str(path / f"frame_{i:05d}.png"), image)
    return path


def try_write_video(path, frames=30, size=64):
    writer = cv2.VideoWriter(str(path), cv2.VideoWriter_fourcc(*"MJPG"), 10, (size, size))
    if not writer.isOpened():
        return None
    rng = np.random.default_rng(1)
    for _ in range(frames):
        writer.write(rng.integers(0, 256, size=(size, size, 3), dtype=np.uint8))
    writer.release()
    return path


class TestRegistry:
    def test_table_feature_dims(self):
        dims = [
            ENCODERS["resnet50-imagenet"].feat_dim,
            ENCODERS["i3d-r50-kinetics"].feat_dim,
            ENCODERS["dinov3-vitb16"].feat_dim,
            ENCODERS["dinov3-vitl16"].feat_dim,
            ENCODERS["dinov3-vit7b16"].feat_dim,
            ENCODERS["vjepa2-vitl"].feat_dim,
            ENCODERS["vjepa2-vitg16"].feat_dim,
        ]
        assert dims == [2048, 2048, 768, 1024, 4096, 1024, 1408]

    def test_table_inputs_and_clips(self):
        assert ENCODERS["resnet50-imagenet"].input_size == 224
        assert ENCODERS["resnet50-imagenet"].resize == 256
        assert ENCODERS["i3d-r50-kinetics"].clip_len == 16
        assert ENCODERS["vjepa2-vitl"].input_size == 256
        assert ENCODERS["vjepa2-vitg16"].input_size == 384
        assert ENCODERS["vjepa2-vitl"].clip_len == ENCODERS["vjepa2-vitg16"].clip_len == 64
        for name in ("dinov3-vitb16", "dinov3-vitl16", "dinov3-vit7b16"):
            assert ENCODERS[name].input_size == 224
            assert ENCODERS[name].clip_len is None

    def test_unknown_encoder(self):
        with pytest.raises(KeyError, match="unknown encoder"):
            encoder_spec("resnet18")

    def test_config_conflicts_rejected(self):
        with pytest.raises(ValueError, match="conflicts"):
            ExtractorConfig(encoder="vjepa2-vitl", clip_len=16)
        with pytest.raises(ValueError, match="conflicts"):
            ExtractorConfig(encoder="resnet50-imagenet", input_size=256)

    def test_config_json_round_trip(self):
        cfg = ExtractorConfig(encoder="vjepa2-vitl", extraction_stride=4, backend="stub")
        assert ExtractorConfig.from_json(cfg.to_json()) == cfg


class TestDecoding:
    def test_frame_dir(self, tmp_path):
        frames = load_frames(write_frame_dir(tmp_path / "vid", frames=12))
        assert frames.shape == (12, 80, 80, 3)

    def test_frame_count_alignment(self, tmp_path):
        src = write_frame_dir(tmp_path / "vid", frames=12)
        assert load_frames(src, frame_count=9).shape[0] == 9
        assert load_frames(src, frame_count=20).shape[0] == 20

    def test_video_file(self, tmp_path):
        video = try_write_video(tmp_path / "clip.avi")
        if video is None:
            pytest.skip("cv2 VideoWriter unavailable in this build")
        frames = load_frames(video)
        assert frames.shape[0] == 30

    def test_missing_input(self, tmp_path):
        with pytest.raises(DecodeError, match="does not exist"):
            load_frames(tmp_path / "nope.mp4")

    def test_preprocess_geometry(self, tmp_path):
        frames = load_frames(write_frame_dir(tmp_path / "vid", frames=3, size=100))
        out = preprocess(frames, encoder_spec("resnet50-imagenet"))
        assert out.shape == (3, 3, 224, 224)
        assert out.dtype == np.float32


class TestExtraction:
    def test_image_encoder_full_rate(self, tmp_path):
        src = write_frame_dir(tmp_path / "vid", frames=25)
        out = extract_video(src, ExtractorConfig(encoder="dinov3-vitb16"), tmp_path / "v.psfc")
        seq = read_cache(out)
        assert (seq.frame_count, seq.feat_dim, seq.stride) == (25, 768, 1)

    def test_clip_encoder_strided_header(self, tmp_path):
        src = write_frame_dir(tmp_path / "vid", frames=90)
        cfg = ExtractorConfig(encoder="vjepa2-vitl", extraction_stride=4)
        seq = read_cache(extract_video(src, cfg, tmp_path / "v.psfc"))
        assert seq.stride == 4
        assert seq.feat_dim == 1024
        assert seq.frame_count == len(range(0, 90, 4))
        full = interpolate_to_full_rate(seq, 90)
        assert full.frame_count == 90 and full.stride == 1

    def test_short_video_single_padded_clip(self, tmp_path):
        src = write_frame_dir(tmp_path / "vid", frames=10)
        cfg = ExtractorConfig(encoder="vjepa2-vitl", extraction_stride=4)
        seq = read_cache(extract_video(src, cfg, tmp_path / "v.psfc"))
        assert seq.feat_dim == 1024
        assert seq.frame_count == len(range(0, 10, 4))

    def test_constant_video_near_constant_features(self, tmp_path):
        src = write_frame_dir(tmp_path / "vid", frames=16, constant=140)
        seq = read_cache(
            extract_video(src, ExtractorConfig(encoder="dinov3-vitl16"), tmp_path / "v.psfc")
        )
        assert float(seq.data.var(axis=0).max()) < 1e-6

    def test_reextraction_is_stable(self, tmp_path):
        src = write_frame_dir(tmp_path / "vid", frames=20, seed=4)
        cfg = ExtractorConfig(encoder="i3d-r50-kinetics")
        a = read_cache(extract_video(src, cfg, tmp_path / "a.psfc"))
        b = read_cache(extract_video(src, cfg, tmp_path / "b.psfc"))
        np.testing.assert_allclose(a.data, b.data, atol=1e-5)

    def test_adapter_checkpoint_changes_stub_features(self, tmp_path):
        src = write_frame_dir(tmp_path / "vid", frames=8, seed=5)
        adapter = tmp_path / "adapter.bin"
        adapter.write_bytes(b"opaque")
        base = read_cache(
            extract_video(src, ExtractorConfig(encoder="dinov3-vitb16"), tmp_path / "a.psfc")
        )
        adapted_cfg = ExtractorConfig(encoder="dinov3-vitb16", adapter_checkpoint=str(adapter))
        adapted = read_cache(extract_video(src, adapted_cfg, tmp_path / "b.psfc"))
        assert "adapter=adapter.bin" in adapted.source_tag
        assert not np.allclose(base.data, adapted.data)

    def test_frame_count_alignment_through_extraction(self, tmp_path):
        src = write_frame_dir(tmp_path / "vid", frames=17)
        cfg = ExtractorConfig(encoder="dinov3-vitb16")
        seq = read_cache(extract_video(src, cfg, tmp_path / "v.psfc", frame_count=24))
        assert seq.frame_count == 24


class TestAcceptanceSecondary:
    def test_every_encoder_matches_table_dim_and_reads_clean(self, tmp_path):
        expected = {
            "resnet50-imagenet": 2048,
            "i3d-r50-kinetics": 2048,
            "dinov3-vitb16": 768,
            "dinov3-vitl16": 1024,
            "dinov3-vit7b16": 4096,
            "vjepa2-vitl": 1024,
            "vjepa2-vitg16": 1408,
        }
        src = write_frame_dir(tmp_path / "vid", frames=70, seed=2)
        for name, dim in expected.items():
            out = tmp_path / f"{name}.psfc"
            extract_video(src, ExtractorConfig(encoder=name), out)
            with warnings.catch_warnings():
                warnings.simplefilter("error")
                seq = read_cache(out)
            assert seq.feat_dim == dim, name
            spec = encoder_spec(name)
            stride = spec.default_stride
            assert seq.stride == (stride if stride > 1 else 1)
            full = interpolate_to_full_rate(seq, 70)
            assert full.frame_count == 70
        print("ACCEPTANCE extractor-table-dims: PASS (7 encoders, clean reads)")


@pytest.mark.skipif(not HAS_TORCH, reason="torch/torchvision not installed")
class TestTorchBackend:
    def test_resnet50_architecture_dim(self, tmp_path):
        src = write_frame_dir(tmp_path / "vid", frames=5, size=96)
        cfg = ExtractorConfig(encoder="resnet50-imagenet", backend="torch-resnet50")
        seq = read_cache(extract_video(src, cfg, tmp_path / "v.psfc"))
        assert (seq.frame_count, seq.feat_dim) == (5, 2048)

    def test_checkpoint_round_trip(self, tmp_path):
        import torch
        from torchvision.models import resnet50

        torch.manual_seed(7)
        state_path = tmp_path / "resnet50.pt"
        torch.save(resnet50(weights=None).state_dict(), state_path)
        src = write_frame_dir(tmp_path / "vid", frames=3, size=96)
        cfg = ExtractorConfig(
            encoder="resnet50-imagenet",
            backend="torch-resnet50",
            adapter_checkpoint=str(state_path),
        )
        seq = read_cache(extract_video(src, cfg, tmp_path / "v.psfc"))
        assert seq.feat_dim == 2048

    def test_wrong_dim_encoder_rejected_for_resnet_backend(self, tmp_path):
        src = write_frame_dir(tmp_path / "vid", frames=2, size=96)
        cfg = ExtractorConfig(encoder="dinov3-vitb16", backend="torch-resnet50")
        with pytest.raises(ValueError, match="2048"):
            extract_video(src, cfg, tmp_path / "v.psfc")


class TestCli:
    def test_encoders_listing(self, capsys):
        assert cli_main(["encoders"]) == 0
        out = capsys.readouterr().out
        assert "dinov3-vit7b16" in out and "d=4096" in out

    def test_extract_command(self, tmp_path):
        src = write_frame_dir(tmp_path / "vid", frames=9)
        out = tmp_path / "v.psfc"
        code = cli_main(
            ["extract", "--video", str(src), "--out", str(out), "--encoder", "dinov3-vitb16"]
        )
        assert code == 0
        assert read_cache(out).feat_dim == 768

    def test_extract_with_config_file(self, tmp_path):
        src = write_frame_dir(tmp_path / "vid", frames=70)
        config = tmp_path / "cfg.json"
        config.write_text(
            json.dumps({"encoder": "vjepa2-vitg16", "extraction_stride": 4, "backend": "stub"})
        )
        out = tmp_path / "v.psfc"
        assert cli_main(["extract", "--video", str(src), "--out", str(out), "--config", str(config)]) == 0
        seq = read_cache(out)
        assert (seq.feat_dim, seq.stride) == (1408, 4)

    def test_bad_input_fails_cleanly(self, tmp_path, capsys):
        code = cli_main(
            ["extract", "--video", str(tmp_path / "missing"), "--out", str(tmp_path / "o.psfc"),
             "--encoder", "dinov3-vitb16"]
        )
        assert code != 0
        assert "error:" in capsys.readouterr().err
