import json
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np
import pytest

from phaseseg.cli import main
from phaseseg.metrics import StudyReport
from phaseseg.ribbon import render_ribbon
from phaseseg.splits import FoldSpec

SMALL_CONFIG = {
    "model": {"hidden_maps": 8, "pg_layers": 2, "refine_stages": 1, "refine_layers": 2},
    "train": {"epochs": 2, "seed": 1},
}


def run(*argv) -> int:
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """One synth -> split -> train -> eval round used by several tests."""
    root = tmp_path_factory.mktemp("pipeline")
    data = root / "data"
    assert run(
        "synth", "--out", data, "--num-videos", 6, "--frames", "30:40",
        "--feat-dim", 6, "--classes", 3, "--seed", 3, "--min-segment", 8,
    ) == 0
    folds = root / "folds.json"
    assert run("split", "--manifest", data / "manifest.json", "--out", folds, "--k", 3, "--seed", 0) == 0
    config = root / "config.json"
    config.write_text(json.dumps(SMALL_CONFIG))
    run_dir = root / "fold0"
    assert run(
        "train", "--manifest", data / "manifest.json", "--folds", folds,
        "--fold", 0, "--out", run_dir, "--config", config,
    ) == 0
    report = root / "fold0.json"
    assert run(
        "eval", "--manifest", data / "manifest.json", "--folds", folds,
        "--fold", 0, "--dumps", run_dir / "dumps", "--out", report,
    ) == 0
    return root, data, folds, run_dir, report


class TestPipeline:
    def test_synth_layout(self, pipeline):
        _, data, _, _, _ = pipeline
        manifest = json.loads((data / "manifest.json").read_text())
        assert len(manifest["videos"]) == 6
        assert (data / "vocabulary.json").exists()
        groups = {v["group"] for v in manifest["videos"]}
        assert groups == {"BL", "BN", "SD"}

    def test_train_outputs(self, pipeline):
        _, _, folds, run_dir, _ = pipeline
        spec = FoldSpec.load(folds)
        assert (run_dir / "checkpoint_fold0.psck").exists()
        assert (run_dir / "checkpoint_fold0.psck.json").exists()
        assert (run_dir / "config.json").exists()
        manifest = json.loads((run_dir / "run_manifest.json").read_text())
        assert len(manifest["epoch_mean_loss"]) == 2
        assert len(manifest["dump_paths"]) == len(spec.folds[0])

    def test_fold_report_columns(self, pipeline):
        *_, report = pipeline
        payload = json.loads(report.read_text())
        for key in ("accuracy", "macro_f1", "edit", "pr_auc", "f1_10", "f1_25", "f1_50", "miou"):
            assert key in payload
            assert 0.0 <= payload[key] <= 100.0

    def test_report_duplicated_folds_zero_std(self, pipeline, tmp_path):
        root, *_, report = pipeline
        study_path = tmp_path / "study.json"
        table_path = tmp_path / "study.txt"
        assert run(
            "report", report, report, report, report, report,
            "--out", study_path, "--table", table_path,
        ) == 0
        study = StudyReport.from_json(study_path.read_text())
        assert study.num_folds == 5
        assert all(abs(v) < 1e-9 for v in study.stds.values())
        table = table_path.read_text()
        for column in ("Accuracy", "F1 (macro)", "Edit", "PR-AUC", "F1@10", "F1@25", "F1@50", "mIoU"):
            assert column in table

    def test_eval_length_mismatch_names_both(self, pipeline, tmp_path, capsys):
        root, data, folds, run_dir, _ = pipeline
        spec = FoldSpec.load(folds)
        victim = spec.folds[0][0]
        dumps = tmp_path / "dumps"
        dumps.mkdir()
        for path in (run_dir / "dumps").glob("*.pspd"):
            target = dumps / path.name
            target.write_bytes(path.read_bytes())
        from phaseseg.training import read_predictions, write_predictions

        labels, probs = read_predictions(dumps / f"{victim}.pspd")
        write_predictions(dumps / f"{victim}.pspd", labels[:-3], probs[:, :-3])
        code = run(
            "eval", "--manifest", data / "manifest.json", "--folds", folds,
            "--fold", 0, "--dumps", dumps, "--out", tmp_path / "r.json",
        )
        assert code != 0
        err = capsys.readouterr().err
        assert "frames" in err and victim in err

    def test_train_rerun_is_byte_identical(self, pipeline, tmp_path):
        root, data, folds, run_dir, _ = pipeline
        config = root / "config.json"
        repeat = tmp_path / "again"
        assert run(
            "train", "--manifest", data / "manifest.json", "--folds", folds,
            "--fold", 0, "--out", repeat, "--config", config,
        ) == 0
        original = (run_dir / "checkpoint_fold0.psck").read_bytes()
        assert (repeat / "checkpoint_fold0.psck").read_bytes() == original
        for dump in (run_dir / "dumps").glob("*.pspd"):
            assert (repeat / "dumps" / dump.name).read_bytes() == dump.read_bytes()

    def test_missing_manifest_fails_cleanly(self, tmp_path, capsys):
        code = run("split", "--manifest", tmp_path / "nope.json", "--out", tmp_path / "f.json")
        assert code != 0
        assert "error:" in capsys.readouterr().err

    def test_fold_out_of_range(self, pipeline, tmp_path, capsys):
        _, data, folds, run_dir, _ = pipeline
        code = run(
            "eval", "--manifest", data / "manifest.json", "--folds", folds,
            "--fold", 7, "--dumps", run_dir / "dumps", "--out", tmp_path / "r.json",
        )
        assert code != 0
        assert "fold index" in capsys.readouterr().err

    def test_features_dir_pairing(self, pipeline, tmp_path):
        _, data, _, _, _ = pipeline
        out = tmp_path / "folds.json"
        assert run(
            "split", "--features-dir", data / "features", "--labels-dir", data / "labels",
            "--vocab", data / "vocabulary.json", "--out", out, "--k", 3,
        ) == 0
        assert FoldSpec.load(out).num_folds == 3


class TestRibbon:
    def _rects(self, svg_text):
        root = ET.fromstring(svg_text)
        ns = "{http://www.w3.org/2000/svg}"
        return [r.attrib for r in root.iter(f"{ns}rect")]

    def test_single_segment_single_rect(self):
        svg = render_ribbon([("gt", np.zeros(10, dtype=np.int64))], ["only"], px_per_frame=3)
        band_rects = [r for r in self._rects(svg) if float(r["height"]) > 20]
        assert len(band_rects) == 1
        assert float(band_rects[0]["width"]) == 30.0

    def test_identical_rows_identical_bands(self):
        labels = np.array([0, 0, 1, 1, 1, 2])
        svg = render_ribbon([("gt", labels), ("pred", labels.copy())], ["a", "b", "c"])
        rects = [r for r in self._rects(svg) if float(r["height"]) > 20]
        row1, row2 = rects[:3], rects[3:6]
        for a, b in zip(row1, row2):
            assert a["x"] == b["x"] and a["width"] == b["width"] and a["fill"] == b["fill"]

    def test_three_segments_proportional_widths(self):
        labels = np.array([0] * 5 + [1] * 2 + [0] * 3)
        svg = render_ribbon([("gt", labels)], ["a", "b"], px_per_frame=2)
        rects = [r for r in self._rects(svg) if float(r["height"]) > 20]
        assert [float(r["width"]) for r in rects] == [10.0, 4.0, 6.0]
        assert [float(r["x"]) for r in rects] == [120.0, 130.0, 134.0]

    def test_row_length_mismatch(self):
        with pytest.raises(ValueError, match="length mismatch"):
            render_ribbon([("a", np.zeros(5, dtype=int)), ("b", np.zeros(6, dtype=int))], ["x"])

    def test_deterministic_bytes(self):
        labels = np.array([0, 1, 1, 0])
        assert render_ribbon([("gt", labels)], ["a", "b"]) == render_ribbon(
            [("gt", labels)], ["a", "b"]
        )

    def test_cli_ribbon_command(self, pipeline, tmp_path):
        _, data, folds, run_dir, _ = pipeline
        spec = FoldSpec.load(folds)
        video = spec.folds[0][0]
        out = tmp_path / "ribbon.svg"
        manifest = json.loads((data / "manifest.json").read_text())
        label_path = next(v["labels"] for v in manifest["videos"] if v["id"] == video)
        assert run(
            "ribbon", "--gt", label_path, "--pred", run_dir / "dumps" / f"{video}.pspd",
            "--vocab", data / "vocabulary.json", "--out", out,
        ) == 0
        assert out.read_text().startswith("<svg")
