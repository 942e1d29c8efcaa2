import numpy as np
import pytest

from lens.cli import main
from lens.interchange import read_tensor, write_tensor


class TestInfer:
    def test_synthetic_outputs(self, tmp_path, capsys):
        code = main(["infer", "--synthetic", "--grid", "8", "--seed", "3",
                     "--out-dir", str(tmp_path)])
        assert code == 0
        mask = (tmp_path / "mask.pgm").read_bytes()
        assert mask.startswith(b"P5\n32 32\n255\n")
        kp_lines = (tmp_path / "keypoints.txt").read_text().splitlines()
        for line in kp_lines:
            x, y, score = map(float, line.split())
            # sub-pixel refinement may move a border peak up to one cell out
            assert -1 <= x <= 8 and -1 <= y <= 8

    def test_missing_manifest_fails(self, tmp_path, capsys):
        code = main(["infer", "--manifest", str(tmp_path / "nope.json"),
                     "--out-dir", str(tmp_path)])
        assert code == 1
        assert "error:" in capsys.readouterr().err


class TestTrain:
    def test_short_run_writes_artifacts(self, tmp_path, capsys):
        code = main(["train", "--steps", "3", "--grid", "8", "--seed", "1",
                     "--out-dir", str(tmp_path)])
        assert code == 0
        assert (tmp_path / "checkpoint" / "manifest.json").exists()
        csv_lines = (tmp_path / "metrics.csv").read_text().strip().splitlines()
        assert csv_lines[0] == "step,total,attn,seg,dice,bce"
        assert len(csv_lines) == 4
        assert "gIoU=" in capsys.readouterr().out


class TestGradcheck:
    def test_passes_on_toy_model(self, capsys):
        code = main(["gradcheck", "--grid", "6", "--d", "8", "--m", "2",
                     "--subset", "0.01"])
        assert code == 0
        assert "max_rel_error" in capsys.readouterr().out


class TestEval:
    def test_metrics_over_pairs(self, tmp_path, capsys):
        write_tensor(tmp_path / "pred_0.ltns", np.array([[1.0, 1.0]]))
        write_tensor(tmp_path / "gt_0.ltns", np.array([[1.0, 0.0]]))
        code = main(["eval", "--dir", str(tmp_path)])
        assert code == 0
        out = capsys.readouterr().out
        assert "gIoU=0.5" in out and "cIoU=0.5" in out

    def test_empty_dir_fails(self, tmp_path, capsys):
        assert main(["eval", "--dir", str(tmp_path)]) == 1


class TestRoute:
    @pytest.mark.parametrize("text,expected", [
        ("please segment the cat", "seg"),
        ("how are you", "dialogue"),
        ("what is inside the segmented area", "followup"),
    ])
    def test_intents(self, text, expected, capsys):
        assert main(["route", "--text", text]) == 0
        assert capsys.readouterr().out.strip() == expected


class TestUsage:
    def test_unknown_subcommand_exit_2(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2

    def test_unknown_flag_exit_2(self):
        with pytest.raises(SystemExit) as exc:
            main(["infer", "--bogus"])
        assert exc.value.code == 2
