import csv
import json

import pytest

from frustumlab.cli import main


def run(args):
    return main(args)


class TestGenpairsAndCalibrate:
    def test_noiseless_calibration_round_trip(self, tmp_path, capsys):
        pairs = tmp_path / "pairs.json"
        assert run(["genpairs", "--n", "20", "--seed", "4", "--out", str(pairs)]) == 0
        capsys.readouterr()
        assert run(["calibrate", "--pairs", str(pairs)]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["rotation_residual"] < 1e-9
        assert payload["translation_residual"] < 1e-9
        assert payload["rotation_error_vs_truth_deg"] < 1e-9
        assert payload["translation_error_vs_truth_mm"] < 1e-9
        assert payload["n_pairs"] == 20

    def test_genpairs_deterministic(self, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        run(["genpairs", "--n", "10", "--seed", "5", "--rot-sigma", "0.3", "--out", str(a)])
        run(["genpairs", "--n", "10", "--seed", "5", "--rot-sigma", "0.3", "--out", str(b)])
        assert a.read_bytes() == b.read_bytes()

    def test_corrupt_pairs_file(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text('{"schema": "frustum-pairs/v1"')
        assert run(["calibrate", "--pairs", str(bad)]) == 1
        err = json.loads(capsys.readouterr().err)
        assert err["code"] == "schema_mismatch"


class TestSamplingSweep:
    def test_csv_row_per_size_and_figure(self, tmp_path, capsys):
        pairs = tmp_path / "pairs.json"
        run(
            [
                "genpairs", "--n", "120", "--rot-sigma", "0.5", "--trans-sigma", "2.0",
                "--seed", "11", "--out", str(pairs),
            ]
        )
        out = tmp_path / "sweep.csv"
        code = run(
            [
                "fig9", "--pairs", str(pairs), "--sizes", "5,10,20,40,80,120",
                "--repeats", "10", "--out", str(out),
            ]
        )
        assert code == 0
        with out.open() as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 6
        assert [int(r["n"]) for r in rows] == [5, 10, 20, 40, 80, 120]
        assert out.with_suffix(".png").exists()


class TestExperimentCommands:
    @pytest.mark.parametrize("kind", ["kwire", "tha"])
    def test_zero_noise_run_writes_reports(self, tmp_path, capsys, kind):
        out_dir = tmp_path / "results"
        code = run(
            [kind, "--levels", "zero", "--repeats", "2", "--out-dir", str(out_dir)]
        )
        assert code == 0
        csv_path = out_dir / f"{kind}.csv"
        with csv_path.open() as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 2
        expected_shots = "2" if kind == "kwire" else "8"
        assert all(r["n_shots"] == expected_shots for r in rows)
        assert (out_dir / f"{kind}.png").exists()
        sessions = list((out_dir / "sessions").glob("*.json"))
        assert len(sessions) == 2

    def test_session_files_replayable_via_cli(self, tmp_path, capsys):
        out_dir = tmp_path / "results"
        run(["kwire", "--levels", "default", "--repeats", "1", "--out-dir", str(out_dir)])
        capsys.readouterr()
        session_file = next((out_dir / "sessions").glob("*.json"))
        assert run(["replay", str(session_file)]) == 0
        summary = json.loads(capsys.readouterr().out)
        assert summary["shots"] == 2
        assert summary["verified"] is True


class TestReplayErrors:
    def test_missing_file_not_found(self, tmp_path, capsys):
        assert run(["replay", str(tmp_path / "missing.json")]) == 1
        err = json.loads(capsys.readouterr().err)
        assert err["code"] == "not_found"

    def test_usage_error_exits_two(self):
        with pytest.raises(SystemExit) as exc:
            run(["no-such-command"])
        assert exc.value.code == 2
