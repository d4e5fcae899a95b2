import numpy as np
import pytest

from frustumlab.experiments import (
    DEFAULT_NOISE,
    ZERO_NOISE,
    ExperimentConfig,
    NoiseLevel,
    run_kwire_experiment,
    run_tha_experiment,
)
from frustumlab.serialization import canonical_json
from frustumlab.session_io import replay, save_session


def scaled_level(s: float) -> NoiseLevel:
    return NoiseLevel(
        label=f"scale{s}",
        localizer_rot_deg=DEFAULT_NOISE.localizer_rot_deg * s,
        localizer_trans_mm=DEFAULT_NOISE.localizer_trans_mm * s,
        pixel_sigma=DEFAULT_NOISE.pixel_sigma * s,
        calib_rot_sigma_deg=DEFAULT_NOISE.calib_rot_sigma_deg * s,
        calib_trans_sigma_mm=DEFAULT_NOISE.calib_trans_sigma_mm * s,
        tremor_deg=DEFAULT_NOISE.tremor_deg * s,
    )


class TestKwireExperiment:
    def test_zero_noise_recovers_exactly(self):
        report = run_kwire_experiment(ExperimentConfig(levels=(ZERO_NOISE,), repeats=5))
        for row in report.rows:
            assert row.mean_err_mm < 1e-6
            assert row.breached is False
            assert row.n_shots == 2
            assert row.dose == pytest.approx(0.255)

    def test_error_monotone_in_pixel_noise(self):
        levels = tuple(NoiseLevel(label=f"px{s}", pixel_sigma=s) for s in (0.5, 1.0, 2.0))
        report = run_kwire_experiment(ExperimentConfig(levels=levels, repeats=30, seed=2))
        medians = [
            float(np.median([r.mean_err_mm for r in report.rows if r.level == lv.label]))
            for lv in levels
        ]
        assert medians == sorted(medians)

    def test_deterministic_given_config_and_seed(self, tmp_path):
        sessions = {}

        def run(tag):
            captured = []
            report = run_kwire_experiment(
                ExperimentConfig(levels=(DEFAULT_NOISE,), repeats=2, seed=7),
                session_sink=captured.append,
            )
            sessions[tag] = captured
            return report

        a, b = run("a"), run("b")
        assert canonical_json([r.__dict__ for r in a.rows]) == canonical_json(
            [r.__dict__ for r in b.rows]
        )
        for sa, sb in zip(sessions["a"], sessions["b"]):
            assert canonical_json(sa.to_dict()) == canonical_json(sb.to_dict())

    def test_sessions_replayable(self, tmp_path):
        captured = []
        run_kwire_experiment(
            ExperimentConfig(levels=(DEFAULT_NOISE,), repeats=2, seed=9),
            session_sink=captured.append,
        )
        for session in captured:
            path = save_session(session, tmp_path / f"{session.id}.json")
            loaded = replay(path, verify=True)
            assert canonical_json(loaded.to_dict()) == canonical_json(session.to_dict())


class TestThaExperiment:
    def test_zero_noise_recovers_exactly(self):
        report = run_tha_experiment(ExperimentConfig(levels=(ZERO_NOISE,), repeats=5))
        for row in report.rows:
            assert row.abduction_err_deg < 1e-6
            assert row.anteversion_err_deg < 1e-6
            assert row.cup_center_err_mm < 1e-6
            assert row.in_safe_zone is True
            assert row.n_shots == 8
            assert row.dose == pytest.approx(1.02)

    def test_errors_converge_to_zero_with_noise(self):
        levels = tuple(scaled_level(s) for s in (1.0, 0.3, 0.1))
        report = run_tha_experiment(ExperimentConfig(levels=levels, repeats=15, seed=3))
        means = []
        for lv in levels:
            rows = [r for r in report.rows if r.level == lv.label]
            means.append(
                (
                    float(np.mean([r.abduction_err_deg for r in rows])),
                    float(np.mean([r.anteversion_err_deg for r in rows])),
                )
            )
        for i in range(len(means) - 1):
            assert means[i + 1][0] < means[i][0]
            assert means[i + 1][1] < means[i][1]

    def test_summary_shapes(self):
        report = run_tha_experiment(ExperimentConfig(levels=(ZERO_NOISE,), repeats=3))
        summary = report.summary()
        assert set(summary) == {"zero"}
        assert set(summary["zero"]) == {
            "abduction_err_deg",
            "anteversion_err_deg",
            "cup_center_err_mm",
        }
