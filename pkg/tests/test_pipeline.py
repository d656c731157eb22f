"""
Tests for the run configuration, the pipeline modes that run in seconds
and the command-line exit codes.
"""

import json
import os

import pandas as pd
import pytest

import lab.main as cli
from convexlab.exceptions import ConfigError, MissingArtifact
from lab.config import EXIT_CONFIG, EXIT_OK
from lab.logging_config import setup_logging
from lab.models.run_models import RunManifest, build_run_config, parse_config_file
from lab.services.pipeline import ConvexLabPipeline, export_artifacts, manifest_path


@pytest.fixture
def quiet_logs(tmp_path, monkeypatch):
    """Send CLI logs to a temporary directory."""
    log_dir = tmp_path / "logs"
    monkeypatch.setattr(cli, "setup_logging", lambda level: setup_logging(level=level, log_dir=str(log_dir)))
    return log_dir


class TestConfigFile:
    def test_parse(self, tmp_path):
        target = tmp_path / "run.cfg"
        target.write_text("# toy noise run\nmode = noise\n\ntoy = true\nseed=11\n")
        assert parse_config_file(str(target)) == {"mode": "noise", "toy": "true", "seed": "11"}

    def test_malformed_line(self, tmp_path):
        target = tmp_path / "run.cfg"
        target.write_text("mode noise\n")
        with pytest.raises(ConfigError, match="run.cfg:1"):
            parse_config_file(str(target))

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            parse_config_file(str(tmp_path / "absent.cfg"))


class TestRunConfig:
    def test_flags_override_file(self):
        config = build_run_config({"mode": "noise", "toy": "true", "seed": "11", "N": "64"}, {"seed": 3, "N": None})
        assert config.seed == 3
        assert config.N == 64
        assert config.toy is True

    def test_toy_parameters(self):
        params = build_run_config({"mode": "base", "toy": True}).parameters()
        assert params.mode == "toy"
        assert (params.a, params.b, params.L) == (5, 2, 4.0)

    def test_toy_overrides(self):
        """With --toy single values replace the toy defaults; the rest stay."""
        params = build_run_config({"mode": "base", "toy": True, "a": 10, "beta": 0.52}).parameters()
        assert params.mode == "toy"
        assert (params.a, params.b, params.beta, params.L) == (10, 2, 0.52, 4.0)

    def test_explicit_parameters(self):
        config = build_run_config({"mode": "certify", "L": 4.0, "a": 10, "b": 3, "beta": 0.52})
        params = config.parameters()
        assert params.mode == "faithful"
        assert params.alpha == pytest.approx(1.26)

    @pytest.mark.parametrize(
        "values",
        [
            {"mode": "base"},
            {"mode": "noise", "toy": True, "N": 100},
            {"mode": "noise", "toy": True, "dt": 0.3},
            {"mode": "certify", "L": 4.0},
            {"mode": "noise", "toy": True, "base_start": 0.5, "base_stop": 0.1},
            {"mode": "noise", "toy": True, "colour": "blue"},
        ],
    )
    def test_invalid(self, values):
        with pytest.raises(ConfigError):
            build_run_config(values)


class TestNoiseRun:
    @pytest.fixture
    def noise_run(self, tmp_path):
        config = build_run_config({"mode": "noise", "toy": True, "dt": 0.01, "seed": 4, "output_dir": str(tmp_path / "run")})
        return ConvexLabPipeline(config).run(), config.output_dir

    def test_manifest(self, noise_run):
        manifest, output_dir = noise_run
        assert manifest.green and manifest.exit_code == EXIT_OK
        with open(manifest_path(output_dir, "noise")) as fh:
            stored = RunManifest.model_validate_json(fh.read())
        assert stored.T_L == manifest.T_L
        assert stored.params["mode"] == "toy"

    def test_artifacts(self, noise_run):
        manifest, output_dir = noise_run
        path = pd.read_csv(os.path.join(output_dir, "noise_path.csv"))
        assert list(path.columns) == ["t", "B", "Upsilon"]
        with open(os.path.join(output_dir, "stopping_time.json")) as fh:
            stopping = json.load(fh)
        assert stopping["T_L"] == manifest.T_L
        assert stopping["seed"] == 4
        profile = pd.read_csv(os.path.join(output_dir, "noise_profile.csv"))
        assert profile["t"].max() <= manifest.T_L + 1e-9
        assert {"Upsilon", "M0", "sqrt_M0"} <= set(profile.columns)

    def test_run_log(self, noise_run):
        manifest, output_dir = noise_run
        assert manifest.reports["run_log"] == os.path.join(output_dir, "run.log")
        assert os.path.exists(manifest.reports["run_log"])

    def test_export_path_is_reproducible(self, noise_run):
        """The export resamples the path from the stored seed."""
        _, output_dir = noise_run
        files = export_artifacts(output_dir, "path", source="noise")
        exported = pd.read_csv(files[0])
        original = pd.read_csv(os.path.join(output_dir, "noise_path.csv"))
        pd.testing.assert_frame_equal(exported, original)

    def test_export_without_fields(self, noise_run):
        _, output_dir = noise_run
        with pytest.raises(MissingArtifact):
            export_artifacts(output_dir, "spectra", source="noise")


class TestCommandLine:
    def test_export_from_empty_directory(self, tmp_path, quiet_logs):
        assert cli.main(["export", "path", "--output-dir", str(tmp_path / "empty")]) == EXIT_CONFIG

    def test_base_without_parameters(self, tmp_path, quiet_logs):
        assert cli.main(["run", "--mode", "base", "--output-dir", str(tmp_path)]) == EXIT_CONFIG

    def test_noise_run(self, tmp_path, quiet_logs):
        output_dir = tmp_path / "noise"
        code = cli.main(["run", "--mode", "noise", "--toy", "--dt", "0.01", "--output-dir", str(output_dir)])
        assert code == EXIT_OK
        assert (output_dir / "manifest_noise.json").exists()
        assert (quiet_logs / "convexlab.log").exists()

    def test_config_file_with_flag_override(self, tmp_path, quiet_logs):
        cfg = tmp_path / "run.cfg"
        cfg.write_text(f"mode = noise\ntoy = true\ndt = 0.01\nseed = 2\noutput_dir = {tmp_path / 'cfg'}\n")
        assert cli.main(["run", "--config", str(cfg), "--seed", "5"]) == EXIT_OK
        with open(tmp_path / "cfg" / "manifest_noise.json") as fh:
            assert json.load(fh)["seed"] == 5

    def test_base_with_toy_overrides(self, tmp_path, quiet_logs):
        """--toy accepts a partial (a, b, beta) and the base residual meets 1e-6."""
        output_dir = tmp_path / "base"
        argv = ["run", "--mode", "base", "--toy", "--N", "256", "--a", "5", "--b", "2", "--beta", "0.51", "--seed", "7"]
        assert cli.main(argv + ["--output-dir", str(output_dir)]) == EXIT_OK
        with open(output_dir / "base_residual.json") as fh:
            report = json.load(fh)
        entries = {e["check_id"]: e for e in report["entries"]}
        assert entries["equation_residual"]["threshold"] == 1e-6
        assert entries["equation_residual"]["measured"] <= 1e-6
        assert entries["residual_convergence"]["hard"]
        assert 3.5 <= report["environment"]["ratio"] <= 4.5
        with open(output_dir / "manifest_base.json") as fh:
            assert json.load(fh)["params"]["L"] == 4.0
