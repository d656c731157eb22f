"""Tests for snapshot files and CSV frames."""

import json

import numpy as np
import pandas as pd
import pytest

from convexlab.exceptions import MissingArtifact, NonRealOutput
from convexlab.io import (
    MAGIC,
    export_spectrum,
    export_stopping_report,
    norm_series_frame,
    path_frame,
    read_snapshot,
    spectrum_frame,
    write_snapshot,
)
from convexlab.spectral import to_spectral
from convexlab.stochastic import NoiseProfile, StoppingTimeResult, sample_path


class TestSnapshots:
    def test_header_layout(self, grid32, tmp_path):
        """4-byte magic, then version, N, components and time."""
        x1, x2 = grid32.mesh()
        coeffs = to_spectral(np.stack([np.sin(x1), np.cos(x2)]), grid32)
        target = write_snapshot(str(tmp_path / "y.sqgf"), coeffs, grid32, 0.25)
        raw = open(target, "rb").read()
        assert raw[:4] == MAGIC
        assert np.frombuffer(raw[4:16], dtype="<u4").tolist() == [1, 32, 2]
        assert np.frombuffer(raw[16:24], dtype="<f8")[0] == 0.25
        assert len(raw) == 24 + 2 * 32 * 32 * 8

    def test_samples_are_physical(self, grid32, tmp_path):
        x1, x2 = grid32.mesh()
        field = np.sin(x1) * np.cos(2 * x2)
        target = write_snapshot(str(tmp_path / "nested" / "p.sqgf"), to_spectral(field, grid32), grid32, -0.5)
        samples, t = read_snapshot(target)
        assert samples.shape == (1, 32, 32)
        assert t == -0.5
        assert np.allclose(samples[0], field, atol=1e-12)

    def test_rejects_complex_field(self, grid32, tmp_path):
        coeffs = np.zeros((32, 32), dtype=complex)
        coeffs[0, 1] = 1.0
        with pytest.raises(NonRealOutput):
            write_snapshot(str(tmp_path / "bad.sqgf"), coeffs, grid32, 0.0)

    def test_missing_file(self, tmp_path):
        with pytest.raises(MissingArtifact):
            read_snapshot(str(tmp_path / "absent.sqgf"))

    def test_foreign_file(self, tmp_path):
        target = tmp_path / "foreign.sqgf"
        target.write_bytes(b"NOPE" + bytes(32))
        with pytest.raises(ValueError):
            read_snapshot(str(target))


class TestFrames:
    def test_spectrum_rows(self, grid32):
        x1, _ = grid32.mesh()
        frame = spectrum_frame(to_spectral(np.cos(3 * x1), grid32), grid32, rel_tol=1e-12)
        assert sorted(zip(frame["k1"], frame["k2"])) == [(-3, 0), (3, 0)]
        assert np.allclose(frame["re"], 2.0 * np.pi**2)
        assert np.allclose(frame["im"], 0.0, atol=1e-12)

    def test_spectrum_csv_has_components(self, grid32, tmp_path):
        x1, x2 = grid32.mesh()
        coeffs = to_spectral(np.stack([np.cos(x1), np.cos(x2)]), grid32)
        target = export_spectrum(str(tmp_path / "s.csv"), coeffs, grid32, rel_tol=1e-12)
        frame = pd.read_csv(target)
        assert list(frame.columns) == ["component", "k1", "k2", "re", "im"]
        assert frame.groupby("component").size().tolist() == [2, 2]

    def test_path_frame_is_cut(self):
        path = sample_path(2, 0.01, 1.0)
        frame = path_frame(path, stop=0.5)
        assert frame["t"].iloc[0] == -2.0
        assert frame["t"].iloc[-1] == pytest.approx(0.5)
        assert np.allclose(frame["Upsilon"], np.exp(frame["B"]))

    def test_norm_series_envelope(self):
        times = np.array([-0.5, 0.5, 1.5])
        frame = norm_series_frame(times, {"y_C0": np.array([1.0, 2.0, 3.0])}, profile=NoiseProfile(L=4.0, T=1.0))
        assert list(frame.columns) == ["t", "y_C0", "M0", "sqrt_M0"]
        assert np.allclose(frame["sqrt_M0"] ** 2, frame["M0"])

    def test_stopping_report(self, tmp_path):
        result = StoppingTimeResult(T_L=1.25, fired="holder", seed=5, L=4.0, delta=0.0625)
        target = export_stopping_report(str(tmp_path / "stop.json"), result)
        payload = json.loads(open(target).read())
        assert payload == {"seed": 5, "L": 4.0, "delta": 0.0625, "T_L": 1.25, "fired": "holder"}
