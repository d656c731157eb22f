"""Snapshot and CSV writers for fields, spectra, norm series and noise paths."""

import json
import logging
import os
from typing import Dict, Optional, Tuple

import numpy as np
import pandas as pd

from convexlab.exceptions import MissingArtifact, NonRealOutput
from convexlab.spectral import Grid, conjugate_reflect, to_physical
from convexlab.stochastic import NoiseProfile, StoppingTimeResult, WienerPath

logger = logging.getLogger(__name__)

MAGIC = b"SQGF"
VERSION = 1
_HEADER = np.dtype([("version", "<u4"), ("N", "<u4"), ("components", "<u4"), ("time", "<f8")])


def write_snapshot(path: str, coeffs: np.ndarray, grid: Grid, t: float) -> str:
    """Write one time slice as an SQGF file.

    ``coeffs`` has shape (N, N) or (C, N, N). The samples are stored as
    little-endian float64 physical values, component after component.
    """
    coeffs = np.asarray(coeffs)
    if coeffs.ndim == 2:
        coeffs = coeffs[None]
    if coeffs.ndim != 3 or coeffs.shape[-2:] != (grid.N, grid.N):
        raise ValueError(f"expected (C, {grid.N}, {grid.N}) coefficients, got {coeffs.shape}")
    gap = np.abs(coeffs - conjugate_reflect(coeffs)).max(initial=0.0)
    if gap > 1e-12 * max(np.abs(coeffs).max(initial=0.0), 1e-300):
        raise NonRealOutput(f"snapshot at t={t} is not real (conjugate gap {gap:.3e})")
    samples = to_physical(coeffs, grid).astype("<f8")
    header = np.array([(VERSION, grid.N, coeffs.shape[0], float(t))], dtype=_HEADER)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(header.tobytes())
        fh.write(np.ascontiguousarray(samples).tobytes())
    logger.debug(f"Wrote snapshot {path} (N={grid.N}, {coeffs.shape[0]} components, t={t})")
    return path


def read_snapshot(path: str) -> Tuple[np.ndarray, float]:
    """Physical samples of shape (C, N, N) and the time stored in an SQGF file."""
    if not os.path.exists(path):
        raise MissingArtifact(f"snapshot {path} does not exist")
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path} is not an SQGF file")
    header = np.frombuffer(raw[4:4 + _HEADER.itemsize], dtype=_HEADER)[0]
    if int(header["version"]) != VERSION:
        raise ValueError(f"unsupported SQGF version {int(header['version'])}")
    N, C = int(header["N"]), int(header["components"])
    body = np.frombuffer(raw[4 + _HEADER.itemsize:], dtype="<f8")
    if body.size != C * N * N:
        raise ValueError(f"{path} holds {body.size} samples, expected {C * N * N}")
    return body.reshape(C, N, N).astype(float), float(header["time"])


def spectrum_frame(coeffs: np.ndarray, grid: Grid, rel_tol: float = 0.0) -> pd.DataFrame:
    """Rows (k1, k2, re, im) of a single-component coefficient array.

    Coefficients at or below ``rel_tol`` times the maximum are dropped.
    """
    coeffs = np.asarray(coeffs)
    mags = np.abs(coeffs)
    keep = mags > rel_tol * mags.max(initial=0.0) if rel_tol > 0 else mags > 0
    i, j = np.nonzero(keep)
    return pd.DataFrame(
        {
            "k1": grid.k1[i, j].astype(int),
            "k2": grid.k2[i, j].astype(int),
            "re": coeffs[i, j].real,
            "im": coeffs[i, j].imag,
        }
    )


def export_spectrum(path: str, coeffs: np.ndarray, grid: Grid, rel_tol: float = 0.0) -> str:
    """Write the spectrum of every component, labelled in a ``component`` column."""
    coeffs = np.asarray(coeffs)
    if coeffs.ndim == 2:
        coeffs = coeffs[None]
    frames = []
    for c in range(coeffs.shape[0]):
        frame = spectrum_frame(coeffs[c], grid, rel_tol)
        frame.insert(0, "component", c)
        frames.append(frame)
    pd.concat(frames, ignore_index=True).to_csv(path, index=False)
    logger.info(f"Exported spectrum to {path}")
    return path


def norm_series_frame(times: np.ndarray, columns: Dict[str, np.ndarray], profile: Optional[NoiseProfile] = None) -> pd.DataFrame:
    """Time series of norms; with ``profile`` the M0 envelope columns are appended."""
    times = np.asarray(times, dtype=float)
    frame = pd.DataFrame({"t": times})
    for name, values in columns.items():
        frame[name] = np.broadcast_to(np.asarray(values, dtype=float), times.shape)
    if profile is not None:
        frame["M0"] = profile.M0(times)
        frame["sqrt_M0"] = profile.sqrt_M0(times)
    return frame


def export_norm_series(path: str, frame: pd.DataFrame) -> str:
    frame.to_csv(path, index=False)
    logger.info(f"Exported norm series ({len(frame)} rows) to {path}")
    return path


def path_frame(path: WienerPath, stop: Optional[float] = None) -> pd.DataFrame:
    """(t, B, Upsilon) on the path grid, optionally cut at ``stop``."""
    times = path.times
    keep = times <= stop + 1e-12 if stop is not None else np.ones(times.shape, dtype=bool)
    return pd.DataFrame({"t": times[keep], "B": path.values[keep], "Upsilon": np.exp(path.values[keep])})


def export_path(path: str, wiener: WienerPath, stop: Optional[float] = None) -> str:
    frame = path_frame(wiener, stop)
    frame.to_csv(path, index=False)
    logger.info(f"Exported noise path ({len(frame)} samples) to {path}")
    return path


def export_stopping_report(path: str, stopping: StoppingTimeResult) -> str:
    report = {
        "seed": stopping.seed,
        "L": stopping.L,
        "delta": stopping.delta,
        "T_L": stopping.T_L,
        "fired": stopping.fired,
    }
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2)
    return path

