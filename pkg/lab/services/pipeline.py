import json
import logging
import os
import time
from typing import Dict, List, Optional, Tuple

import numpy as np

from convexlab.exceptions import ConfigError, MissingArtifact
from convexlab.io import (
    export_norm_series,
    export_path,
    export_spectrum,
    export_stopping_report,
    norm_series_frame,
    write_snapshot,
)
from convexlab.iteration import (
    IterationLevel,
    NoiseContext,
    StepConfig,
    base_residual_study,
    build_noise,
    induction_step,
    init_base,
    plan_step,
    time_grid,
)
from convexlab.params import ParameterSet, certify, derive_constants, search_feasible, sequences
from convexlab.params.constants import LedgerConstants
from convexlab.spectral import Grid, NormSpec, SymTensorField2, VectorField2, norm_series, tensor_operator_norm
from convexlab.stochastic import StoppingTimeSpec, m0_profile, sample_path, survival_probability
from convexlab.verify import (
    CheckEntry,
    VerificationReport,
    energy_report,
    hypothesis_report,
    identity_suite,
    step_report,
    transport_sanity,
)
from lab.config import EXIT_INFEASIBLE, EXIT_OK, EXIT_RESIDUAL, LAB_VERSION
from lab.logging_config import run_log
from lab.models.run_models import ExportKind, LevelSummary, RunConfig, RunManifest

# Create logger
logger = logging.getLogger(__name__)

# identities are checked on this grid unless the run asks for a smaller one
IDENTITY_N = 128

# relative residual of a fully resolved time derivative
RESIDUAL_FLOOR = 1e-12


def manifest_path(output_dir: str, mode: str) -> str:
    return os.path.join(output_dir, f"manifest_{mode}.json")


def level_summary(level: IterationLevel) -> LevelSummary:
    """Sup norms of one level for the run manifest."""
    y_sup = norm_series(level.y, NormSpec(kind="C", order=0))
    R_sup = norm_series(level.R, NormSpec(kind="C", order=0))
    half = norm_series(level.y, NormSpec(kind="Hs", s=0.5))
    return LevelSummary(
        q=level.q,
        N=level.grid.N,
        times=int(level.time_grid.size),
        window=[float(level.time_grid[0]), float(level.time_grid[-1])],
        norms={
            "y_sup": float(np.max(y_sup)),
            "R_sup": float(np.max(R_sup)),
            "y_half_norm": float(np.max(half)),
        },
    )


class ConvexLabPipeline:
    """Runs one configured mode and writes its artifacts and manifest."""

    def __init__(self, config: RunConfig) -> None:
        self.config = config
        self.output_dir = config.output_dir
        os.makedirs(self.output_dir, exist_ok=True)
        self.reports: Dict[str, str] = {}
        self.snapshots: List[str] = []
        self.fields: Dict[str, str] = {}
        self.levels: List[LevelSummary] = []
        self.component_ratios: Dict[str, float] = {}
        self.T_L: Optional[float] = None
        logger.info(f"ConvexLabPipeline initialized: mode={config.mode}, seed={config.seed}, output={self.output_dir}")

    # -- helpers ----------------------------------------------------------

    def _path(self, name: str) -> str:
        return os.path.join(self.output_dir, name)

    def _write_json(self, name: str, payload: dict) -> str:
        path = self._path(name)
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True, default=float)
        self.reports[name.rsplit(".", 1)[0]] = path
        return path

    def _write_report(self, report: VerificationReport) -> VerificationReport:
        self._write_json(f"{report.suite}.json", report.to_dict())
        print(report.render())
        return report

    def _noise(self, params: ParameterSet, dt: float) -> NoiseContext:
        path = sample_path(self.config.seed, dt, horizon=max(params.L, params.T))
        noise = build_noise(path, params)
        self.T_L = noise.T_L
        return noise

    def _constants(self, params: ParameterSet) -> LedgerConstants:
        return derive_constants(params.gamma1, gamma2=params.gamma2, precision=self.config.precision)

    # -- modes ------------------------------------------------------------

    def run(self) -> RunManifest:
        """Run the configured mode and write the manifest.

        Returns:
            RunManifest with the exit code the command line should use
        """
        start_time = time.time()
        handler = {
            "certify": self.run_certify,
            "noise": self.run_noise,
            "base": self.run_base,
            "step": self.run_step,
            "verify": self.run_verify,
        }[self.config.mode]
        with run_log(self.output_dir) as log_path:
            self.reports["run_log"] = log_path
            green, exit_code, params = handler()
        manifest = RunManifest(
            version=LAB_VERSION,
            mode=self.config.mode,
            config=self.config.model_dump(),
            seed=self.config.seed,
            params=params.model_dump() if params is not None else None,
            T_L=self.T_L,
            levels=self.levels,
            component_ratios=self.component_ratios,
            reports=self.reports,
            snapshots=self.snapshots,
            fields=self.fields,
            green=green,
            exit_code=exit_code,
        )
        with open(manifest_path(self.output_dir, self.config.mode), "w") as fh:
            fh.write(manifest.model_dump_json(indent=2))
        logger.info(
            f"Run {self.config.mode} completed in {time.time() - start_time:.4f} seconds: "
            f"{'green' if green else 'red'} (exit {exit_code})"
        )
        return manifest

    def run_certify(self) -> Tuple[bool, int, ParameterSet]:
        cfg = self.config
        if cfg.explicit or cfg.toy:
            params = cfg.parameters()
        else:
            params = search_feasible(
                cfg.gamma1,
                cfg.gamma2,
                K=cfg.K,
                T=cfg.T,
                kappa=cfg.kappa,
                survival_samples=cfg.survival_samples,
                seed=cfg.seed,
                precision=cfg.precision,
            )
        constants = self._constants(params)
        survival = None
        if cfg.survival_samples > 0:
            spec = StoppingTimeSpec(L=params.L, delta=params.delta_holder)
            survival = survival_probability(spec, params.T, cfg.survival_samples, cfg.seed)
        report = certify(params, constants, cfg.precision, survival_estimate=survival, kappa=cfg.kappa)
        self._write_json("certificate.json", report.to_certificate())
        for entry in report.failing():
            logger.warning(f"Ledger entry {entry.id} ({entry.tag}) is {entry.verdict}: {entry.statement}")
        return report.overall, EXIT_OK if report.overall else EXIT_INFEASIBLE, params

    def run_noise(self) -> Tuple[bool, int, ParameterSet]:
        params = self.config.parameters()
        noise = self._noise(params, self.config.dt)
        self.reports["path"] = export_path(self._path("noise_path.csv"), noise.path)
        self.reports["stopping_time"] = export_stopping_report(self._path("stopping_time.json"), noise.stopping)
        times = noise.path.times[noise.path.times <= noise.T_L + 1e-12]
        frame = norm_series_frame(times, {"Upsilon": np.exp(noise.path.values[: times.size])}, noise.profile)
        self.reports["profile"] = export_norm_series(self._path("noise_profile.csv"), frame)
        if self.config.survival_samples > 0:
            estimate = survival_probability(noise.spec, params.T, self.config.survival_samples, self.config.seed)
            self._write_json("survival.json", {"T": params.T, "samples": self.config.survival_samples, "estimate": estimate})
        return True, EXIT_OK, params

    def _build_base(self, params: ParameterSet, dt: float) -> Tuple[IterationLevel, NoiseContext]:
        noise = self._noise(params, dt)
        stop = min(self.config.base_stop, noise.T_L)
        times = time_grid(self.config.base_start, stop, dt)
        if times.size < 3:
            raise ConfigError(f"base window [{self.config.base_start}, {stop}] holds fewer than 3 samples")
        return init_base(params, noise, times), noise

    def _save_level(self, name: str, level: IterationLevel, extra: Optional[Dict[str, np.ndarray]] = None) -> str:
        path = self._path(f"{name}.npz")
        np.savez(
            path,
            q=level.q,
            lam=level.lam,
            N=level.grid.N,
            times=level.time_grid,
            y=level.y.coeffs,
            R=level.R.coeffs,
            p=level.p.coeffs,
            **(extra or {}),
        )
        self.fields[name] = path
        return path

    def run_base(self) -> Tuple[bool, int, ParameterSet]:
        cfg = self.config
        params = cfg.parameters()
        constants = self._constants(params)
        level, noise = self._build_base(params, cfg.dt)
        study = base_residual_study(level, noise, params.gamma1, params.gamma2)
        ratio = study.ratio
        # below this the difference error is roundoff and the ratio carries no order information
        resolved = study.coarse.relative > RESIDUAL_FLOOR

        residual = VerificationReport(
            suite="base_residual",
            entries=[
                CheckEntry(check_id="equation_residual", tag="equation", measured=study.extrapolated.relative, threshold=cfg.base_residual_tol),
                CheckEntry(check_id="projected_residual", tag="equation", measured=study.projected.relative, threshold=cfg.base_residual_tol),
                CheckEntry(check_id="difference_residual", tag="equation", measured=study.coarse.relative, threshold=cfg.residual_tol, hard=False),
                CheckEntry(
                    check_id="residual_convergence",
                    tag="second order in dt",
                    measured=abs(ratio - 4.0) if resolved else 0.0,
                    threshold=0.5,
                    hard=resolved,
                ),
            ],
            environment={
                "dt": cfg.dt,
                "N": level.grid.N,
                "ratio": ratio,
                "half_step_residual": study.half_step.relative,
                "term_norms": study.extrapolated.term_norms,
            },
        )
        reports = [
            self._write_report(residual),
            self._write_report(hypothesis_report(level, params, noise, constants)),
            self._write_report(energy_report([level], noise, params)),
        ]
        self.levels.append(level_summary(level))
        self._save_level("level_0", level)
        y_sup = norm_series(level.y, NormSpec(kind="C", order=0))
        half = norm_series(level.y, NormSpec(kind="Hs", s=0.5))
        frame = norm_series_frame(level.time_grid, {"y_sup": y_sup, "y_half_norm": half}, noise.profile)
        self.reports["norms_level_0"] = export_norm_series(self._path("norms_level_0.csv"), frame)
        green = all(r.green for r in reports)
        return green, EXIT_OK if green else EXIT_RESIDUAL, params

    def run_step(self) -> Tuple[bool, int, ParameterSet]:
        cfg = self.config
        params = cfg.parameters()
        if cfg.q > 0:
            # grid and range errors take precedence over the unsupported level
            scales = sequences(params, cfg.q, grid_size=cfg.N)
            raise ConfigError(
                f"step mode builds on level 0; q={cfg.q} (lambda_q={scales.lambda_q:.6g}, t_q={scales.t_q:.6f}) is not supported"
            )
        constants = self._constants(params)
        plan = plan_step(
            params,
            cfg.q,
            cfg.window_start,
            cfg.window_samples,
            steps_per_tau=cfg.steps_per_tau,
            grid_size=cfg.N,
        )
        noise = self._noise(params, plan.dt)
        level = init_base(params, noise, plan.level_times)
        step_config = StepConfig(
            steps_per_tau=cfg.steps_per_tau,
            grid_size=cfg.N,
            residual_tol=cfg.residual_tol,
            deep_oscillation=cfg.deep_oscillation,
        )
        result = induction_step(level, noise, params, plan, step_config, C1=constants.C1)

        breakdown = result.breakdown
        self.component_ratios = dict(breakdown.ratios)
        self._write_json(
            "stress_breakdown.json",
            {
                "norms": breakdown.norm_table(),
                "ratios": breakdown.ratios,
                "oscillation": {name: float(tensor_operator_norm(v.physical()).max()) for name, v in breakdown.oscillation.items()},
                "o1_tracefree_residual": breakdown.o1_tracefree_residual,
                "o1_cancelled": breakdown.o1_tracefree_residual <= 1e-8,
                "deep_gaps": breakdown.deep_gaps,
                "residual": breakdown.residual,
            },
        )
        reports = [
            self._write_report(step_report(result)),
            self._write_report(transport_sanity(result)),
            self._write_report(hypothesis_report(level, params, noise, constants, step=result)),
        ]
        self.levels.extend([level_summary(level), level_summary(result.level)])

        w = result.perturbation.w.coeffs[list(plan.output)]
        self._save_level("level_1", result.level, {"w": w})
        grid = result.level.grid
        for n, t in enumerate(result.level.time_grid):
            self.snapshots.append(write_snapshot(self._path(f"snapshots/y1_{n:03d}.sqgf"), result.level.y.coeffs[n], grid, t))
            self.snapshots.append(write_snapshot(self._path(f"snapshots/w1_{n:03d}.sqgf"), w[n], grid, t))
        green = all(r.green for r in reports)
        return green, EXIT_OK if green else EXIT_RESIDUAL, params

    def run_verify(self) -> Tuple[bool, int, ParameterSet]:
        cfg = self.config
        params = cfg.parameters()
        constants = self._constants(params)
        reports = [self._write_report(identity_suite(Grid.create(min(cfg.N, IDENTITY_N)), seed=cfg.seed, gamma2=params.gamma2))]
        level, noise = self._build_base(params, cfg.dt)
        reports.append(self._write_report(hypothesis_report(level, params, noise, constants)))
        reports.append(self._write_report(energy_report([level], noise, params)))
        self.levels.append(level_summary(level))
        green = all(r.green for r in reports)
        return green, EXIT_OK if green else EXIT_RESIDUAL, params


def _load_manifest(output_dir: str, mode: str) -> RunManifest:
    path = manifest_path(output_dir, mode)
    if not os.path.exists(path):
        raise MissingArtifact(f"no {mode} run found in {output_dir} (expected {path})")
    with open(path) as fh:
        return RunManifest.model_validate_json(fh.read())


def _load_fields(manifest: RunManifest, name: str) -> Dict[str, np.ndarray]:
    path = manifest.fields.get(name)
    if path is None or not os.path.exists(path):
        raise MissingArtifact(f"field archive {name} is missing from the {manifest.mode} run")
    with np.load(path) as data:
        return {key: data[key] for key in data.files}


def export_artifacts(output_dir: str, what: ExportKind, source: str = "step") -> List[str]:
    """Write CSV or SQGF exports from the artifacts of an earlier run.

    Args:
        output_dir: directory of the earlier run
        what: "spectra", "norms", "path" or "snapshots"
        source: run mode whose artifacts are exported

    Returns:
        Paths of the written files
    """
    start_time = time.time()
    manifest = _load_manifest(output_dir, source)
    export_dir = os.path.join(output_dir, "exports")
    os.makedirs(export_dir, exist_ok=True)
    written: List[str] = []

    if what == "path":
        params = ParameterSet(**manifest.params)
        dt = manifest.config["dt"]
        noise = build_noise(sample_path(manifest.seed, dt, horizon=max(params.L, params.T)), params)
        written.append(export_path(os.path.join(export_dir, "noise_path.csv"), noise.path))
        written.append(export_stopping_report(os.path.join(export_dir, "stopping_time.json"), noise.stopping))
    else:
        name = "level_1" if source == "step" else "level_0"
        data = _load_fields(manifest, name)
        grid = Grid.create(int(data["N"]))
        times = data["times"]
        if what == "spectra":
            for n, t in enumerate(times):
                written.append(export_spectrum(os.path.join(export_dir, f"y_{n:03d}_spectrum.csv"), data["y"][n], grid, rel_tol=1e-13))
                if "w" in data:
                    written.append(export_spectrum(os.path.join(export_dir, f"w_{n:03d}_spectrum.csv"), data["w"][n], grid, rel_tol=1e-13))
        elif what == "snapshots":
            for n, t in enumerate(times):
                written.append(write_snapshot(os.path.join(export_dir, f"y_{n:03d}.sqgf"), data["y"][n], grid, float(t)))
                written.append(write_snapshot(os.path.join(export_dir, f"R_{n:03d}.sqgf"), data["R"][n], grid, float(t)))
        else:
            params = ParameterSet(**manifest.params)
            y = VectorField2(grid=grid, coeffs=data["y"], time_tag=times)
            R = SymTensorField2(grid=grid, coeffs=data["R"], time_tag=times)
            columns = {
                "y_sup": norm_series(y, NormSpec(kind="C", order=0)),
                "R_sup": norm_series(R, NormSpec(kind="C", order=0)),
                "y_half_norm": norm_series(y, NormSpec(kind="Hs", s=0.5)),
            }
            frame = norm_series_frame(times, columns, m0_profile(params.L, params.T))
            written.append(export_norm_series(os.path.join(export_dir, f"norms_{name}.csv"), frame))
    logger.info(f"Exported {len(written)} {what} files from {source} run in {time.time() - start_time:.4f} seconds")
    return written
