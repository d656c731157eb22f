import argparse
import logging
import sys
import traceback
from typing import Any, Dict, List, Optional

from convexlab.exceptions import (
    ConfigError,
    GridError,
    InsufficientHistory,
    MissingArtifact,
    ResidualCheckFailed,
    SearchExhausted,
)
from lab.config import (
    EXIT_CONFIG,
    EXIT_GRID,
    EXIT_HISTORY,
    EXIT_INFEASIBLE,
    EXIT_OK,
    EXIT_RESIDUAL,
    EXIT_UNEXPECTED,
    LAB_VERSION,
)
from lab.logging_config import setup_logging
from lab.models.run_models import build_run_config, parse_config_file
from lab.services.pipeline import ConvexLabPipeline, export_artifacts

logger = logging.getLogger(__name__)

EXIT_CODES_HELP = f"""exit codes:
  {EXIT_OK}  success, every hard check green
  {EXIT_UNEXPECTED}  unexpected error (traceback in the log)
  {EXIT_CONFIG}  invalid configuration or missing artifact
  {EXIT_GRID}  grid too small for the frequencies involved
  {EXIT_HISTORY}  insufficient time history for mollification
  {EXIT_RESIDUAL}  residual check or another hard check failed
  {EXIT_INFEASIBLE}  infeasible parameters (red certificate or exhausted search)
"""

# flag name -> RunConfig field
_RUN_FLAGS = {
    "mode": "mode",
    "N": "N",
    "seed": "seed",
    "output_dir": "output_dir",
    "gamma1": "gamma1",
    "gamma2": "gamma2",
    "K": "K",
    "T": "T",
    "kappa": "kappa",
    "survival_samples": "survival_samples",
    "L": "L",
    "a": "a",
    "b": "b",
    "beta": "beta",
    "dt": "dt",
    "base_start": "base_start",
    "base_stop": "base_stop",
    "q": "q",
    "window_start": "window_start",
    "window_samples": "window_samples",
    "steps_per_tau": "steps_per_tau",
    "threads": "threads",
    "residual_tol": "residual_tol",
    "base_residual_tol": "base_residual_tol",
    "precision": "precision",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="convexlab",
        description="Convex-integration laboratory for the stochastic SQG momentum equation",
        epilog=EXIT_CODES_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {LAB_VERSION}")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="run one mode", epilog=EXIT_CODES_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    run.add_argument("--config", help="key = value configuration file; flags override it")
    run.add_argument("--mode", choices=["certify", "base", "step", "verify", "noise"])
    run.add_argument("--N", type=int, help="grid size for steps and identity checks")
    run.add_argument("--seed", type=int)
    run.add_argument("--output-dir", dest="output_dir")
    run.add_argument("--toy", action="store_const", const=True, help="grid-representable toy parameters")
    run.add_argument("--deep-oscillation", dest="deep_oscillation", action="store_const", const=True)
    run.add_argument("--gamma1", type=float)
    run.add_argument("--gamma2", type=float)
    run.add_argument("--K", type=float)
    run.add_argument("--T", type=float)
    run.add_argument("--kappa", type=float)
    run.add_argument("--survival-samples", dest="survival_samples", type=int)
    run.add_argument("--L", type=float)
    run.add_argument("--a", type=int)
    run.add_argument("--b", type=int)
    run.add_argument("--beta", type=float)
    run.add_argument("--dt", type=float, help="time step of base and noise runs")
    run.add_argument("--base-start", dest="base_start", type=float)
    run.add_argument("--base-stop", dest="base_stop", type=float)
    run.add_argument("--q", type=int)
    run.add_argument("--window-start", dest="window_start", type=float)
    run.add_argument("--window-samples", dest="window_samples", type=int)
    run.add_argument("--steps-per-tau", dest="steps_per_tau", type=int)
    run.add_argument("--threads", type=int, help="recorded in the manifest; results do not depend on it")
    run.add_argument("--residual-tol", dest="residual_tol", type=float, help="relative residual gate of the induction step")
    run.add_argument("--base-residual-tol", dest="base_residual_tol", type=float, help="relative residual gate of the base level")
    run.add_argument("--precision", type=int, help="interval working precision in bits")

    export = commands.add_parser("export", help="export artifacts of an earlier run", epilog=EXIT_CODES_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    export.add_argument("what", choices=["spectra", "norms", "path", "snapshots"])
    export.add_argument("--output-dir", dest="output_dir", required=True)
    export.add_argument("--source", default="step", choices=["base", "step", "noise", "verify"])
    return parser


def _flag_values(args: argparse.Namespace) -> Dict[str, Any]:
    values = {field: getattr(args, flag) for flag, field in _RUN_FLAGS.items()}
    values["toy"] = args.toy
    values["deep_oscillation"] = args.deep_oscillation
    return values


def run_command(args: argparse.Namespace) -> int:
    file_values = parse_config_file(args.config) if args.config else {}
    config = build_run_config(file_values, _flag_values(args))
    manifest = ConvexLabPipeline(config).run()
    return manifest.exit_code


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(level=getattr(logging, args.log_level))
    try:
        if args.command == "export":
            files = export_artifacts(args.output_dir, args.what, source=args.source)
            for path in files:
                print(path)
            return EXIT_OK
        return run_command(args)
    except (ConfigError, MissingArtifact) as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG
    except GridError as e:
        logger.error(f"Grid error: {e}")
        return EXIT_GRID
    except InsufficientHistory as e:
        logger.error(f"Insufficient history: {e}")
        return EXIT_HISTORY
    except ResidualCheckFailed as e:
        logger.error(f"Residual check failed: {e} (components: {e.component_norms})")
        return EXIT_RESIDUAL
    except SearchExhausted as e:
        logger.error(f"Parameter search exhausted at {e.binding}: {e}")
        return EXIT_INFEASIBLE
    except Exception as e:
        logger.error(f"Unexpected error: {e}")
        logger.error(traceback.format_exc())
        return EXIT_UNEXPECTED


if __name__ == "__main__":
    sys.exit(main())
