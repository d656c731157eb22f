import os

from dotenv import load_dotenv

load_dotenv()

# Version information
LAB_VERSION = "0.1.0"
BUILD_DATE = "2026-10-18"

# Output locations
OUTPUT_DIR = os.getenv("CONVEXLAB_OUTPUT_DIR", "runs")
LOG_DIR = os.getenv("CONVEXLAB_LOG_DIR", os.path.join(os.path.dirname(os.path.dirname(__file__)), "logs"))

# Run defaults
DEFAULT_N = int(os.getenv("CONVEXLAB_DEFAULT_N", 256))
DEFAULT_SEED = int(os.getenv("CONVEXLAB_DEFAULT_SEED", 7))
THREADS = int(os.getenv("CONVEXLAB_THREADS", 1))
RESIDUAL_TOL = float(os.getenv("CONVEXLAB_RESIDUAL_TOL", 1e-3))
BASE_RESIDUAL_TOL = float(os.getenv("CONVEXLAB_BASE_RESIDUAL_TOL", 1e-6))
INTERVAL_PREC = int(os.getenv("CONVEXLAB_INTERVAL_PREC", 53))

# Exit codes
EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG = 2
EXIT_GRID = 3
EXIT_HISTORY = 4
EXIT_RESIDUAL = 5
EXIT_INFEASIBLE = 6
