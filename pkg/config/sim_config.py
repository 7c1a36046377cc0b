import os
from pathlib import Path

from dotenv import load_dotenv

load_dotenv()

# Version
Version = "0.6.0"

# Runtime settings, overridable through the environment or a .env file
LOG_LEVEL = os.getenv("OTAFL_LOG_LEVEL", "INFO").upper()
DEFAULT_WORKERS = max(1, int(os.getenv("OTAFL_WORKERS", "1")))
OUTPUT_ROOT = Path(os.getenv("OTAFL_OUTPUT_ROOT", "runs"))

# Solver and estimator limits
LOCAL_MINIMIZE_MAX_ITERS = 100_000
GRADIENT_BOUND_SAFETY = 1.2
SIGMA_S_RESAMPLES = 200
MIN_SIGMA_S_PROBES = 20
MIN_G_PROBE_ROUNDS = 10
DEFAULT_D_STAR = 8

# System configuration used by the baseline preset
SYSTEM_DEFAULTS = {
    "clients": 100,
    "batch_size": 50,
    "learning_rate": 0.03,
    "dir_alpha": 0.1,
    "mu_c": 1.0,
    "survival": 0.99,
    "hardening_rounds": 200,
}
