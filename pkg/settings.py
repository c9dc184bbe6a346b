#!/usr/bin/env python3
"""
Runtime configuration for the lifetime toolkit.

Values come from the environment (optionally a .env file) with safe defaults:
1. PE_SEED       - master seed fallback for the CLI
2. PE_WORKERS    - default worker count for repetitions
3. PE_OUT_DIR    - default output directory
4. PE_LOG_LEVEL  - logging level
5. PE_MC_SAMPLES - default Monte Carlo sample count for threshold curves
"""

import logging
import os
import subprocess

from dotenv import load_dotenv

# Load environment variables
load_dotenv()

__version__ = "0.3.0"

MASTER_SEED = int(os.getenv("PE_SEED", "0"))
WORKERS = int(os.getenv("PE_WORKERS", "1"))
OUT_DIR = os.getenv("PE_OUT_DIR", "runs")
LOG_LEVEL = os.getenv("PE_LOG_LEVEL", "INFO")
MC_SAMPLES = int(float(os.getenv("PE_MC_SAMPLES", "100000")))

# Numerical tolerances
BALL_TOL = 1e-12
CIRCUM_TOL = 1e-10
DEGENERACY_TOL = 1e-12
PERSISTENCE_TOL = 1e-10
MEB_SHUFFLE_SEED = 20240917

# Size guards for brute-force builders
CECH_MAX_POINTS = 16
VR_MAX_POINTS = 32
CLUSTER_MAX_POINTS = 16
MAX_DIMENSION = 8

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def setup_logging(level: str = None) -> None:
    """Configure root logging once for scripts and the CLI."""
    level_name = (level or LOG_LEVEL).upper()
    logging.basicConfig(level=getattr(logging, level_name, logging.INFO), format=LOG_FORMAT)


def get_version() -> str:
    return __version__


def git_describe() -> str:
    """Return `git describe` of the working tree, or 'unknown' outside a repository."""
    try:
        result = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True,
            text=True,
            timeout=5,
            cwd=os.path.dirname(os.path.abspath(__file__)),
        )
        if result.returncode == 0 and result.stdout.strip():
            return result.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return "unknown"
