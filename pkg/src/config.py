import os
import logging
from pathlib import Path
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

# --- Defaults (overridden by SCDP_* environment variables, then by CLI flags) ---
# Dominance tolerance when pruning linear functions (witness margin must exceed it)
DEFAULT_PRUNE_TOL = 1e-9
DEFAULT_MERGE_TOL = 0.0           # 0 = exact structural merging only
DEFAULT_MAX_VECTORS = 0           # 0 = no cap on total linear functions per stage
# Naive grid guard: resolution**d * |S|, and cells * outcomes per (state, action)
DEFAULT_MAX_CELLS = 5_000_000
DEFAULT_TIME_BUDGET = 0.0         # seconds, 0 = unlimited
# Monte-Carlo seed; episode i draws from default_rng([seed, i])
DEFAULT_SEED = 0
DEFAULT_LOG_LEVEL = "INFO"
# Directory written by `solve` and served by the query service
DEFAULT_SOLUTION_DIR = "solution"

LOG_FORMAT = '%(asctime)s - %(levelname)s - %(message)s'

# Shipped schema and default rover spec
DATA_DIR = Path(__file__).resolve().parent.parent / "data"

# Configure logging
logging.basicConfig(
    level=getattr(logging, os.getenv("SCDP_LOG_LEVEL", DEFAULT_LOG_LEVEL).upper(), logging.INFO),
    format=LOG_FORMAT
)


def _default_threads():
    return os.cpu_count() or 1


def _read(name, cast, default):
    """Reads one SCDP_* variable, falling back to the default on bad values."""
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        value = cast(raw)
    except ValueError:
        logging.warning(f"Ignoring invalid value {raw!r} for {name}; using default {default!r}.")
        return default
    if isinstance(value, (int, float)) and value < 0:
        logging.warning(f"Ignoring negative value {raw!r} for {name}; using default {default!r}.")
        return default
    return value


def get_settings():
    """
    Returns the effective solver settings.

    Environment variables are read again on every call so that a changed
    environment (or a patched one in tests) is picked up.

    Returns:
        dict: prune_tol, merge_tol, max_vectors, max_cells, time_budget,
              threads, seed, log_level and solution_dir.
    """
    threads = _read("SCDP_THREADS", int, _default_threads())
    settings = {
        "prune_tol": _read("SCDP_PRUNE_TOL", float, DEFAULT_PRUNE_TOL),
        "merge_tol": _read("SCDP_MERGE_TOL", float, DEFAULT_MERGE_TOL),
        "max_vectors": _read("SCDP_MAX_VECTORS", int, DEFAULT_MAX_VECTORS),
        "max_cells": _read("SCDP_MAX_CELLS", int, DEFAULT_MAX_CELLS),
        "time_budget": _read("SCDP_TIME_BUDGET", float, DEFAULT_TIME_BUDGET),
        "threads": threads if threads > 0 else _default_threads(),
        "seed": _read("SCDP_SEED", int, DEFAULT_SEED),
        "log_level": os.getenv("SCDP_LOG_LEVEL", DEFAULT_LOG_LEVEL).upper(),
        "solution_dir": os.getenv("SCDP_SOLUTION_DIR", DEFAULT_SOLUTION_DIR),
    }
    logging.debug(f"Effective settings: {settings}")
    return settings


def set_log_level(level):
    """Changes the root log level (used by the CLI --log-level flag)."""
    logging.getLogger().setLevel(getattr(logging, str(level).upper(), logging.INFO))
