"""
Shared defaults, version information and process-level settings.
"""
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Dict, Optional

from errors import ConfigError

TOOL_NAME = "aflib"
__version__ = "0.3.0"
SCHEMA_VERSION = 1

THREADS_ENV_VAR = "AFLIB_THREADS"

# wave_cone
RANK_TOL = 1e-8
MEMBER_TOL = 1e-6
SPAN_CUTOFF = 1e-10
ANGULAR_SAMPLES_2D = 720
FIBONACCI_SAMPLES_3D = 2048
RANDOM_SAMPLES_HIGH_D = 4096
REFINE_MAX_ITERS = 200
REFINE_STARTS = 4

# spectral_projection
NULLSPACE_TOL = 1e-10
PROJECTOR_CACHE_SIZE = 16

# integrand
RECESSION_BASE = 1.5
RECESSION_T_MAX = 1e6
RECESSION_TOL = 1e-3

# experiments
LSC_TOL = 1e-3
RELAX_TOL_REL = 0.05
JENSEN_TOL = 5e-2

LOG_FORMAT = '%(asctime)s :: %(levelname)s :: %(name)s :: %(message)s'
LOG_DATE_FORMAT = "%Y-%m-%d %H:%M:%S"

logger = logging.getLogger(__name__)


def thread_limit(environ: Optional[Dict[str, str]] = None) -> int:
    """Worker cap read from AFLIB_THREADS (default 1)."""
    environ = os.environ if environ is None else environ
    raw = environ.get(THREADS_ENV_VAR, "").strip()
    if not raw:
        return 1
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV_VAR} must be a positive integer, got {raw!r}")
    if value < 1:
        raise ConfigError(f"{THREADS_ENV_VAR} must be a positive integer, got {value}")
    return value


def setup_logging(level: str = "WARNING") -> None:
    """Install the stderr handler on the root logger. Entry points only."""
    root = logging.getLogger()
    root.setLevel(getattr(logging, level.upper(), logging.WARNING))
    for handler in list(root.handlers):
        if getattr(handler, "_aflib", False):
            root.removeHandler(handler)
    stream_handler = logging.StreamHandler(sys.stderr)
    stream_handler.setFormatter(logging.Formatter(LOG_FORMAT, LOG_DATE_FORMAT))
    stream_handler._aflib = True
    root.addHandler(stream_handler)


def load_json_file(path) -> Dict[str, Any]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e}")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path} is not valid JSON: {e}")
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must hold a JSON object")
    return data
