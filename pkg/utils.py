"""
Shared utility functions for the pygalerkin solver.
Provides the error family, flat config file loading, and console/run-log output.
"""

import re
import sys
from pathlib import Path
from typing import Dict, Optional


class SolverError(Exception):
    """Base class for every error the solver reports to the user."""

    code = "solver"

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


class ConfigError(SolverError):
    code = "config"

    def __init__(self, message: str, key: Optional[str] = None):
        if key is not None and not message.startswith(key):
            message = f"{key}: {message}"
        super().__init__(message)
        self.key = key


class InvalidInputError(SolverError):
    code = "invalid-input"


class ShapeError(SolverError):
    code = "shape"


class UnknownProblemError(SolverError):
    code = "unknown-problem"


class StackUnderflowError(SolverError):
    code = "stack-underflow"


class DivergedTrainingError(SolverError):
    code = "diverged"

    def __init__(
        self,
        message: str,
        batch_index: Optional[int] = None,
        stage: Optional[int] = None,
    ):
        self.reason = message
        if batch_index is not None:
            message = f"{message} (batch {batch_index})"
        if stage is not None:
            message = f"{message} (stage {stage})"
        super().__init__(message)
        self.batch_index = batch_index
        self.stage = stage


class TrainingAborted(SolverError):
    """A stage failed; `stack` holds the stages that finished before it."""

    code = "training-aborted"

    def __init__(self, message: str, stack=None, stage: Optional[int] = None):
        super().__init__(message)
        self.stack = stack
        self.stage = stage


class DegenerateMetricError(SolverError):
    code = "degenerate-metric"


class UnsupportedOracleError(SolverError):
    code = "unsupported-oracle"


class CheckpointError(SolverError):
    code = "checkpoint"


class OutputError(SolverError):
    code = "io"

    def __init__(self, message: str, path=None):
        if path is not None:
            message = f"{message}: {path}"
        super().__init__(message)
        self.path = path


def load_config(config_path) -> Dict[str, str]:
    """
    Load a flat `key = value` configuration file.
    Blank lines and `#` comments are skipped. Returns the raw string values;
    typing and defaults are applied by config.parse_config.
    """
    config_path = Path(config_path)

    if not config_path.exists():
        raise ConfigError(f"configuration file not found at {config_path}")

    config: Dict[str, str] = {}
    with open(config_path, "r", encoding="utf-8") as f:
        for number, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(
                    f"line {number} is not of the form 'key = value': {line!r}"
                )
            key, value = line.split("=", 1)
            key = key.strip()
            if key in config:
                raise ConfigError("key given more than once", key=key)
            # Inline comments
            value = value.split("#", 1)[0]
            config[key] = value.strip()

    return config


def colorize(text: str, color: str) -> str:
    """
    Apply ANSI color codes to text.

    Args:
        text: Text to colorize
        color: Color name (red, green, yellow, blue, magenta, cyan, white)

    Returns:
        Text wrapped in ANSI color codes
    """
    color_map = {
        "red": "\033[91m",
        "green": "\033[92m",
        "yellow": "\033[93m",
        "blue": "\033[94m",
        "magenta": "\033[95m",
        "cyan": "\033[96m",
        "white": "\033[97m",
        "reset": "\033[0m",
    }

    color_code = color_map.get(color.lower(), "")
    reset_code = color_map["reset"]

    if color_code:
        return f"{color_code}{text}{reset_code}"
    return text


# Run log registry: one open run directory per process
_run_log_path: Optional[Path] = None
_debug_enabled: bool = False

_ANSI = re.compile(r"\033\[[0-9;]*m")


def open_run_log(path) -> Path:
    """Route every echoed line to `path` (appending) as well as the console."""
    global _run_log_path

    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.touch(exist_ok=True)
    except OSError as e:
        raise OutputError(f"cannot open run log ({e.strerror})", path=path)
    _run_log_path = path
    return path


def close_run_log():
    global _run_log_path
    _run_log_path = None


def set_debug(enabled: bool):
    global _debug_enabled
    _debug_enabled = enabled


def echo(text: str = "", color: Optional[str] = None, err: bool = False):
    """Print a line (optionally coloured) and append it, uncoloured, to the run log."""
    shown = colorize(text, color) if color else text
    print(shown, file=sys.stderr if err else sys.stdout)

    if _run_log_path is not None:
        with open(_run_log_path, "a", encoding="utf-8") as f:
            f.write(_ANSI.sub("", text) + "\n")


def debug(text: str):
    if _debug_enabled:
        echo(f"[DEBUG] {text}", "magenta")


def format_float(value: float) -> str:
    """Text that round-trips a float64 exactly (17 significant digits, trailing zeros dropped)."""
    return format(float(value), ".17g")
