"""
Run configuration: typed view over the flat `key = value` file read by
utils.load_config, with defaults, validation and the effective-config echo.
"""

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

from equations import PdeProblem, builtin_problem
from model import Architecture
from sampling import AXIS_NAMES, parse_slice
from training import TrainConfig
from utils import ConfigError, UnknownProblemError, format_float, load_config


def _to_int(key: str, raw: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"expected an integer, got {raw!r}", key=key)


def _to_float(key: str, raw: str) -> float:
    try:
        value = float(raw)
    except ValueError:
        raise ConfigError(f"expected a number, got {raw!r}", key=key)
    if not math.isfinite(value):
        raise ConfigError(f"expected a finite number, got {raw!r}", key=key)
    return value


def _to_bool(key: str, raw: str) -> bool:
    lowered = raw.lower()
    if lowered in ("true", "yes", "1", "on"):
        return True
    if lowered in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"expected true/false, got {raw!r}", key=key)


def _to_str(key: str, raw: str) -> str:
    return raw


def _to_epochs(key: str, raw: str) -> Tuple[int, ...]:
    if not raw.strip():
        return ()
    return tuple(_to_int(key, part.strip()) for part in raw.split(","))


def _to_slice(key: str, raw: str) -> Dict[int, float]:
    return parse_slice(raw)


# key -> (attribute, parser, default)
KEYS: Dict[str, Tuple[str, Callable, object]] = {
    "problem": ("problem", _to_str, "p1_3d"),
    "layers": ("layers", _to_int, 5),
    "width": ("width", _to_int, 128),
    "omega0": ("omega0", _to_float, 30.0),
    "fourier.enabled": ("fourier_enabled", _to_bool, False),
    "fourier.sigma": ("fourier_sigma", _to_float, 1.0),
    "fourier.n": ("fourier_n", _to_int, 256),
    "train.M": ("M", _to_int, 256),
    "train.Nb": ("Nb", _to_int, 64),
    "train.epochs": ("epochs", _to_int, 1024),
    "train.eta": ("eta", _to_float, 1e-4),
    "train.snapshots": ("snapshots", _to_epochs, ()),
    "adam.beta1": ("beta1", _to_float, 0.9),
    "adam.beta2": ("beta2", _to_float, 0.999),
    "adam.eps": ("eps", _to_float, 1e-8),
    "ec.K": ("ec_orders", _to_int, 0),
    "seed": ("seed", _to_int, 0),
    "eval.resolution": ("eval_resolution", _to_int, 64),
    "eval.slice": ("eval_slice", _to_slice, {}),
    "eval.points": ("eval_points", _to_int, 2**15),
    "eval.every": ("eval_every", _to_int, 1),
    "out.dir": ("out_dir", _to_str, "runs"),
}


@dataclass(frozen=True)
class RunConfig:
    problem: str = "p1_3d"
    layers: int = 5
    width: int = 128
    omega0: float = 30.0
    fourier_enabled: bool = False
    fourier_sigma: float = 1.0
    fourier_n: int = 256
    M: int = 256
    Nb: int = 64
    epochs: int = 1024
    eta: float = 1e-4
    snapshots: Tuple[int, ...] = ()
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    ec_orders: int = 0
    seed: int = 0
    eval_resolution: int = 64
    eval_slice: Dict[int, float] = field(default_factory=dict)
    eval_points: int = 2**15
    eval_every: int = 1
    out_dir: str = "runs"
    source: Optional[str] = None

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            M=self.M,
            Nb=self.Nb,
            epochs=self.epochs,
            eta=self.eta,
            beta1=self.beta1,
            beta2=self.beta2,
            eps=self.eps,
            seed=self.seed,
            ec_orders=self.ec_orders,
            eval_every=self.eval_every,
            snapshots=self.snapshots,
        )

    def architecture(self) -> Architecture:
        return Architecture(
            layers=self.layers,
            width=self.width,
            omega0=self.omega0,
            fourier_enabled=self.fourier_enabled,
            fourier_sigma=self.fourier_sigma,
            fourier_n=self.fourier_n,
        )

    def pde(self) -> PdeProblem:
        try:
            return builtin_problem(self.problem)
        except UnknownProblemError as e:
            raise ConfigError(e.message, key="problem")

    def with_overrides(self, out_dir: Optional[str] = None, seed: Optional[int] = None) -> "RunConfig":
        changes = {}
        if out_dir is not None:
            changes["out_dir"] = out_dir
        if seed is not None:
            changes["seed"] = seed
        updated = replace(self, **changes)
        updated.validate()
        return updated

    def validate(self):
        """Cross-check every field by building the objects that consume them."""
        problem = self.pde()
        self.train_config()
        self.architecture()
        for axis in self.eval_slice:
            if not 0 <= axis < problem.dim:
                raise ConfigError(
                    f"slice axis {axis} out of range for {problem.name} ({problem.dim}-d)",
                    key="eval.slice",
                )
        if self.eval_resolution < 2:
            raise ConfigError("resolution must be at least 2", key="eval.resolution")
        if self.eval_points < 1:
            raise ConfigError("evaluation set must hold at least one point", key="eval.points")

    def items(self) -> List[Tuple[str, str]]:
        """Every effective key with its value rendered for the echo."""
        out = []
        for key, (attr, _, _) in KEYS.items():
            value = getattr(self, attr)
            if isinstance(value, bool):
                text = "true" if value else "false"
            elif isinstance(value, float):
                text = format_float(value)
            elif isinstance(value, tuple):
                text = ", ".join(str(v) for v in value)
            elif isinstance(value, dict):
                text = ", ".join(
                    f"{AXIS_NAMES[a] if a < len(AXIS_NAMES) else a}={format_float(v)}"
                    for a, v in sorted(value.items())
                )
            else:
                text = str(value)
            out.append((key, text))
        return out


def parse_config(path) -> RunConfig:
    """
    Read a run configuration file; absent keys take their defaults.

    Raises:
        ConfigError: Missing file, unknown key or bad value (naming the key)
    """
    raw = load_config(path)

    values = {}
    for key, text in raw.items():
        if key not in KEYS:
            raise ConfigError(f"unknown key (known: {', '.join(KEYS)})", key=key)
        attr, parser, _ = KEYS[key]
        values[attr] = parser(key, text)

    config = RunConfig(source=str(Path(path)), **values)
    config.validate()
    return config


def default_config() -> RunConfig:
    return RunConfig()
