"""
Monte-Carlo minibatches and deterministic grids on axis-aligned boxes.

Interior points are uniform in the open box. Boundary points pick a face with
probability proportional to its measure and are uniform on that face. Every
random stream is derived from (run seed, stage, stream id) so that a run is
reproducible stage by stage.
"""

import math
import re
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
import torch

from jets import DTYPE
from utils import ConfigError, InvalidInputError

# Stream ids for derive_seed
STREAM_INIT = 0
STREAM_FOURIER = 1
STREAM_SAMPLING = 2
STREAM_EVAL = 3
STREAM_REPORT = 4

AXIS_NAMES = ("x", "y", "z")


def derive_seed(seed: int, stage: int, stream: int) -> int:
    """Independent 32-bit seed for one (run seed, stage, stream) triple."""
    if seed < 0 or stage < 0 or stream < 0:
        raise InvalidInputError("seeds, stages and stream ids must be non-negative")
    state = np.random.SeedSequence([seed, stage, stream]).generate_state(1)
    return int(state[0])


def make_generator(seed: int) -> torch.Generator:
    generator = torch.Generator()
    generator.manual_seed(seed)
    return generator


@dataclass(frozen=True)
class Box:
    """Axis-aligned box [lower_i, upper_i]^d."""

    lower: Tuple[float, ...]
    upper: Tuple[float, ...]

    def __post_init__(self):
        if len(self.lower) != len(self.upper) or len(self.lower) < 1:
            raise InvalidInputError("box bounds must have the same non-zero length")
        for lo, hi in zip(self.lower, self.upper):
            if not (math.isfinite(lo) and math.isfinite(hi)) or not lo < hi:
                raise InvalidInputError(f"invalid box side [{lo}, {hi}]")

    @classmethod
    def cube(cls, dim: int, lo: float = -math.pi, hi: float = math.pi) -> "Box":
        return cls(tuple([lo] * dim), tuple([hi] * dim))

    @property
    def dim(self) -> int:
        return len(self.lower)

    def bounds(self) -> Tuple[torch.Tensor, torch.Tensor]:
        return (
            torch.tensor(self.lower, dtype=DTYPE),
            torch.tensor(self.upper, dtype=DTYPE),
        )

    def face_measures(self) -> torch.Tensor:
        """Measure of each face, ordered (axis 0 low, axis 0 high, axis 1 low, ...)."""
        lo, hi = self.bounds()
        widths = hi - lo
        measures = []
        for axis in range(self.dim):
            # Empty product for d = 1: both endpoints weigh 1
            m = torch.prod(torch.cat([widths[:axis], widths[axis + 1 :]]))
            measures.extend((m, m))
        return torch.stack(measures)

    def strictly_inside(self, points: torch.Tensor) -> torch.Tensor:
        lo, hi = self.bounds()
        return ((points > lo) & (points < hi)).all(dim=-1)

    def on_boundary(self, points: torch.Tensor) -> torch.Tensor:
        lo, hi = self.bounds()
        inside = ((points >= lo) & (points <= hi)).all(dim=-1)
        on_face = ((points == lo) | (points == hi)).any(dim=-1)
        return inside & on_face


@dataclass(frozen=True)
class SampleBatch:
    points: torch.Tensor
    region: str
    seed_state: torch.Tensor = field(repr=False)

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class Grid:
    """Tensor grid in lexicographic order; `shape` lists the free axes' resolutions."""

    points: torch.Tensor
    shape: Tuple[int, ...]
    free_axes: Tuple[int, ...]
    fixed: Dict[int, float]

    def __len__(self) -> int:
        return self.points.shape[0]


def sample_interior(domain: Box, M: int, generator: torch.Generator) -> SampleBatch:
    """M i.i.d. uniform points strictly inside the box."""
    if M < 1:
        raise ConfigError("interior batch size must be at least 1", key="train.M")

    seed_state = generator.get_state()
    lo, hi = domain.bounds()
    points = lo + (hi - lo) * torch.rand(M, domain.dim, generator=generator, dtype=DTYPE)

    # torch.rand may return 0, and rounding may land on the upper face
    bad = ~domain.strictly_inside(points)
    while bad.any():
        count = int(bad.sum())
        points[bad] = lo + (hi - lo) * torch.rand(
            count, domain.dim, generator=generator, dtype=DTYPE
        )
        bad = ~domain.strictly_inside(points)

    return SampleBatch(points, "interior", seed_state)


def sample_boundary(domain: Box, N: int, generator: torch.Generator) -> SampleBatch:
    """N points on the box faces, faces weighted by measure, uniform within a face."""
    if N < 1:
        raise ConfigError("boundary batch size must be at least 1", key="train.Nb")

    seed_state = generator.get_state()
    lo, hi = domain.bounds()
    measures = domain.face_measures()
    faces = torch.multinomial(measures / measures.sum(), N, replacement=True, generator=generator)
    points = lo + (hi - lo) * torch.rand(N, domain.dim, generator=generator, dtype=DTYPE)

    axis = faces // 2
    upper_side = (faces % 2).bool()
    rows = torch.arange(N)
    points[rows, axis] = torch.where(upper_side, hi[axis], lo[axis])

    return SampleBatch(points, "boundary", seed_state)


def eval_grid(
    domain: Box,
    resolution_per_axis: int,
    slice: Optional[Dict[int, float]] = None,
) -> Grid:
    """
    Deterministic tensor grid including the endpoints of every free axis.

    Args:
        domain: Box to cover
        resolution_per_axis: Nodes per free axis (at least 2)
        slice: Optional mapping axis index -> pinned coordinate

    Returns:
        Grid with points in lexicographic (first axis slowest) order
    """
    if resolution_per_axis < 2:
        raise ConfigError("resolution must be at least 2", key="eval.resolution")

    fixed = dict(slice or {})
    for axis, value in fixed.items():
        if not 0 <= axis < domain.dim:
            raise ConfigError(
                f"slice axis {axis} out of range for a {domain.dim}-d domain",
                key="eval.slice",
            )
        if not domain.lower[axis] <= value <= domain.upper[axis]:
            raise ConfigError(
                f"slice value {value} outside [{domain.lower[axis]}, {domain.upper[axis]}]",
                key="eval.slice",
            )

    axes = []
    free_axes = []
    for axis in range(domain.dim):
        if axis in fixed:
            axes.append(torch.tensor([fixed[axis]], dtype=DTYPE))
        else:
            axes.append(
                torch.linspace(
                    domain.lower[axis],
                    domain.upper[axis],
                    resolution_per_axis,
                    dtype=DTYPE,
                )
            )
            free_axes.append(axis)

    mesh = torch.meshgrid(*axes, indexing="ij")
    points = torch.stack([m.reshape(-1) for m in mesh], dim=-1)
    shape = tuple(resolution_per_axis for _ in free_axes)
    return Grid(points, shape, tuple(free_axes), fixed)


def evaluation_points(domain: Box, count: int, seed: int) -> torch.Tensor:
    """The fixed relative-error set S: `count` seeded uniform interior points."""
    if count < 1:
        raise ConfigError("evaluation set must hold at least one point", key="eval.points")
    generator = make_generator(derive_seed(seed, 0, STREAM_EVAL))
    return sample_interior(domain, count, generator).points


_PI_EXPR = re.compile(r"^(-)?(?:([0-9.eE+-]+)\s*\*\s*)?pi(?:\s*/\s*([0-9.eE+-]+))?$")


def parse_coordinate(text: str) -> float:
    """A float, or a multiple of pi written as `[-][a*]pi[/b]`."""
    text = text.strip()
    match = _PI_EXPR.match(text)
    if match:
        sign, factor, divisor = match.groups()
        value = math.pi * (float(factor) if factor else 1.0)
        if divisor:
            value /= float(divisor)
        return -value if sign else value
    return float(text)


def parse_slice(text: str) -> Dict[int, float]:
    """Parse `axis=value[, axis=value]`; axis is an index or one of x, y, z."""
    pinned: Dict[int, float] = {}
    if not text.strip():
        return pinned

    for item in text.split(","):
        if "=" not in item:
            raise ConfigError(f"expected axis=value, got {item.strip()!r}", key="eval.slice")
        axis_text, value_text = (part.strip() for part in item.split("=", 1))
        if axis_text in AXIS_NAMES:
            axis = AXIS_NAMES.index(axis_text)
        else:
            try:
                axis = int(axis_text)
            except ValueError:
                raise ConfigError(f"unknown axis {axis_text!r}", key="eval.slice")
        try:
            pinned[axis] = parse_coordinate(value_text)
        except ValueError:
            raise ConfigError(f"cannot read coordinate {value_text!r}", key="eval.slice")
    return pinned


def chunks(points: torch.Tensor, size: int = 4096) -> Sequence[torch.Tensor]:
    return torch.split(points, size)
