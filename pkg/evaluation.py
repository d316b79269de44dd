"""
Accuracy metrics, the dense-quadrature objective used as a gradient oracle,
and the file writers for per-epoch logs, field snapshots and eval reports.
"""

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import torch  # noqa: E402
from matplotlib.colors import LinearSegmentedColormap  # noqa: E402

from equations import CorrectionStack, PdeProblem, boundary_target_k, residual_Fk  # noqa: E402
from jets import DTYPE, ParameterGradient, as_points, loss_param_gradient  # noqa: E402
from sampling import AXIS_NAMES, Grid, chunks  # noqa: E402
from utils import (  # noqa: E402
    DegenerateMetricError,
    InvalidInputError,
    OutputError,
    UnsupportedOracleError,
    format_float,
)

LOG_HEADER = [
    "epoch",
    "stage",
    "loss_interior",
    "loss_boundary",
    "loss_total",
    "relative_error",
    "wall_ms",
]

RAMP_LOW = "#2166ac"
RAMP_HIGH = "#b2182b"
FIELD_CMAP = LinearSegmentedColormap.from_list("two_color_ramp", [RAMP_LOW, RAMP_HIGH])

# Stable ids in the SVG output
plt.rcParams["svg.hashsalt"] = "pygalerkin"


def relative_error(
    predict: Callable[[torch.Tensor], torch.Tensor],
    phi: Callable[[torch.Tensor], torch.Tensor],
    S,
) -> float:
    """
    Sum of (phi - predict)^2 over S divided by the sum of phi^2 over S.

    Raises:
        DegenerateMetricError: If phi vanishes on all of S
    """
    points = as_points(S)
    if points.shape[0] == 0:
        raise InvalidInputError("relative error needs a non-empty evaluation set")

    with torch.no_grad():
        target = phi(points)
        diff = target - predict(points)
        denominator = float(target.square().sum())
        if denominator == 0.0:
            raise DegenerateMetricError("exact solution vanishes on the evaluation set")
        return float(diff.square().sum()) / denominator


def _trapezoid(lo: float, hi: float, resolution: int) -> Tuple[torch.Tensor, torch.Tensor]:
    """Nodes and trapezoid weights normalized to a probability measure on [lo, hi]."""
    nodes = torch.linspace(lo, hi, resolution, dtype=DTYPE)
    weights = torch.full((resolution,), 1.0 / (resolution - 1), dtype=DTYPE)
    weights[0] = weights[-1] = 0.5 / (resolution - 1)
    return nodes, weights


def quadrature_nodes(
    problem: PdeProblem, resolution: int
) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
    """
    Interior and boundary quadrature for the uniform measures on the box and
    on its boundary.

    Returns:
        Tuple of (interior nodes, interior weights, boundary nodes, boundary weights),
        each weight vector summing to 1
    """
    domain = problem.domain
    if domain.dim > 2:
        raise UnsupportedOracleError(
            f"quadrature oracle supports d <= 2, problem {problem.name} is {domain.dim}-d"
        )
    if resolution < 8:
        raise InvalidInputError(f"quadrature resolution must be at least 8, got {resolution}")

    axes = [_trapezoid(lo, hi, resolution) for lo, hi in zip(domain.lower, domain.upper)]
    if domain.dim == 1:
        interior_x = axes[0][0].unsqueeze(-1)
        interior_w = axes[0][1]
        boundary_x = torch.tensor([[domain.lower[0]], [domain.upper[0]]], dtype=DTYPE)
        boundary_w = torch.tensor([0.5, 0.5], dtype=DTYPE)
        return interior_x, interior_w, boundary_x, boundary_w

    (xs, wx), (ys, wy) = axes
    gx, gy = torch.meshgrid(xs, ys, indexing="ij")
    interior_x = torch.stack([gx.reshape(-1), gy.reshape(-1)], dim=-1)
    interior_w = torch.outer(wx, wy).reshape(-1)

    measures = domain.face_measures()
    share = measures / measures.sum()
    faces, face_w = [], []
    for face in range(4):
        axis, upper = divmod(face, 2)
        free_nodes, free_w = axes[1 - axis]
        pinned = domain.upper[axis] if upper else domain.lower[axis]
        pts = torch.empty(resolution, 2, dtype=DTYPE)
        pts[:, axis] = pinned
        pts[:, 1 - axis] = free_nodes
        faces.append(pts)
        face_w.append(free_w * share[face])
    return interior_x, interior_w, torch.cat(faces), torch.cat(face_w)


def quadrature_objective(
    problem: PdeProblem,
    net,
    resolution: int,
    stack: Optional[CorrectionStack] = None,
) -> torch.Tensor:
    """Trapezoid approximation of the expected minibatch loss (the objective J)."""
    stack = stack if stack is not None else CorrectionStack(problem)
    interior_x, interior_w, boundary_x, boundary_w = quadrature_nodes(problem, resolution)

    interior = (residual_Fk(stack, net, interior_x).square() * interior_w).sum()
    mismatch = net(boundary_x) - boundary_target_k(stack, boundary_x)
    return interior + (mismatch.square() * boundary_w).sum()


def quadrature_objective_gradient(
    problem: PdeProblem,
    net,
    resolution: int,
    stack: Optional[CorrectionStack] = None,
) -> ParameterGradient:
    """Exact parameter gradient of the trapezoid objective (d <= 2 only)."""
    quadrature_nodes(problem, resolution)
    _, grad = loss_param_gradient(
        lambda candidate: quadrature_objective(problem, candidate, resolution, stack), net
    )
    return grad


@dataclass(frozen=True)
class BoundRecord:
    """Residual size against error size for N^(k); ratio estimates the local Lipschitz constant."""

    order: int
    residual_rms: float
    error_rms: Optional[float]
    ratio: Optional[float]


def residual_bound_monitor(stack: CorrectionStack, S) -> List[BoundRecord]:
    """
    For every prefix N^(k) of the stack, the RMS of F_0[N^(k)] on S and,
    when the closed form is known, the RMS error and error/residual ratio.
    """
    problem = stack.problem
    points = as_points(S, problem.dim)
    phi = problem.exact_solution(points) if problem.exact_solution is not None else None

    records = []
    for k in range(stack.order):
        base = stack.prefix(k)
        candidate = stack.nets[k]
        squares = []
        with torch.no_grad():
            for part in chunks(points):
                squares.append(residual_Fk(base, candidate, part).square())
        residual_rms = math.sqrt(float(torch.cat(squares).mean()))

        error_rms = ratio = None
        if phi is not None:
            error = phi - stack.prefix(k + 1).value(points)
            error_rms = math.sqrt(float(error.square().mean()))
            ratio = error_rms / residual_rms if residual_rms > 0 else None
        records.append(BoundRecord(k, residual_rms, error_rms, ratio))
    return records


def _axis_label(axis: int) -> str:
    return AXIS_NAMES[axis] if axis < len(AXIS_NAMES) else f"x{axis + 1}"


def export_field(
    predict: Callable[[torch.Tensor], torch.Tensor],
    grid: Grid,
    path,
    title: str = "",
) -> Tuple[Path, Path]:
    """
    Write a heatmap (SVG) and a values table (CSV) of a scalar field on a grid.

    The colour map is a linear two-colour ramp with symmetric limits
    [-max|v|, +max|v|]; both are recorded in the SVG description. 1-D grids
    are drawn as a line plot.

    Args:
        predict: Field to sample
        grid: From sampling.eval_grid, with one or two free axes
        path: Output path; the suffix is replaced by .svg and .csv

    Returns:
        Tuple of (svg path, csv path)
    """
    if len(grid.free_axes) not in (1, 2):
        raise InvalidInputError(
            f"field export needs a 1-D or 2-D grid (or slice), got {len(grid.free_axes)} free axes"
        )

    with torch.no_grad():
        values = torch.cat([predict(part) for part in chunks(grid.points)])

    base = Path(path)
    svg_path, csv_path = base.with_suffix(".svg"), base.with_suffix(".csv")
    dim = grid.points.shape[1]
    header = [_axis_label(a) for a in range(dim)] + ["value"]

    limit = float(values.abs().max()) if values.numel() else 0.0
    if limit == 0.0 or not math.isfinite(limit):
        limit = 1.0
    description = (
        f"colormap=linear two-color ramp {RAMP_LOW}->{RAMP_HIGH}; "
        f"limits=[{format_float(-limit)}, {format_float(limit)}]"
    )

    try:
        base.parent.mkdir(parents=True, exist_ok=True)
        with open(csv_path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(header)
            for point, value in zip(grid.points.tolist(), values.tolist()):
                writer.writerow([format_float(c) for c in point] + [format_float(value)])

        fig, ax = plt.subplots(figsize=(5, 4))
        if len(grid.free_axes) == 1:
            axis = grid.free_axes[0]
            ax.plot(grid.points[:, axis].numpy(), values.numpy(), color=RAMP_HIGH)
            ax.set_ylim(-1.05 * limit, 1.05 * limit)
            ax.set_xlabel(_axis_label(axis))
        else:
            ax_x, ax_y = grid.free_axes
            image = values.reshape(grid.shape).T.numpy()
            extent = (
                float(grid.points[:, ax_x].min()),
                float(grid.points[:, ax_x].max()),
                float(grid.points[:, ax_y].min()),
                float(grid.points[:, ax_y].max()),
            )
            mesh = ax.imshow(
                image,
                origin="lower",
                extent=extent,
                cmap=FIELD_CMAP,
                vmin=-limit,
                vmax=limit,
                interpolation="nearest",
            )
            fig.colorbar(mesh, ax=ax)
            ax.set_xlabel(_axis_label(ax_x))
            ax.set_ylabel(_axis_label(ax_y))
        if title:
            ax.set_title(title)
        fig.savefig(svg_path, format="svg", metadata={"Date": None, "Description": description})
        plt.close(fig)
    except OSError as e:
        raise OutputError(f"cannot write field export ({e.strerror})", path=base)

    return svg_path, csv_path


def read_field_values(path) -> Tuple[torch.Tensor, torch.Tensor]:
    """Parse a values table written by export_field into (points, values)."""
    try:
        with open(path, newline="", encoding="utf-8") as f:
            rows = list(csv.reader(f))
    except OSError as e:
        raise OutputError(f"cannot read field values ({e.strerror})", path=path)

    data = torch.tensor([[float(c) for c in row] for row in rows[1:]], dtype=DTYPE)
    return data[:, :-1], data[:, -1]


def write_logs(logs: Sequence, path, append: bool = False) -> Path:
    """
    Write EpochLog rows as CSV (17 significant digits). With `append`, rows
    are added to an existing file and the header is only written once.
    """
    if not logs:
        raise InvalidInputError("no epoch logs to write")

    path = Path(path)
    write_header = not (append and path.exists() and path.stat().st_size > 0)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "a" if append else "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            if write_header:
                writer.writerow(LOG_HEADER)
            for log in logs:
                writer.writerow(
                    [
                        str(log.epoch),
                        str(log.stage),
                        format_float(log.loss_interior),
                        format_float(log.loss_boundary),
                        format_float(log.loss_total),
                        "" if log.relative_error is None else format_float(log.relative_error),
                        format_float(log.wall_ms),
                    ]
                )
    except OSError as e:
        raise OutputError(f"cannot write epoch log ({e.strerror})", path=path)
    return path


def read_logs(path) -> List:
    """Parse a CSV written by write_logs back into EpochLog records."""
    from training import EpochLog

    try:
        with open(path, newline="", encoding="utf-8") as f:
            reader = csv.reader(f)
            header = next(reader, None)
            if header != LOG_HEADER:
                raise InvalidInputError(f"unexpected epoch log header in {path}: {header}")
            return [
                EpochLog(
                    int(row[0]),
                    int(row[1]),
                    float(row[2]),
                    float(row[3]),
                    float(row[4]),
                    float(row[5]) if row[5] else None,
                    float(row[6]),
                )
                for row in reader
            ]
    except OSError as e:
        raise OutputError(f"cannot read epoch log ({e.strerror})", path=path)


@dataclass
class EvalReport:
    problem: str
    point_count: int
    relative_error: Optional[float]
    stage_losses: List[Tuple[float, float]] = field(default_factory=list)
    stage_relative_errors: List[Optional[float]] = field(default_factory=list)
    bounds: List[BoundRecord] = field(default_factory=list)
    fields: List[Path] = field(default_factory=list)

    def lines(self) -> List[str]:
        out = [
            f"problem = {self.problem}",
            f"points = {self.point_count}",
            f"stages = {len(self.stage_losses)}",
            "relative_error = "
            + ("" if self.relative_error is None else format_float(self.relative_error)),
        ]
        for k, (interior, boundary) in enumerate(self.stage_losses):
            out.append(f"stage.{k}.loss_interior = {format_float(interior)}")
            out.append(f"stage.{k}.loss_boundary = {format_float(boundary)}")
            rel = self.stage_relative_errors[k] if k < len(self.stage_relative_errors) else None
            if rel is not None:
                out.append(f"stage.{k}.relative_error = {format_float(rel)}")
        for record in self.bounds:
            out.append(f"stage.{record.order}.residual_rms = {format_float(record.residual_rms)}")
            if record.error_rms is not None:
                out.append(f"stage.{record.order}.error_rms = {format_float(record.error_rms)}")
            if record.ratio is not None:
                out.append(f"stage.{record.order}.error_residual_ratio = {format_float(record.ratio)}")
        return out


def build_report(
    stack: CorrectionStack,
    S: torch.Tensor,
    interior,
    boundary,
) -> EvalReport:
    """
    Evaluate every prefix N^(k) of a stack: loss terms on the given batches,
    relative error on S when the closed form is known, and the bound monitor.
    """
    from training import minibatch_loss

    problem = stack.problem
    report = EvalReport(problem.name, int(S.shape[0]), None)

    for k in range(stack.order):
        base = stack.prefix(k)
        with torch.no_grad():
            interior_term, boundary_term = minibatch_loss(base, stack.nets[k], interior, boundary)
        report.stage_losses.append((float(interior_term), float(boundary_term)))

        rel = None
        if problem.exact_solution is not None:
            rel = relative_error(stack.prefix(k + 1).value, problem.exact_solution, S)
        report.stage_relative_errors.append(rel)

    if report.stage_relative_errors:
        report.relative_error = report.stage_relative_errors[-1]
    report.bounds = residual_bound_monitor(stack, S)
    return report


def write_report(report: EvalReport, path) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(report.lines()) + "\n", encoding="utf-8")
    except OSError as e:
        raise OutputError(f"cannot write eval report ({e.strerror})", path=path)
    return path
