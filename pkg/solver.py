#!/usr/bin/env python3
"""
Mesh-free deep Galerkin solver for Poisson-type boundary-value problems.

Five commands share one run directory layout:
  train        Train N_0 (and corrections N_1..N_K when ec.K > 0)
  correct      Append correction networks to an existing checkpoint
  eval         Report losses, relative errors and the residual bound monitor
  sweep-sigma  Train one short run per Fourier-feature sigma and compare
  plot         Export solution and error fields only

Every failure ends with a single `error code=<code> message=<text>` line on
stderr and exit status 1.
"""

import argparse
import csv
import math
import sys
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from checkpoint import load_checkpoint, save_checkpoint
from config import RunConfig, parse_config
from equations import CorrectionStack
from evaluation import build_report, export_field, write_logs, write_report
from model import ExactSolutionNet
from sampling import (
    AXIS_NAMES,
    STREAM_REPORT,
    derive_seed,
    eval_grid,
    evaluation_points,
    make_generator,
    sample_boundary,
    sample_interior,
)
from training import EpochLog, run_error_correction
from utils import (
    ConfigError,
    InvalidInputError,
    OutputError,
    SolverError,
    TrainingAborted,
    close_run_log,
    echo,
    format_float,
    open_run_log,
    set_debug,
)

COMMANDS = ["train", "correct", "eval", "sweep-sigma", "plot"]
SWEEP_HEADER = ["sigma", "status", "loss_total", "relative_error", "mean_log10_loss"]


class ProgressReporter:
    """Prints one line every max(1, epochs // 8) epochs and at the end of each stage."""

    def __init__(self, epochs: int):
        self.epochs = epochs
        self.every = max(1, epochs // 8)

    def __call__(self, entry: EpochLog):
        if entry.epoch % self.every and entry.epoch != self.epochs:
            return
        rel = "" if entry.relative_error is None else f" rel_error={entry.relative_error:.6e}"
        echo(
            f"  stage {entry.stage} epoch {entry.epoch:>6}/{self.epochs} "
            f"loss={entry.loss_total:.6e} (interior {entry.loss_interior:.3e}, "
            f"boundary {entry.loss_boundary:.3e}){rel}"
        )


def start_run(config: RunConfig, command: str) -> Path:
    """
    Open <out>/run.log and echo the effective configuration once per key.

    Commands sharing an output directory append to the same log; each one
    starts its own section under a `=== pygalerkin <command> ===` heading.
    """
    out = Path(config.out_dir)
    open_run_log(out / "run.log")
    echo(f"\n=== pygalerkin {command} ===", "cyan")
    if config.source:
        echo(f"config file: {config.source}")
    for key, value in config.items():
        echo(f"{key} = {value}")
    return out


def load_run_config(args, problem: Optional[str] = None) -> RunConfig:
    if args.config is not None:
        config = parse_config(args.config)
    elif problem is not None:
        config = RunConfig(problem=problem)
    else:
        raise ConfigError(f"--config is required for '{args.command}'")
    return config.with_overrides(out_dir=args.out, seed=args.seed)


def eval_set(config: RunConfig):
    """The fixed set S, or None (with a notice) when the problem has no closed form."""
    problem = config.pde()
    if problem.exact_solution is None:
        echo(f"Notice: {problem.name} has no closed-form solution; relative errors are omitted.", "yellow")
        return None
    return evaluation_points(problem.domain, config.eval_points, config.seed)


def field_slice(config: RunConfig) -> Dict[int, float]:
    """Configured slice, with extra free axes pinned to the domain midpoint."""
    domain = config.pde().domain
    fixed = dict(config.eval_slice)
    free = [axis for axis in range(domain.dim) if axis not in fixed]
    while len(free) > 2:
        axis = free.pop()
        fixed[axis] = 0.5 * (domain.lower[axis] + domain.upper[axis])
        name = AXIS_NAMES[axis] if axis < len(AXIS_NAMES) else str(axis)
        echo(
            f"Notice: no slice for axis {name}; fields are drawn at {name}={format_float(fixed[axis])}.",
            "yellow",
        )
    return fixed


def export_fields(stack: CorrectionStack, config: RunConfig, out: Path) -> List[Path]:
    problem = stack.problem
    grid = eval_grid(problem.domain, config.eval_resolution, field_slice(config))
    pinned = ", ".join(
        f"{AXIS_NAMES[a] if a < len(AXIS_NAMES) else a}={v:.4g}" for a, v in sorted(grid.fixed.items())
    )
    suffix = f" at {pinned}" if pinned else ""

    paths = list(
        export_field(stack.value, grid, out / "solution", f"{problem.name} N^({stack.order - 1}){suffix}")
    )
    if problem.exact_solution is not None:
        paths.extend(
            export_field(
                lambda p: problem.exact_solution(p) - stack.value(p),
                grid,
                out / "error",
                f"{problem.name} error{suffix}",
            )
        )
    for path in paths:
        echo(f"wrote {path}")
    return paths


def snapshot_writer(out: Path, seed: int):
    """on_stage hook: one checkpoint per in-training snapshot (frozen prefix + snapshot)."""

    def write(k: int, result, base: CorrectionStack):
        for epoch, net in sorted(result.snapshots.items()):
            name = f"checkpoint_e{epoch}.gdgm" if k == 0 else f"checkpoint_s{k}_e{epoch}.gdgm"
            path = save_checkpoint(base.push(net), out / name, seed)
            echo(f"wrote snapshot {path}")

    return write


def all_logs(stack: CorrectionStack, start: int = 0) -> List[EpochLog]:
    return [entry for stage_logs in stack.logs[start:] for entry in stage_logs]


def train_stages(config: RunConfig, out: Path, stack: Optional[CorrectionStack] = None, stages=None):
    problem = config.pde()
    train_config = config.train_config()
    start = 0 if stack is None else stack.order
    try:
        return run_error_correction(
            problem,
            train_config,
            config.architecture(),
            eval_points=eval_set(config),
            stack=stack,
            stages=stages,
            report=ProgressReporter(train_config.epochs),
            on_stage=snapshot_writer(out, config.seed),
        )
    except TrainingAborted as e:
        partial = e.stack
        if partial is not None and partial.order > start:
            path = save_checkpoint(partial, out / "checkpoint_partial.gdgm", config.seed)
            write_logs(all_logs(partial, start), out / "train_log.csv", append=start > 0)
            echo(f"Training stopped at stage {e.stage}; finished stages saved to {path}", "yellow")
        raise


def cmd_train(config: RunConfig, exact: bool = False) -> CorrectionStack:
    """Train stages 0..K and write checkpoint, epoch log and field exports."""
    out = start_run(config, "train")
    problem = config.pde()

    if exact:
        echo(f"Writing the closed form of {problem.name} as stage 0 (no training).", "cyan")
        stack = CorrectionStack(problem).push(ExactSolutionNet.for_problem(problem))
    else:
        echo(f"Training {config.ec_orders + 1} stage(s) on {problem.name}...", "cyan")
        stack = train_stages(config, out)
        write_logs(all_logs(stack), out / "train_log.csv")

    path = save_checkpoint(stack, out / "checkpoint.gdgm", config.seed)
    echo(f"wrote {path}")
    export_fields(stack, config, out)
    summarize(stack)
    return stack


def cmd_correct(config: RunConfig, checkpoint_path, orders: int) -> CorrectionStack:
    """Append `orders` correction networks to a saved stack."""
    if orders < 1:
        raise InvalidInputError(f"--orders must be at least 1, got {orders}")

    saved = load_checkpoint(checkpoint_path)
    if config.problem != saved.problem:
        raise ConfigError(
            f"checkpoint solves {saved.problem}, configuration names {config.problem}",
            key="problem",
        )
    out = start_run(config, "correct")
    stack = saved.to_stack()
    echo(f"Loaded {stack.order} stage(s) from {checkpoint_path}; training {orders} more...", "cyan")

    extended = train_stages(config, out, stack=stack, stages=orders)
    write_logs(all_logs(extended, stack.order), out / "train_log.csv", append=True)

    path = save_checkpoint(extended, out / "checkpoint.gdgm", config.seed)
    echo(f"wrote {path}")
    export_fields(extended, config, out)
    summarize(extended)
    return extended


def cmd_eval(config: RunConfig, checkpoint_path):
    """Write eval_report.txt and field exports for a saved stack."""
    saved = load_checkpoint(checkpoint_path)
    out = start_run(config, "eval")
    stack = saved.to_stack()
    problem = stack.problem

    S = evaluation_points(problem.domain, config.eval_points, config.seed)
    generator = make_generator(derive_seed(config.seed, 0, STREAM_REPORT))
    interior = sample_interior(problem.domain, config.M, generator)
    boundary = sample_boundary(problem.domain, config.Nb, generator)

    if problem.exact_solution is None:
        echo(f"Notice: {problem.name} has no closed-form solution; relative error omitted.", "yellow")
    report = build_report(stack, S, interior, boundary)
    report.fields = export_fields(stack, config, out)
    path = write_report(report, out / "eval_report.txt")

    for line in report.lines():
        echo(line)
    echo(f"wrote {path}", "green")
    return report


def cmd_plot(config: RunConfig, checkpoint_path) -> List[Path]:
    saved = load_checkpoint(checkpoint_path)
    out = start_run(config, "plot")
    return export_fields(saved.to_stack(), config, out)


def parse_sigmas(text: Optional[str]) -> List[float]:
    """Comma-separated positive sigmas; duplicates are dropped with a warning."""
    if not text or not text.strip():
        raise ConfigError("at least one sigma is required", key="--sigmas")

    sigmas: List[float] = []
    for part in text.split(","):
        try:
            sigma = float(part)
        except ValueError:
            raise ConfigError(f"not a number: {part.strip()!r}", key="--sigmas")
        if not (math.isfinite(sigma) and sigma > 0):
            raise ConfigError(f"sigma must be positive, got {part.strip()}", key="--sigmas")
        if sigma in sigmas:
            echo(f"Warning: sigma {format_float(sigma)} listed more than once; running it once.", "yellow")
            continue
        sigmas.append(sigma)
    return sigmas


def mean_log10_loss(logs: List[EpochLog]) -> float:
    return sum(math.log10(max(entry.loss_total, sys.float_info.min)) for entry in logs) / len(logs)


def cmd_sweep_sigma(config: RunConfig, sigmas_text: Optional[str]) -> List[Tuple]:
    """
    One run per sigma with identical seeds; rows are
    (sigma, status, final total loss, final relative error, mean log10 loss).
    """
    sigmas = parse_sigmas(sigmas_text)
    out = start_run(config, "sweep-sigma")
    echo(f"Sweeping sigma over {', '.join(format_float(s) for s in sigmas)}", "cyan")

    rows = []
    for sigma in sigmas:
        run_dir = out / f"sigma_{format_float(sigma)}"
        run_config = replace(config, fourier_enabled=True, fourier_sigma=sigma, out_dir=str(run_dir))
        echo(f"\nsigma = {format_float(sigma)}", "cyan")
        try:
            stack = train_stages(run_config, run_dir)
        except SolverError as e:
            echo(f"Warning: run failed ({e.code}): {e.message}", "yellow")
            rows.append((sigma, f"failed:{e.code}", None, None, None))
            continue
        except Exception as e:
            echo(f"Warning: run failed (internal): {type(e).__name__}: {e}", "yellow")
            rows.append((sigma, "failed:internal", None, None, None))
            continue
        logs = all_logs(stack)
        write_logs(logs, run_dir / "train_log.csv")
        last = logs[-1]
        rows.append((sigma, "ok", last.loss_total, last.relative_error, mean_log10_loss(logs)))

    path = out / "sigma_sweep.csv"
    try:
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(SWEEP_HEADER)
            for sigma, status, loss, rel, speed in rows:
                writer.writerow(
                    [format_float(sigma), status]
                    + ["" if v is None else format_float(v) for v in (loss, rel, speed)]
                )
    except OSError as e:
        raise OutputError(f"cannot write sweep summary ({e.strerror})", path=path)
    echo(f"wrote {path}")

    selected = select_sigma(rows)
    if selected is not None:
        echo(f"selected sigma = {format_float(selected)}", "green")
    else:
        echo("No sigma finished successfully.", "yellow")
    return rows


def select_sigma(rows: List[Tuple]) -> Optional[float]:
    """Lowest final relative error; lowest final loss when no relative error is known."""
    finished = [row for row in rows if row[1] == "ok"]
    if not finished:
        return None
    if all(row[3] is not None for row in finished):
        return min(finished, key=lambda row: row[3])[0]
    return min(finished, key=lambda row: row[2])[0]


def summarize(stack: CorrectionStack):
    for k, stage_logs in enumerate(stack.logs):
        if not stage_logs:
            continue
        last = stage_logs[-1]
        rel = "" if last.relative_error is None else f", relative error {last.relative_error:.6e}"
        echo(f"stage {k}: final loss {last.loss_total:.6e}{rel}", "green")


def main(argv: Optional[List[str]] = None):
    """Main entry point for the solver."""
    parser = argparse.ArgumentParser(
        description="Deep Galerkin solver with sine networks, Fourier features and error correction."
    )
    parser.add_argument("command", choices=COMMANDS, help="What to run")
    parser.add_argument("--config", help="Run configuration file (flat key = value)")
    parser.add_argument("--checkpoint", help="Checkpoint to extend, evaluate or plot")
    parser.add_argument("--out", help="Output directory (overrides out.dir)")
    parser.add_argument("--seed", type=int, help="Seed (overrides seed)")
    parser.add_argument(
        "--orders", type=int, default=1, help="Correction networks to append (correct only, default 1)"
    )
    parser.add_argument("--sigmas", help="Comma-separated sigma values (sweep-sigma only)")
    parser.add_argument(
        "--exact",
        action="store_true",
        help="Store the problem's closed form as stage 0 instead of training it (train only)",
    )
    parser.add_argument("--debug", action="store_true", help="Print a [DEBUG] line per epoch")

    # Usage errors get the same one-line diagnostic as everything else
    parser.error = lambda message: fail("usage", message)

    argv = sys.argv[1:] if argv is None else argv

    # Display help if no arguments provided
    if not argv:
        parser.print_help()
        sys.exit(0)

    args = parser.parse_args(argv)
    set_debug(args.debug)

    try:
        if args.command in ("correct", "eval", "plot") and not args.checkpoint:
            raise ConfigError(f"--checkpoint is required for '{args.command}'")

        if args.command == "train":
            cmd_train(load_run_config(args), exact=args.exact)
        elif args.command == "sweep-sigma":
            cmd_sweep_sigma(load_run_config(args), args.sigmas)
        else:
            problem = load_checkpoint(args.checkpoint).problem
            config = load_run_config(args, problem=problem)
            if config.problem != problem:
                raise ConfigError(
                    f"checkpoint solves {problem}, configuration names {config.problem}",
                    key="problem",
                )
            if args.command == "correct":
                cmd_correct(config, args.checkpoint, args.orders)
            elif args.command == "eval":
                cmd_eval(config, args.checkpoint)
            else:
                cmd_plot(config, args.checkpoint)
    except SolverError as e:
        fail(e.code, e.message)
    except Exception as e:
        fail("internal", f"{type(e).__name__}: {e}")
    finally:
        close_run_log()


def fail(code: str, message: str):
    text = " ".join(str(message).split())
    echo(f"error code={code} message={text}", err=True)
    close_run_log()
    sys.exit(1)


if __name__ == "__main__":
    main()
