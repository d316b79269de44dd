"""
End-to-end runs of the command-line entry point on tiny configurations.
"""

import csv

import pytest
import torch

import solver
from checkpoint import load_checkpoint
from config import KEYS
from evaluation import read_field_values, read_logs
from solver import SWEEP_HEADER, main, parse_sigmas, select_sigma
from utils import ConfigError

from helpers import write_config

TINY = {
    "problem": "sine_1d",
    "layers": 1,
    "width": 8,
    "train.M": 16,
    "train.Nb": 4,
    "train.epochs": 0,
    "eval.points": 256,
    "eval.resolution": 16,
    "seed": 0,
}


def tiny_config(tmp_path, name="run.cfg", **changes):
    values = dict(TINY)
    values.update({key.replace("__", "."): value for key, value in changes.items()})
    return write_config(tmp_path / name, values)


def run(*argv):
    main([str(a) for a in argv])


def failure(capsys, *argv) -> str:
    with pytest.raises(SystemExit) as info:
        run(*argv)
    assert info.value.code == 1
    lines = capsys.readouterr().err.splitlines()
    assert len(lines) == 1
    return lines[0]


def test_no_arguments_prints_help(capsys):
    with pytest.raises(SystemExit) as info:
        main([])
    assert info.value.code == 0
    assert "usage" in capsys.readouterr().out


class TestTrain:
    def test_single_stage_outputs(self, tmp_path):
        out = tmp_path / "out"
        run("train", "--config", tiny_config(tmp_path), "--out", out)

        assert load_checkpoint(out / "checkpoint.gdgm").stages == 1
        assert len((out / "train_log.csv").read_text().splitlines()) == 2
        for name in ("solution.svg", "solution.csv", "error.svg", "error.csv"):
            assert (out / name).exists()

    def test_configuration_echoed_once_per_key(self, tmp_path):
        out = tmp_path / "out"
        run("train", "--config", tiny_config(tmp_path), "--out", out)
        lines = (out / "run.log").read_text().splitlines()
        for key in KEYS:
            assert sum(line.startswith(f"{key} = ") for line in lines) == 1
        assert f"out.dir = {out}" in lines

    def test_rerun_is_byte_identical(self, tmp_path):
        config = tiny_config(tmp_path, train__epochs=3, train__eta="1e-3")
        run("train", "--config", config, "--out", tmp_path / "a")
        run("train", "--config", config, "--out", tmp_path / "b")
        for name in ("checkpoint.gdgm", "solution.csv", "solution.svg"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        losses = [[e.loss_total for e in read_logs(tmp_path / d / "train_log.csv")] for d in "ab"]
        assert losses[0] == losses[1]

    def test_seed_override(self, tmp_path):
        config = tiny_config(tmp_path)
        run("train", "--config", config, "--out", tmp_path / "a")
        run("train", "--config", config, "--out", tmp_path / "b", "--seed", 1)
        assert load_checkpoint(tmp_path / "b" / "checkpoint.gdgm").seed == 1
        assert (tmp_path / "a" / "checkpoint.gdgm").read_bytes() != (tmp_path / "b" / "checkpoint.gdgm").read_bytes()

    def test_error_correction_stages(self, tmp_path):
        out = tmp_path / "out"
        run("train", "--config", tiny_config(tmp_path, ec__K=2, train__epochs=1), "--out", out)
        assert load_checkpoint(out / "checkpoint.gdgm").stages == 3
        assert [e.stage for e in read_logs(out / "train_log.csv")] == [0, 0, 1, 1, 2, 2]

    def test_snapshots_written(self, tmp_path):
        out = tmp_path / "out"
        run("train", "--config", tiny_config(tmp_path, train__epochs=2, train__snapshots="1"), "--out", out)
        assert load_checkpoint(out / "checkpoint_e1.gdgm").stages == 1


class TestCorrect:
    def test_appends_stage_and_keeps_base(self, tmp_path):
        out = tmp_path / "out"
        config = tiny_config(tmp_path, train__epochs=2, train__eta="1e-3")
        run("train", "--config", config, "--out", out)
        before = load_checkpoint(out / "checkpoint.gdgm")

        run("correct", "--checkpoint", out / "checkpoint.gdgm", "--config", config, "--out", out)
        after = load_checkpoint(out / "checkpoint.gdgm")

        assert after.stages == 2
        for p, q in zip(before.nets[0].theta(), after.nets[0].theta()):
            assert torch.equal(p, q)
        assert [e.stage for e in read_logs(out / "train_log.csv")] == [0, 0, 0, 1, 1, 1]

    def test_each_command_gets_its_own_log_section(self, tmp_path):
        out = tmp_path / "out"
        config = tiny_config(tmp_path, train__epochs=1)
        run("train", "--config", config, "--out", out)
        run("correct", "--checkpoint", out / "checkpoint.gdgm", "--config", config, "--out", out)

        text = (out / "run.log").read_text()
        sections = text.split("=== pygalerkin ")[1:]
        assert [s.split(" ===", 1)[0] for s in sections] == ["train", "correct"]
        for section in sections:
            lines = section.splitlines()
            for key in KEYS:
                assert sum(line.startswith(f"{key} = ") for line in lines) == 1

    def test_orders_must_be_positive(self, tmp_path, capsys):
        out = tmp_path / "out"
        config = tiny_config(tmp_path)
        run("train", "--config", config, "--out", out)
        capsys.readouterr()
        line = failure(capsys, "correct", "--checkpoint", out / "checkpoint.gdgm", "--config", config, "--orders", 0)
        assert line.startswith("error code=invalid-input")

    def test_problem_must_match_checkpoint(self, tmp_path, capsys):
        out = tmp_path / "out"
        run("train", "--config", tiny_config(tmp_path), "--out", out)
        other = tiny_config(tmp_path, "other.cfg", problem="sine2_2d")
        capsys.readouterr()
        line = failure(capsys, "correct", "--checkpoint", out / "checkpoint.gdgm", "--config", other)
        assert line.startswith("error code=config")


class TestEval:
    def test_exact_checkpoint_has_zero_error(self, tmp_path):
        config = tiny_config(tmp_path)
        run("train", "--config", config, "--out", tmp_path / "exact", "--exact")
        checkpoint = tmp_path / "exact" / "checkpoint.gdgm"

        run("eval", "--checkpoint", checkpoint, "--config", config, "--out", tmp_path / "e1")
        run("eval", "--checkpoint", checkpoint, "--config", config, "--out", tmp_path / "e2")

        report = (tmp_path / "e1" / "eval_report.txt").read_text()
        assert "relative_error = 0\n" in report
        assert report == (tmp_path / "e2" / "eval_report.txt").read_text()

    def test_without_config_uses_checkpoint_problem(self, tmp_path):
        run("train", "--config", tiny_config(tmp_path), "--out", tmp_path / "t", "--exact")
        run("eval", "--checkpoint", tmp_path / "t" / "checkpoint.gdgm", "--out", tmp_path / "e")
        assert "problem = sine_1d" in (tmp_path / "e" / "eval_report.txt").read_text()

    def test_missing_checkpoint(self, tmp_path, capsys):
        line = failure(capsys, "eval", "--checkpoint", tmp_path / "absent.gdgm")
        assert line.startswith("error code=checkpoint")


class TestPlot:
    def test_cube_is_drawn_on_a_slice(self, tmp_path):
        config = tiny_config(tmp_path, problem="p1_3d", eval__resolution=8)
        run("train", "--config", config, "--out", tmp_path / "t", "--exact")
        run("plot", "--checkpoint", tmp_path / "t" / "checkpoint.gdgm", "--config", config, "--out", tmp_path / "p")

        points, _ = read_field_values(tmp_path / "p" / "solution.csv")
        assert points.shape == (64, 3)
        assert (points[:, 2] == points[0, 2]).all()
        assert "fields are drawn at z=0" in (tmp_path / "p" / "run.log").read_text()

    def test_exact_stack_error_field_is_zero(self, tmp_path):
        config = tiny_config(tmp_path, problem="p3_2d", eval__resolution=8)
        run("train", "--config", config, "--out", tmp_path / "t", "--exact")
        _, values = read_field_values(tmp_path / "t" / "error.csv")
        assert not values.any()


class TestErrors:
    def test_unknown_key(self, tmp_path, capsys):
        path = write_config(tmp_path / "bad.cfg", {"problem": "sine_1d", "train.momentum": 0.9})
        line = failure(capsys, "train", "--config", path)
        assert line.startswith("error code=config message=train.momentum")

    def test_train_needs_config(self, capsys):
        assert failure(capsys, "train").startswith("error code=config")

    def test_eval_needs_checkpoint(self, capsys):
        assert failure(capsys, "eval").startswith("error code=config")

    def test_unknown_command(self, capsys):
        assert failure(capsys, "fly").startswith("error code=usage")

    def test_diverging_run_writes_no_checkpoint(self, tmp_path, capsys):
        config = tiny_config(tmp_path, train__epochs=3, train__eta="1e300")
        out = tmp_path / "out"
        with pytest.raises(SystemExit) as info:
            run("train", "--config", config, "--out", out)
        assert info.value.code == 1
        assert capsys.readouterr().err.startswith("error code=training-aborted")
        assert not (out / "checkpoint.gdgm").exists()


class TestSweep:
    def test_duplicates_dropped_and_summary_written(self, tmp_path, capsys):
        out = tmp_path / "sweep"
        config = tiny_config(tmp_path, train__epochs=1, fourier__n=4)
        run("sweep-sigma", "--config", config, "--out", out, "--sigmas", "1,2,1")

        assert "listed more than once" in capsys.readouterr().out
        with open(out / "sigma_sweep.csv", newline="") as f:
            rows = list(csv.reader(f))
        assert rows[0] == SWEEP_HEADER
        assert [(r[0], r[1]) for r in rows[1:]] == [("1", "ok"), ("2", "ok")]
        assert (out / "sigma_1" / "train_log.csv").exists()
        assert (out / "sigma_2" / "train_log.csv").exists()

    def test_sigma_list_validation(self):
        assert parse_sigmas("0.5, 1,0.5") == [0.5, 1.0]
        for text in ("", "1,-2", "1,abc"):
            with pytest.raises(ConfigError) as info:
                parse_sigmas(text)
            assert info.value.key == "--sigmas"

    def test_selection(self):
        rows = [(1.0, "ok", 0.3, 0.2, -1.0), (2.0, "ok", 0.1, 0.4, -2.0), (3.0, "failed:diverged", None, None, None)]
        assert select_sigma(rows) == 1.0
        assert select_sigma([(r[0], r[1], r[2], None, r[4]) for r in rows]) == 2.0
        assert select_sigma(rows[2:]) is None

    def test_unexpected_failure_recorded_and_sweep_continues(self, tmp_path, monkeypatch):
        train_stages = solver.train_stages

        def flaky(config, out, *args, **kwargs):
            if config.fourier_sigma == 2.0:
                raise RuntimeError("CUDA out of memory")
            return train_stages(config, out, *args, **kwargs)

        monkeypatch.setattr(solver, "train_stages", flaky)
        out = tmp_path / "sweep"
        run("sweep-sigma", "--config", tiny_config(tmp_path, train__epochs=1, fourier__n=4), "--out", out, "--sigmas", "1,2,3")

        with open(out / "sigma_sweep.csv", newline="") as f:
            rows = list(csv.reader(f))[1:]
        assert [(r[0], r[1]) for r in rows] == [("1", "ok"), ("2", "failed:internal"), ("3", "ok")]
        assert rows[1][2:] == ["", "", ""]
