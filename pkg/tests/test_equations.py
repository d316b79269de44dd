"""
Registered problems and the residual operators of the correction scheme.
"""

import math

import pytest
import torch

from equations import (
    CorrectionStack,
    boundary_target_k,
    builtin_problem,
    problem_names,
    residual_F0,
    residual_Fk,
)
from jets import DTYPE, forward_with_laplacian
from model import ExactSolutionNet, evaluate, init_siren
from utils import ShapeError, StackUnderflowError, UnknownProblemError

from helpers import random_points, zero_output

POINT = [math.pi / 10] * 3


def random_stack(name: str, order: int, seed: int = 0, width: int = 16) -> CorrectionStack:
    problem = builtin_problem(name)
    stack = CorrectionStack(problem)
    for k in range(order):
        stack = stack.push(init_siren(problem.dim, 2, width, 30.0, seed=seed * 10 + k))
    return stack


class TestRegistry:
    def test_p1_at_peak(self):
        problem = builtin_problem("p1_3d")
        x = torch.tensor([POINT], dtype=DTYPE)
        assert float(problem.exact_solution(x)) == pytest.approx(1.0, abs=1e-15)
        assert float(problem.source(x)) == pytest.approx(-75.0, abs=1e-13)

    def test_p3_vanishes_on_boundary(self):
        problem = builtin_problem("p3_2d")
        t = torch.linspace(-math.pi, math.pi, 17, dtype=DTYPE)
        edge = torch.full_like(t, math.pi)
        for pts in (
            torch.stack([t, edge], dim=-1),
            torch.stack([t, -edge], dim=-1),
            torch.stack([edge, t], dim=-1),
            torch.stack([-edge, t], dim=-1),
        ):
            assert problem.exact_solution(pts).abs().max() < 1e-12

    @pytest.mark.parametrize("name", ["p1_3d", "p2_2d", "p3_2d", "sine_1d", "sine2_2d", "p2_reduced_2d"])
    def test_source_is_laplacian_of_solution(self, name):
        problem = builtin_problem(name)
        x = random_points(problem.dim, 100, seed=3)
        _, _, lap = forward_with_laplacian(ExactSolutionNet.for_problem(problem), x)
        torch.testing.assert_close(lap, problem.source(x), rtol=1e-8, atol=1e-8)

    def test_pb_demo_source_includes_sinh(self):
        problem = builtin_problem("pb_demo")
        x = random_points(2, 50, seed=1)
        phi = problem.exact_solution(x)
        torch.testing.assert_close(problem.source(x), -2 * phi + torch.sinh(phi))

    def test_names_are_stable(self):
        assert {"p1_3d", "p2_2d", "p3_2d", "pb_demo"} <= set(problem_names())

    def test_unknown_problem(self):
        with pytest.raises(UnknownProblemError):
            builtin_problem("p9_9d")


class TestResidualF0:
    def test_exact_solution_of_p1(self):
        problem = builtin_problem("p1_3d")
        x = random_points(3, 200)
        residual = residual_F0(problem, problem.exact_solution(x), problem.exact_laplacian(x), x)
        assert residual.abs().max() < 1e-8

    def test_zero_function_on_p1(self):
        problem = builtin_problem("p1_3d")
        zero = torch.zeros(1, dtype=DTYPE)
        residual = residual_F0(problem, zero, zero, POINT)
        assert float(residual) == pytest.approx(75.0, abs=1e-12)

    def test_sinh_term_vanishes_at_zero(self):
        problem = builtin_problem("pb_demo")
        x = random_points(2, 10)
        zero = torch.zeros(10, dtype=DTYPE)
        torch.testing.assert_close(residual_F0(problem, zero, zero, x), -problem.source(x))


class TestResidualFk:
    def test_zero_candidate_gives_previous_residual(self):
        stack = random_stack("p3_2d", 2, seed=1)
        candidate = zero_output(init_siren(2, 2, 8, 30.0, seed=99))
        x = random_points(2, 100)

        value, lap = stack.value_and_laplacian(x)
        expected = residual_F0(stack.problem, value, lap, x)
        torch.testing.assert_close(residual_Fk(stack, candidate, x), expected, rtol=0, atol=1e-12)

    def test_solved_base(self):
        problem = builtin_problem("p1_3d")
        stack = CorrectionStack(problem).push(ExactSolutionNet.for_problem(problem))
        candidate = zero_output(init_siren(3, 1, 4, 30.0, seed=0))
        residual = residual_Fk(stack, candidate, random_points(3, 100))
        assert residual.abs().max() < 1e-9

    @pytest.mark.parametrize("name", ["p1_3d", "p3_2d", "pb_demo", "sine_1d"])
    @pytest.mark.parametrize("order", [0, 1, 2, 3])
    def test_recursive_form_equals_summed_form(self, name, order):
        stack = random_stack(name, order, seed=order + 1)
        problem = stack.problem
        candidate = init_siren(problem.dim, 2, 16, 30.0, seed=1234)
        x = random_points(problem.dim, 1000, seed=order)

        summed = residual_Fk(stack, candidate, x)
        recursive = residual_Fk(stack, candidate, x, recursive=True)
        assert ((summed - recursive).abs() <= 1e-8 * (1 + summed.abs())).all()

    def test_nonlinear_error_equation(self):
        """With the exact error phi - N_0 as candidate, F_1 vanishes for the sinh problem."""
        problem = builtin_problem("pb_demo")
        base = init_siren(2, 2, 16, 30.0, seed=8).freeze()
        stack = CorrectionStack(problem).push(base)
        error = ExactSolutionNet(lambda x: problem.exact_solution(x) - base(x), 2, "pb_demo_error")
        x = random_points(2, 200, seed=2)

        residual = residual_Fk(stack, error, x)
        _, _, base_lap = forward_with_laplacian(base, x)
        assert residual.abs().max() <= 1e-8 * (1 + float(base_lap.abs().max()))

    def test_order_beyond_stack(self):
        stack = random_stack("sine_1d", 1)
        with pytest.raises(StackUnderflowError):
            residual_Fk(stack, init_siren(1, 1, 4, 30.0, seed=0), [0.5], order=2)

    def test_candidate_keeps_graph(self):
        stack = random_stack("sine_1d", 1)
        candidate = init_siren(1, 1, 4, 30.0, seed=5)
        residual = residual_Fk(stack, candidate, random_points(1, 8))
        assert residual.requires_grad
        assert all(not p.requires_grad for p in stack.nets[0].theta())


class TestBoundaryTarget:
    def test_base_stage_is_boundary_data(self):
        stack = CorrectionStack(builtin_problem("p3_2d"))
        assert torch.equal(boundary_target_k(stack, random_points(2, 5)), torch.zeros(5, dtype=DTYPE))

    def test_first_correction(self):
        stack = CorrectionStack(builtin_problem("sine_1d")).push(
            zero_output(init_siren(1, 1, 4, 30.0, seed=0), bias=0.2)
        )
        target = boundary_target_k(stack, [[math.pi], [-math.pi]])
        assert target.tolist() == [-0.2, -0.2]

    def test_telescoping(self):
        stack = random_stack("p3_2d", 3, seed=4)
        y = random_points(2, 50)
        y[:, 0] = math.pi
        for k in range(4):
            prefix = stack.prefix(k)
            total = sum((evaluate(net, y) for net in prefix.nets), torch.zeros(50, dtype=DTYPE))
            torch.testing.assert_close(
                total + boundary_target_k(stack, y, order=k),
                stack.problem.boundary(y),
                rtol=0,
                atol=1e-15,
            )


class TestCorrectionStack:
    def test_push_freezes(self):
        net = init_siren(2, 1, 4, 30.0, seed=0)
        stack = CorrectionStack(builtin_problem("p3_2d")).push(net)
        assert stack.order == 1
        assert not any(p.requires_grad for p in net.theta())

    def test_push_rejects_wrong_dimension(self):
        with pytest.raises(ShapeError):
            CorrectionStack(builtin_problem("p3_2d")).push(init_siren(3, 1, 4, 30.0, seed=0))

    def test_prefix_out_of_range(self):
        with pytest.raises(StackUnderflowError):
            random_stack("sine_1d", 1).prefix(2)

    def test_value_is_sum_of_nets(self):
        stack = random_stack("p3_2d", 2, seed=2)
        x = random_points(2, 20)
        torch.testing.assert_close(
            stack.value(x), evaluate(stack.nets[0], x) + evaluate(stack.nets[1], x), rtol=0, atol=0
        )
