"""
Registered PDE problems and the residual operators of the error-correction
scheme.

Every problem reads  laplacian(phi) + B[phi] = f  in a box with phi = g on the
boundary, where B is either absent or a named scalar nonlinearity. A
correction stack N_0..N_{k-1} is trained stage by stage; the k-th candidate is
scored by the recursive residual F_k, which equals F_0 of the summed network.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import torch

from jets import as_points, forward_with_laplacian
from model import evaluate
from sampling import Box
from utils import InvalidInputError, ShapeError, StackUnderflowError, UnknownProblemError

PointFn = Callable[[torch.Tensor], torch.Tensor]

NONLINEARITIES: Dict[str, PointFn] = {
    "sinh": torch.sinh,
}


def _zero(x: torch.Tensor) -> torch.Tensor:
    return torch.zeros(x.shape[0], dtype=x.dtype)


@dataclass(frozen=True)
class PdeProblem:
    name: str
    domain: Box
    source: PointFn
    boundary: PointFn = _zero
    nonlinearity: Optional[str] = None
    exact_solution: Optional[PointFn] = None
    exact_laplacian: Optional[PointFn] = None
    description: str = ""

    def __post_init__(self):
        if self.nonlinearity is not None and self.nonlinearity not in NONLINEARITIES:
            raise InvalidInputError(f"unknown nonlinearity {self.nonlinearity!r}")

    @property
    def dim(self) -> int:
        return self.domain.dim

    def nonlinear_term(self, value: torch.Tensor) -> torch.Tensor:
        if self.nonlinearity is None:
            return torch.zeros_like(value)
        return NONLINEARITIES[self.nonlinearity](value)


def _p1_3d() -> PdeProblem:
    def phi(x):
        return torch.sin(5 * x[:, 0]) * torch.sin(5 * x[:, 1]) * torch.sin(5 * x[:, 2])

    def f(x):
        return -75 * phi(x)

    return PdeProblem(
        "p1_3d",
        Box.cube(3),
        f,
        exact_solution=phi,
        exact_laplacian=f,
        description="3D Poisson, phi = sin(5x) sin(5y) sin(5z)",
    )


def _p2_2d() -> PdeProblem:
    # Source term -800 = -2 * 20^2 fixes the frequency at 20
    def phi(x):
        return torch.sin(20 * x[:, 0]) * torch.sin(20 * x[:, 1])

    def f(x):
        return -800 * phi(x)

    return PdeProblem(
        "p2_2d",
        Box.cube(2),
        f,
        exact_solution=phi,
        exact_laplacian=f,
        description="2D Poisson, phi = sin(20x) sin(20y)",
    )


def _p3_2d() -> PdeProblem:
    def phi(x):
        return (math.pi**2 - x[:, 1] ** 2) * torch.sin(10 * x[:, 0])

    def f(x):
        return (100 * x[:, 1] ** 2 - 100 * math.pi**2 - 2) * torch.sin(10 * x[:, 0])

    return PdeProblem(
        "p3_2d",
        Box.cube(2),
        f,
        exact_solution=phi,
        exact_laplacian=f,
        description="2D Poisson, phi = (pi^2 - y^2) sin(10x)",
    )


def _pb_demo() -> PdeProblem:
    def phi(x):
        return torch.sin(x[:, 0]) * torch.sin(x[:, 1])

    def lap(x):
        return -2 * phi(x)

    def f(x):
        return lap(x) + torch.sinh(phi(x))

    return PdeProblem(
        "pb_demo",
        Box.cube(2),
        f,
        nonlinearity="sinh",
        exact_solution=phi,
        exact_laplacian=lap,
        description="Poisson-Boltzmann, laplacian(phi) + sinh(phi) = f, phi = sin(x) sin(y)",
    )


def _sine_1d() -> PdeProblem:
    def phi(x):
        return torch.sin(x[:, 0])

    def f(x):
        return -torch.sin(x[:, 0])

    return PdeProblem(
        "sine_1d",
        Box.cube(1),
        f,
        exact_solution=phi,
        exact_laplacian=f,
        description="1D Poisson, phi = sin(x)",
    )


def _sine2_2d() -> PdeProblem:
    def phi(x):
        return torch.sin(2 * x[:, 0]) * torch.sin(2 * x[:, 1])

    def f(x):
        return -8 * phi(x)

    return PdeProblem(
        "sine2_2d",
        Box.cube(2),
        f,
        exact_solution=phi,
        exact_laplacian=f,
        description="2D Poisson, phi = sin(2x) sin(2y)",
    )


def _p2_reduced_2d() -> PdeProblem:
    def phi(x):
        return torch.sin(10 * x[:, 0]) * torch.sin(10 * x[:, 1])

    def f(x):
        return -200 * phi(x)

    return PdeProblem(
        "p2_reduced_2d",
        Box.cube(2),
        f,
        exact_solution=phi,
        exact_laplacian=f,
        description="2D Poisson, phi = sin(10x) sin(10y)",
    )


_PROBLEMS: Dict[str, Callable[[], PdeProblem]] = {
    "p1_3d": _p1_3d,
    "p2_2d": _p2_2d,
    "p3_2d": _p3_2d,
    "pb_demo": _pb_demo,
    "sine_1d": _sine_1d,
    "sine2_2d": _sine2_2d,
    "p2_reduced_2d": _p2_reduced_2d,
}


def problem_names() -> List[str]:
    return list(_PROBLEMS)


def builtin_problem(name: str) -> PdeProblem:
    """
    Look up a registered problem by its stable name.

    Raises:
        UnknownProblemError: If the name is not registered
    """
    factory = _PROBLEMS.get(name)
    if factory is None:
        raise UnknownProblemError(
            f"unknown problem {name!r} (known: {', '.join(_PROBLEMS)})"
        )
    return factory()


@dataclass(frozen=True)
class CorrectionStack:
    """Frozen networks N_0..N_{k-1}; N^(j) is the sum of the first j + 1."""

    problem: PdeProblem
    nets: Tuple = ()
    logs: Tuple = field(default=(), repr=False)

    @property
    def order(self) -> int:
        return len(self.nets)

    def prefix(self, k: int) -> "CorrectionStack":
        if not 0 <= k <= self.order:
            raise StackUnderflowError(f"stack holds {self.order} nets, asked for {k}")
        return CorrectionStack(self.problem, self.nets[:k], self.logs[:k])

    def push(self, net, logs=()) -> "CorrectionStack":
        """New stack with `net` frozen and appended."""
        if net.input_dim != self.problem.dim:
            raise ShapeError(
                f"net takes {net.input_dim}-d input, problem {self.problem.name} "
                f"is {self.problem.dim}-d"
            )
        net.freeze()
        return CorrectionStack(self.problem, self.nets + (net,), self.logs + (tuple(logs),))

    def value(self, x) -> torch.Tensor:
        points = as_points(x, self.problem.dim)
        total = torch.zeros(points.shape[0], dtype=points.dtype)
        for net in self.nets:
            total = total + evaluate(net, points)
        return total

    def value_and_laplacian(self, x) -> Tuple[torch.Tensor, torch.Tensor]:
        points = as_points(x, self.problem.dim)
        value = torch.zeros(points.shape[0], dtype=points.dtype)
        laplacian = torch.zeros_like(value)
        with torch.no_grad():
            for net in self.nets:
                v, _, lap = forward_with_laplacian(net, points)
                value = value + v
                laplacian = laplacian + lap
        return value, laplacian


def residual_F0(problem: PdeProblem, value, laplacian, x) -> torch.Tensor:
    """F_0[N](x) = laplacian N(x) + B[N(x)] - f(x)."""
    points = as_points(x, problem.dim)
    return laplacian + problem.nonlinear_term(value) - problem.source(points)


def _recursive_residual(problem, nets, candidate, points) -> torch.Tensor:
    # F_j[N_j] = F_{j-1}[N_{j-1}] + lap N_j - B[N^(j-1)] + B[N^(j-1) + N_j]
    with torch.no_grad():
        v, _, lap = forward_with_laplacian(nets[0], points)
        residual = residual_F0(problem, v, lap, points)
        running = v
        for net in nets[1:]:
            v, _, lap = forward_with_laplacian(net, points)
            residual = (
                residual
                + lap
                - problem.nonlinear_term(running)
                + problem.nonlinear_term(running + v)
            )
            running = running + v

    v, _, lap = forward_with_laplacian(candidate, points)
    return (
        residual
        + lap
        - problem.nonlinear_term(running)
        + problem.nonlinear_term(running + v)
    )


def residual_Fk(
    stack: CorrectionStack,
    candidate,
    x,
    order: Optional[int] = None,
    recursive: bool = False,
) -> torch.Tensor:
    """
    Residual of the k-th correction equation for `candidate` at points `x`.

    Args:
        stack: Frozen nets; the first `order` of them form N^(k-1)
        candidate: Network N_k being trained
        x: Point (d,) or batch (B, d)
        order: k, defaults to the stack size
        recursive: Evaluate the recursion over F_0..F_{k-1} instead of F_0 of
            the summed network (both give the same field)

    Returns:
        Tensor (B,) carrying the autograd graph of the candidate
    """
    k = stack.order if order is None else order
    if k < 0:
        raise InvalidInputError(f"correction order must be non-negative, got {k}")
    if k > stack.order:
        raise StackUnderflowError(
            f"order {k} needs {k} frozen nets, stack holds {stack.order}"
        )

    problem = stack.problem
    points = as_points(x, problem.dim)
    base = stack.prefix(k)

    if recursive and k >= 1:
        return _recursive_residual(problem, base.nets, candidate, points)

    value, laplacian = base.value_and_laplacian(points)
    v, _, lap = forward_with_laplacian(candidate, points)
    return residual_F0(problem, value + v, laplacian + lap, points)


def boundary_target_k(stack: CorrectionStack, y, order: Optional[int] = None) -> torch.Tensor:
    """phi_k on the boundary: g(y) - N^(k-1)(y); g(y) for k = 0."""
    k = stack.order if order is None else order
    base = stack.prefix(k)
    points = as_points(y, stack.problem.dim)
    return stack.problem.boundary(points) - base.value(points)
