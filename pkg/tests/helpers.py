"""Shared builders for the test suite."""

import math
from typing import Dict

import torch

from equations import PdeProblem
from jets import central_difference
from model import init_siren
from sampling import Box


def homogeneous_problem(dim: int = 2) -> PdeProblem:
    """laplacian u = 0 with u = 0 on the boundary; the zero function solves it."""
    return PdeProblem(
        "homogeneous",
        Box.cube(dim),
        lambda x: torch.zeros(x.shape[0], dtype=x.dtype),
    )


def zero_output(net, bias: float = 0.0):
    """Make `net` the constant function `bias`."""
    with torch.no_grad():
        net.layers[-1].weight.zero_()
        net.layers[-1].bias.fill_(bias)
    return net


def random_points(dim: int, count: int, seed: int = 0) -> torch.Tensor:
    generator = torch.Generator().manual_seed(seed)
    return (torch.rand(count, dim, generator=generator, dtype=torch.float64) * 2 - 1) * math.pi


def tiny_siren(dim: int = 1, layers: int = 1, width: int = 4, omega0: float = 30.0, seed: int = 0):
    return init_siren(dim, layers, width, omega0, seed)


def write_config(path, values: Dict[str, object]) -> str:
    path.write_text("".join(f"{key} = {value}\n" for key, value in values.items()), encoding="utf-8")
    return str(path)


def fd_laplacian(net, x: torch.Tensor, h: float):
    """Central-difference gradient and Laplacian of `net` at the rows of x."""
    dim = x.shape[1]
    lap = torch.zeros(x.shape[0], dtype=torch.float64)
    grad = torch.zeros_like(x)
    with torch.no_grad():
        for i in range(dim):
            axis = torch.zeros(dim, dtype=torch.float64)
            axis[i] = 1.0
            first, second = central_difference(lambda t: net(x + t * axis), 0.0, h)
            grad[:, i] = first
            lap += second
    return grad, lap
