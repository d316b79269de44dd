"""
Sine-activated networks (SIREN) with an optional frozen Gaussian Fourier
feature front-end, plus a pseudo-network wrapping a closed-form function.

Every network exposes the same surface: `input_dim`, `forward` (values),
`jet_forward` (values with exact input derivatives) and `theta()` (its
trainable tensors in layer order).
"""

import math
from dataclasses import dataclass
from typing import Callable, List, Optional

import torch
from torch import nn
from torch.nn import functional as F

from jets import DTYPE, Jet, as_points, jet_affine, jet_concat, jet_cos, jet_sin
from sampling import STREAM_FOURIER, derive_seed, make_generator
from utils import ConfigError, ShapeError

ACTIVATIONS = ("sine", "identity")


class FourierFeatureMap(nn.Module):
    """gamma(x) = [cos(2 pi B x), sin(2 pi B x)] with a fixed n x d matrix B."""

    def __init__(self, B: torch.Tensor, sigma: float):
        super().__init__()
        if B.ndim != 2 or not torch.isfinite(B).all():
            raise ConfigError("Fourier frequencies must be a finite n x d matrix")
        self.register_buffer("B", B.to(DTYPE))
        self.sigma = float(sigma)

    @property
    def n(self) -> int:
        return self.B.shape[0]

    @property
    def input_dim(self) -> int:
        return self.B.shape[1]

    @property
    def output_dim(self) -> int:
        return 2 * self.n

    def frequencies(self) -> torch.Tensor:
        return (2.0 * math.pi) * self.B

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        proj = F.linear(x, self.frequencies())
        return torch.cat([torch.cos(proj), torch.sin(proj)], dim=-1)

    def jet_forward(self, jet: Jet) -> Jet:
        proj = jet_affine(self.frequencies(), None, jet)
        return jet_concat([jet_cos(1.0, proj), jet_sin(1.0, proj)])


def sample_fourier_map(d: int, n: int, sigma: float, seed: int) -> FourierFeatureMap:
    """Frequencies drawn i.i.d. from N(0, sigma^2)."""
    if d < 1 or n < 1:
        raise ConfigError("Fourier map needs d >= 1 and n >= 1", key="fourier.n")
    if not sigma > 0:
        raise ConfigError(f"sigma must be positive, got {sigma}", key="fourier.sigma")

    generator = make_generator(seed)
    B = torch.randn(n, d, generator=generator, dtype=DTYPE) * sigma
    return FourierFeatureMap(B, sigma)


def apply_fourier(feature_map: FourierFeatureMap, x) -> torch.Tensor:
    points = as_points(x, feature_map.input_dim)
    return feature_map(points)


class Network(nn.Module):
    """
    Multilayer perceptron u -> sin(omega0 * (W u + b)) on every hidden layer and
    a linear scalar output layer.
    """

    def __init__(
        self,
        input_dim: int,
        hidden_layers: int,
        width: int,
        omega0: float = 30.0,
        activation: str = "sine",
        input_map: Optional[FourierFeatureMap] = None,
    ):
        super().__init__()
        if input_dim < 1 or hidden_layers < 1 or width < 1:
            raise ConfigError(
                f"network dimensions must be positive "
                f"(d={input_dim}, layers={hidden_layers}, width={width})"
            )
        if not omega0 > 0:
            raise ConfigError(f"omega0 must be positive, got {omega0}", key="omega0")
        if activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {activation!r}")
        if input_map is not None and input_map.input_dim != input_dim:
            raise ShapeError(
                f"Fourier map expects {input_map.input_dim}-d input, network has {input_dim}"
            )

        self.input_dim = input_dim
        self.hidden_layers = hidden_layers
        self.width = width
        self.omega0 = float(omega0)
        self.activation = activation
        self.input_map = input_map

        first_in = input_map.output_dim if input_map is not None else input_dim
        sizes = [first_in] + [width] * hidden_layers + [1]
        self.layers = nn.ModuleList(
            nn.Linear(fan_in, fan_out, dtype=DTYPE)
            for fan_in, fan_out in zip(sizes[:-1], sizes[1:])
        )

    def _activate(self, u: torch.Tensor) -> torch.Tensor:
        if self.activation == "identity":
            return u
        return torch.sin(self.omega0 * u)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        v = self.input_map(x) if self.input_map is not None else x
        for layer in self.layers[:-1]:
            v = self._activate(F.linear(v, layer.weight, layer.bias))
        last = self.layers[-1]
        return F.linear(v, last.weight, last.bias)[:, 0]

    def jet_forward(self, jet: Jet) -> Jet:
        if jet.width != self.input_dim:
            raise ShapeError(f"network expects {self.input_dim} input units, got {jet.width}")
        if self.input_map is not None:
            jet = self.input_map.jet_forward(jet)
        for layer in self.layers[:-1]:
            jet = jet_affine(layer.weight, layer.bias, jet)
            if self.activation == "sine":
                jet = jet_sin(self.omega0, jet)
        last = self.layers[-1]
        return jet_affine(last.weight, last.bias, jet)

    def theta(self) -> List[torch.Tensor]:
        """Trainable tensors in layer order: [W0, b0, W1, b1, ...]."""
        out: List[torch.Tensor] = []
        for layer in self.layers:
            out.extend((layer.weight, layer.bias))
        return out

    def freeze(self) -> "Network":
        self.requires_grad_(False)
        return self

    def shapes(self) -> List[tuple]:
        return [tuple(layer.weight.shape) for layer in self.layers]


def init_siren(
    d: int,
    hidden_layers: int,
    width: int,
    omega0: float,
    seed: int,
    input_map: Optional[FourierFeatureMap] = None,
    activation: str = "sine",
) -> Network:
    """
    Build a SIREN with the standard initialization: first layer weights
    U(-1/fan_in, 1/fan_in), every later layer U(-sqrt(6/fan_in)/omega0, +...),
    biases zero. Fully determined by `seed`.
    """
    net = Network(d, hidden_layers, width, omega0, activation, input_map)
    generator = make_generator(seed)

    with torch.no_grad():
        for index, layer in enumerate(net.layers):
            fan_in = layer.weight.shape[1]
            if index == 0:
                bound = 1.0 / fan_in
            else:
                bound = math.sqrt(6.0 / fan_in) / net.omega0
            layer.weight.uniform_(-bound, bound, generator=generator)
            layer.bias.zero_()

    return net


def evaluate(net, x) -> torch.Tensor:
    """Value-only fast path; equals forward_with_laplacian(net, x)[0] bit for bit."""
    points = as_points(x, net.input_dim)
    with torch.no_grad():
        return net(points)


@dataclass(frozen=True)
class Architecture:
    """Network hyperparameters shared by every stage of a run."""

    layers: int = 5
    width: int = 128
    omega0: float = 30.0
    activation: str = "sine"
    fourier_enabled: bool = False
    fourier_sigma: float = 1.0
    fourier_n: int = 256

    def __post_init__(self):
        if self.layers < 1:
            raise ConfigError("at least one hidden layer is required", key="layers")
        if self.width < 1:
            raise ConfigError("width must be at least 1", key="width")
        if not self.omega0 > 0:
            raise ConfigError("omega0 must be positive", key="omega0")
        if self.fourier_enabled:
            if not self.fourier_sigma > 0:
                raise ConfigError("sigma must be positive", key="fourier.sigma")
            if self.fourier_n < 1:
                raise ConfigError("feature count must be at least 1", key="fourier.n")

    def build(self, d: int, seed: int, stage: int = 0) -> Network:
        input_map = None
        if self.fourier_enabled:
            input_map = sample_fourier_map(
                d, self.fourier_n, self.fourier_sigma, derive_seed(seed, stage, STREAM_FOURIER)
            )
        return init_siren(d, self.layers, self.width, self.omega0, seed, input_map, self.activation)


class ExactSolutionNet(nn.Module):
    """
    Pseudo-network wrapping a closed-form function so it can sit in a
    correction stack. Input derivatives come from autograd on the closed form;
    `jet_forward` therefore expects seeded jets (the input points themselves).
    """

    def __init__(self, fn: Callable[[torch.Tensor], torch.Tensor], input_dim: int, label: str):
        super().__init__()
        self.fn = fn
        self.input_dim = input_dim
        self.label = label

    @classmethod
    def for_problem(cls, problem) -> "ExactSolutionNet":
        if problem.exact_solution is None:
            raise ConfigError(f"problem {problem.name} has no closed-form solution")
        return cls(problem.exact_solution, problem.dim, problem.name)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fn(x)

    def jet_forward(self, jet: Jet) -> Jet:
        if jet.width != self.input_dim:
            raise ShapeError(f"closed form expects {self.input_dim} inputs, got {jet.width}")

        x = jet.value.detach().requires_grad_(True)
        with torch.enable_grad():
            value = self.fn(x)
            (grad,) = torch.autograd.grad(value.sum(), x, create_graph=True)
            seconds = []
            for i in range(self.input_dim):
                if not grad.requires_grad:
                    # Affine closed form
                    seconds.append(torch.zeros_like(value))
                    continue
                (row,) = torch.autograd.grad(
                    grad[:, i].sum(), x, retain_graph=True, allow_unused=True
                )
                seconds.append(torch.zeros_like(value) if row is None else row[:, i])

        second = torch.stack(seconds, dim=-1)
        return Jet(
            value.detach().unsqueeze(-1),
            grad.detach().unsqueeze(1),
            second.detach().unsqueeze(1),
        )

    def theta(self) -> List[torch.Tensor]:
        return []

    def freeze(self) -> "ExactSolutionNet":
        return self
