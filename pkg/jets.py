"""
Forward jets for exact input derivatives of sine networks.

A Jet carries, for a batch of points and a layer of units, the value, the
gradient with respect to the d input coordinates and the pure second
derivatives d^2/dx_i^2. Affine maps mix units linearly and every
nonlinearity acts unit by unit, so the Hessian diagonal closes over these two
operations and the Laplacian is its sum. Parameter gradients come from the
torch autograd tape recorded while the jets are propagated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import torch
from torch.nn import functional as F

from utils import DivergedTrainingError, InvalidInputError, ShapeError

DTYPE = torch.float64


def as_points(x, dim: Optional[int] = None) -> torch.Tensor:
    """
    Coerce a point or a batch of points to a float64 tensor of shape (B, d).

    Args:
        x: Sequence/tensor of shape (d,) or (B, d)
        dim: Expected input dimension d, checked when given

    Returns:
        Tensor of shape (B, d)
    """
    points = torch.as_tensor(x, dtype=DTYPE)
    if points.ndim == 1:
        points = points.unsqueeze(0)
    if points.ndim != 2 or points.shape[1] < 1:
        raise ShapeError(f"expected points of shape (B, d), got {tuple(points.shape)}")
    if dim is not None and points.shape[1] != dim:
        raise ShapeError(f"expected {dim}-dimensional points, got {points.shape[1]}")
    return points


@dataclass(frozen=True)
class Jet:
    """Values (B, n), input gradients (B, n, d) and pure second derivatives (B, n, d)."""

    value: torch.Tensor
    grad: torch.Tensor
    second: torch.Tensor

    def __post_init__(self):
        if self.grad.shape != self.second.shape:
            raise ShapeError(
                f"jet grad {tuple(self.grad.shape)} and second "
                f"{tuple(self.second.shape)} differ"
            )
        if self.grad.ndim != 3 or self.grad.shape[:2] != self.value.shape:
            raise ShapeError(
                f"jet value {tuple(self.value.shape)} does not match "
                f"derivatives {tuple(self.grad.shape)}"
            )
        if self.grad.shape[-1] < 1:
            raise ShapeError("jet input dimension must be at least 1")

    @property
    def width(self) -> int:
        return self.value.shape[-1]

    def laplacian(self) -> torch.Tensor:
        return self.second.sum(dim=-1)

    def __add__(self, other: "Jet") -> "Jet":
        return Jet(
            self.value + other.value,
            self.grad + other.grad,
            self.second + other.second,
        )

    def __mul__(self, scale: float) -> "Jet":
        return Jet(self.value * scale, self.grad * scale, self.second * scale)

    __rmul__ = __mul__


def seed_jets(x) -> Jet:
    """One jet per coordinate: value x_i, grad e_i, second 0."""
    points = as_points(x)
    if not torch.isfinite(points).all():
        raise InvalidInputError("cannot seed jets from non-finite coordinates")

    batch, d = points.shape
    grad = torch.eye(d, dtype=DTYPE).expand(batch, d, d)
    second = torch.zeros(batch, d, d, dtype=DTYPE)
    return Jet(points, grad, second)


def jet_affine(W: torch.Tensor, b: Optional[torch.Tensor], jet: Jet) -> Jet:
    # Affine maps carry no curvature, so derivatives follow the same linear map
    if W.ndim != 2 or W.shape[1] != jet.width:
        raise ShapeError(
            f"weight {tuple(W.shape)} cannot act on {jet.width} input units"
        )
    if b is not None and b.shape != (W.shape[0],):
        raise ShapeError(f"bias {tuple(b.shape)} does not match weight {tuple(W.shape)}")

    return Jet(F.linear(jet.value, W, b), W @ jet.grad, W @ jet.second)


def jet_sin(omega: float, jet: Jet) -> Jet:
    """sin(omega * u) applied unit-wise, with exact first and pure second derivatives."""
    s = torch.sin(omega * jet.value)
    c = torch.cos(omega * jet.value)
    grad = (omega * c).unsqueeze(-1) * jet.grad
    second = (-(omega**2) * s).unsqueeze(-1) * jet.grad.square() + (
        omega * c
    ).unsqueeze(-1) * jet.second
    return Jet(s, grad, second)


def jet_cos(omega: float, jet: Jet) -> Jet:
    """cos(omega * u) applied unit-wise."""
    c = torch.cos(omega * jet.value)
    s = torch.sin(omega * jet.value)
    grad = (-omega * s).unsqueeze(-1) * jet.grad
    second = (-(omega**2) * c).unsqueeze(-1) * jet.grad.square() - (
        omega * s
    ).unsqueeze(-1) * jet.second
    return Jet(c, grad, second)


def jet_concat(jets: Sequence[Jet]) -> Jet:
    return Jet(
        torch.cat([j.value for j in jets], dim=-1),
        torch.cat([j.grad for j in jets], dim=-2),
        torch.cat([j.second for j in jets], dim=-2),
    )


def forward_with_laplacian(net, x) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """
    Evaluate a scalar network together with its input gradient and Laplacian.

    Args:
        net: Any module exposing `input_dim` and `jet_forward(Jet) -> Jet`
        x: Point (d,) or batch (B, d)

    Returns:
        Tuple of (value (B,), gradient (B, d), laplacian (B,))
    """
    points = as_points(x, net.input_dim)
    out = net.jet_forward(seed_jets(points))
    return out.value[:, 0], out.grad[:, 0, :], out.laplacian()[:, 0]


@dataclass(frozen=True)
class ParameterGradient:
    """Per-layer weight and bias gradients, congruent with the network's parameters."""

    weights: Tuple[torch.Tensor, ...]
    biases: Tuple[torch.Tensor, ...]

    @classmethod
    def from_tensors(cls, tensors: Sequence[torch.Tensor]) -> "ParameterGradient":
        """Build from the interleaved [W0, b0, W1, b1, ...] order of Network.theta()."""
        if len(tensors) % 2:
            raise ShapeError("parameter list must alternate weights and biases")
        return cls(tuple(tensors[0::2]), tuple(tensors[1::2]))

    def tensors(self) -> List[torch.Tensor]:
        out: List[torch.Tensor] = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def flatten(self) -> torch.Tensor:
        tensors = self.tensors()
        if not tensors:
            return torch.zeros(0, dtype=DTYPE)
        return torch.cat([t.reshape(-1) for t in tensors])

    def norm(self) -> float:
        return float(torch.linalg.vector_norm(self.flatten()))

    def matches(self, net) -> bool:
        return [t.shape for t in self.tensors()] == [p.shape for p in net.theta()]


def loss_param_gradient(
    loss_evaluator: Callable[[object], torch.Tensor],
    net,
    batch_index: Optional[int] = None,
) -> Tuple[float, ParameterGradient]:
    """
    Evaluate a scalar loss built from network outputs and its exact gradient
    with respect to every parameter of `net`.

    Args:
        loss_evaluator: Called with `net`, returns a scalar tensor
        net: Network whose parameters require gradients
        batch_index: Reported in the error if the loss or gradient is not finite

    Returns:
        Tuple of (loss value, ParameterGradient)
    """
    params = net.theta()
    if any(not p.requires_grad for p in params):
        raise InvalidInputError("cannot differentiate a frozen network")

    with torch.enable_grad():
        loss = loss_evaluator(net)
        if loss.ndim != 0:
            raise ShapeError(f"loss must be a scalar, got shape {tuple(loss.shape)}")
        if not torch.isfinite(loss):
            raise DivergedTrainingError(
                f"non-finite loss {float(loss)}", batch_index=batch_index
            )
        grads = torch.autograd.grad(loss, params, allow_unused=True)

    grads = [
        torch.zeros_like(p) if g is None else g.detach() for g, p in zip(grads, params)
    ]
    for g in grads:
        if not torch.isfinite(g).all():
            raise DivergedTrainingError("non-finite gradient", batch_index=batch_index)

    return float(loss.detach()), ParameterGradient.from_tensors(grads)


def central_difference(fn: Callable, x: float, h: float) -> Tuple:
    """First and second central differences of fn at x with step h (fn may return tensors)."""
    fp, f0, fm = fn(x + h), fn(x), fn(x - h)
    return (fp - fm) / (2.0 * h), (fp - 2.0 * f0 + fm) / (h * h)


def relative_step(theta: float, scale: float = 1e-4) -> float:
    return scale * (1.0 + math.fabs(theta))
