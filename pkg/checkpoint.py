"""
Versioned plain-text checkpoints for correction stacks.

Layout: the header line `GDGM1`, run metadata, then one architecture line per
net followed by its tensors in layer order, row-major, each number written
with 17 significant digits so that a load reproduces the saved floats bit for
bit.

    GDGM1
    problem p1_3d
    seed 1
    stages 2
    net 0 kind=siren input_dim=3 hidden_layers=5 width=128 omega0=30 activation=sine fourier_n=0 fourier_sigma=0
    fourier 256 3            (only with a Fourier front-end)
    weight 0 128 3
    <one row per line>
    bias 0 128
    <one line>
    ...
    net 1 kind=exact problem=p1_3d
    end
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Tuple

import torch

from equations import CorrectionStack, builtin_problem
from jets import DTYPE
from model import ExactSolutionNet, FourierFeatureMap, Network
from utils import CheckpointError, OutputError, SolverError, format_float

VERSION = "GDGM1"


@dataclass(frozen=True)
class Checkpoint:
    version: str
    problem: str
    seed: int
    nets: Tuple

    @property
    def stages(self) -> int:
        return len(self.nets)

    def to_stack(self) -> CorrectionStack:
        stack = CorrectionStack(builtin_problem(self.problem))
        for net in self.nets:
            stack = stack.push(net)
        return stack


def _matrix_lines(tensor: torch.Tensor) -> List[str]:
    rows = tensor.reshape(tensor.shape[0], -1) if tensor.ndim > 1 else tensor.reshape(1, -1)
    return [" ".join(format_float(v) for v in row) for row in rows.tolist()]


def _net_lines(index: int, net) -> List[str]:
    if isinstance(net, ExactSolutionNet):
        return [f"net {index} kind=exact problem={net.label}"]

    fourier_n = net.input_map.n if net.input_map is not None else 0
    fourier_sigma = net.input_map.sigma if net.input_map is not None else 0.0
    lines = [
        f"net {index} kind=siren input_dim={net.input_dim} hidden_layers={net.hidden_layers} "
        f"width={net.width} omega0={format_float(net.omega0)} activation={net.activation} "
        f"fourier_n={fourier_n} fourier_sigma={format_float(fourier_sigma)}"
    ]
    if net.input_map is not None:
        B = net.input_map.B
        lines.append(f"fourier {B.shape[0]} {B.shape[1]}")
        lines.extend(_matrix_lines(B))
    for layer_index, layer in enumerate(net.layers):
        W, b = layer.weight.detach(), layer.bias.detach()
        lines.append(f"weight {layer_index} {W.shape[0]} {W.shape[1]}")
        lines.extend(_matrix_lines(W))
        lines.append(f"bias {layer_index} {b.shape[0]}")
        lines.extend(_matrix_lines(b))
    return lines


def save_checkpoint(stack: CorrectionStack, path, seed: int = 0) -> Path:
    """Write every net of the stack; reruns with the same seed give identical bytes."""
    lines = [
        VERSION,
        f"problem {stack.problem.name}",
        f"seed {seed}",
        f"stages {stack.order}",
    ]
    for index, net in enumerate(stack.nets):
        lines.extend(_net_lines(index, net))
    lines.append("end")

    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as e:
        raise OutputError(f"cannot write checkpoint ({e.strerror})", path=path)
    return path


class _Reader:
    def __init__(self, lines: List[str], path):
        self.lines = lines
        self.path = path
        self.position = 0

    def fail(self, message: str):
        raise CheckpointError(f"{self.path}, line {self.position}: {message}")

    def next(self) -> str:
        if self.position >= len(self.lines):
            self.fail("unexpected end of file")
        line = self.lines[self.position]
        self.position += 1
        return line

    def expect(self, keyword: str) -> List[str]:
        tokens = self.next().split()
        if not tokens or tokens[0] != keyword:
            self.fail(f"expected '{keyword}'")
        return tokens[1:]

    def matrix(self, rows: int, cols: int) -> torch.Tensor:
        data = []
        for _ in range(rows):
            row = [float(v) for v in self.next().split()]
            if len(row) != cols:
                self.fail(f"expected {cols} values, got {len(row)}")
            data.append(row)
        return torch.tensor(data, dtype=DTYPE).reshape(rows, cols)


def _fields(tokens: List[str]) -> Dict[str, str]:
    return dict(token.split("=", 1) for token in tokens if "=" in token)


def _read_net(reader: _Reader, index: int):
    tokens = reader.expect("net")
    if not tokens or tokens[0] != str(index):
        reader.fail(f"expected net {index}")
    fields = _fields(tokens[1:])

    if fields.get("kind") == "exact":
        return ExactSolutionNet.for_problem(builtin_problem(fields["problem"]))
    if fields.get("kind") != "siren":
        reader.fail(f"unknown net kind {fields.get('kind')!r}")

    input_dim = int(fields["input_dim"])
    input_map = None
    if int(fields["fourier_n"]) > 0:
        n, d = (int(v) for v in reader.expect("fourier"))
        input_map = FourierFeatureMap(reader.matrix(n, d), float(fields["fourier_sigma"]))

    net = Network(
        input_dim,
        int(fields["hidden_layers"]),
        int(fields["width"]),
        float(fields["omega0"]),
        fields["activation"],
        input_map,
    )
    with torch.no_grad():
        for layer_index, layer in enumerate(net.layers):
            idx, rows, cols = (int(v) for v in reader.expect("weight"))
            if idx != layer_index or (rows, cols) != tuple(layer.weight.shape):
                reader.fail(f"weight {idx} has shape ({rows}, {cols}), expected {tuple(layer.weight.shape)}")
            layer.weight.copy_(reader.matrix(rows, cols))
            idx, size = (int(v) for v in reader.expect("bias"))
            if idx != layer_index or size != layer.bias.shape[0]:
                reader.fail(f"bias {idx} has size {size}, expected {layer.bias.shape[0]}")
            layer.bias.copy_(reader.matrix(1, size).reshape(size))
    return net.freeze()


def load_checkpoint(path) -> Checkpoint:
    """
    Raises:
        CheckpointError: Missing file, version mismatch or malformed content
    """
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path} ({e.strerror})")

    reader = _Reader(lines, path)
    version = reader.next().strip()
    if version != VERSION:
        reader.fail(f"version {version!r} is not supported (expected {VERSION})")

    try:
        (problem,) = reader.expect("problem")
        (seed,) = reader.expect("seed")
        (stages,) = reader.expect("stages")
        nets = tuple(_read_net(reader, index) for index in range(int(stages)))
        reader.expect("end")
    except CheckpointError:
        raise
    except (ValueError, KeyError) as e:
        reader.fail(f"malformed entry ({e})")
    except SolverError as e:
        reader.fail(e.message)

    return Checkpoint(version, problem, int(seed), nets)
