"""
Deep Galerkin training: minibatch residual loss, Adam updates, single-stage
training runs and the error-correction driver that trains stages 0..K in
sequence, freezing each before the next.
"""

import copy
import time
from dataclasses import dataclass
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple

import torch

from equations import CorrectionStack, PdeProblem, boundary_target_k, residual_Fk
from evaluation import relative_error
from jets import ParameterGradient, loss_param_gradient
from model import Architecture, evaluate
from sampling import (
    STREAM_INIT,
    STREAM_SAMPLING,
    SampleBatch,
    derive_seed,
    make_generator,
    sample_boundary,
    sample_interior,
)
from utils import (
    ConfigError,
    DivergedTrainingError,
    InvalidInputError,
    ShapeError,
    SolverError,
    TrainingAborted,
    debug,
)


@dataclass(frozen=True)
class TrainConfig:
    M: int = 256
    Nb: int = 64
    epochs: int = 1024
    eta: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    ec_orders: int = 0
    eval_every: int = 1
    snapshots: Tuple[int, ...] = ()

    def __post_init__(self):
        if self.Nb < 1:
            raise ConfigError("boundary batch must hold at least one point", key="train.Nb")
        if not self.M > self.Nb:
            raise ConfigError(
                f"interior batch ({self.M}) must exceed boundary batch ({self.Nb})",
                key="train.M",
            )
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative", key="train.epochs")
        if not self.eta > 0:
            raise ConfigError("learning rate must be positive", key="train.eta")
        if not 0 <= self.beta1 < 1:
            raise ConfigError("beta1 must lie in [0, 1)", key="adam.beta1")
        if not 0 <= self.beta2 < 1:
            raise ConfigError("beta2 must lie in [0, 1)", key="adam.beta2")
        if not self.eps > 0:
            raise ConfigError("eps must be positive", key="adam.eps")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative", key="seed")
        if self.ec_orders < 0:
            raise ConfigError("correction order must be non-negative", key="ec.K")
        if self.eval_every < 1:
            raise ConfigError("evaluation cadence must be at least 1", key="eval.every")
        if any(e < 0 or e > self.epochs for e in self.snapshots):
            raise ConfigError(
                f"snapshot epochs must lie in [0, {self.epochs}]", key="train.snapshots"
            )


@dataclass
class AdamState:
    m: List[torch.Tensor]
    v: List[torch.Tensor]
    t: int = 0

    @classmethod
    def zeros_like(cls, theta: Sequence[torch.Tensor]) -> "AdamState":
        return cls(
            [torch.zeros_like(p, memory_format=torch.contiguous_format) for p in theta],
            [torch.zeros_like(p, memory_format=torch.contiguous_format) for p in theta],
            0,
        )


@dataclass(frozen=True)
class EpochLog:
    epoch: int
    stage: int
    loss_interior: float
    loss_boundary: float
    loss_total: float
    relative_error: Optional[float]
    wall_ms: float

    @classmethod
    def record(
        cls,
        epoch: int,
        stage: int,
        loss_interior: float,
        loss_boundary: float,
        relative_error: Optional[float],
        wall_ms: float,
    ) -> "EpochLog":
        return cls(
            epoch,
            stage,
            loss_interior,
            loss_boundary,
            loss_interior + loss_boundary,
            relative_error,
            wall_ms,
        )


class StageResult(NamedTuple):
    network: object
    logs: List[EpochLog]
    snapshots: Dict[int, object]


def minibatch_loss(
    stack: CorrectionStack,
    candidate,
    interior: SampleBatch,
    boundary: SampleBatch,
) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Interior and boundary terms of the k-th correction loss, k = stack.order.

    Returns:
        Tuple of (mean squared F_k residual, mean squared boundary mismatch),
        both scalar tensors carrying the candidate's autograd graph
    """
    if interior.region != "interior" or boundary.region != "boundary":
        raise InvalidInputError("minibatch_loss needs an interior and a boundary batch")
    if len(interior) == 0 or len(boundary) == 0:
        raise InvalidInputError("minibatches must be non-empty")

    interior_term = residual_Fk(stack, candidate, interior.points).square().mean()

    target = boundary_target_k(stack, boundary.points)
    boundary_term = (candidate(boundary.points) - target).square().mean()

    if not (torch.isfinite(interior_term) and torch.isfinite(boundary_term)):
        raise DivergedTrainingError(
            f"non-finite loss (interior {float(interior_term)}, boundary {float(boundary_term)})"
        )
    return interior_term, boundary_term


def adam_step(
    state: AdamState,
    theta: Sequence[torch.Tensor],
    grad,
    eta: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> Tuple[AdamState, List[torch.Tensor]]:
    """
    One bias-corrected Adam update. Returns the new state and new parameter
    tensors; inputs are left untouched.
    """
    grads = grad.tensors() if isinstance(grad, ParameterGradient) else list(grad)
    if not (len(grads) == len(theta) == len(state.m) == len(state.v)):
        raise ShapeError("Adam state, parameters and gradient hold different tensor counts")

    t = state.t + 1
    bias_correction1 = 1 - beta1**t
    bias_correction2 = 1 - beta2**t

    new_m, new_v, new_theta = [], [], []
    for p, g, m, v in zip(theta, grads, state.m, state.v):
        if not (p.shape == g.shape == m.shape == v.shape):
            raise ShapeError(f"Adam shapes differ: {tuple(p.shape)} vs {tuple(g.shape)}")
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g.square()
        m_hat = m / bias_correction1
        v_hat = v / bias_correction2
        new_theta.append(p.detach() - eta * m_hat / (torch.sqrt(v_hat) + eps))
        new_m.append(m)
        new_v.append(v)

    return AdamState(new_m, new_v, t), new_theta


def _stage_relative_error(net, base_on_S, phi_on_S, S) -> Optional[float]:
    if S is None or phi_on_S is None:
        return None
    return relative_error(lambda pts: base_on_S + evaluate(net, pts), lambda _: phi_on_S, S)


def train_stage(
    stack: CorrectionStack,
    config: TrainConfig,
    architecture: Architecture,
    stage: Optional[int] = None,
    eval_points: Optional[torch.Tensor] = None,
    report: Optional[Callable[[EpochLog], None]] = None,
) -> StageResult:
    """
    Train the correction network N_k against F_k, k = stack.order.

    Each epoch draws a fresh interior and boundary batch, takes one Adam step
    and logs the minibatch losses measured before the step. A final
    evaluation-only entry (epoch = config.epochs) closes the log, so
    epochs = 0 yields a single entry.

    Args:
        stack: Frozen nets N_0..N_{k-1}
        config: Batch sizes, budget, Adam constants, seed
        architecture: Network hyperparameters for the new candidate
        stage: k; must equal stack.order when given
        eval_points: The fixed set S for relative errors (None disables them)
        report: Called with every EpochLog as it is produced

    Returns:
        StageResult(frozen network, logs, snapshots by epoch)
    """
    k = stack.order if stage is None else stage
    if k != stack.order:
        raise InvalidInputError(f"stage {k} needs exactly {k} frozen nets, stack holds {stack.order}")

    problem = stack.problem
    net = architecture.build(problem.dim, derive_seed(config.seed, k, STREAM_INIT), stage=k)
    generator = make_generator(derive_seed(config.seed, k, STREAM_SAMPLING))

    base_on_S = phi_on_S = None
    if eval_points is not None and problem.exact_solution is not None:
        base_on_S = stack.value(eval_points)
        phi_on_S = problem.exact_solution(eval_points)

    theta = net.theta()
    state = AdamState.zeros_like(theta)
    logs: List[EpochLog] = []
    snapshots: Dict[int, object] = {}
    wanted = set(config.snapshots)
    terms: Dict[str, torch.Tensor] = {}

    def loss_fn(candidate):
        interior_term, boundary_term = minibatch_loss(stack, candidate, interior, boundary)
        terms["interior"], terms["boundary"] = interior_term, boundary_term
        return interior_term + boundary_term

    for epoch in range(config.epochs + 1):
        if epoch in wanted:
            snapshots[epoch] = copy.deepcopy(net).freeze()

        started = time.perf_counter()
        interior = sample_interior(problem.domain, config.M, generator)
        boundary = sample_boundary(problem.domain, config.Nb, generator)
        last = epoch == config.epochs

        try:
            if last:
                with torch.no_grad():
                    interior_term, boundary_term = minibatch_loss(stack, net, interior, boundary)
            else:
                _, grad = loss_param_gradient(loss_fn, net, batch_index=epoch)
                interior_term, boundary_term = terms["interior"], terms["boundary"]
        except DivergedTrainingError as e:
            batch_index = epoch if e.batch_index is None else e.batch_index
            raise DivergedTrainingError(e.reason, batch_index=batch_index, stage=k) from e

        rel = None
        if last or epoch % config.eval_every == 0:
            rel = _stage_relative_error(net, base_on_S, phi_on_S, eval_points)

        if not last:
            state, updated = adam_step(
                state, theta, grad, config.eta, config.beta1, config.beta2, config.eps
            )
            with torch.no_grad():
                for p, new in zip(theta, updated):
                    p.copy_(new)

        entry = EpochLog.record(
            epoch,
            k,
            float(interior_term.detach()),
            float(boundary_term.detach()),
            rel,
            (time.perf_counter() - started) * 1000.0,
        )
        logs.append(entry)
        debug(
            f"stage {k} epoch {epoch}: interior {entry.loss_interior:.6g} "
            f"boundary {entry.loss_boundary:.6g}"
        )
        if report is not None:
            report(entry)

    net.freeze()
    return StageResult(net, logs, snapshots)


def run_error_correction(
    problem: PdeProblem,
    config: TrainConfig,
    architecture: Architecture,
    eval_points: Optional[torch.Tensor] = None,
    stack: Optional[CorrectionStack] = None,
    stages: Optional[int] = None,
    report: Optional[Callable[[EpochLog], None]] = None,
    on_stage: Optional[Callable[[int, StageResult, CorrectionStack], None]] = None,
) -> CorrectionStack:
    """
    Train correction stages in sequence, freezing each before the next.

    Args:
        problem: The PDE to solve
        config: Training configuration; K = config.ec_orders
        architecture: Network hyperparameters for every stage
        eval_points: Fixed relative-error set S
        stack: Existing frozen stack to extend (default: empty)
        stages: Number of new stages (default: K + 1, i.e. stages 0..K)
        report: Per-epoch callback
        on_stage: Called after each stage with (k, result, stack before the push)

    Returns:
        The extended CorrectionStack with per-stage logs

    Raises:
        TrainingAborted: A stage failed; carries the partial stack
    """
    stack = stack if stack is not None else CorrectionStack(problem)
    count = config.ec_orders + 1 if stages is None else stages

    for _ in range(count):
        k = stack.order
        try:
            result = train_stage(stack, config, architecture, k, eval_points, report)
        except SolverError as e:
            raise TrainingAborted(
                f"stage {k} failed: {e.message}", stack=stack, stage=k
            ) from e
        if on_stage is not None:
            on_stage(k, result, stack)
        stack = stack.push(result.network, result.logs)

    return stack
