"""Fitting the closure by differentiating through the Euler rollout.

The objective is the summed squared error between rolled-out and observed
coarse states over every run and every time step.  Gradients come from a
:class:`~graphebm.tape.GradientTape`; optimization is full-batch Adam with
early stopping on the validation loss.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .ebm import euler_rollout, init_params
from .exceptions import ContractError, DivergenceError
from .graph import build_region_graph
from .models import (
    _LAYER_SHAPES,
    AdamState,
    CoarseTrajectory,
    EBMConfig,
    EBMParams,
    ExogenousSeries,
    RegionGraph,
    TrainReport,
)
from .tape import GradientTape

logger = logging.getLogger(__name__)

GradFn = Callable[[EBMParams, Sequence[CoarseTrajectory], RegionGraph, EBMConfig], EBMParams]
CheckpointFn = Callable[[int, EBMParams], None]

GRAD_ABS_FLOOR = 1e-7


# ------------------------------------------------------------------
# Loss and gradient
# ------------------------------------------------------------------

def trajectory_loss(predicted: np.ndarray, observed: np.ndarray) -> float:
    """Sum of squared entry differences over all time steps."""
    predicted = np.asarray(predicted, dtype=float)
    observed = np.asarray(observed, dtype=float)
    if predicted.shape != observed.shape:
        raise ContractError(
            f"trajectory shapes differ: predicted {predicted.shape}, observed {observed.shape}"
        )
    return float(np.sum((predicted - observed) ** 2))


def run_loss(params: EBMParams, run: CoarseTrajectory, graph: RegionGraph,
             config: EBMConfig) -> float:
    predicted = euler_rollout(run.states[0], params, run.exogenous, graph, config,
                              n_steps=run.years)
    return trajectory_loss(predicted, run.states)


def loss_and_grad(params: EBMParams, run: CoarseTrajectory, graph: RegionGraph,
                  config: EBMConfig) -> tuple[float, EBMParams]:
    """Loss of one run and its exact gradient with respect to *params*."""
    tape = GradientTape(params, config.dt)
    predicted = euler_rollout(run.states[0], params, run.exogenous, graph, config,
                              n_steps=run.years, tape=tape)
    residual = predicted - run.states
    # X^(0) is pinned to the data, so its adjoint never reaches the parameters
    gradient, _ = tape.backward(2.0 * residual)
    return float(np.sum(residual ** 2)), gradient


def batch_loss_and_grad(params: EBMParams, batch: Sequence[CoarseTrajectory],
                        graph: RegionGraph, config: EBMConfig) -> tuple[float, EBMParams]:
    """Summed loss and gradient over *batch*, reduced in list order."""
    if not batch:
        raise ContractError("gradient of an empty batch")
    total = 0.0
    accumulated = np.zeros(params.size)
    for run in batch:
        loss, gradient = loss_and_grad(params, run, graph, config)
        total += loss
        accumulated += gradient.to_vector()
    if not (np.isfinite(total) and np.all(np.isfinite(accumulated))):
        raise DivergenceError("non-finite loss or gradient")
    return total, EBMParams.from_vector(accumulated, params.n_nodes)


def grad(params: EBMParams, batch: Sequence[CoarseTrajectory], graph: RegionGraph,
         config: EBMConfig) -> EBMParams:
    """Gradient of the summed trajectory loss over *batch*."""
    return batch_loss_and_grad(params, batch, graph, config)[1]


def batch_loss(params: EBMParams, batch: Sequence[CoarseTrajectory], graph: RegionGraph,
               config: EBMConfig) -> float:
    return float(sum(run_loss(params, run, graph, config) for run in batch))


# ------------------------------------------------------------------
# Optimizer
# ------------------------------------------------------------------

def adam_step(params: EBMParams, gradient: EBMParams,
              state: AdamState) -> tuple[EBMParams, AdamState]:
    """One bias-corrected Adam update; inputs are left untouched."""
    g = gradient.to_vector()
    if g.shape != state.m.shape or params.size != g.size:
        raise ContractError(
            f"parameter, gradient and state sizes differ: {params.size}, {g.size}, {state.m.size}"
        )
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * g
    v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    theta = params.to_vector() - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    new_state = AdamState(m=m, v=v, t=t, lr=state.lr, beta1=state.beta1,
                          beta2=state.beta2, eps=state.eps)
    return EBMParams.from_vector(theta, params.n_nodes), new_state


def train(train_set: Sequence[CoarseTrajectory], val_set: Sequence[CoarseTrajectory],
          graph: RegionGraph, config: EBMConfig, seed: int,
          patience: int = 100, max_epochs: int = 2000, learning_rate: float = 0.01,
          checkpoint: Optional[CheckpointFn] = None, checkpoint_every: int = 0,
          log_every: int = 50) -> TrainReport:
    """Full-batch Adam with early stopping on the validation loss.

    Every epoch evaluates the training loss, its gradient and the validation
    loss at the current parameters, then steps.  Training stops once
    ``patience`` epochs have passed without a new validation minimum; the
    report carries the parameters of that minimum.

    Parameters
    ----------
    seed : int
        Seeds the Glorot initialization; nothing else is random.
    checkpoint : callable, optional
        Called as ``checkpoint(epoch, params)`` every ``checkpoint_every``
        epochs.
    """
    if not train_set or not val_set:
        raise ContractError("training needs nonempty train and validation sets")
    params = init_params(graph.n_nodes, np.random.default_rng(seed))
    state = AdamState.fresh(params.size, lr=learning_rate)
    report = TrainReport()
    best = np.inf
    started = time.perf_counter()

    for epoch in range(max_epochs):
        try:
            train_loss, gradient = batch_loss_and_grad(params, train_set, graph, config)
            val_loss = batch_loss(params, val_set, graph, config)
        except DivergenceError as exc:
            raise DivergenceError(f"epoch {epoch}: {exc}", step=exc.step, epoch=epoch) from exc
        if not np.isfinite(val_loss):
            raise DivergenceError(f"epoch {epoch}: non-finite validation loss", epoch=epoch)

        report.train_loss.append(train_loss)
        report.val_loss.append(val_loss)
        logger.debug("epoch %d train %.6g val %.6g", epoch, train_loss, val_loss)
        if epoch % log_every == 0:
            logger.info("epoch %d: train loss %.6g, validation loss %.6g",
                        epoch, train_loss, val_loss)

        if val_loss < best:
            best = val_loss
            report.best_epoch = epoch
            report.best_params = params.copy()
        elif epoch - report.best_epoch > patience:
            logger.info("no validation improvement for %d epochs, stopping at epoch %d",
                        epoch - report.best_epoch, epoch)
            break

        if checkpoint is not None and checkpoint_every and epoch % checkpoint_every == 0:
            checkpoint(epoch, params)
        params, state = adam_step(params, gradient, state)

    logger.info("best epoch %d, validation loss %.6g (%d epochs in %.1f s)",
                report.best_epoch, report.best_val_loss, report.n_epochs,
                time.perf_counter() - started)
    return report


# ------------------------------------------------------------------
# Gradient verification
# ------------------------------------------------------------------

def coordinate_label(index: int, n_nodes: int) -> str:
    """Human-readable name of flat parameter *index*, e.g. ``w2[1,3]``."""
    offset = 0
    for name, shape in _LAYER_SHAPES:
        size = int(np.prod(shape))
        if index < offset + size:
            position = np.unravel_index(index - offset, shape)
            return f"{name}[{','.join(str(int(p)) for p in position)}]"
        offset += size
    if index < offset + n_nodes:
        return f"q[{index - offset}]"
    raise ContractError(f"coordinate {index} out of range")


def _instance_loss(theta: np.ndarray, instance: CoarseTrajectory, graph: RegionGraph,
                   config: EBMConfig) -> float:
    return run_loss(EBMParams.from_vector(theta, graph.n_nodes), instance, graph, config)


def gradient_errors(params: EBMParams, instance: CoarseTrajectory, graph: RegionGraph,
                    config: EBMConfig, eps: float = 1e-5, rel_tol: float = 1e-4,
                    grad_fn: Optional[GradFn] = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-coordinate scaled discrepancy between *grad_fn* and central differences.

    The error of coordinate k is ``|g_k - fd_k| / max(|g_k|, |fd_k|, floor)``
    with ``floor = 1e-7 / rel_tol``, so near-zero components are judged
    against an absolute tolerance of 1e-7.

    Returns
    -------
    (errors, analytic, numeric)
    """
    if not eps > 0:
        raise ContractError(f"eps must be positive, got {eps}")
    grad_fn = grad_fn or grad
    analytic = grad_fn(params, [instance], graph, config).to_vector()
    theta = params.to_vector()
    numeric = np.empty_like(theta)
    for k in range(theta.size):
        bumped = theta.copy()
        bumped[k] = theta[k] + eps
        upper = _instance_loss(bumped, instance, graph, config)
        bumped[k] = theta[k] - eps
        lower = _instance_loss(bumped, instance, graph, config)
        numeric[k] = (upper - lower) / (2.0 * eps)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), GRAD_ABS_FLOOR / rel_tol)
    return np.abs(analytic - numeric) / scale, analytic, numeric


def finite_diff_check(params: EBMParams, instance: CoarseTrajectory, eps: float = 1e-5,
                      graph: Optional[RegionGraph] = None, config: Optional[EBMConfig] = None,
                      grad_fn: Optional[GradFn] = None) -> float:
    """Largest scaled gradient discrepancy over all coordinates."""
    if graph is None:
        graph = build_region_graph([str(i) for i in range(instance.n_nodes)])
    config = config or EBMConfig(n_nodes=graph.n_nodes)
    errors, _, _ = gradient_errors(params, instance, graph, config, eps, grad_fn=grad_fn)
    return float(errors.max()) if errors.size else 0.0


def _sized_config(base: Optional[EBMConfig], n_nodes: int) -> EBMConfig:
    base = base or EBMConfig()
    return EBMConfig(dt=base.dt, n_nodes=n_nodes, beta_form=base.beta_form,
                     flux_scaling=base.flux_scaling, rate_scale=base.rate_scale)


def random_grad_instance(rng: np.random.Generator, config: Optional[EBMConfig] = None,
                         n_nodes: Optional[int] = None, n_steps: Optional[int] = None
                         ) -> tuple[RegionGraph, EBMConfig, EBMParams, CoarseTrajectory]:
    """A small random problem for gradient checks.

    2 to 4 nodes on a random symmetric graph, 5 to 10 Euler steps, states in
    [1, 10] and capacities in [20, 40].  The observed trajectory is a rollout
    under nearby parameters, so the loss stays small and central
    differences keep their precision.
    """
    n_nodes = n_nodes or int(rng.integers(2, 5))
    n_steps = n_steps if n_steps is not None else int(rng.integers(5, 11))
    upper = np.triu(rng.random((n_nodes, n_nodes)) < 0.7, k=1)
    if not upper.any():
        upper[0, 1] = True
    graph = RegionGraph(tuple(f"n{i}" for i in range(n_nodes)), (upper | upper.T).astype(int))
    config = _sized_config(config, n_nodes)

    params = EBMParams.from_vector(rng.normal(0.0, 0.5, size=EBMParams.zeros(n_nodes).size),
                                   n_nodes)
    params.w3 *= 0.05
    params.b3 *= 0.05
    target = EBMParams.from_vector(params.to_vector() + rng.normal(0.0, 0.02, size=params.size),
                                   n_nodes)

    n_times = n_steps + 1
    X0 = rng.uniform(1.0, 10.0, size=(n_nodes, 3))
    capacity = rng.uniform(20.0, 40.0, size=(n_times, n_nodes))
    growth = rng.uniform(0.0, 0.5, size=(n_times, n_nodes, 3))
    exogenous = ExogenousSeries(growth=growth, capacity=capacity)
    observed = euler_rollout(X0, target, exogenous, graph, config, n_steps=n_steps)
    instance = CoarseTrajectory(run_id=0, states=observed, growth=growth, capacity=capacity)
    return graph, config, params, instance


@dataclass
class GradCheckResult:
    """Outcome of one random gradient-check instance."""
    instance: int
    n_nodes: int
    n_steps: int
    max_error: float
    worst_coordinate: str

    def passed(self, tolerance: float) -> bool:
        return self.max_error < tolerance


def check_gradients(n_instances: int, seed: int, config: Optional[EBMConfig] = None,
                    eps: float = 1e-5, rel_tol: float = 1e-4,
                    grad_fn: Optional[GradFn] = None) -> list[GradCheckResult]:
    """Run the finite-difference comparison on *n_instances* random problems."""
    results = []
    for index in range(n_instances):
        rng = np.random.default_rng([seed, index])
        graph, instance_config, params, instance = random_grad_instance(rng, config)
        errors, _, _ = gradient_errors(params, instance, graph, instance_config, eps,
                                       rel_tol=rel_tol, grad_fn=grad_fn)
        worst = int(np.argmax(errors))
        result = GradCheckResult(index, graph.n_nodes, instance.years, float(errors[worst]),
                                 coordinate_label(worst, graph.n_nodes))
        logger.debug("instance %d: %d nodes, %d steps, max error %.3g at %s", index,
                     result.n_nodes, result.n_steps, result.max_error, result.worst_coordinate)
        results.append(result)
    return results
