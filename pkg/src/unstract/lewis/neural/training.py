"""Training loop and finite-difference gradient checking shared by every
model role."""

import copy
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Sequence

import numpy as np

from unstract.lewis.exceptions import DegenerateData, DivergenceError
from unstract.lewis.neural.model import ModelBundle
from unstract.lewis.neural.optim import Adam, TrainConfig
from unstract.lewis.utils import LewisUtils

logger = LewisUtils.get_logger(__name__)

# Training is single-process; recorded in run metadata.
WORKERS = 1


@dataclass
class TrainResult:
    model: ModelBundle
    loss_curve: list[float] = field(default_factory=list)
    workers: int = WORKERS

    @property
    def initial_loss(self) -> float:
        return self.loss_curve[0] if self.loss_curve else math.nan

    @property
    def final_loss(self) -> float:
        return self.loss_curve[-1] if self.loss_curve else math.nan


def iterate_batches(size: int, batch_size: int, rng: np.random.Generator):
    """Endless stream of index batches; reshuffles after each pass."""
    while True:
        order = rng.permutation(size)
        for start in range(0, size, batch_size):
            yield order[start : start + batch_size]


def train(
    model: ModelBundle,
    dataset: Sequence[Any],
    collate: Callable[[list], Any],
    config: TrainConfig,
    seed: int,
) -> TrainResult:
    """Trains ``model`` in place with Adam.

    Args:
        model (ModelBundle): Model to train; its network is mutated.
        dataset (Sequence): Role-specific examples.
        collate (Callable): Turns a list of examples into the role's batch,
            which defines the loss the network optimises.
        config (TrainConfig): Optimizer and loop settings.
        seed (int): Seeds batch order and dropout.

    Returns:
        TrainResult: The model and its per-step loss curve.

    Raises:
        DegenerateData: If the dataset is empty.
        DivergenceError: If the loss becomes NaN or infinite.
    """
    if len(dataset) == 0:
        raise DegenerateData("Cannot train on an empty dataset", role=model.role)
    rng = np.random.default_rng(seed)
    optimizer = Adam(model.net, config)
    batches = iterate_batches(len(dataset), config.batch_size, rng)
    curve: list[float] = []
    for step in range(1, config.steps + 1):
        batch = collate([dataset[i] for i in next(batches)])
        model.net.zero_grad()
        loss = model.net.loss(batch, rng=rng)
        if not math.isfinite(loss):
            raise DivergenceError("Training loss diverged", step=step, role=model.role, loss=str(loss))
        optimizer.clip_gradients()
        lr = optimizer.step()
        curve.append(loss)
        if config.log_every and (step % config.log_every == 0 or step == config.steps):
            logger.info("[%s] step %d/%d loss %.4f lr %.2e", model.role, step, config.steps, loss, lr)
    model.metadata["train_steps"] = model.metadata.get("train_steps", 0) + config.steps
    return TrainResult(model, curve)


def evaluation_loss(model: ModelBundle, batch: Any) -> float:
    return model.net.loss(batch, rng=None, backward=False)


def analytic_gradients(model: ModelBundle, batch: Any, loss_scale: float = 1.0) -> dict[str, np.ndarray]:
    """Dropout-free gradients of the (scaled) loss on ``batch``."""
    model.net.zero_grad()
    model.net.loss(batch, rng=None, backward=True, loss_scale=loss_scale)
    return {name: grad.copy() for name, grad in model.net.named_grads()}


def gradient_check(
    model: ModelBundle, batch: Any, num_params: int = 100, h: float = 1e-5, seed: int = 0, atol: float = 1e-8
) -> float:
    """Max relative error between analytic and central-difference gradients
    over a random sample of scalar parameters, computed on an f64 copy.

    Pairs that agree within ``atol`` score a relative error of zero, since
    gradients that are zero in exact arithmetic (attention key biases) only
    carry roundoff. Every sampled pair is scored.

    Returns:
        float: max |a - fd| / (|a| + |fd| + 1e-12) over the sample.
    """
    checked = copy.deepcopy(model)
    checked.net.cast(np.float64)
    grads = analytic_gradients(checked, batch)
    params = list(checked.net.named_parameters())
    sizes = np.array([p.size for _, p in params])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    rng = np.random.default_rng(seed)
    picks = rng.choice(int(offsets[-1]), size=min(num_params, int(offsets[-1])), replace=False)
    errors = []
    for flat_index in np.sort(picks):
        which = int(np.searchsorted(offsets, flat_index, side="right") - 1)
        name, param = params[which]
        local = int(flat_index - offsets[which])
        original = param.flat[local]
        param.flat[local] = original + h
        plus = checked.net.loss(batch, rng=None, backward=False)
        param.flat[local] = original - h
        minus = checked.net.loss(batch, rng=None, backward=False)
        param.flat[local] = original
        numeric = (plus - minus) / (2 * h)
        analytic = float(grads[name].flat[local])
        diff = abs(analytic - numeric)
        error = 0.0 if diff <= atol else diff / (abs(analytic) + abs(numeric) + 1e-12)
        if error > max(errors, default=0.0):
            logger.debug("gradient_check %s[%d]: analytic %.3e numeric %.3e", name, local, analytic, numeric)
        errors.append(error)
    logger.debug("gradient_check: %d of %d pairs within atol", sum(e == 0.0 for e in errors), len(errors))
    return max(errors, default=0.0)
