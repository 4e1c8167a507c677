"""Masked AdamW with compacted moment storage.

Only the ``k`` masked entries of a weight matrix carry optimizer state: the
first and second moments live in length-``k`` vectors laid out in mask order.
Every ``update_mask_interval`` steps the mask is recomputed from the current
weights; moments of entries that stay selected carry over, new entries start
from zero, dropped entries are discarded. The bias-correction counter is
global and never resets.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .exceptions import GradientError, PreconditionError
from .linalg import as_matrix
from .masking import BudgetSpec, Mask, SelectionStrategy, resolve_budget, select_mask
from .metrics import MetricsLog

LossProvider = Callable[[list[np.ndarray]], tuple[float, list[np.ndarray]]]
StepCallback = Callable[[int, list[np.ndarray], MetricsLog], bool]


@dataclass(frozen=True)
class AdamHyperparams:
    """``update_mask_interval=None`` keeps the initial mask for the whole run."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    update_mask_interval: int | None = 200
    total_steps: int = 1000

    def __post_init__(self):
        if not self.lr > 0:
            raise PreconditionError("lr must be > 0")
        for name in ("beta1", "beta2"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise PreconditionError(f"{name} must be in [0, 1)")
        if not self.eps > 0:
            raise PreconditionError("eps must be > 0")
        if self.weight_decay < 0:
            raise PreconditionError("weight_decay must be >= 0")
        if self.update_mask_interval is not None and self.update_mask_interval < 1:
            raise PreconditionError("update_mask_interval must be ≥ 1")
        if self.total_steps < 0:
            raise PreconditionError("total_steps must be >= 0")


@dataclass
class SparseAdamState:
    mask: Mask
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    def __post_init__(self):
        if self.m.shape != (self.mask.k,) or self.v.shape != (self.mask.k,):
            raise PreconditionError("moment vectors must have length mask.k")

    @classmethod
    def zeros(cls, mask: Mask) -> "SparseAdamState":
        return cls(mask, np.zeros(mask.k), np.zeros(mask.k), 0)

    @property
    def nbytes(self) -> int:
        return self.m.nbytes + self.v.nbytes


def compact(g, mask: Mask) -> np.ndarray:
    """Entries of ``g`` at the mask positions, in mask order."""
    g = np.asarray(g, dtype=np.float64)
    if g.shape != mask.shape:
        raise PreconditionError(f"shape {g.shape} does not match mask shape {mask.shape}")
    return g.reshape(-1)[mask.positions]


def scatter(values: np.ndarray, mask: Mask) -> np.ndarray:
    """Inverse of :func:`compact`: a dense matrix, zero off the mask."""
    out = np.zeros(mask.rows * mask.cols)
    out[mask.positions] = values
    return out.reshape(mask.shape)


def _check_gradient(g: np.ndarray) -> None:
    finite = np.isfinite(g)
    if not finite.all():
        pos = tuple(int(i) for i in np.argwhere(~finite)[0])
        raise GradientError(f"non-finite gradient entry {g[pos]} at {pos}", pos)


def _adam_direction(m, v, g, t, hp: AdamHyperparams):
    m = hp.beta1 * m + (1 - hp.beta1) * g
    v = hp.beta2 * v + (1 - hp.beta2) * g * g
    m_hat = m / (1 - hp.beta1**t)
    v_hat = v / (1 - hp.beta2**t)
    return m, v, m_hat / (np.sqrt(v_hat) + hp.eps)


def step(
    state: SparseAdamState, theta, g, hp: AdamHyperparams
) -> tuple[SparseAdamState, np.ndarray]:
    """One masked AdamW step. Returns a new state and a new parameter matrix."""
    theta = np.asarray(theta, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if theta.shape != state.mask.shape or g.shape != state.mask.shape:
        raise PreconditionError(
            f"shapes theta={theta.shape}, g={g.shape} do not match mask {state.mask.shape}"
        )
    if state.t >= hp.total_steps:
        raise PreconditionError(f"step {state.t + 1} exceeds total_steps={hp.total_steps}")
    _check_gradient(g)

    t = state.t + 1
    m, v, direction = _adam_direction(state.m, state.v, compact(g, state.mask), t, hp)
    new_theta = np.array(theta, dtype=np.float64, order="C", copy=True)
    flat = new_theta.reshape(-1)
    p = flat[state.mask.positions]
    if hp.weight_decay:
        direction = direction + hp.weight_decay * p
    flat[state.mask.positions] = p - hp.lr * direction
    return SparseAdamState(state.mask, m, v, t), new_theta


def refresh_mask(
    state: SparseAdamState,
    theta,
    strategy: SelectionStrategy,
    k: int,
    grad=None,
) -> SparseAdamState:
    """Recompute the mask on ``theta`` and carry moments over to it."""
    new_mask = select_mask(theta, strategy, k, grad=grad)
    return transfer_state(state, new_mask)


def transfer_state(state: SparseAdamState, new_mask: Mask) -> SparseAdamState:
    old = state.mask.positions
    new = new_mask.positions
    m = np.zeros(new.size)
    v = np.zeros(new.size)
    _, new_idx, old_idx = np.intersect1d(new, old, assume_unique=True, return_indices=True)
    m[new_idx] = state.m[old_idx]
    v[new_idx] = state.v[old_idx]
    return SparseAdamState(new_mask, m, v, state.t)


@dataclass
class DenseAdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, shape) -> "DenseAdamState":
        return cls(np.zeros(shape), np.zeros(shape), 0)


def dense_step(
    state: DenseAdamState, theta, g, hp: AdamHyperparams
) -> tuple[DenseAdamState, np.ndarray]:
    """Plain dense AdamW (decoupled decay) on the whole matrix."""
    theta = np.asarray(theta, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if state.t >= hp.total_steps:
        raise PreconditionError(f"step {state.t + 1} exceeds total_steps={hp.total_steps}")
    _check_gradient(g)
    t = state.t + 1
    m, v, direction = _adam_direction(state.m, state.v, g, t, hp)
    if hp.weight_decay:
        direction = direction + hp.weight_decay * theta
    return DenseAdamState(m, v, t), theta - hp.lr * direction


@dataclass
class TrainResult:
    thetas: list[np.ndarray]
    log: MetricsLog
    states: list[SparseAdamState | DenseAdamState | None] = field(default_factory=list)
    refreshes: int = 0
    steps: int = 0


def train_loop(
    thetas: Sequence[np.ndarray],
    loss_provider: LossProvider,
    strategy: SelectionStrategy | None,
    budget: BudgetSpec | None,
    hp: AdamHyperparams,
    trainable: Sequence[bool] | None = None,
    callback: StepCallback | None = None,
) -> TrainResult:
    """Run ``hp.total_steps`` optimizer steps.

    ``strategy=None`` trains every entry of the trainable matrices with
    :func:`dense_step`; otherwise each trainable matrix gets a mask of
    ``resolve_budget(budget, *shape)`` entries, refreshed on the interval.
    ``loss_provider(thetas)`` returns ``(loss, grads)``. ``callback(t, thetas,
    log)`` runs after each step and stops the run by returning True.

    Logged per step: ``train_loss`` (at the pre-step parameters),
    ``grad_norm`` (Frobenius norm over the trainable gradients) and
    ``update_norm``.
    """
    thetas = [as_matrix(th, f"theta[{i}]").copy() for i, th in enumerate(thetas)]
    if trainable is None:
        trainable = [True] * len(thetas)
    if len(trainable) != len(thetas):
        raise PreconditionError("trainable flags must match the number of matrices")
    if strategy is not None and budget is None:
        raise PreconditionError("a sparse strategy needs a budget")

    ks = [
        resolve_budget(budget, *th.shape) if strategy is not None and train else th.size
        for th, train in zip(thetas, trainable)
    ]
    states: list = [None] * len(thetas)
    log = MetricsLog()
    result = TrainResult(thetas, log, states)

    for t in range(1, hp.total_steps + 1):
        loss, grads = loss_provider(thetas)
        if len(grads) != len(thetas):
            raise PreconditionError("loss_provider returned the wrong number of gradients")
        grad_sq = 0.0
        update_sq = 0.0
        for i, train in enumerate(trainable):
            if not train:
                continue
            g = np.asarray(grads[i], dtype=np.float64)
            grad_sq += float(np.sum(g * g))
            before = thetas[i]
            if strategy is None:
                if states[i] is None:
                    states[i] = DenseAdamState.zeros(before.shape)
                states[i], thetas[i] = dense_step(states[i], before, g, hp)
            else:
                if states[i] is None:
                    states[i] = SparseAdamState.zeros(select_mask(before, strategy, ks[i], grad=g))
                elif hp.update_mask_interval is not None and t % hp.update_mask_interval == 0:
                    states[i] = refresh_mask(states[i], before, strategy, ks[i], grad=g)
                    result.refreshes += 1
                states[i], thetas[i] = step(states[i], before, g, hp)
            diff = thetas[i] - before
            update_sq += float(np.sum(diff * diff))
        log.record(t, "train_loss", loss)
        log.record(t, "grad_norm", np.sqrt(grad_sq))
        log.record(t, "update_norm", np.sqrt(update_sq))
        result.steps = t
        if callback is not None and callback(t, thetas, log):
            break
    return result
