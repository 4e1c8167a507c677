"""Two-layer regression testbed: ``f(X) = act(X @ W) @ a``.

A network is pre-trained with full AdamW on a near-linear target, then cloned
and fine-tuned on a small, unrelated cubic target once per method (full
fine-tuning and several sparse selection strategies). Both phases use
full-batch training with early stopping on a held-out split, so an epoch is
one optimizer step.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .exceptions import PreconditionError
from .linalg import spectral_norm
from .masking import BudgetSpec, SelectionStrategy
from .metrics import MetricsLog
from .optimizer import AdamHyperparams, train_loop
from .rng import SplitMix64, derive_seed

Activation = Literal["relu", "tanh"]


@dataclass
class ToyNet:
    W: np.ndarray
    a: np.ndarray
    activation: Activation = "relu"

    def __post_init__(self):
        if self.W.ndim != 2 or self.a.shape != (self.W.shape[1], 1):
            raise PreconditionError(f"incompatible shapes W={self.W.shape}, a={self.a.shape}")
        if self.activation not in ("relu", "tanh"):
            raise PreconditionError(f"unknown activation {self.activation!r}")

    @property
    def d(self) -> int:
        return self.W.shape[0]

    @property
    def h(self) -> int:
        return self.W.shape[1]

    def copy(self) -> "ToyNet":
        return ToyNet(self.W.copy(), self.a.copy(), self.activation)

    def params(self) -> list[np.ndarray]:
        return [self.W, self.a]


def init_toynet(d: int = 512, h: int = 128, seed: int = 0, activation: Activation = "relu") -> ToyNet:
    """Gaussian init with variance ``1/fan_in`` for both layers."""
    rng = SplitMix64(seed)
    W = rng.normal((d, h)) / np.sqrt(d)
    a = rng.normal((h, 1)) / np.sqrt(h)
    return ToyNet(W, a, activation)


@dataclass
class RegressionDataset:
    X: np.ndarray
    Y: np.ndarray
    train_idx: np.ndarray
    val_idx: np.ndarray

    def __post_init__(self):
        n = self.X.shape[0]
        if self.Y.shape != (n, 1):
            raise PreconditionError(f"Y must have shape ({n}, 1), got {self.Y.shape}")
        both = np.concatenate([self.train_idx, self.val_idx])
        if np.unique(both).size != n or both.size != n:
            raise PreconditionError("train/validation split must partition the rows")

    @property
    def train(self) -> tuple[np.ndarray, np.ndarray]:
        return self.X[self.train_idx], self.Y[self.train_idx]

    @property
    def val(self) -> tuple[np.ndarray, np.ndarray]:
        return self.X[self.val_idx], self.Y[self.val_idx]


def pretrain_targets(X: np.ndarray) -> np.ndarray:
    return (X[:, :32].sum(axis=1) + 0.1 * np.sin(X[:, 32:64]).sum(axis=1))[:, None]


def finetune_targets(X: np.ndarray) -> np.ndarray:
    # Scalar-column reading of the target: 0.2 x64 x65 x66 + 0.1 sin(x67 x68).
    return (0.2 * X[:, 64] * X[:, 65] * X[:, 66] + 0.1 * np.sin(X[:, 67] * X[:, 68]))[:, None]


def _split(n: int, val_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    if not 0.0 <= val_fraction < 1.0:
        raise PreconditionError("val_fraction must be in [0, 1)")
    n_val = int(round(n * val_fraction))
    perm = SplitMix64(derive_seed(seed, "split")).permutation(n)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def make_pretrain_dataset(n: int = 5000, d: int = 512, seed: int = 0, val_fraction: float = 0.2) -> RegressionDataset:
    if d < 64:
        raise PreconditionError(f"pre-training inputs need d >= 64, got {d}")
    X = SplitMix64(derive_seed(seed, "inputs")).normal((n, d))
    return RegressionDataset(X, pretrain_targets(X), *_split(n, val_fraction, seed))


def make_finetune_dataset(n: int = 100, d: int = 512, seed: int = 0, val_fraction: float = 0.2) -> RegressionDataset:
    if d < 69:
        raise PreconditionError(f"fine-tuning inputs need d >= 69, got {d}")
    X = SplitMix64(derive_seed(seed, "inputs")).normal((n, d))
    return RegressionDataset(X, finetune_targets(X), *_split(n, val_fraction, seed))


def _act(z: np.ndarray, activation: str) -> np.ndarray:
    return np.maximum(z, 0.0) if activation == "relu" else np.tanh(z)


def forward(net: ToyNet, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != net.d:
        raise PreconditionError(f"X must have {net.d} columns, got shape {X.shape}")
    return _act(X @ net.W, net.activation) @ net.a


def mse(net: ToyNet, X: np.ndarray, Y: np.ndarray) -> float:
    r = forward(net, X) - Y
    return float(np.mean(r * r))


def backward(net: ToyNet, X: np.ndarray, Y: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean squared error and its gradients ``(loss, dL/dW, dL/da)``."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != net.d:
        raise PreconditionError(f"X must have {net.d} columns, got shape {X.shape}")
    if Y.shape != (X.shape[0], 1):
        raise PreconditionError(f"Y must have shape ({X.shape[0]}, 1), got {Y.shape}")
    n = X.shape[0]
    Z = X @ net.W
    H = _act(Z, net.activation)
    resid = H @ net.a - Y
    loss = float(np.mean(resid * resid))
    d_pred = (2.0 / n) * resid
    grad_a = H.T @ d_pred
    d_h = d_pred @ net.a.T
    d_z = d_h * (Z > 0) if net.activation == "relu" else d_h * (1.0 - H * H)
    grad_W = X.T @ d_z
    return loss, grad_W, grad_a


@dataclass(frozen=True)
class EarlyStopConfig:
    patience: int = 20
    min_delta: float = 0.0

    def __post_init__(self):
        if self.patience < 1:
            raise PreconditionError("patience must be >= 1")
        if self.min_delta < 0:
            raise PreconditionError("min_delta must be >= 0")


class EarlyStopper:
    """Tracks the best validation loss and the parameters that produced it."""

    def __init__(self, cfg: EarlyStopConfig, initial_loss: float, initial_params: list[np.ndarray]):
        self.cfg = cfg
        self.best_loss = initial_loss
        self.best_step = 0
        self.best_params = [p.copy() for p in initial_params]
        self._stale = 0

    def update(self, step: int, loss: float, params: list[np.ndarray]) -> bool:
        if loss < self.best_loss - self.cfg.min_delta:
            self.best_loss = loss
            self.best_step = step
            self.best_params = [p.copy() for p in params]
            self._stale = 0
        else:
            self._stale += 1
        return self._stale >= self.cfg.patience


@dataclass(frozen=True)
class MethodSpec:
    """A fine-tuning method; ``strategy=None`` means full fine-tuning."""

    name: str
    strategy: SelectionStrategy | None = None
    budget: BudgetSpec | None = None


def default_methods(lora_rank: int = 8, lift_rank: int | None = None, seed: int = 0) -> list[MethodSpec]:
    budget = BudgetSpec(lora_rank=lora_rank)
    r = lift_rank or lora_rank
    return [
        MethodSpec("full"),
        MethodSpec("lift", SelectionStrategy.lift(r), budget),
        MethodSpec("weight_magnitude", SelectionStrategy("weight_magnitude"), budget),
        MethodSpec("gradient_magnitude", SelectionStrategy("gradient_magnitude"), budget),
        MethodSpec("random", SelectionStrategy("random", seed=derive_seed(seed, "random-mask")), budget),
    ]


@dataclass
class PipelineConfig:
    d: int = 512
    h: int = 128
    n_pre: int = 5000
    n_ft: int = 100
    val_fraction: float = 0.2
    activation: Activation = "relu"
    seed: int = 0
    pretrain: AdamHyperparams = field(
        default_factory=lambda: AdamHyperparams(lr=1e-3, update_mask_interval=None, total_steps=1000)
    )
    finetune: AdamHyperparams = field(
        default_factory=lambda: AdamHyperparams(lr=1e-3, update_mask_interval=200, total_steps=1000)
    )
    early_stop: EarlyStopConfig = field(default_factory=EarlyStopConfig)
    methods: list[MethodSpec] | None = None
    tune_head: bool = True

    def resolved_methods(self) -> list[MethodSpec]:
        return self.methods if self.methods is not None else default_methods(seed=self.seed)


@dataclass
class FitResult:
    net: ToyNet
    log: MetricsLog
    best_val_loss: float
    best_step: int
    steps: int
    states: list = field(default_factory=list)


def fit(
    net: ToyNet,
    data: RegressionDataset,
    hp: AdamHyperparams,
    early_stop: EarlyStopConfig,
    strategy: SelectionStrategy | None = None,
    budget: BudgetSpec | None = None,
    tune_head: bool = True,
    track_spectral: bool = True,
) -> FitResult:
    """Full-batch training with early stopping; returns the best-validation network.

    Logged per epoch: ``train_loss``, ``grad_norm``, ``update_norm``,
    ``val_loss`` and, if ``track_spectral``, ``spectral_norm`` of ``W``.
    Epoch 0 carries the starting validation loss (and spectral norm).
    """
    X_tr, Y_tr = data.train
    X_va, Y_va = data.val
    activation = net.activation

    def loss_provider(params):
        loss, gW, ga = backward(ToyNet(params[0], params[1], activation), X_tr, Y_tr)
        return loss, [gW, ga]

    start_val = mse(net, X_va, Y_va)
    stopper = EarlyStopper(early_stop, start_val, net.params())

    def on_step(t, params, log):
        current = ToyNet(params[0], params[1], activation)
        val = mse(current, X_va, Y_va)
        log.record(t, "val_loss", val)
        if track_spectral:
            log.record(t, "spectral_norm", spectral_norm(params[0]))
        return stopper.update(t, val, params)

    result = train_loop(
        net.params(),
        loss_provider,
        strategy,
        budget,
        hp,
        trainable=[True, tune_head],
        callback=on_step,
    )
    log = MetricsLog()
    log.record(0, "val_loss", start_val)
    if track_spectral:
        log.record(0, "spectral_norm", spectral_norm(net.W))
    log.records.extend(result.log.records)
    best = ToyNet(stopper.best_params[0], stopper.best_params[1], activation)
    return FitResult(best, log, stopper.best_loss, stopper.best_step, result.steps, result.states)


@dataclass
class PipelineResult:
    pretrained: ToyNet
    pretrain: FitResult
    runs: dict[str, FitResult]

    def logs(self) -> dict[str, MetricsLog]:
        return {name: run.log for name, run in self.runs.items()}

    def summary(self) -> dict[str, dict[str, float]]:
        out = {}
        for name, run in self.runs.items():
            out[name] = {
                "best_val_loss": run.best_val_loss,
                "best_step": run.best_step,
                "steps": run.steps,
                "final_spectral_norm": spectral_norm(run.net.W),
            }
        return out


def run_pipeline(config: PipelineConfig) -> PipelineResult:
    """Pre-train once, then fine-tune a clone of the pre-trained net per method."""
    pre_data = make_pretrain_dataset(config.n_pre, config.d, derive_seed(config.seed, "pretrain-data"), config.val_fraction)
    ft_data = make_finetune_dataset(config.n_ft, config.d, derive_seed(config.seed, "finetune-data"), config.val_fraction)
    net = init_toynet(config.d, config.h, derive_seed(config.seed, "init"), config.activation)

    pre = fit(net, pre_data, config.pretrain, config.early_stop, track_spectral=False)
    runs = {}
    for method in config.resolved_methods():
        if method.name in runs:
            raise PreconditionError(f"duplicate method name {method.name!r}")
        runs[method.name] = fit(
            pre.net.copy(),
            ft_data,
            config.finetune,
            config.early_stop,
            method.strategy,
            method.budget,
            tune_head=config.tune_head,
        )
    return PipelineResult(pre.net, pre, runs)
