"""Diagnostics: noise perturbation of selected weights, norm-change studies,
right-singular-subspace alignment and update rank."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .exceptions import PreconditionError
from .linalg import SvdFactors, as_matrix, frobenius_norm, numerical_rank, spectral_norm, svd
from .masking import BudgetSpec, Mask, SelectionStrategy, resolve_budget, select_mask
from .rng import SplitMix64, derive_seed
from .toymodel import RegressionDataset, ToyNet, backward, mse


@dataclass(frozen=True)
class PerturbationSpec:
    """Gaussian noise of standard deviation ``noise_std`` on a selected set of entries.

    The number of entries is ``k`` or, for studies spanning several shapes,
    resolved per matrix from ``budget``.
    """

    strategy: SelectionStrategy
    noise_std: float
    k: int | None = None
    budget: BudgetSpec | None = None
    seed: int = 0

    def __post_init__(self):
        if not self.noise_std > 0:
            raise PreconditionError("noise_std must be > 0")
        if (self.k is None) == (self.budget is None):
            raise PreconditionError("give exactly one of k or budget")

    def resolve_k(self, rows: int, cols: int) -> int:
        return self.k if self.k is not None else resolve_budget(self.budget, rows, cols)


def noise_field(shape: tuple[int, int], noise_std: float, seed: int) -> np.ndarray:
    """Dense i.i.d. Gaussian field; the draw at a position depends only on ``seed``."""
    return SplitMix64(seed).normal(shape) * noise_std


def perturb(
    w, spec: PerturbationSpec, grad=None, factors: SvdFactors | None = None
) -> tuple[np.ndarray, Mask]:
    """Return ``w`` plus noise on the entries ``spec.strategy`` selects, and that mask."""
    w = as_matrix(w)
    mask = select_mask(w, spec.strategy, spec.resolve_k(*w.shape), grad=grad, factors=factors)
    out = w.copy()
    flat = out.reshape(-1)
    flat[mask.positions] += noise_field(w.shape, spec.noise_std, spec.seed).reshape(-1)[mask.positions]
    return out, mask


@dataclass(frozen=True)
class StudyRow:
    rows: int
    cols: int
    strategy: str
    k: int
    trials: int
    spectral_before: float
    spectral_delta_mean: float
    spectral_delta_std: float
    frobenius_before: float
    frobenius_delta_mean: float
    frobenius_delta_std: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def _trial_strategy(strategy: SelectionStrategy, trial_seed: int) -> SelectionStrategy:
    if strategy.kind == "random":
        return replace(strategy, seed=derive_seed(trial_seed, "random-mask", strategy.seed))
    if strategy.rank is not None and strategy.rank.variant == "random":
        return replace(strategy, rank=replace(strategy.rank, seed=derive_seed(trial_seed, "random-rank", strategy.rank.seed)))
    return strategy


def spectral_delta_study(
    dims: list[tuple[int, int]],
    specs: list[PerturbationSpec],
    trials: int,
    master_seed: int = 0,
    antithetic: bool = True,
) -> list[StudyRow]:
    """Mean change of spectral and Frobenius norm when selected entries of a
    standard-normal matrix receive noise.

    Trial ``i`` uses seed ``master_seed ^ i`` for its matrix and noise field;
    all strategies in a trial see the same matrix and the same noise field
    (restricted to their own masks). With ``antithetic`` each trial averages
    the changes under ``+N`` and ``-N``, which cancels the term linear in the
    noise without changing the expectation.
    """
    if trials < 1:
        raise PreconditionError("trials must be >= 1")
    rows_out = []
    for m, n in dims:
        sums: dict[int, dict[str, list[float]]] = {
            j: {"s": [], "f": [], "s0": [], "f0": []} for j in range(len(specs))
        }
        for i in range(trials):
            trial_seed = (master_seed ^ i) & ((1 << 64) - 1)
            w = SplitMix64(derive_seed(trial_seed, "matrix", m, n)).normal((m, n))
            factors = svd(w) if any(s.strategy.rank is not None for s in specs) else None
            s0 = float(factors.singular_values[0]) if factors is not None else spectral_norm(w)
            f0 = frobenius_norm(w)
            for j, spec in enumerate(specs):
                strategy = _trial_strategy(spec.strategy, trial_seed)
                mask = select_mask(w, strategy, spec.resolve_k(m, n), factors=factors)
                noise = np.zeros(m * n)
                noise[mask.positions] = noise_field(
                    (m, n), spec.noise_std, derive_seed(trial_seed, "noise", spec.seed)
                ).reshape(-1)[mask.positions]
                noise = noise.reshape(m, n)
                signs = (1.0, -1.0) if antithetic else (1.0,)
                ds = np.mean([spectral_norm(w + sgn * noise) - s0 for sgn in signs])
                df = np.mean([frobenius_norm(w + sgn * noise) - f0 for sgn in signs])
                sums[j]["s"].append(ds)
                sums[j]["f"].append(df)
                sums[j]["s0"].append(s0)
                sums[j]["f0"].append(f0)
        for j, spec in enumerate(specs):
            acc = sums[j]
            rows_out.append(
                StudyRow(
                    rows=m,
                    cols=n,
                    strategy=spec.strategy.label,
                    k=spec.resolve_k(m, n),
                    trials=trials,
                    spectral_before=float(np.mean(acc["s0"])),
                    spectral_delta_mean=float(np.mean(acc["s"])),
                    spectral_delta_std=float(np.std(acc["s"])),
                    frobenius_before=float(np.mean(acc["f0"])),
                    frobenius_delta_mean=float(np.mean(acc["f"])),
                    frobenius_delta_std=float(np.std(acc["f"])),
                )
            )
    return rows_out


@dataclass(frozen=True)
class AlignmentReport:
    score: float
    n_top: int
    degenerate: bool


def alignment_report(w_before, w_after, n_top: int = 128) -> AlignmentReport:
    """Mean squared projection of the top right singular vectors after onto those before.

    ``n_top`` is clamped to ``min(rows, cols)``. ``degenerate`` flags a tie
    (relative gap below 1e-10) between singular values ``n_top`` and
    ``n_top + 1`` of either matrix, where the top subspace is not unique.
    """
    a = as_matrix(w_before, "w_before")
    b = as_matrix(w_after, "w_after")
    if a.shape != b.shape:
        raise PreconditionError(f"shapes differ: {a.shape} vs {b.shape}")
    if n_top < 1:
        raise PreconditionError("n_top must be >= 1")
    n_top = min(n_top, min(a.shape))
    fa, fb = svd(a), svd(b)
    overlap = fb.v[:, :n_top].T @ fa.v[:, :n_top]
    per_vector = np.sum(overlap * overlap, axis=1)
    score = float(np.clip(np.mean(per_vector), 0.0, 1.0))
    return AlignmentReport(score, n_top, _degenerate(fa, n_top) or _degenerate(fb, n_top))


def _degenerate(f: SvdFactors, n_top: int) -> bool:
    s = f.singular_values
    if n_top >= s.size or s[0] == 0:
        return False
    return bool(s[n_top - 1] - s[n_top] <= 1e-10 * s[0])


def alignment_score(w_before, w_after, n_top: int = 128) -> float:
    return alignment_report(w_before, w_after, n_top).score


def update_rank(w_before, w_after, threshold_multiplier: float = 10.0) -> int:
    a = as_matrix(w_before, "w_before")
    b = as_matrix(w_after, "w_after")
    if a.shape != b.shape:
        raise PreconditionError(f"shapes differ: {a.shape} vs {b.shape}")
    return numerical_rank(b - a, threshold_multiplier)


@dataclass(frozen=True)
class PerturbationRow:
    strategy: str
    k: int
    noise_std: float
    seed: int
    val_loss: float
    baseline_val_loss: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def perturbation_eval_toy(
    net: ToyNet, dataset: RegressionDataset, specs: list[PerturbationSpec]
) -> list[PerturbationRow]:
    """Validation loss of ``net`` after perturbing ``W`` per each spec.

    Gradient-based strategies use the training-split gradient of ``W``.
    """
    X_va, Y_va = dataset.val
    baseline = mse(net, X_va, Y_va)
    grad = None
    if any(s.strategy.needs_grad for s in specs):
        _, grad, _ = backward(net, *dataset.train)
    factors = svd(net.W) if any(s.strategy.rank is not None for s in specs) else None
    out = []
    for spec in specs:
        w_new, mask = perturb(net.W, spec, grad=grad, factors=factors)
        loss = mse(ToyNet(w_new, net.a, net.activation), X_va, Y_va)
        out.append(PerturbationRow(spec.strategy.label, mask.k, spec.noise_std, spec.seed, loss, baseline))
    return out
