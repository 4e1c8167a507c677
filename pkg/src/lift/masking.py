"""Selection of the entries to fine-tune in a weight matrix.

A :class:`Mask` is a sorted array of row-major flat positions. That order is
the layout of every compacted vector aligned to the mask (gradients, Adam
moments, checkpoint payloads).

All top-k selections break ties toward the lower row-major position.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .exceptions import PreconditionError
from .linalg import RankSelection, SvdFactors, as_matrix, low_rank_approx
from .rng import SplitMix64

StrategyKind = Literal[
    "lift",
    "lift_structured",
    "weight_magnitude",
    "gradient_magnitude",
    "movement",
    "random",
    "full",
]
STRATEGY_KINDS: tuple[str, ...] = (
    "lift",
    "lift_structured",
    "weight_magnitude",
    "gradient_magnitude",
    "movement",
    "random",
    "full",
)


@dataclass(frozen=True, eq=False)
class Mask:
    rows: int
    cols: int
    positions: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.int64)
        if pos.ndim != 1:
            raise PreconditionError("mask positions must be 1-D")
        if pos.size and (pos[0] < 0 or pos[-1] >= self.rows * self.cols):
            raise PreconditionError("mask position out of range")
        if pos.size > 1 and np.any(np.diff(pos) <= 0):
            raise PreconditionError("mask positions must be strictly increasing")
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)

    @classmethod
    def from_indices(cls, rows: int, cols: int, pairs) -> "Mask":
        pairs = np.asarray(list(pairs), dtype=np.int64).reshape(-1, 2)
        if pairs.size and (
            np.any(pairs < 0) or np.any(pairs[:, 0] >= rows) or np.any(pairs[:, 1] >= cols)
        ):
            raise PreconditionError("mask index out of range")
        flat = np.unique(pairs[:, 0] * cols + pairs[:, 1])
        if flat.size != len(pairs):
            raise PreconditionError("duplicate mask index")
        return cls(rows, cols, flat)

    @classmethod
    def from_dense(cls, dense) -> "Mask":
        dense = np.asarray(dense, dtype=bool)
        return cls(dense.shape[0], dense.shape[1], np.flatnonzero(dense))

    @classmethod
    def full(cls, rows: int, cols: int) -> "Mask":
        return cls(rows, cols, np.arange(rows * cols))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @property
    def k(self) -> int:
        return int(self.positions.size)

    @property
    def selected(self) -> set[tuple[int, int]]:
        r, c = np.divmod(self.positions, self.cols)
        return set(zip(r.tolist(), c.tolist()))

    def dense(self) -> np.ndarray:
        out = np.zeros(self.rows * self.cols, dtype=bool)
        out[self.positions] = True
        return out.reshape(self.rows, self.cols)

    def __eq__(self, other):
        if not isinstance(other, Mask):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.positions, other.positions)

    __hash__ = None

    def __repr__(self):
        return f"Mask(shape={self.shape}, k={self.k})"


@dataclass(frozen=True)
class SelectionStrategy:
    """How a mask is chosen.

    ``rank`` is required for the two LIFT kinds; ``seed`` only matters for
    ``random``; ``block`` only for ``lift_structured``.
    """

    kind: StrategyKind
    rank: RankSelection | None = None
    seed: int = 0
    block: int = 4

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise PreconditionError(f"unknown selection strategy {self.kind!r}")
        if self.kind in ("lift", "lift_structured") and self.rank is None:
            raise PreconditionError(f"{self.kind} needs a RankSelection")
        if self.block < 1:
            raise PreconditionError("block size must be >= 1")

    @classmethod
    def lift(cls, r: int, variant: str = "largest", seed: int = 0) -> "SelectionStrategy":
        return cls("lift", RankSelection(variant, r, seed))

    @classmethod
    def lift_structured(cls, r: int, variant: str = "largest", block: int = 4) -> "SelectionStrategy":
        return cls("lift_structured", RankSelection(variant, r), block=block)

    @property
    def needs_grad(self) -> bool:
        return self.kind in ("gradient_magnitude", "movement")

    @property
    def label(self) -> str:
        if self.rank is not None:
            return f"{self.kind}[{self.rank.variant},r={self.rank.r}]"
        return self.kind


@dataclass(frozen=True)
class BudgetSpec:
    """Either an exact count ``k`` or a LoRA rank whose parameter count ``k`` matches."""

    k_exact: int | None = None
    lora_rank: int | None = None

    def __post_init__(self):
        if (self.k_exact is None) == (self.lora_rank is None):
            raise PreconditionError("give exactly one of k_exact or lora_rank")


def resolve_budget(spec: BudgetSpec, rows: int, cols: int) -> int:
    if rows < 1 or cols < 1:
        raise PreconditionError("matrix dimensions must be positive")
    total = rows * cols
    if spec.k_exact is not None:
        if spec.k_exact < 1:
            raise PreconditionError("budget must be at least one entry")
        if spec.k_exact > total:
            raise PreconditionError(f"k={spec.k_exact} exceeds the {total} entries of a {rows}x{cols} matrix")
        return int(spec.k_exact)
    if spec.lora_rank < 1:
        raise PreconditionError("budget must be at least one entry")
    return int(min(max(spec.lora_rank * (rows + cols), 1), total))


def top_k_positions(score: np.ndarray, k: int) -> np.ndarray:
    """Sorted flat positions of the ``k`` largest scores, ties to lower positions."""
    flat = np.asarray(score, dtype=np.float64).ravel()
    n = flat.size
    if not 1 <= k <= n:
        raise PreconditionError(f"k={k} outside [1, {n}]")
    if k == n:
        return np.arange(n, dtype=np.int64)
    kth = np.partition(flat, n - k)[n - k]
    above = np.flatnonzero(flat > kth)
    ties = np.flatnonzero(flat == kth)[: k - above.size]
    return np.sort(np.concatenate([above, ties])).astype(np.int64)


def select_mask(
    w,
    strategy: SelectionStrategy,
    k: int,
    grad=None,
    factors: SvdFactors | None = None,
) -> Mask:
    """Mask of exactly ``k`` entries of ``w`` chosen by ``strategy``.

    ``grad`` is required by the gradient-magnitude and movement strategies.
    ``factors`` optionally reuses an SVD of ``w`` for the LIFT strategies.
    """
    w = as_matrix(w)
    rows, cols = w.shape
    if not 1 <= k <= w.size:
        raise PreconditionError(f"k={k} outside [1, {w.size}]")
    if strategy.needs_grad:
        if grad is None:
            raise PreconditionError(f"strategy {strategy.kind} needs a gradient")
        grad = as_matrix(grad, "grad")
        if grad.shape != w.shape:
            raise PreconditionError(f"gradient shape {grad.shape} != weight shape {w.shape}")

    kind = strategy.kind
    if kind == "full" and k != w.size:
        raise PreconditionError("full strategy selects every entry")
    # Every strategy selects everything when the budget covers the matrix.
    if k == w.size:
        return Mask.full(rows, cols)
    if kind == "lift":
        score = np.abs(low_rank_approx(w, strategy.rank, factors))
    elif kind == "weight_magnitude":
        score = np.abs(w)
    elif kind == "gradient_magnitude":
        score = np.abs(grad)
    elif kind == "movement":
        score = -w * grad
    elif kind == "random":
        return Mask(rows, cols, SplitMix64(strategy.seed).choice(w.size, k))
    else:
        return _structured(np.abs(low_rank_approx(w, strategy.rank, factors)), k, strategy.block)
    return Mask(rows, cols, top_k_positions(score, k))


def _structured(magnitude: np.ndarray, k: int, block: int) -> Mask:
    rows, cols = magnitude.shape
    br, bc = -(-rows // block), -(-cols // block)
    padded = np.zeros((br * block, bc * block))
    padded[:rows, :cols] = magnitude
    block_score = padded.reshape(br, block, bc, block).sum(axis=(1, 3)).ravel()
    row_sizes = np.minimum(block, rows - np.arange(br) * block)
    col_sizes = np.minimum(block, cols - np.arange(bc) * block)
    block_size = np.outer(row_sizes, col_sizes).ravel()

    order = np.argsort(-block_score, kind="stable")
    covered = np.cumsum(block_size[order])
    n_blocks = int(np.searchsorted(covered, k)) + 1
    chosen = order[:n_blocks]

    def entries(b: int) -> np.ndarray:
        bi, bj = divmod(int(b), bc)
        r = np.arange(bi * block, min((bi + 1) * block, rows))
        c = np.arange(bj * block, min((bj + 1) * block, cols))
        return (r[:, None] * cols + c[None, :]).ravel()

    parts = [entries(b) for b in chosen[:-1]]
    last = entries(chosen[-1])
    keep = last.size - int(covered[n_blocks - 1] - k)
    last_scores = magnitude.ravel()[last]
    parts.append(last[top_k_positions(last_scores, keep)])
    return Mask(rows, cols, np.sort(np.concatenate(parts)))


def overlap_ratio(a: Mask, b: Mask) -> float:
    if a.shape != b.shape:
        raise PreconditionError(f"mask shapes differ: {a.shape} vs {b.shape}")
    if a.k != b.k:
        raise PreconditionError(f"mask budgets differ: {a.k} vs {b.k}")
    if a.k == 0:
        raise PreconditionError("empty masks have no overlap ratio")
    return np.intersect1d(a.positions, b.positions, assume_unique=True).size / a.k
