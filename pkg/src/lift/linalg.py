"""Dense linear algebra used by mask selection and the diagnostics.

Matrices are plain ``float64`` numpy arrays; :func:`as_matrix` is the single
validation gate. The SVD is LAPACK's (via numpy) with a sign convention
applied on top so factors are reproducible across calls.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .exceptions import ConvergenceError, PreconditionError
from .rng import SplitMix64

RankVariant = Literal["largest", "smallest", "random", "hybrid"]
RANK_VARIANTS: tuple[str, ...] = ("largest", "smallest", "random", "hybrid")

EPS64 = float(np.finfo(np.float64).eps)

# Above this many entries spectral_norm(method="auto") switches to power iteration.
_AUTO_SVD_MAX_ENTRIES = 1 << 22


def as_matrix(w, name: str = "w") -> np.ndarray:
    """Return ``w`` as a finite 2-D float64 array, raising on anything else."""
    arr = np.asarray(w, dtype=np.float64)
    if arr.ndim != 2:
        raise PreconditionError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise PreconditionError(f"{name} must have positive dimensions, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        bad = np.argwhere(~np.isfinite(arr))[0]
        raise PreconditionError(f"{name} has a non-finite entry at {tuple(int(i) for i in bad)}")
    return arr


@dataclass(frozen=True)
class SvdFactors:
    """Thin SVD ``w = u @ diag(singular_values) @ v.T``."""

    u: np.ndarray
    singular_values: np.ndarray
    v: np.ndarray

    @property
    def rank_capacity(self) -> int:
        return int(self.singular_values.shape[0])

    def reconstruct(self, indices=None) -> np.ndarray:
        if indices is None:
            indices = np.arange(self.rank_capacity)
        idx = np.asarray(indices, dtype=np.intp)
        return (self.u[:, idx] * self.singular_values[idx]) @ self.v[:, idx].T


@dataclass(frozen=True)
class RankSelection:
    """Which singular triplets a rank-``r`` approximation keeps."""

    variant: RankVariant = "largest"
    r: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.variant not in RANK_VARIANTS:
            raise PreconditionError(f"unknown rank variant {self.variant!r}")
        if int(self.r) < 1:
            raise PreconditionError(f"rank r must be >= 1, got {self.r}")
        if self.variant == "hybrid" and self.r < 2:
            raise PreconditionError("hybrid rank selection needs r >= 2")

    def indices(self, p: int) -> np.ndarray:
        """Sorted indices into a non-increasing spectrum of length ``p``."""
        r = int(self.r)
        if r > p:
            raise PreconditionError(f"rank r={r} exceeds min(rows, cols)={p}")
        if self.variant == "largest":
            return np.arange(r)
        if self.variant == "smallest":
            return np.arange(p - r, p)
        if self.variant == "random":
            return SplitMix64(self.seed).choice(p, r)
        top = (r + 1) // 2
        return np.concatenate([np.arange(top), np.arange(p - (r - top), p)])


def svd(w) -> SvdFactors:
    w = as_matrix(w)
    try:
        u, s, vt = np.linalg.svd(w, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceError(f"SVD did not converge for a {w.shape} matrix: {exc}") from exc
    v = vt.T
    # Sign convention: the largest-magnitude entry of each left vector is positive.
    pivots = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[pivots, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    return SvdFactors(u=u * signs, singular_values=s, v=v * signs)


def singular_values(w) -> np.ndarray:
    w = as_matrix(w)
    try:
        return np.linalg.svd(w, compute_uv=False)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceError(f"SVD did not converge for a {w.shape} matrix: {exc}") from exc


def low_rank_approx(w, sel: RankSelection, factors: SvdFactors | None = None) -> np.ndarray:
    """Sum of the singular triplets chosen by ``sel``.

    With the ``largest`` variant this is the best rank-``r`` approximation in
    Frobenius norm. ``factors`` may be passed to reuse an existing SVD of ``w``.
    """
    w = as_matrix(w)
    if factors is None:
        factors = svd(w)
    idx = sel.indices(factors.rank_capacity)
    return factors.reconstruct(idx)


def frobenius_norm(w) -> float:
    w = as_matrix(w)
    return float(np.sqrt(np.sum(w * w)))


def spectral_norm(
    w,
    tol: float = 1e-10,
    max_iter: int = 20000,
    method: Literal["auto", "power", "svd"] = "auto",
    seed: int = 0,
) -> float:
    """Largest singular value.

    ``method="power"`` runs power iteration on ``w.T @ w`` from the normalised
    all-ones vector, stopping once the eigen-residual bounds the error in the
    singular value by ``tol``. A second pass restarted from the converged
    vector plus a seeded random component guards against a start vector that
    is orthogonal to the top singular direction. ``"auto"`` uses the SVD for
    matrices up to 4M entries.
    """
    if tol <= 0:
        raise PreconditionError("tol must be positive")
    w = as_matrix(w)
    if method == "auto":
        method = "svd" if w.size <= _AUTO_SVD_MAX_ENTRIES else "power"
    if method == "svd":
        return float(singular_values(w)[0])
    if method != "power":
        raise PreconditionError(f"unknown method {method!r}")

    if not np.any(w):
        return 0.0
    n = w.shape[1]
    rng = SplitMix64(seed)
    x = np.full(n, 1.0 / np.sqrt(n))
    if not np.any(w @ x):
        x = rng.normal(n)
    sigma, x = _power(w, _unit(x), tol, max_iter)
    kicked, _ = _power(w, _unit(x + rng.normal(n) / np.sqrt(n)), tol, max_iter)
    return max(sigma, kicked)


def _unit(x: np.ndarray) -> np.ndarray:
    return x / np.linalg.norm(x)


def _power(w: np.ndarray, x: np.ndarray, tol: float, max_iter: int) -> tuple[float, np.ndarray]:
    for it in range(1, max_iter + 1):
        y = w.T @ (w @ x)
        lam = float(x @ y)
        if lam <= 0.0:
            return 0.0, x
        sigma = np.sqrt(lam)
        # Some eigenvalue lies within ||A x - lam x|| of lam, hence some
        # singular value within res / sigma of sigma. The floor is rounding noise.
        res = float(np.linalg.norm(y - lam * x))
        if res / sigma <= max(tol, 64 * EPS64 * sigma):
            return float(sigma), x
        x = y / np.linalg.norm(y)
    raise ConvergenceError(
        f"power iteration did not reach tol={tol:g} after {max_iter} iterations", iterations=max_iter
    )


def numerical_rank(w, threshold_multiplier: float = 10.0) -> int:
    """Count of singular values above ``threshold_multiplier * max(m, n) * sigma_max * eps``."""
    if threshold_multiplier < 1:
        raise PreconditionError("threshold_multiplier must be >= 1")
    w = as_matrix(w)
    s = singular_values(w)
    if s.size == 0 or s[0] == 0.0:
        return 0
    tau = threshold_multiplier * max(w.shape) * s[0] * EPS64
    return int(np.count_nonzero(s > tau))
