import numpy as np
import pytest

from lift.exceptions import GradientError, PreconditionError
from lift.masking import BudgetSpec, Mask, SelectionStrategy, select_mask
from lift.optimizer import (
    AdamHyperparams,
    DenseAdamState,
    SparseAdamState,
    compact,
    dense_step,
    refresh_mask,
    scatter,
    step,
    train_loop,
    transfer_state,
)
from lift.rng import SplitMix64


def random_mask(m, n, k, seed):
    return Mask(m, n, SplitMix64(seed).choice(m * n, k))


class DenseOracle:
    """Full Adam on every entry, then unmasked entries reset to their originals
    and their moments zeroed."""

    def __init__(self, theta0, mask, hp):
        self.theta0 = theta0.copy()
        self.theta = theta0.copy()
        self.keep = mask.dense()
        self.m = np.zeros_like(theta0)
        self.v = np.zeros_like(theta0)
        self.t = 0
        self.hp = hp

    def step(self, g):
        hp = self.hp
        self.t += 1
        self.m = hp.beta1 * self.m + (1 - hp.beta1) * g
        self.v = hp.beta2 * self.v + (1 - hp.beta2) * g**2
        m_hat = self.m / (1 - hp.beta1**self.t)
        v_hat = self.v / (1 - hp.beta2**self.t)
        theta = self.theta - hp.lr * (m_hat / (np.sqrt(v_hat) + hp.eps) + hp.weight_decay * self.theta)
        self.theta = np.where(self.keep, theta, self.theta0)
        self.m = np.where(self.keep, self.m, 0.0)
        self.v = np.where(self.keep, self.v, 0.0)


def test_compact_examples():
    g = np.array([[1.0, 2.0], [3.0, 4.0]])
    mask = Mask.from_indices(2, 2, [(0, 1), (1, 0)])
    assert compact(g, mask).tolist() == [2.0, 3.0]
    assert compact(g, Mask.full(2, 2)).tolist() == [1.0, 2.0, 3.0, 4.0]


def test_compact_against_dense_mask_oracle():
    rng = SplitMix64(1)
    g = rng.normal((8, 8))
    mask = random_mask(8, 8, 10, seed=2)
    dense = mask.dense().astype(float)
    oracle = [g[i, j] for i in range(8) for j in range(8) if dense[i, j]]
    assert compact(g, mask).tolist() == oracle
    np.testing.assert_array_equal(scatter(compact(g, mask), mask), g * dense)


def test_compact_shape_mismatch():
    with pytest.raises(PreconditionError):
        compact(np.zeros((3, 3)), Mask.full(2, 2))


def test_momentum_free_first_step():
    hp = AdamHyperparams(lr=0.1, beta1=0.0, beta2=0.0)
    mask = Mask.from_indices(2, 2, [(1, 1)])
    g = np.array([[0.0, 0.0], [0.0, 4.0]])
    _, theta = step(SparseAdamState.zeros(mask), np.zeros((2, 2)), g, hp)
    assert theta[1, 1] == -0.1 * 4.0 / (4.0 + 1e-8)
    assert np.count_nonzero(theta) == 1


def test_zero_gradient_leaves_theta():
    theta = SplitMix64(0).normal((4, 4))
    state, out = step(SparseAdamState.zeros(random_mask(4, 4, 5, 1)), theta, np.zeros((4, 4)), AdamHyperparams())
    np.testing.assert_array_equal(out, theta)
    assert state.t == 1


def test_first_step_bias_correction_recovers_gradient():
    hp = AdamHyperparams(lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8)
    g = np.array([[0.5, -2.0]])
    state, _ = step(SparseAdamState.zeros(Mask.full(1, 2)), np.zeros((1, 2)), g, hp)
    np.testing.assert_array_equal(state.m / (1 - hp.beta1), g.ravel())


@pytest.mark.parametrize("weight_decay", [0.0, 0.01])
def test_fixed_mask_matches_dense_oracle(weight_decay):
    rng = SplitMix64(5)
    theta0 = rng.normal((6, 6))
    mask = random_mask(6, 6, 8, seed=6)
    hp = AdamHyperparams(lr=1e-2, weight_decay=weight_decay, total_steps=50)
    state = SparseAdamState.zeros(mask)
    theta = theta0.copy()
    oracle = DenseOracle(theta0, mask, hp)
    for _ in range(50):
        g = rng.normal((6, 6))
        state, theta = step(state, theta, g, hp)
        oracle.step(g)
    assert np.max(np.abs(theta - oracle.theta)) < 1e-12
    keep = mask.dense()
    np.testing.assert_array_equal(theta[~keep], theta0[~keep])
    assert np.max(np.abs(state.m - compact(oracle.m, mask))) < 1e-12


def test_nan_gradient_reports_position():
    g = np.zeros((3, 4))
    g[2, 1] = np.nan
    with pytest.raises(GradientError) as info:
        step(SparseAdamState.zeros(Mask.full(3, 4)), np.zeros((3, 4)), g, AdamHyperparams())
    assert info.value.position == (2, 1)
    g[2, 1] = 0.0
    g[0, 3] = np.inf
    with pytest.raises(GradientError) as info:
        dense_step(DenseAdamState.zeros((3, 4)), np.zeros((3, 4)), g, AdamHyperparams())
    assert info.value.position == (0, 3)


def test_step_budget_enforced():
    hp = AdamHyperparams(total_steps=1)
    state, theta = step(SparseAdamState.zeros(Mask.full(1, 1)), np.zeros((1, 1)), np.ones((1, 1)), hp)
    with pytest.raises(PreconditionError):
        step(state, theta, np.ones((1, 1)), hp)


def test_hyperparameter_validation():
    with pytest.raises(PreconditionError, match="update_mask_interval must be ≥ 1"):
        AdamHyperparams(update_mask_interval=0)
    for kwargs in ({"lr": 0}, {"beta1": 1.0}, {"beta2": -0.1}, {"eps": 0}, {"weight_decay": -1}):
        with pytest.raises(PreconditionError):
            AdamHyperparams(**kwargs)


def test_transfer_fixed_point_and_reset():
    mask = random_mask(5, 5, 6, seed=1)
    state = SparseAdamState(mask, np.arange(6.0), np.arange(6.0) + 10, 7)
    same = transfer_state(state, mask)
    np.testing.assert_array_equal(same.m, state.m)
    np.testing.assert_array_equal(same.v, state.v)
    assert same.t == 7
    other = Mask(5, 5, np.setdiff1d(np.arange(25), mask.positions)[:6])
    reset = transfer_state(state, other)
    assert not reset.m.any() and not reset.v.any()


def test_transfer_against_scatter_gather_oracle():
    old = Mask(10, 10, np.arange(0, 24, 2))
    new = Mask(10, 10, np.concatenate([np.arange(0, 14, 2), np.arange(50, 55)]))
    assert np.intersect1d(old.positions, new.positions).size == 7
    rng = SplitMix64(3)
    state = SparseAdamState(old, rng.normal(12), rng.uniform(12), 4)
    moved = transfer_state(state, new)
    dense_m = scatter(state.m, old)
    dense_v = scatter(state.v, old)
    np.testing.assert_array_equal(moved.m, compact(dense_m, new))
    np.testing.assert_array_equal(moved.v, compact(dense_v, new))
    assert np.count_nonzero(moved.m) == 7
    np.testing.assert_array_equal(moved.m[7:], np.zeros(5))


def test_refresh_uses_current_weights():
    theta = np.diag([1.0, 5.0, 2.0])
    state = SparseAdamState(Mask.from_indices(3, 3, [(0, 0)]), np.array([0.3]), np.array([0.4]), 2)
    out = refresh_mask(state, theta, SelectionStrategy("weight_magnitude"), 1)
    assert out.mask.selected == {(1, 1)}
    assert out.m.tolist() == [0.0] and out.t == 2


def test_train_loop_zero_steps():
    theta = SplitMix64(0).normal((3, 3))
    res = train_loop([theta], lambda p: (0.0, [np.ones((3, 3))]), SelectionStrategy("random"), BudgetSpec(k_exact=2),
                     AdamHyperparams(total_steps=0))
    np.testing.assert_array_equal(res.thetas[0], theta)
    assert res.log.records == [] and res.steps == 0


def test_full_mask_matches_dense_trainer():
    rng = SplitMix64(8)
    theta0 = rng.normal((5, 4))
    target = rng.normal((5, 4))
    hp = AdamHyperparams(lr=1e-2, weight_decay=0.01, update_mask_interval=None, total_steps=100)

    def loss(params):
        d = params[0] - target
        return 0.5 * float(np.sum(d * d)), [d]

    sparse = train_loop([theta0], loss, SelectionStrategy.lift(2), BudgetSpec(k_exact=20), hp)
    dense = train_loop([theta0], loss, None, None, hp)
    assert sparse.thetas[0].tobytes() == dense.thetas[0].tobytes()
    assert sparse.log.to_csv() == dense.log.to_csv()


def test_quadratic_converges_on_mask_only():
    rng = SplitMix64(9)
    theta0 = rng.normal((6, 6))
    target = rng.normal((6, 6))
    hp = AdamHyperparams(lr=1e-2, update_mask_interval=None, total_steps=2000)
    strategy = SelectionStrategy("random", seed=4)

    def loss(params):
        d = params[0] - target
        return 0.5 * float(np.sum(d * d)), [d]

    res = train_loop([theta0], loss, strategy, BudgetSpec(k_exact=9), hp)
    mask = res.states[0].mask
    keep = mask.dense()
    assert np.max(np.abs(res.thetas[0][keep] - target[keep])) < 1e-6
    np.testing.assert_array_equal(res.thetas[0][~keep], theta0[~keep])


def test_frozen_complement_across_refreshes():
    rng = SplitMix64(10)
    theta0 = rng.normal((8, 8))
    hp = AdamHyperparams(lr=5e-2, update_mask_interval=3, total_steps=30)
    strategy = SelectionStrategy.lift(2)

    def loss(params):
        g = SplitMix64(int(abs(params[0][0, 0]) * 1e6)).normal((8, 8))
        return 1.0, [g]

    res = train_loop([theta0], loss, strategy, BudgetSpec(k_exact=10), hp)
    assert res.refreshes == 10
    assert res.states[0].t == 30

    # Replay by hand to collect the union of every active mask.
    union = np.zeros((8, 8), dtype=bool)
    theta = theta0.copy()
    state = None
    for t in range(1, 31):
        _, (g,) = loss([theta])
        if state is None:
            state = SparseAdamState.zeros(select_mask(theta, strategy, 10))
        elif t % 3 == 0:
            state = refresh_mask(state, theta, strategy, 10)
        union |= state.mask.dense()
        state, theta = step(state, theta, g, hp)
    np.testing.assert_array_equal(theta, res.thetas[0])
    np.testing.assert_array_equal(res.thetas[0][~union], theta0[~union])


def test_callback_stops_and_logs():
    hp = AdamHyperparams(total_steps=50)
    res = train_loop([np.zeros((2, 2))], lambda p: (1.0, [np.ones((2, 2))]), None, None, hp,
                     callback=lambda t, p, log: t == 5)
    assert res.steps == 5
    assert res.log.names() == ["train_loss", "grad_norm", "update_norm"]
    assert res.log.series("grad_norm")[1] == [2.0] * 5


def test_trainable_flags():
    hp = AdamHyperparams(total_steps=3)
    a, b = np.zeros((2, 2)), np.zeros((2, 1))
    res = train_loop([a, b], lambda p: (1.0, [np.ones((2, 2)), np.ones((2, 1))]), None, None, hp,
                     trainable=[False, True])
    np.testing.assert_array_equal(res.thetas[0], a)
    assert np.all(res.thetas[1] < 0)


def test_state_memory_is_linear_in_k():
    small = SparseAdamState.zeros(random_mask(64, 64, 100, 0))
    large = SparseAdamState.zeros(random_mask(1024, 1024, 100, 0))
    assert small.nbytes == large.nbytes == 2 * 100 * 8
