import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lift.analysis import (
    PerturbationSpec,
    alignment_report,
    alignment_score,
    noise_field,
    perturb,
    perturbation_eval_toy,
    spectral_delta_study,
    update_rank,
)
from lift.exceptions import PreconditionError
from lift.masking import BudgetSpec, Mask, SelectionStrategy
from lift.optimizer import AdamHyperparams, SparseAdamState, step
from lift.rng import SplitMix64
from lift.toymodel import init_toynet, make_finetune_dataset, mse


def orthogonal(n, seed):
    q, r = np.linalg.qr(SplitMix64(seed).normal((n, n)))
    return q * np.sign(np.diag(r))


def test_tiny_noise_leaves_input():
    w = SplitMix64(0).normal((10, 10))
    out, _ = perturb(w, PerturbationSpec(SelectionStrategy.lift(2), 1e-300, k=30))
    assert np.max(np.abs(out - w)) < 1e-290


def test_single_entry_support():
    w = SplitMix64(1).normal((6, 5))
    out, mask = perturb(w, PerturbationSpec(SelectionStrategy("weight_magnitude"), 0.5, k=1, seed=3))
    assert np.count_nonzero(out != w) == 1
    assert (out != w)[mask.dense()].all()


def test_noise_sample_statistics():
    w = SplitMix64(2).normal((64, 64))
    spec = PerturbationSpec(SelectionStrategy("random", seed=1), 0.1, k=1500, seed=9)
    out, mask = perturb(w, spec)
    delta = out - w
    assert np.count_nonzero(delta) == 1500
    assert not delta[~mask.dense()].any()
    assert abs(delta[mask.dense()].std() / 0.1 - 1) < 0.2


def test_perturbation_is_unbiased():
    w = SplitMix64(3).normal((4, 4))
    spec_args = dict(strategy=SelectionStrategy("weight_magnitude"), noise_std=0.3, k=6)
    draws = [perturb(w, PerturbationSpec(seed=s, **spec_args)) for s in range(2000)]
    support = draws[0][1].dense()
    samples = np.stack([out for out, _ in draws])
    mean = samples.mean(axis=0)
    se = samples.std(axis=0) / np.sqrt(len(samples))
    assert np.all(np.abs(mean - w)[support] <= 3 * se[support])
    assert np.all(samples[:, ~support] == w[~support])


def test_noise_field_depends_only_on_seed():
    a = noise_field((5, 5), 1.0, 4)
    assert a.tobytes() == noise_field((5, 5), 1.0, 4).tobytes()
    np.testing.assert_allclose(noise_field((5, 5), 2.0, 4), 2 * a)


def test_spec_validation():
    with pytest.raises(PreconditionError):
        PerturbationSpec(SelectionStrategy("random"), 0.0, k=1)
    with pytest.raises(PreconditionError):
        PerturbationSpec(SelectionStrategy("random"), 0.1)


def study_specs(std):
    budget = BudgetSpec(lora_rank=4)
    return [
        PerturbationSpec(SelectionStrategy.lift(4), std, budget=budget),
        PerturbationSpec(SelectionStrategy("random"), std, budget=budget),
        PerturbationSpec(SelectionStrategy("weight_magnitude"), std, budget=budget),
    ]


def test_study_tiny_noise_gives_zero_deltas():
    for row in spectral_delta_study([(32, 24)], study_specs(1e-300), trials=3):
        assert abs(row.spectral_delta_mean) < 1e-12
        assert abs(row.frobenius_delta_mean) < 1e-12


def test_study_is_deterministic_and_frobenius_indistinguishable():
    a = spectral_delta_study([(64, 64)], study_specs(0.1), trials=10, master_seed=5)
    b = spectral_delta_study([(64, 64)], study_specs(0.1), trials=10, master_seed=5)
    assert a == b
    assert [r.k for r in a] == [512, 512, 512]
    lo = max(r.frobenius_delta_mean - r.frobenius_delta_std for r in a)
    hi = min(r.frobenius_delta_mean + r.frobenius_delta_std for r in a)
    assert lo <= hi


def test_study_plain_monte_carlo_mode():
    rows = spectral_delta_study([(16, 16)], study_specs(0.1), trials=2, antithetic=False)
    assert len(rows) == 3 and all(r.trials == 2 for r in rows)


def test_alignment_identical():
    w = SplitMix64(4).normal((20, 12))
    assert alignment_score(w, w, n_top=5) == pytest.approx(1.0, abs=1e-8)


def test_alignment_orthogonal_construction():
    n = 8
    u, v = orthogonal(n, 1), orthogonal(n, 2)
    s = np.arange(n, 0, -1, dtype=float)
    before = (u * s) @ v.T
    after = (u * s) @ v[:, ::-1].T
    assert alignment_score(before, after, n_top=3) == pytest.approx(0.0, abs=1e-8)


def test_alignment_in_plane_rotation():
    n = 6
    s = np.array([10.0, 9.0, 3.0, 2.0, 1.0, 0.5])
    before = np.diag(s)
    c = np.cos(np.pi / 4)
    rot = np.eye(n)
    rot[:2, :2] = [[c, -c], [c, c]]
    after = before @ rot.T
    assert alignment_score(before, after, n_top=2) == pytest.approx(1.0, abs=1e-8)


def test_alignment_clamps_and_validates():
    w = SplitMix64(5).normal((4, 3))
    report = alignment_report(w, w + 0.1, n_top=128)
    assert report.n_top == 3 and report.score == pytest.approx(1.0)
    with pytest.raises(PreconditionError):
        alignment_score(w, w, n_top=0)
    with pytest.raises(PreconditionError):
        alignment_score(w, w.T)


def test_alignment_flags_degenerate_spectrum():
    assert alignment_report(np.eye(4), np.eye(4), n_top=2).degenerate
    assert not alignment_report(np.diag([4.0, 3, 2, 1]), np.diag([4.0, 3, 2, 1]), n_top=2).degenerate


@settings(max_examples=40, deadline=None)
@given(m=st.integers(2, 12), n=st.integers(2, 12), seed=st.integers(0, 2**32), data=st.data())
def test_alignment_range_and_orthogonal_invariance(m, n, seed, data):
    rng = SplitMix64(seed)
    a, b = rng.normal((m, n)), rng.normal((m, n))
    n_top = data.draw(st.integers(1, min(m, n)))
    score = alignment_score(a, b, n_top)
    assert 0.0 <= score <= 1.0
    q = orthogonal(n, seed % 1000)
    report = alignment_report(a, b, n_top)
    if not report.degenerate:
        assert alignment_score(a @ q, b @ q, n_top) == pytest.approx(score, abs=1e-8)


def test_update_rank_examples():
    rng = SplitMix64(6)
    w = rng.normal((40, 30))
    assert update_rank(w, w) == 0
    assert update_rank(w, w + np.outer(rng.normal(40), rng.normal(30))) == 1
    for rho in (2, 5):
        delta = rng.normal((40, rho)) @ rng.normal((rho, 30))
        assert update_rank(w, w + delta) == rho
        assert update_rank(w + delta, w) == rho


def test_full_mask_step_has_near_full_update_rank():
    rng = SplitMix64(7)
    theta = rng.normal((64, 64))
    _, after = step(SparseAdamState.zeros(Mask.full(64, 64)), theta, rng.normal((64, 64)), AdamHyperparams())
    assert update_rank(theta, after) >= 0.9 * 64


def test_perturbation_eval_toy():
    net = init_toynet(72, 10, seed=1)
    data = make_finetune_dataset(60, 72, seed=2)
    baseline = mse(net, *data.val)
    rows = perturbation_eval_toy(net, data, [
        PerturbationSpec(SelectionStrategy.lift(3), 1e-300, k=50),
        PerturbationSpec(SelectionStrategy("full"), 10.0, k=720, seed=4),
        PerturbationSpec(SelectionStrategy("gradient_magnitude"), 0.05, k=50, seed=4),
    ])
    assert rows[0].val_loss == baseline and rows[0].baseline_val_loss == baseline
    assert rows[1].val_loss > baseline
    assert rows[2].k == 50 and rows[2].strategy == "gradient_magnitude"
