import dataclasses
import math

import numpy as np
import pytest
from scipy.stats import kstest

from lidar4d import diffusion
from lidar4d.diffusion import (
    MLPDenoiser,
    TrainingConfig,
    cosine_schedule,
    evaluate_loss,
    make_gaussian_oracle,
    mlp_eps,
    mlp_gradients,
    mlp_init,
    oracle_gaussian_eps,
    p_sample_loop,
    q_sample,
    respaced_timesteps,
    train_denoiser,
)


@pytest.fixture(scope="module")
def schedule():
    return cosine_schedule(1024)


def test_schedule_endpoints_and_monotonicity(schedule):
    assert schedule.alpha_bar[0] == 1.0
    assert np.all(np.diff(schedule.alpha_bar) < 0.0)
    assert cosine_schedule(1000).alpha_bar[-1] < 1e-3


def test_q_sample_trivials(schedule):
    x0 = np.array([2.0, -1.0])
    abar = schedule.alpha_bar[100]
    assert np.allclose(
        q_sample(x0, 100, np.zeros(2), schedule), math.sqrt(abar) * x0
    )
    assert np.allclose(q_sample(x0, 0, np.ones(2), schedule), x0)
    assert np.allclose(
        q_sample(np.zeros(2), 100, np.ones(2), schedule),
        math.sqrt(1.0 - abar) * np.ones(2),
    )
    with pytest.raises(ValueError):
        q_sample(np.zeros(2), 100, np.zeros(3), schedule)


def test_q_sample_marginal_variance(schedule):
    rng = np.random.default_rng(0)
    n = 200_000
    x0 = rng.normal(0.0, 2.0, n)
    tau = 400
    x = q_sample(x0, tau, rng.standard_normal(n), schedule)
    abar = schedule.alpha_bar[tau]
    expected = abar * 4.0 + (1.0 - abar)
    # variance of the sample variance ~ 2 sigma^4 / n
    se = math.sqrt(2.0 / n) * expected
    assert abs(x.var() - expected) < 3.0 * se


def test_one_step_schedule_inverts_exactly():
    schedule = cosine_schedule(1)
    rng = np.random.default_rng(5)
    x0 = rng.standard_normal((4, 3))
    eps = rng.standard_normal((4, 3))
    x1 = q_sample(x0, 1, eps, schedule)

    calls = {"n": 0}

    def denoiser(x, tau, cond):
        calls["n"] += 1
        assert tau == 1
        return eps

    seeded = np.random.default_rng(7)
    # start the loop from the known x1 by stubbing the initial draw
    class FixedStart:
        def __init__(self, start, rng):
            self._start = start
            self._rng = rng
            self._first = True

        def standard_normal(self, shape):
            if self._first:
                self._first = False
                return self._start
            return self._rng.standard_normal(shape)

    out = p_sample_loop(denoiser, None, schedule, 1, FixedStart(x1, seeded), (4, 3))
    assert calls["n"] == 1
    assert np.allclose(out, x0, atol=1e-12)


def test_sampler_seeded_reproducible(schedule):
    oracle = make_gaussian_oracle(0.0, 1.0, schedule)
    a = p_sample_loop(oracle, None, schedule, 64, np.random.default_rng(9), (32,))
    b = p_sample_loop(oracle, None, schedule, 64, np.random.default_rng(9), (32,))
    assert np.array_equal(a, b)


def test_sampler_matches_gaussian_target(schedule):
    oracle = make_gaussian_oracle(3.0, 2.0, schedule)
    x = p_sample_loop(
        oracle, None, schedule, 256, np.random.default_rng(77), (4000,)
    )
    assert abs(x.mean() - 3.0) < 0.12
    assert abs(x.std() - 2.0) < 0.10
    assert kstest(x, "norm", args=(3.0, 2.0)).statistic < 0.026  # 1% n=4000


def test_respaced_timesteps_uniform_stride():
    steps = respaced_timesteps(1024, 256)
    assert steps[0] == 4 and steps[-1] == 1024
    assert np.all(np.diff(steps) == 4)
    assert list(respaced_timesteps(8, 8)) == list(range(1, 9))
    assert list(respaced_timesteps(100, 1)) == [100]


def test_oracle_eps_formulas(schedule):
    tau = 300
    abar = schedule.alpha_bar[tau]
    x = np.linspace(-2, 2, 7)
    # sigma0 = 1, mu0 = 0 collapses to sqrt(1 - abar) * x
    assert np.allclose(
        oracle_gaussian_eps(x, tau, 0.0, 1.0, schedule), math.sqrt(1 - abar) * x
    )
    # x at the scaled mode predicts zero noise
    mu0 = 1.7
    at_mode = np.full(3, math.sqrt(abar) * mu0)
    assert np.allclose(
        oracle_gaussian_eps(at_mode, tau, mu0, 0.5, schedule), 0.0, atol=1e-12
    )
    # abar -> 1 limit at tau = 0
    assert np.allclose(
        oracle_gaussian_eps(np.array([mu0]), 0, mu0, 0.5, schedule), 0.0
    )


def test_mlp_zero_weights_returns_bias(schedule):
    rng = np.random.default_rng(1)
    model = mlp_init(3, 2, rng, hidden=(8,))
    zeroed = MLPDenoiser(
        model.x_dim,
        model.cond_dim,
        model.emb_dim,
        tuple(np.zeros_like(w) for w in model.weights),
        (np.zeros(8), np.array([0.5, -0.25, 1.0])),
    )
    out = mlp_eps(zeroed, np.ones((4, 3)), 10, np.ones((4, 2)))
    assert np.allclose(out, [0.5, -0.25, 1.0])


def test_mlp_gradients_match_finite_differences(schedule):
    rng = np.random.default_rng(3)
    model = mlp_init(2, 3, rng, hidden=(12, 12), emb_dim=8)
    x0 = rng.standard_normal((6, 2))
    cond = rng.standard_normal((6, 3))
    taus = rng.integers(1, schedule.num_steps + 1, 6)
    eps = rng.standard_normal((6, 2))
    _, gw, gb = mlp_gradients(model, x0, cond, taus, eps, schedule)
    grad = np.concatenate([g.ravel() for g in gw] + [g.ravel() for g in gb])
    flat = model.flat_parameters()
    h = 1e-5
    idx = rng.choice(flat.size, 120, replace=False)
    for i in idx:
        fp, fm = flat.copy(), flat.copy()
        fp[i] += h
        fm[i] -= h
        lp, _, _ = mlp_gradients(model.with_flat_parameters(fp), x0, cond, taus, eps, schedule)
        lm, _, _ = mlp_gradients(model.with_flat_parameters(fm), x0, cond, taus, eps, schedule)
        fd = (lp - lm) / (2 * h)
        assert abs(fd - grad[i]) / max(1e-8, abs(fd), abs(grad[i])) < 1e-4


def test_duplicated_rows_double_gradient(schedule):
    rng = np.random.default_rng(4)
    model = mlp_init(2, 0, rng, hidden=(8,))
    x0 = rng.standard_normal((1, 2))
    eps = rng.standard_normal((1, 2))
    _, gw1, _ = mlp_gradients(model, x0, None, 50, eps, schedule)
    x0d = np.vstack([x0, x0])
    epsd = np.vstack([eps, eps])
    _, gw2, _ = mlp_gradients(model, x0d, None, 50, epsd, schedule)
    # identical rows contribute identically: the mean loss is unchanged
    assert np.allclose(gw1[0], gw2[0])


def test_train_zero_learning_rate_keeps_parameters(schedule):
    rng = np.random.default_rng(6)
    x0 = rng.standard_normal((32, 2))
    config = TrainingConfig(steps=20, batch_size=8, learning_rate=0.0, seed=2)
    result = train_denoiser(x0, None, schedule, config)
    fresh = mlp_init(2, 0, np.random.default_rng(2))
    assert np.allclose(result.raw_model.flat_parameters(), fresh.flat_parameters())
    assert np.allclose(result.model.flat_parameters(), fresh.flat_parameters())


def test_train_is_seeded_bit_reproducible(schedule):
    rng = np.random.default_rng(8)
    x0 = rng.standard_normal((64, 2))
    cond = rng.standard_normal((64, 3))
    config = TrainingConfig(steps=50, batch_size=16, learning_rate=1e-3, seed=3)
    a = train_denoiser(x0, cond, schedule, config)
    b = train_denoiser(x0, cond, schedule, config)
    assert np.array_equal(a.model.flat_parameters(), b.model.flat_parameters())
    assert a.history == b.history


def test_train_reduces_loss(schedule):
    rng = np.random.default_rng(11)
    centers = np.array([[-0.6, -0.6], [0.6, -0.6], [-0.6, 0.6], [0.6, 0.6]])
    labels = rng.integers(0, 4, 512)
    x0 = centers[labels] + 0.05 * rng.standard_normal((512, 2))
    cond = np.eye(4)[labels]
    config = TrainingConfig(
        steps=400, batch_size=64, learning_rate=1e-3, warmup_steps=50, seed=5
    )
    short = train_denoiser(x0, cond, schedule, dataclasses.replace(config, steps=10))
    full = train_denoiser(x0, cond, schedule, config)
    ev = np.random.default_rng(99)
    idx = ev.integers(0, len(x0), 128)
    taus = ev.integers(1, schedule.num_steps + 1, 128)
    eps = ev.standard_normal((128, 2))
    early = evaluate_loss(short.raw_model, x0[idx], cond[idx], taus, eps, schedule)
    late = evaluate_loss(full.raw_model, x0[idx], cond[idx], taus, eps, schedule)
    assert late < early / 2.0


def test_train_empty_dataset_raises(schedule):
    with pytest.raises(ValueError):
        train_denoiser(np.zeros((0, 2)), None, schedule, TrainingConfig(steps=1))
