import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import central_diff, max_rel_err
from safecrl.envs import GridCrawl, TaskId
from safecrl.errors import ConfigError
from safecrl.numcore import log_prob_grad, make_policy, make_value_net
from safecrl.ppo_ewc import (EwcConfig, PpoConfig, PpoLearner, ShapingConfig, SnapshotStore,
                             TaskSnapshot, clipped_surrogate, estimate_fisher, ewc_penalty,
                             ppo_update, select_beta, shape_reward, snapshot_task,
                             surrogate_loss_and_grad)
from safecrl.numcore import adam_init
from safecrl.rollout import WorkerPool, collect, compute_advantages


def _snap(theta, fisher, task="nominal"):
    return TaskSnapshot(TaskId.parse(task), np.asarray(theta, float), np.asarray(fisher, float))


def test_ewc_penalty_zero_at_anchor(rng):
    th = rng.standard_normal(5)
    pen, g = ewc_penalty(th, [_snap(th, rng.random(5)), _snap(th, rng.random(5), "back")], 10.0)
    assert pen == 0.0 and not np.any(g)


def test_ewc_penalty_scalar_formula():
    pen, g = ewc_penalty([4.0], [_snap([1.0], [2.0])], 10.0)
    assert pen == 90.0 and g[0] == 60.0


def test_ewc_penalty_sums_tasks(rng):
    th = rng.standard_normal(4)
    snaps = [_snap(rng.standard_normal(4), rng.random(4), t) for t in ("nominal", "back")]
    total, g = ewc_penalty(th, snaps, 3.0)
    parts = [ewc_penalty(th, [s], 3.0) for s in snaps]
    assert total == pytest.approx(sum(p for p, _ in parts))
    np.testing.assert_allclose(g, parts[0][1] + parts[1][1])


@pytest.mark.parametrize("trial", range(10))
def test_ewc_gradient_matches_finite_differences(trial):
    r = np.random.default_rng(300 + trial)
    snaps = [_snap(r.standard_normal(12), r.random(12), t) for t in ("nominal", "back", "front")]
    th = r.standard_normal(12)
    _, g = ewc_penalty(th, snaps, 10.0)
    fd = central_diff(lambda x: ewc_penalty(x, snaps, 10.0)[0], th)
    assert max_rel_err(g, fd) < 1e-6


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31))
def test_ewc_penalty_is_quadratic(seed):
    r = np.random.default_rng(seed)
    anchor, delta = r.standard_normal(6), r.standard_normal(6)
    snap = [_snap(anchor, r.random(6))]
    one = ewc_penalty(anchor + delta, snap, 7.0)[0]
    two = ewc_penalty(anchor + 2 * delta, snap, 7.0)[0]
    assert two == pytest.approx(4 * one, rel=1e-12)


def test_ewc_length_mismatch():
    with pytest.raises(ConfigError):
        ewc_penalty(np.zeros(3), [_snap(np.zeros(4), np.ones(4))], 1.0)
    with pytest.raises(ConfigError):
        _snap(np.zeros(3), [1.0, -1.0, 0.0])


def _episodes(rng, n=3, length=4):
    return [(rng.standard_normal((length, 4)), rng.standard_normal((length, 5))) for _ in range(n)]


def test_fisher_nonnegative_and_dead_unit_zero(rng):
    pol = make_policy(4, 5, rng, hidden=(6,))
    pol = pol.with_flat(rng.standard_normal(pol.n_params) * 0.3)
    w2 = pol.mean_net.layers()[1][0]
    w2[2, :] = 0.0  # hidden unit 2 no longer reaches the output
    f = estimate_fisher(pol, _episodes(rng))
    assert np.all(f >= 0)
    w1_unit = np.arange(4) * 6 + 2
    assert np.all(f[w1_unit] == 0.0) and f[4 * 6 + 2] == 0.0
    assert np.all(f[-5:] > 0)


def test_fisher_matches_independent_resummation(rng):
    pol = make_policy(4, 5, rng, hidden=(6,))
    pol = pol.with_flat(rng.standard_normal(pol.n_params) * 0.3)
    eps = _episodes(rng, n=1, length=3)
    want = np.zeros(pol.n_params)
    for s, a in zip(*eps[0]):
        g = log_prob_grad(pol, s[None], a[None])
        want += g * g
    np.testing.assert_allclose(estimate_fisher(pol, eps), want / 3, rtol=1e-12, atol=1e-14)


def test_fisher_empty_window(rng):
    with pytest.raises(ConfigError):
        estimate_fisher(make_policy(4, 5, rng), [])


def test_snapshot_store_semantics(caplog):
    store = SnapshotStore()
    th, f = np.zeros(3), np.ones(3)
    snapshot_task(store, TaskId.NOMINAL, th, f, 0)
    assert set(store.snapshots) == {TaskId.NOMINAL}
    snapshot_task(store, TaskId.BACK, th, f, 1)
    snapshot_task(store, TaskId.NOMINAL, th + 1, f, 2)
    assert len(store) == 2 and store.snapshots[TaskId.NOMINAL].theta[0] == 1.0
    snapshot_task(store, TaskId.FRONT, th, f, 3)
    assert len(store) == 3
    with caplog.at_level(logging.WARNING):
        snapshot_task(store, TaskId.FRONT, th + 5, f, 3)
    assert "already taken" in caplog.text and store.snapshots[TaskId.FRONT].theta[0] == 0.0


def test_shape_reward():
    on = ShapingConfig(beta=5.0, enabled=True)
    assert shape_reward(10.0, 1.0, on) == 5.0
    assert shape_reward(3.0, 0.0, ShapingConfig(beta=100.0, enabled=True)) == 3.0
    assert shape_reward(10.0, 1.0, ShapingConfig(beta=5.0, enabled=False)) == 10.0
    r, c = np.array([1.0, 2.0]), np.array([0.0, 1.0])
    assert np.array_equal(shape_reward(r, c, ShapingConfig(beta=0.0, enabled=True)), r)


def test_select_beta():
    assert select_beta(5000, 1000) == 5
    assert select_beta(7.5, 7.5) == 1
    with pytest.raises(ValueError, match="undefined"):
        select_beta(10, 0)


def test_clipped_surrogate():
    assert clipped_surrogate(np.array([1.5]), np.array([2.0]), 0.2)[0] == pytest.approx(2.4)
    assert clipped_surrogate(np.array([0.5]), np.array([-2.0]), 0.2)[0] == pytest.approx(-1.6)


def _batch(rng, n_workers=2, steps=100):
    pol = make_policy(4, 5, np.random.default_rng(0), hidden=(16,))
    critic = make_value_net(4, np.random.default_rng(1), hidden=(16,))
    pool = WorkerPool([GridCrawl() for _ in range(n_workers)], list(range(n_workers)))
    batch = collect(pol, pool, steps, rng, critic)
    return pol, critic, batch


def test_surrogate_ratio_one(rng):
    pol, _, batch = _batch(rng)
    adv = rng.standard_normal(len(batch))
    loss, _, ratio = surrogate_loss_and_grad(pol, batch.flat("obs"), batch.flat("actions"),
                                             batch.flat("logp"), adv, 0.2)
    np.testing.assert_allclose(ratio, 1.0, atol=1e-12)
    assert loss == pytest.approx(-adv.mean(), abs=1e-12)


def test_surrogate_gradient_matches_finite_differences(rng):
    pol, _, batch = _batch(rng, 1, 30)
    s, a, lp = batch.flat("obs"), batch.flat("actions"), batch.flat("logp")
    adv = rng.standard_normal(len(batch))
    moved = pol.with_flat(pol.flat + 0.05 * rng.standard_normal(pol.n_params))
    _, g, _ = surrogate_loss_and_grad(moved, s, a, lp, adv, 0.2)
    fd = central_diff(lambda x: surrogate_loss_and_grad(pol.with_flat(x), s, a, lp, adv, 0.2)[0],
                      moved.flat)
    assert max_rel_err(g, fd) < 1e-4


def _learner(lam, use_ewc, shaping=False):
    pol = make_policy(4, 5, np.random.default_rng(0), hidden=(16,))
    critic = make_value_net(4, np.random.default_rng(1), hidden=(16,))
    return PpoLearner(pol, critic, PpoConfig(epochs=3), EwcConfig(lam=lam),
                      ShapingConfig(enabled=shaping), use_ewc=use_ewc)


def _drive(learner, n_iter=4, switch_at=2):
    pool = WorkerPool([GridCrawl() for _ in range(2)], [0, 1])
    roll, upd = np.random.default_rng(5), np.random.default_rng(6)
    eps = []
    for i in range(n_iter):
        if i == switch_at:
            learner.end_segment(TaskId.NOMINAL, 0, eps)
            pool.apply_task("back")
        batch = collect(learner.policy, pool, 100, roll, learner.critic)
        eps += [(batch.obs[e.worker, e.start:e.stop], batch.actions[e.worker, e.start:e.stop])
                for e in batch.completed]
        learner.update(batch, upd)
    return learner


def test_lambda_zero_is_plain_ppo():
    ewc = _drive(_learner(0.0, True))
    plain = _drive(_learner(0.0, False))
    assert len(ewc.store) == 1 and len(plain.store) == 0
    assert np.array_equal(ewc.policy.flat, plain.policy.flat)
    assert np.array_equal(ewc.critic.flat, plain.critic.flat)


def test_large_lambda_pulls_toward_anchor():
    strong = _drive(_learner(1e6, True))
    free = _drive(_learner(0.0, True))
    anchor = strong.store.snapshots[TaskId.NOMINAL].theta
    assert np.array_equal(anchor, free.store.snapshots[TaskId.NOMINAL].theta)
    assert np.linalg.norm(strong.policy.flat - anchor) < np.linalg.norm(free.policy.flat - anchor)


def test_ewc_penalty_touches_actor_only():
    learner = _drive(_learner(10.0, True), n_iter=3)
    snap = learner.store.snapshots[TaskId.NOMINAL]
    assert snap.theta.size == learner.policy.n_params != learner.critic.n_params


def test_shaping_feeds_critic_targets(rng):
    _, _, batch = _batch(rng)
    learner = _learner(0.0, False, shaping=True)
    shaped = learner.advantages(batch)
    manual = compute_advantages(batch, 0.99, 0.95, rewards=batch.rewards - 5.0 * batch.costs)
    np.testing.assert_array_equal(shaped.returns, manual.returns)
    # raw costs are untouched
    np.testing.assert_array_equal(shaped.cost_advantages, manual.cost_advantages)


def test_nonfinite_update_rolls_back(rng, caplog):
    pol, critic, batch = _batch(rng)
    advs = compute_advantages(batch, 0.99, 0.95)
    advs.advantages[3] = np.nan
    theta0, v0 = pol.flat, critic.flat.copy()
    with caplog.at_level(logging.ERROR):
        new_pol, new_critic, *_, diag = ppo_update(pol, critic, batch, advs, PpoConfig(epochs=2),
                                                   [], EwcConfig(lam=0.0), rng,
                                                   adam_init(pol.n_params),
                                                   adam_init(critic.n_params))
    assert diag.rolled_back and "rolled back" in caplog.text
    assert np.array_equal(new_pol.flat, theta0) and np.array_equal(new_critic.flat, v0)


def test_diagnostics(rng):
    learner = _drive(_learner(10.0, True), n_iter=3)
    pool = WorkerPool([GridCrawl()], [0])
    pool.apply_task("back")
    batch = collect(learner.policy, pool, 100, rng, learner.critic)
    d = learner.update(batch, rng)
    assert set(d["ewc_by_task"]) == {"nominal"} and d["ewc_penalty"] >= 0
    assert 0 <= d["clip_fraction"] <= 1 and np.isfinite(d["approx_kl"])
