import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from safecrl.envs import GridCrawl, PointVel
from safecrl.errors import ConfigError, NumericalError
from safecrl.numcore import gaussian_log_prob, make_policy, make_value_net, value_predict
from safecrl.rollout import (WorkerPool, collect, compute_advantages, discounted_returns,
                             episode_cost_stats, gae, normalize)


def _pool(n, env_cls=GridCrawl, **kw):
    return WorkerPool([env_cls(**kw) for _ in range(n)], list(range(n)))


def test_batch_size_and_shapes(rng):
    pol = make_policy(4, 5, rng, hidden=(8,))
    batch = collect(pol, _pool(2), 5, rng)
    assert len(batch) == 10 and batch.flat("obs").shape == (10, 4)
    assert batch.flat("actions").shape == (10, 5)


def test_logp_matches_policy(rng):
    pol = make_policy(2, 6, rng, hidden=(8,))
    batch = collect(pol, _pool(3, PointVel), 40, rng)
    lp = gaussian_log_prob(pol, batch.flat("obs"), batch.flat("actions"))
    np.testing.assert_allclose(batch.flat("logp"), lp, rtol=0, atol=1e-12)


def test_episodes_partition_each_worker(rng):
    pol = make_policy(4, 5, rng, hidden=(8,))
    pool = _pool(3)
    collect(pol, pool, 130, rng)  # leaves partial episodes running
    batch = collect(pol, pool, 150, rng)
    for w in range(3):
        eps = sorted((e for e in batch.episodes if e.worker == w), key=lambda e: e.start)
        assert eps[0].start == 0 and eps[-1].stop == 150
        assert all(a.stop == b.start for a, b in zip(eps, eps[1:]))
        # the episode straddling two batches carries its full length and totals
        assert eps[0].complete and eps[0].length == 100
        for e in eps:
            if e.start > 0 and e.complete:
                assert e.reward == pytest.approx(batch.rewards[w, e.start:e.stop].sum())


def test_fixed_actions_reproduce_tabular_simulation(rng):
    pol = make_policy(4, 5, rng, hidden=(8,))
    env = GridCrawl()
    model = env.tabular_model()
    seq = rng.integers(0, 5, 100)
    counter = {"t": 0}

    def action_fn(obs):
        prefs = -np.ones((1, 5))
        prefs[0, seq[counter["t"]]] = 1.0
        counter["t"] += 1
        return prefs

    batch = collect(pol, WorkerPool([env], [0]), 100, rng, action_fn=action_fn)
    s, want = model.start, []
    for a in seq:
        want.append(model.reward[s, a])
        s = model.next_state[s, a]
    np.testing.assert_array_equal(batch.rewards[0], want)
    assert batch.completed[0].reward == sum(want)


def test_collect_deterministic():
    def run():
        r = np.random.default_rng(3)
        pol = make_policy(2, 6, np.random.default_rng(0), hidden=(8,))
        vf = make_value_net(2, np.random.default_rng(1), hidden=(8,))
        return collect(pol, _pool(2, PointVel), 250, r, vf, vf)
    a, b = run(), run()
    for name in ("obs", "actions", "rewards", "costs", "logp", "values", "boot_values"):
        assert np.array_equal(getattr(a, name), getattr(b, name))


def test_collect_reports_bad_worker(rng):
    class Broken(PointVel):
        def step(self, action):
            res = super().step(action)
            return dataclasses.replace(res, reward=np.nan) if self.t == 3 else res

    pol = make_policy(2, 6, rng, hidden=(8,))
    pool = WorkerPool([PointVel(), Broken()], [0, 1])
    with pytest.raises(NumericalError) as info:
        collect(pol, pool, 10, rng)
    assert info.value.diagnostics == {"worker": 1, "step": 2}


def test_bootstrap_values_at_truncation(rng):
    pol = make_policy(4, 5, rng, hidden=(8,))
    vf = make_value_net(4, rng, hidden=(8,))
    pool = _pool(1)
    batch = collect(pol, pool, 100, rng, vf)
    assert batch.truncated[0, 99] and batch.ends[0, 99]
    # the bootstrap state is the last step's successor, not the reset state
    env = GridCrawl()
    env.reset(seed=0)
    for a in batch.actions[0]:
        succ = env.step(a).obs
    assert batch.boot_values[0, 99] == value_predict(vf, succ[None])[0]
    assert not np.array_equal(succ, env.reset())


def test_discounted_returns_examples():
    np.testing.assert_allclose(discounted_returns([1, 2, 3], 0.5), [2.75, 3.5, 3.0])
    assert np.array_equal(discounted_returns([1.0, -2.0, 3.0], 0.0), [1.0, -2.0, 3.0])
    assert not np.any(discounted_returns(np.zeros(5), 0.9))
    with pytest.raises(ConfigError):
        discounted_returns([1.0], 1.0)


def test_discounted_returns_restart_and_bootstrap():
    r = np.array([1.0, 1.0, 1.0, 1.0])
    ends = np.array([False, True, False, True])
    boot = np.array([0.0, 10.0, 0.0, 0.0])
    np.testing.assert_allclose(discounted_returns(r, 0.5, ends, boot), [1 + 0.5 * 6, 6, 1.5, 1])


def test_gae_lambda_zero_is_td_residual(rng):
    r, v = rng.standard_normal(6), rng.standard_normal(7)
    np.testing.assert_allclose(gae(r, v, 0.9, 0.0), r + 0.9 * v[1:] - v[:-1], atol=1e-12)


def test_gae_lambda_one_is_returns_minus_values(rng):
    r, v = rng.standard_normal(9), rng.standard_normal(10)
    boot = np.zeros(9)
    boot[-1] = v[-1]
    want = discounted_returns(r, 0.97, bootstrap=boot) - v[:-1]
    assert np.max(np.abs(gae(r, v, 0.97, 1.0) - want)) < 1e-10


def test_gae_matches_double_sum():
    r = np.random.default_rng(7)
    rew, v = r.standard_normal(7), r.standard_normal(8)
    g, lam = 0.95, 0.8
    delta = rew + g * v[1:] - v[:-1]
    want = [sum((g * lam) ** l * delta[t + l] for l in range(7 - t)) for t in range(7)]
    np.testing.assert_allclose(gae(rew, v, g, lam), want, atol=1e-12)


def test_gae_length_mismatch():
    with pytest.raises(ConfigError):
        gae(np.ones(3), np.ones(3), 0.9, 0.9)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31))
def test_normalize_preserves_order(seed):
    a = np.random.default_rng(seed).standard_normal(50) * 7 + 3
    n = normalize(a)
    assert abs(n.mean()) < 1e-6 and abs(n.std() - 1) < 1e-6
    assert np.array_equal(np.argsort(a, kind="stable"), np.argsort(n, kind="stable"))


def test_advantages_channels(rng):
    pol = make_policy(4, 5, rng, hidden=(8,))
    vf, cf = make_value_net(4, rng, hidden=(8,)), make_value_net(4, rng, hidden=(8,))
    batch = collect(pol, _pool(2), 200, rng, vf, cf)
    advs = compute_advantages(batch, 0.99, 0.95)
    assert abs(advs.advantages.mean()) < 1e-6 and abs(advs.advantages.std() - 1) < 1e-6
    raw = compute_advantages(batch, 0.99, 0.95, normalize_rewards=False)
    # the cost channel is never normalised
    assert np.array_equal(advs.cost_advantages, raw.cost_advantages)
    np.testing.assert_allclose(raw.cost_returns - batch.flat("cost_values"), raw.cost_advantages)
    # undiscounted J_C from per-episode resummation
    sums = [batch.costs[e.worker, e.start:e.stop].sum() for e in batch.completed]
    assert advs.ep_cost == pytest.approx(np.mean(sums))


def test_episode_cost_stats(rng):
    pol = make_policy(4, 5, rng, hidden=(8,))
    batch = collect(pol, _pool(2), 100, rng)
    batch.costs[:] = 0.0
    for e in batch.episodes:
        e.cost = 0.0
    assert episode_cost_stats(batch)[0] == 0.0
    batch.episodes[0].cost, batch.episodes[1].cost = 3.0, 5.0
    mean, costs, flagged = episode_cost_stats(batch)
    assert mean == 4.0 and costs == [3.0, 5.0] and not flagged


def test_episode_cost_stats_flags_partial(rng):
    pol = make_policy(4, 5, rng, hidden=(8,))
    batch = collect(pol, _pool(2), 30, rng)
    mean, costs, flagged = episode_cost_stats(batch)
    assert flagged and len(costs) == 2
    assert mean == pytest.approx(batch.costs.sum(axis=1).mean())
