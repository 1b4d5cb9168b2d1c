"""Lockstep trajectory collection and advantage estimation for reward and cost channels."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericalError
from .numcore import gaussian_log_prob_from_mean, policy_mean, value_predict

log = logging.getLogger(__name__)


@dataclass
class EpisodeRecord:
    worker: int
    start: int  # first index of this episode's steps in the worker's batch row
    stop: int   # one past the last index
    reward: float
    cost: float
    length: int
    complete: bool


class WorkerPool:
    """Environment instances owned by the rollout workers, stepped in lockstep.

    Each instance keeps its own RNG and episode state; the pool only tracks the
    running episode totals so episodes that straddle two batches are counted once.
    """

    def __init__(self, envs, seeds):
        self.envs = list(envs)
        self.seeds = list(seeds)
        if len(self.seeds) != len(self.envs):
            raise ConfigError("need one seed per environment instance")
        n = len(self.envs)
        self.obs = np.stack([env.reset(seed=s) for env, s in zip(self.envs, self.seeds)])
        self.ep_reward = np.zeros(n)
        self.ep_cost = np.zeros(n)
        self.ep_len = np.zeros(n, dtype=int)

    @property
    def n_workers(self):
        return len(self.envs)

    @property
    def spec(self):
        return self.envs[0].spec

    def reset_all(self):
        """Start fresh episodes everywhere; partial episodes are discarded."""
        self.obs = np.stack([env.reset() for env in self.envs])
        self.ep_reward[:] = 0.0
        self.ep_cost[:] = 0.0
        self.ep_len[:] = 0

    def apply_task(self, task, reset=True):
        for env in self.envs:
            env.apply_task(task)
        if reset:
            self.reset_all()


@dataclass
class TrajectoryBatch:
    """Per-step arrays of shape ``(workers, steps, ...)``.

    ``ends[w, t]`` marks the last step of an episode segment inside the batch
    (terminal, horizon truncation, or the end of collection); ``boot_values``
    and ``boot_cost_values`` hold the critic values of the following state
    there (zero after a true terminal).
    """

    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    costs: np.ndarray
    logp: np.ndarray
    values: np.ndarray
    cost_values: np.ndarray
    terminated: np.ndarray
    truncated: np.ndarray
    ends: np.ndarray
    boot_values: np.ndarray
    boot_cost_values: np.ndarray
    episodes: list = field(default_factory=list)

    @property
    def n_workers(self):
        return self.rewards.shape[0]

    @property
    def n_steps(self):
        return self.rewards.shape[1]

    def __len__(self):
        return self.rewards.size

    @property
    def worker_ids(self):
        return np.repeat(np.arange(self.n_workers), self.n_steps)

    @property
    def completed(self):
        return [e for e in self.episodes if e.complete]

    def flat(self, name):
        arr = getattr(self, name)
        return arr.reshape(self.n_workers * self.n_steps, *arr.shape[2:])


def collect(policy, pool, n_steps, rng, reward_critic=None, cost_critic=None, action_fn=None):
    """Roll every worker forward ``n_steps`` under the current policy.

    Actions are sampled from the policy unless ``action_fn(obs_batch)`` is
    given, in which case its actions are executed and scored under the policy.
    Critic values are recorded for the collected states and for the states
    that follow episode ends.
    """
    n_w = pool.n_workers
    obs_dim = pool.obs.shape[1]
    act_dim = policy.action_dim
    obs = np.zeros((n_w, n_steps, obs_dim))
    actions = np.zeros((n_w, n_steps, act_dim))
    rewards = np.zeros((n_w, n_steps))
    costs = np.zeros((n_w, n_steps))
    logp = np.zeros((n_w, n_steps))
    terminated = np.zeros((n_w, n_steps), dtype=bool)
    truncated = np.zeros((n_w, n_steps), dtype=bool)
    ends = np.zeros((n_w, n_steps), dtype=bool)
    boot_obs = {}
    episodes = []
    ep_start = np.zeros(n_w, dtype=int)
    std = policy.std

    for t in range(n_steps):
        cur = pool.obs
        mean = policy_mean(policy, cur)
        if action_fn is None:
            act = mean + std * rng.standard_normal(mean.shape)
        else:
            act = np.asarray(action_fn(cur), dtype=float).reshape(n_w, act_dim)
        obs[:, t] = cur
        actions[:, t] = act
        logp[:, t] = gaussian_log_prob_from_mean(mean, policy.log_std, act)
        new_obs = np.empty_like(cur)
        for w, env in enumerate(pool.envs):
            res = env.step(act[w])
            if not (np.all(np.isfinite(res.obs)) and np.isfinite(res.reward) and np.isfinite(res.cost)):
                raise NumericalError(f"non-finite transition from worker {w} at step {t}",
                                     worker=w, step=t)
            rewards[w, t] = res.reward
            costs[w, t] = res.cost
            pool.ep_reward[w] += res.reward
            pool.ep_cost[w] += res.cost
            pool.ep_len[w] += 1
            if res.terminated or res.truncated:
                terminated[w, t] = res.terminated
                truncated[w, t] = res.truncated and not res.terminated
                ends[w, t] = True
                if not res.terminated:
                    boot_obs[(w, t)] = res.obs
                episodes.append(EpisodeRecord(w, int(ep_start[w]), t + 1, float(pool.ep_reward[w]),
                                              float(pool.ep_cost[w]), int(pool.ep_len[w]), True))
                ep_start[w] = t + 1
                pool.ep_reward[w] = pool.ep_cost[w] = 0.0
                pool.ep_len[w] = 0
                new_obs[w] = env.reset()
            else:
                new_obs[w] = res.obs
        pool.obs = new_obs

    for w in range(n_w):
        if not ends[w, n_steps - 1]:
            ends[w, n_steps - 1] = True
            boot_obs[(w, n_steps - 1)] = pool.obs[w]
            episodes.append(EpisodeRecord(w, int(ep_start[w]), n_steps, float(pool.ep_reward[w]),
                                          float(pool.ep_cost[w]), int(pool.ep_len[w]), False))

    values = np.zeros((n_w, n_steps))
    cost_values = np.zeros((n_w, n_steps))
    boot_v = np.zeros((n_w, n_steps))
    boot_vc = np.zeros((n_w, n_steps))
    keys = sorted(boot_obs)
    flat_obs = obs.reshape(n_w * n_steps, obs_dim)
    b_obs = np.stack([boot_obs[k] for k in keys]) if keys else np.zeros((0, obs_dim))
    for critic, dest, bdest in ((reward_critic, values, boot_v), (cost_critic, cost_values, boot_vc)):
        if critic is None:
            continue
        dest[:] = value_predict(critic, flat_obs).reshape(n_w, n_steps)
        if keys:
            bv = value_predict(critic, b_obs)
            for (w, t), v in zip(keys, bv):
                bdest[w, t] = v
    episodes.sort(key=lambda e: (e.stop, e.worker))
    return TrajectoryBatch(obs, actions, rewards, costs, logp, values, cost_values, terminated,
                           truncated, ends, boot_v, boot_vc, episodes)


def _check_gamma(gamma):
    if not 0.0 <= gamma < 1.0:
        raise ConfigError(f"discount must lie in [0, 1), got {gamma}")


def _masked_gae(rewards, values, boot, ends, gamma, lam):
    """GAE along the last axis; ``ends`` cut the recursion and use ``boot`` as next value."""
    rewards = np.asarray(rewards, dtype=float)
    adv = np.zeros_like(rewards)
    carry = np.zeros(rewards.shape[:-1])
    n = rewards.shape[-1]
    for t in range(n - 1, -1, -1):
        end = ends[..., t]
        next_v = boot[..., t] if t == n - 1 else np.where(end, boot[..., t], values[..., t + 1])
        delta = rewards[..., t] + gamma * next_v - values[..., t]
        carry = delta + gamma * lam * np.where(end, 0.0, carry)
        adv[..., t] = carry
    return adv


def discounted_returns(rewards, gamma, ends=None, bootstrap=None):
    """Backward discounted sums ``G_t = r_t + gamma * G_{t+1}`` within each episode.

    With ``ends`` the recursion restarts after each marked step, seeded with
    ``bootstrap`` there (critic value at a truncation, zero at a terminal).
    """
    _check_gamma(gamma)
    rewards = np.asarray(rewards, dtype=float)
    ends = np.zeros(rewards.shape, dtype=bool) if ends is None else np.asarray(ends, dtype=bool)
    boot = np.zeros(rewards.shape) if bootstrap is None else np.asarray(bootstrap, dtype=float)
    out = np.zeros_like(rewards)
    carry = np.zeros(rewards.shape[:-1])
    for t in range(rewards.shape[-1] - 1, -1, -1):
        end = ends[..., t] | (t == rewards.shape[-1] - 1)
        carry = rewards[..., t] + gamma * np.where(end, boot[..., t], carry)
        out[..., t] = carry
    return out


def gae(rewards, values, gamma, lam):
    """Generalized advantage estimates for one episode.

    ``values`` has one more entry than ``rewards``: the last is the bootstrap
    value of the state after the final step (0 for a terminal).
    """
    _check_gamma(gamma)
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    if values.shape != (rewards.size + 1,):
        raise ConfigError(f"need {rewards.size + 1} values, got {values.size}")
    boot = np.zeros(rewards.size)
    boot[-1] = values[-1]
    ends = np.zeros(rewards.size, dtype=bool)
    ends[-1] = True
    return _masked_gae(rewards, values[:-1], boot, ends, gamma, lam)


@dataclass
class AdvantageSet:
    advantages: np.ndarray       # reward channel, normalised, flat
    cost_advantages: np.ndarray  # cost channel, never normalised, flat
    returns: np.ndarray          # reward-critic regression targets, flat
    cost_returns: np.ndarray     # cost-critic regression targets, flat
    ep_cost: float               # mean undiscounted episode cost J_C
    ep_cost_discounted: float
    ep_costs: list


def normalize(adv):
    return (adv - adv.mean()) / (adv.std() + 1e-8)


def compute_advantages(batch, gamma, lam, rewards=None, normalize_rewards=True):
    """GAE for both channels. ``rewards`` overrides the batch rewards (e.g. shaped)."""
    _check_gamma(gamma)
    r = batch.rewards if rewards is None else rewards
    adv = _masked_gae(r, batch.values, batch.boot_values, batch.ends, gamma, lam)
    cadv = _masked_gae(batch.costs, batch.cost_values, batch.boot_cost_values, batch.ends, gamma, lam)
    returns = (adv + batch.values).ravel()
    cost_returns = (cadv + batch.cost_values).ravel()
    adv = adv.ravel()
    if normalize_rewards:
        adv = normalize(adv)
    mean_cost, costs, _ = episode_cost_stats(batch)
    disc = []
    for e in batch.episodes:
        c = batch.costs[e.worker, e.start:e.stop]
        disc.append(float(np.sum(c * gamma ** np.arange(c.size))))
    return AdvantageSet(adv, cadv.ravel(), returns, cost_returns, mean_cost,
                        float(np.mean(disc)) if disc else 0.0, costs)


def episode_cost_stats(batch):
    """``(mean episode cost, per-episode costs, flagged)`` over completed episodes.

    With no completed episode the partial episodes are used and ``flagged`` is True.
    """
    eps = batch.completed
    flagged = False
    if not eps:
        flagged = True
        eps = batch.episodes
        log.warning("no completed episode in batch; using %d partial episodes", len(eps))
    costs = [e.cost for e in eps]
    return (float(np.mean(costs)) if costs else 0.0), costs, flagged
