"""PPO with optional per-task EWC penalties on the actor and optional cost-shaped reward.

One code path yields three agents: plain PPO (lambda = 0, no shaping),
PPO+EWC (lambda > 0) and Safe EWC (lambda > 0, reward shaped to r - beta * c).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericalError
from .numcore import (adam_init, adam_step, gaussian_log_prob_from_mean, log_prob_grad,
                      log_prob_per_sample_grads, mlp_backward, mlp_forward, policy_mean)
from .rollout import compute_advantages

log = logging.getLogger(__name__)

FISHER_CHUNK = 512


@dataclass
class EwcConfig:
    lam: float = 10.0
    fisher_episodes: int = 20

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigError("EWC lambda must be >= 0")
        if self.fisher_episodes < 1:
            raise ConfigError("Fisher window must hold at least one episode")


@dataclass
class ShapingConfig:
    beta: float = 5.0
    enabled: bool = False

    def __post_init__(self):
        if self.beta < 0:
            raise ConfigError("cost weight beta must be >= 0")


@dataclass
class PpoConfig:
    clip: float = 0.2
    epochs: int = 10
    minibatch: int = 64
    lr: float = 3e-4
    critic_lr: float = 1e-3
    entropy_coef: float = 0.0
    gamma: float = 0.99
    gae_lambda: float = 0.95


@dataclass
class TaskSnapshot:
    task: object
    theta: np.ndarray
    fisher: np.ndarray
    segment: int = -1

    def __post_init__(self):
        if self.theta.shape != self.fisher.shape:
            raise ConfigError("snapshot parameter and Fisher vectors differ in length")
        if np.any(self.fisher < 0):
            raise ConfigError("Fisher entries must be non-negative")


def ewc_penalty(theta, snapshots, lam):
    """``(sum_k lam/2 * sum_i F_ki (theta_i - theta*_ki)^2, gradient)``."""
    theta = np.asarray(theta, dtype=float)
    penalty = 0.0
    grad = np.zeros_like(theta)
    for snap in snapshots:
        if snap.theta.shape != theta.shape:
            raise ConfigError(f"snapshot for {snap.task} has {snap.theta.size} entries, "
                              f"parameters have {theta.size}")
        diff = theta - snap.theta
        penalty += 0.5 * lam * float(np.sum(snap.fisher * diff * diff))
        grad += lam * snap.fisher * diff
    return penalty, grad


def ewc_penalties_by_task(theta, snapshots, lam):
    return {str(s.task): ewc_penalty(theta, [s], lam)[0] for s in snapshots}


def estimate_fisher(policy, episodes):
    """Diagonal empirical Fisher: mean squared log-probability gradient over all pairs.

    ``episodes`` is a sequence of ``(states, actions)`` arrays.
    """
    if not episodes:
        raise ConfigError("Fisher estimation needs at least one episode")
    states = np.concatenate([np.atleast_2d(s) for s, _ in episodes])
    actions = np.concatenate([np.atleast_2d(a) for _, a in episodes])
    total = np.zeros(policy.n_params)
    for lo in range(0, len(states), FISHER_CHUNK):
        g = log_prob_per_sample_grads(policy, states[lo:lo + FISHER_CHUNK],
                                      actions[lo:lo + FISHER_CHUNK])
        total += np.sum(g * g, axis=0)
    return total / len(states)


@dataclass
class SnapshotStore:
    """At most one snapshot per task; a revisit replaces the older snapshot."""

    snapshots: dict = field(default_factory=dict)
    last_segment: int | None = None

    def __len__(self):
        return len(self.snapshots)

    def values(self):
        return list(self.snapshots.values())


def snapshot_task(store, task, theta, fisher, segment):
    """Record the end-of-segment parameters and Fisher for ``task``; returns the store."""
    if store.last_segment == segment:
        log.warning("snapshot for segment %d already taken; ignoring duplicate", segment)
        return store
    store.snapshots[task] = TaskSnapshot(task, np.array(theta, dtype=float),
                                         np.array(fisher, dtype=float), segment)
    store.last_segment = segment
    return store


def shape_reward(reward, cost, shaping):
    if not shaping.enabled:
        return reward
    return reward - shaping.beta * cost


def select_beta(max_reward, max_cost):
    """Suggested cost weight making the worst cost as large as the best reward."""
    if max_cost <= 0:
        raise ValueError("beta is undefined when the maximum observed cost is zero; "
                         "choose it manually")
    if max_reward <= 0:
        raise ValueError("beta selection needs a positive maximum reward")
    return max_reward / max_cost


def clipped_surrogate(ratio, adv, clip):
    """Per-sample PPO objective ``min(ratio * A, clip(ratio) * A)`` (to maximise)."""
    return np.minimum(ratio * adv, np.clip(ratio, 1.0 - clip, 1.0 + clip) * adv)


def surrogate_loss_and_grad(policy, states, actions, logp_old, adv, clip):
    """Negated mean clipped surrogate and its gradient over the policy vector."""
    mean = policy_mean(policy, states)
    ratio = np.exp(gaussian_log_prob_from_mean(mean, policy.log_std, actions) - logp_old)
    obj = clipped_surrogate(ratio, adv, clip)
    active = ratio * adv <= np.clip(ratio, 1.0 - clip, 1.0 + clip) * adv
    weights = -(active * adv * ratio) / len(adv)
    grad = log_prob_grad(policy, states, actions, weights)
    return -float(np.mean(obj)), grad, ratio


def value_loss_and_grad(net, states, targets):
    pred, cache = mlp_forward(net, states, keep_cache=True)
    err = pred[:, 0] - targets
    loss = 0.5 * float(np.mean(err * err))
    grad = mlp_backward(net, cache, (err / len(err))[:, None])
    return loss, grad


def fit_critic(net, opt, states, targets, epochs, minibatch, lr, rng):
    n = len(targets)
    flat = net.flat.copy()
    loss = 0.0
    for _ in range(epochs):
        perm = rng.permutation(n)
        for lo in range(0, n, minibatch):
            idx = perm[lo:lo + minibatch]
            net.flat = flat
            loss, g = value_loss_and_grad(net, states[idx], targets[idx])
            flat, opt = adam_step(flat, g, opt, lr)
    net.flat = flat
    return net, opt, loss


@dataclass
class PpoDiagnostics:
    policy_loss: float = 0.0
    value_loss: float = 0.0
    clip_fraction: float = 0.0
    approx_kl: float = 0.0
    ewc_penalty: float = 0.0
    ewc_by_task: dict = field(default_factory=dict)
    rolled_back: bool = False


def ppo_update(policy, critic, batch, advs, cfg, snapshots, ewc, rng, actor_opt, critic_opt):
    """Run the configured PPO epochs on one batch.

    Returns ``(policy, critic, actor_opt, critic_opt, diagnostics)``. On a
    non-finite loss or gradient the pre-update parameters are kept.
    """
    states = batch.flat("obs")
    actions = batch.flat("actions")
    logp_old = batch.flat("logp")
    adv = advs.advantages
    targets = advs.returns
    n = len(adv)
    snaps = list(snapshots)
    theta = policy.flat
    v_start = critic.flat.copy()
    vflat = v_start
    a_opt, c_opt = actor_opt, critic_opt
    diag = PpoDiagnostics()
    clipped = 0
    try:
        for _ in range(cfg.epochs):
            perm = rng.permutation(n)
            clipped = 0
            for lo in range(0, n, cfg.minibatch):
                idx = perm[lo:lo + cfg.minibatch]
                cur = policy.with_flat(theta)
                loss, g, ratio = surrogate_loss_and_grad(cur, states[idx], actions[idx],
                                                         logp_old[idx], adv[idx], cfg.clip)
                clipped += int(np.sum(np.abs(ratio - 1.0) > cfg.clip))
                if snaps:
                    pen, g_pen = ewc_penalty(theta, snaps, ewc.lam)
                    loss += pen
                    g = g + g_pen
                if cfg.entropy_coef:
                    g[-policy.action_dim:] -= cfg.entropy_coef
                if not np.isfinite(loss):
                    raise NumericalError("non-finite PPO loss")
                theta, a_opt = adam_step(theta, g, a_opt, cfg.lr)
                critic.flat = vflat
                vloss, vg = value_loss_and_grad(critic, states[idx], targets[idx])
                vflat, c_opt = adam_step(vflat, vg, c_opt, cfg.critic_lr)
                diag.policy_loss, diag.value_loss = loss, vloss
    except NumericalError as exc:
        log.error("PPO update rolled back: %s %s", exc, getattr(exc, "diagnostics", {}))
        critic.flat = v_start
        return policy, critic, actor_opt, critic_opt, PpoDiagnostics(rolled_back=True)

    critic.flat = vflat
    new_policy = policy.with_flat(theta)
    new_logp = gaussian_log_prob_from_mean(policy_mean(new_policy, states), new_policy.log_std, actions)
    diag.approx_kl = float(np.mean(logp_old - new_logp))
    diag.clip_fraction = clipped / n
    if snaps:
        diag.ewc_by_task = ewc_penalties_by_task(theta, snaps, ewc.lam)
        diag.ewc_penalty = float(sum(diag.ewc_by_task.values()))
    return new_policy, critic, a_opt, c_opt, diag


class PpoLearner:
    """Owns the actor, reward critic, optimiser states and EWC memory of one agent."""

    def __init__(self, policy, critic, cfg=None, ewc=None, shaping=None, use_ewc=None):
        self.policy = policy
        self.critic = critic
        self.cfg = cfg or PpoConfig()
        self.ewc = ewc or EwcConfig(lam=0.0)
        self.shaping = shaping or ShapingConfig()
        self.actor_opt = adam_init(policy.n_params)
        self.critic_opt = adam_init(critic.n_params)
        self.store = SnapshotStore()
        self.uses_ewc = self.ewc.lam > 0 if use_ewc is None else bool(use_ewc)

    def critics(self):
        return self.critic, None

    def advantages(self, batch):
        rewards = shape_reward(batch.rewards, batch.costs, self.shaping)
        return compute_advantages(batch, self.cfg.gamma, self.cfg.gae_lambda, rewards=rewards)

    def update(self, batch, rng):
        advs = self.advantages(batch)
        snaps = self.store.values() if self.uses_ewc else []
        (self.policy, self.critic, self.actor_opt, self.critic_opt,
         diag) = ppo_update(self.policy, self.critic, batch, advs, self.cfg, snaps, self.ewc, rng,
                            self.actor_opt, self.critic_opt)
        return {
            "approx_kl": diag.approx_kl,
            "clip_fraction": diag.clip_fraction,
            "ewc_penalty": diag.ewc_penalty,
            "ewc_by_task": diag.ewc_by_task,
            "policy_loss": diag.policy_loss,
            "value_loss": diag.value_loss,
            "rolled_back": diag.rolled_back,
            "ep_cost": advs.ep_cost,
        }

    def end_segment(self, task, segment, episodes):
        """Snapshot the actor and its Fisher for the task that just ended."""
        if not self.uses_ewc:
            return False
        window = episodes[-self.ewc.fisher_episodes:]
        fisher = estimate_fisher(self.policy, window)
        snapshot_task(self.store, task, self.policy.flat, fisher, segment)
        return True
