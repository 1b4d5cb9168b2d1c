"""Constrained Policy Optimization: a trust-region step under a linearised cost constraint.

Each iteration linearises the reward surrogate (gradient ``g``) and the cost
surrogate (gradient ``b``), takes the KL Hessian ``H`` at the current policy,
and solves

    max_x  g.x   s.t.  c + b.x <= 0,   x.H.x / 2 <= delta,      c = J_C - d

in closed form through its two-multiplier dual. Case table (``optim_case``):

    4  cost gradient ~ 0 and c < 0        -> pure trust-region step
    3  c < 0, whole trust region feasible -> pure trust-region step
    2  c < 0, constraint cuts the region  -> dual solution (boundary step)
    1  c >= 0 but the region reaches the feasible set -> dual solution
    0  c >= 0 and unreachable             -> recovery step -sqrt(2 delta / s) H^-1 b

Cases 1-4 are labelled "feasible", case 0 "infeasible-recovery". A
backtracking line search then checks the true sampled KL and surrogates.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericalError
from .numcore import (adam_init, gaussian_kl, gaussian_log_prob_from_mean, log_prob_grad,
                      mlp_backward, mlp_jvp, policy_mean)
from .ppo_ewc import fit_critic
from .rollout import compute_advantages

log = logging.getLogger(__name__)

EPS = 1e-8
ZERO_GRAD_SQ = 1e-8


@dataclass
class CpoConfig:
    delta: float = 0.01
    cg_iters: int = 15
    cg_tol: float = 1e-8
    backtrack: float = 0.8
    max_backtracks: int = 10
    damping: float = 0.1
    cost_limit: float = 25.0
    gamma: float = 0.99
    gae_lambda: float = 0.95
    critic_lr: float = 1e-3
    critic_epochs: int = 10
    minibatch: int = 64

    def __post_init__(self):
        if self.delta <= 0:
            raise ConfigError("KL radius delta must be > 0")
        if self.damping <= 0:
            raise ConfigError("damping must be > 0")
        if not 0.0 < self.backtrack < 1.0:
            raise ConfigError("backtrack coefficient must lie in (0, 1)")


class KLHessian:
    """Operator ``v -> H v + damping v`` for the state-averaged KL(pi_k || pi) at pi = pi_k.

    At the reference point the first-order term of the KL vanishes, so the
    Hessian is exactly ``mean_s J_s^T diag(1/sigma^2) J_s`` on the mean-network
    block (``J_s`` = Jacobian of the mean) and ``2 I`` on the log-std block.
    """

    def __init__(self, policy, states, damping):
        self.policy = policy
        self.damping = damping
        _, self.cache = policy_mean(policy, np.atleast_2d(states), keep_cache=True)
        self.n = self.cache.acts[0].shape[0]
        self.inv_var = np.exp(-2.0 * policy.log_std)
        self.k = policy.mean_net.n_params

    def __call__(self, v):
        v = np.asarray(v, dtype=float)
        if v.shape != (self.policy.n_params,):
            raise ConfigError(f"vector has length {v.size}, policy has {self.policy.n_params}")
        jv = mlp_jvp(self.policy.mean_net, self.cache, v[:self.k])
        h_net = mlp_backward(self.policy.mean_net, self.cache, jv * self.inv_var / self.n)
        out = np.concatenate([h_net, 2.0 * v[self.k:]]) + self.damping * v
        if not np.all(np.isfinite(out)):
            raise NumericalError("non-finite Hessian-vector product",
                                 max_abs_input=float(np.max(np.abs(v))))
        return out


def hessian_vector_product(policy, states, v, damping):
    return KLHessian(policy, states, damping)(v)


@dataclass
class CgInfo:
    iterations: int
    residual: float
    converged: bool


def conjugate_gradient(matvec, rhs, iters, tol):
    """Approximately solve ``A x = rhs`` for symmetric positive-definite ``A``.

    Stops once ``||r|| <= tol * ||rhs||`` or after ``iters`` iterations.
    """
    rhs = np.asarray(rhs, dtype=float)
    x = np.zeros_like(rhs)
    r = rhs.copy()
    p = r.copy()
    rr = float(r @ r)
    target = tol * np.sqrt(rr)
    if rr == 0.0:
        return x, CgInfo(0, 0.0, True)
    for i in range(1, iters + 1):
        ap = matvec(p)
        alpha = rr / float(p @ ap)
        x = x + alpha * p
        r = r - alpha * ap
        rr_new = float(r @ r)
        if not np.isfinite(rr_new) or not np.all(np.isfinite(x)):
            raise NumericalError("conjugate gradient produced NaN", iteration=i)
        if np.sqrt(rr_new) <= target:
            return x, CgInfo(i, np.sqrt(rr_new), True)
        p = r + (rr_new / rr) * p
        rr = rr_new
    log.debug("conjugate gradient hit the %d-iteration cap (residual %.3g)", iters, np.sqrt(rr))
    return x, CgInfo(iters, float(np.sqrt(rr)), False)


@dataclass
class CpoSubproblem:
    g: np.ndarray
    b: np.ndarray
    c: float
    v: np.ndarray  # H^-1 g
    w: np.ndarray  # H^-1 b
    q: float
    r: float
    s: float


def make_subproblem(matvec, g, b, c, cg_iters, cg_tol):
    v, info_g = conjugate_gradient(matvec, g, cg_iters, cg_tol)
    hv = matvec(v)
    q = float(v @ hv)
    if float(b @ b) <= ZERO_GRAD_SQ and c < 0:
        w = np.zeros_like(b)
        r = s = 0.0
        info_b = CgInfo(0, 0.0, True)
    else:
        w, info_b = conjugate_gradient(matvec, b, cg_iters, cg_tol)
        r = float(w @ hv)
        s = float(w @ matvec(w))
    return CpoSubproblem(g, b, float(c), v, w, q, r, s), (info_g, info_b)


@dataclass
class CpoStep:
    x: np.ndarray
    case: str
    optim_case: int
    lam: float = 0.0
    nu: float = 0.0


def solve_cpo_step(sub, delta):
    """Closed-form solution of the linearised trust-region problem."""
    q, r, s, c = sub.q, sub.r, sub.s, sub.c
    if float(sub.b @ sub.b) <= ZERO_GRAD_SQ:
        if c < 0:
            lam = np.sqrt(q / (2.0 * delta))
            return CpoStep(sub.v / (lam + EPS), "feasible", 4, lam, 0.0)
        log.warning("cost gradient vanishes while infeasible (c=%.4g); skipping update", c)
        return CpoStep(np.zeros_like(sub.g), "skipped", -1)

    if c == 0.0:
        c = -1e-12
    a_coef = q - r * r / s
    b_coef = 2.0 * delta - c * c / s
    if c < 0 and b_coef < 0:
        optim_case = 3
    elif c < 0:
        optim_case = 2
    elif b_coef >= 0:
        optim_case = 1
    else:
        optim_case = 0

    if optim_case == 3:
        lam = np.sqrt(q / (2.0 * delta))
        nu = 0.0
    elif optim_case in (1, 2):
        ratio = -r / c
        if c < 0:
            range_a, range_b = (0.0, ratio), (ratio, np.inf)
        else:
            range_a, range_b = (ratio, np.inf), (0.0, ratio)

        def proj(x, rng):
            return max(rng[0], min(rng[1], x))

        lam_a = proj(np.sqrt(max(a_coef, 0.0) / b_coef) if b_coef > 0 else np.inf, range_a)
        lam_b = proj(np.sqrt(q / (2.0 * delta)), range_b)

        def f_a(lam):
            return -0.5 * (a_coef / (lam + EPS) + b_coef * lam) + r * c / (s + EPS)

        def f_b(lam):
            return -0.5 * (q / (lam + EPS) + 2.0 * delta * lam)

        lam = lam_a if f_a(lam_a) >= f_b(lam_b) else lam_b
        nu = max(0.0, lam * c + r) / (s + EPS)
    else:
        nu = np.sqrt(2.0 * delta / (s + EPS))
        return CpoStep(-nu * sub.w, "infeasible-recovery", 0, 0.0, nu)
    x = (sub.v - nu * sub.w) / (lam + EPS)
    return CpoStep(x, "feasible", optim_case, float(lam), float(nu))


@dataclass
class LineSearchResult:
    accepted: bool
    theta: np.ndarray
    step_index: int
    kl: float
    reward_improve: float
    cost_change: float
    log: list = field(default_factory=list)


def surrogates(policy, states, actions, logp_old, adv, cost_adv):
    """``(mean ratio * A, mean ratio * A_C, mean KL(pi_old || pi))`` pieces at ``policy``."""
    mean = policy_mean(policy, states)
    ratio = np.exp(gaussian_log_prob_from_mean(mean, policy.log_std, actions) - logp_old)
    return float(np.mean(ratio * adv)), float(np.mean(ratio * cost_adv)), mean


def line_search(policy, states, actions, logp_old, adv, cost_adv, step, delta, c,
                backtrack, max_steps, cost_scale=1.0):
    """Backtrack ``theta_k + backtrack**j * x`` until the sampled checks pass.

    Accepts when KL(pi_k || pi) <= delta, the scaled surrogate cost change
    stays within the slack ``max(-c, 0)`` (strictly negative for a recovery
    step), and, when the policy is currently feasible (c < 0), the reward
    surrogate does not decrease. Returns theta_k unchanged on exhaustion.
    """
    theta0 = policy.flat
    x = step.x
    r0, c0, mean0 = surrogates(policy, states, actions, logp_old, adv, cost_adv)
    if not np.any(x):
        return LineSearchResult(True, theta0, 0, 0.0, 0.0, 0.0, ["zero direction"])
    recovery = step.case == "infeasible-recovery"
    trail = []
    for j in range(max_steps + 1):
        cand = policy.with_flat(theta0 + backtrack ** j * x)
        r1, c1, mean1 = surrogates(cand, states, actions, logp_old, adv, cost_adv)
        kl = float(np.mean(gaussian_kl(mean0, policy.log_std, mean1, cand.log_std)))
        improve = r1 - r0
        cost_change = cost_scale * (c1 - c0)
        if not (np.isfinite(r1) and np.isfinite(c1) and np.isfinite(kl)):
            trail.append(f"{j}: non-finite surrogate")
        elif kl > delta:
            trail.append(f"{j}: KL {kl:.3g} > {delta}")
        elif recovery and not cost_change < 0:
            trail.append(f"{j}: recovery did not reduce cost")
        elif not recovery and cost_change > max(-c, 0.0):
            trail.append(f"{j}: cost change {cost_change:.3g} exceeds slack {max(-c, 0.0):.3g}")
        elif not recovery and c < 0 and improve < 0:
            trail.append(f"{j}: reward surrogate decreased")
        else:
            trail.append(f"{j}: accepted")
            return LineSearchResult(True, cand.flat, j, kl, improve, cost_change, trail)
    log.info("line search rejected update after %d steps: %s", max_steps + 1, trail[-1])
    return LineSearchResult(False, theta0, -1, 0.0, 0.0, 0.0, trail)


def cpo_step_for_batch(policy, batch, advs, cfg):
    """Build and solve the subproblem for one batch; returns ``(step, sub, cg_infos, c)``."""
    states = batch.flat("obs")
    actions = batch.flat("actions")
    n = len(states)
    cost_scale = 1.0 / (1.0 - cfg.gamma)
    g = log_prob_grad(policy, states, actions, advs.advantages / n)
    b = cost_scale * log_prob_grad(policy, states, actions, advs.cost_advantages / n)
    c = advs.ep_cost - cfg.cost_limit
    hvp = KLHessian(policy, states, cfg.damping)
    sub, infos = make_subproblem(hvp, g, b, c, cfg.cg_iters, cfg.cg_tol)
    return solve_cpo_step(sub, cfg.delta), sub, infos, c


def cpo_iteration(policy, reward_critic, cost_critic, batch, advs, cfg, rng, opts):
    """One full CPO iteration: policy step, line search, then both critics regressed.

    ``opts`` is the ``(reward_opt, cost_opt)`` pair of Adam states. Returns
    ``(policy, reward_critic, cost_critic, opts, diagnostics)``.
    """
    step, sub, (info_g, info_b), c = cpo_step_for_batch(policy, batch, advs, cfg)
    states = batch.flat("obs")
    ls = line_search(policy, states, batch.flat("actions"), batch.flat("logp"), advs.advantages,
                     advs.cost_advantages, step, cfg.delta, c, cfg.backtrack, cfg.max_backtracks,
                     cost_scale=1.0 / (1.0 - cfg.gamma))
    new_policy = policy.with_flat(ls.theta)
    r_opt, c_opt = opts
    reward_critic, r_opt, _ = fit_critic(reward_critic, r_opt, states, advs.returns,
                                         cfg.critic_epochs, cfg.minibatch, cfg.critic_lr, rng)
    cost_critic, c_opt, _ = fit_critic(cost_critic, c_opt, states, advs.cost_returns,
                                       cfg.critic_epochs, cfg.minibatch, cfg.critic_lr, rng)
    diag = {
        "case": step.case,
        "optim_case": step.optim_case,
        "kl": ls.kl,
        "accepted": ls.accepted,
        "backtracks": ls.step_index,
        "ep_cost": advs.ep_cost,
        "cost_slack": c,
        "cg_residual": max(info_g.residual, info_b.residual),
        "cg_converged": info_g.converged and info_b.converged,
        "linearized_cost": c + float(sub.b @ step.x),
    }
    return new_policy, reward_critic, cost_critic, (r_opt, c_opt), diag


class CpoLearner:
    def __init__(self, policy, reward_critic, cost_critic, cfg=None):
        self.policy = policy
        self.reward_critic = reward_critic
        self.cost_critic = cost_critic
        self.cfg = cfg or CpoConfig()
        self.opts = (adam_init(reward_critic.n_params), adam_init(cost_critic.n_params))
        self.uses_ewc = False

    def critics(self):
        return self.reward_critic, self.cost_critic

    def advantages(self, batch):
        return compute_advantages(batch, self.cfg.gamma, self.cfg.gae_lambda)

    def update(self, batch, rng):
        advs = self.advantages(batch)
        (self.policy, self.reward_critic, self.cost_critic, self.opts,
         diag) = cpo_iteration(self.policy, self.reward_critic, self.cost_critic, batch, advs,
                               self.cfg, rng, self.opts)
        return diag

    def end_segment(self, task, segment, episodes):
        return False
