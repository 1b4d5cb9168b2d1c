"""Dense numerical kernel: tanh MLPs with manual backprop, Adam, diagonal Gaussians.

Every network is stored as one flat float64 vector. The canonical order is,
layer by layer, the weight matrix of shape ``(in, out)`` in row-major order
followed by the bias vector of length ``out``. A Gaussian policy appends its
log-standard-deviation vector after the mean network's parameters.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericalError

FLOAT = np.float64
LOG_2PI = float(np.log(2.0 * np.pi))

# central tolerance constants
GRAD_CHECK_RTOL = 1e-4
FD_STEP = 1e-5
KL_SLACK = 1e-6
LINEARIZED_COST_SLACK = 1e-8
DEFAULT_HIDDEN = (64, 64)


def n_mlp_params(sizes):
    return sum(sizes[i] * sizes[i + 1] + sizes[i + 1] for i in range(len(sizes) - 1))


@dataclass
class MlpParams:
    """A tanh MLP (linear output layer) backed by a single flat parameter vector."""

    sizes: tuple
    flat: np.ndarray

    def __post_init__(self):
        self.sizes = tuple(int(s) for s in self.sizes)
        if len(self.sizes) < 2 or any(s <= 0 for s in self.sizes):
            raise ConfigError(f"layer sizes must be >= 2 positive integers, got {self.sizes}")
        self.flat = np.asarray(self.flat, dtype=FLOAT)
        expected = n_mlp_params(self.sizes)
        if self.flat.shape != (expected,):
            raise ConfigError(f"flat vector has shape {self.flat.shape}, expected ({expected},)")

    @property
    def n_layers(self):
        return len(self.sizes) - 1

    @property
    def n_params(self):
        return self.flat.size

    def layers(self):
        """List of ``(W, b)`` views into ``flat``; ``W`` has shape ``(in, out)``."""
        out, off = [], 0
        for n_in, n_out in zip(self.sizes[:-1], self.sizes[1:]):
            w = self.flat[off:off + n_in * n_out].reshape(n_in, n_out)
            off += n_in * n_out
            b = self.flat[off:off + n_out]
            off += n_out
            out.append((w, b))
        return out

    @property
    def weights(self):
        return [w for w, _ in self.layers()]

    @property
    def biases(self):
        return [b for _, b in self.layers()]

    def copy(self):
        return MlpParams(self.sizes, self.flat.copy())


def flatten(weights, biases):
    parts = []
    for w, b in zip(weights, biases):
        parts.append(np.asarray(w, dtype=FLOAT).ravel())
        parts.append(np.asarray(b, dtype=FLOAT).ravel())
    return np.concatenate(parts)


def unflatten(sizes, flat):
    """Return ``(weights, biases)`` lists copied out of a flat vector."""
    p = MlpParams(sizes, flat)
    return [w.copy() for w in p.weights], [b.copy() for b in p.biases]


def init_mlp(sizes, rng, out_scale=1.0):
    """Uniform fan-in initialisation; the output layer is scaled by ``out_scale``."""
    weights, biases = [], []
    for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        bound = 1.0 / np.sqrt(n_in)
        w = rng.uniform(-bound, bound, size=(n_in, n_out))
        if i == len(sizes) - 2:
            w = w * out_scale
        weights.append(w)
        biases.append(np.zeros(n_out))
    return MlpParams(tuple(sizes), flatten(weights, biases))


@dataclass
class MlpCache:
    """Activations of one forward pass: ``acts[0]`` is the input, ``acts[-1]`` the output."""

    acts: list
    squeeze: bool


def _as_batch(x, n_in):
    x = np.asarray(x, dtype=FLOAT)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != n_in:
        raise ConfigError(f"input has shape {np.shape(x)}, network expects {n_in} features")
    return x, squeeze


def mlp_forward(params, x, keep_cache=False):
    """Evaluate the network on a vector or a batch of row vectors.

    With ``keep_cache=True`` returns ``(output, cache)`` for a later backward
    or forward-mode pass.
    """
    h, squeeze = _as_batch(x, params.sizes[0])
    acts = [h]
    layers = params.layers()
    for i, (w, b) in enumerate(layers):
        z = h @ w + b
        h = np.tanh(z) if i < len(layers) - 1 else z
        acts.append(h)
    out = h[0] if squeeze else h
    if keep_cache:
        return out, MlpCache(acts, squeeze)
    return out


def mlp_backward(params, cache, output_grad, per_sample=False):
    """Flat gradient of ``sum(output * output_grad)`` w.r.t. every parameter.

    For batched input the gradient is summed over rows, or returned row by row
    as an ``(N, P)`` array when ``per_sample`` is set.
    """
    if cache is None:
        raise ConfigError("mlp_backward requires the cache from a forward pass")
    acts = cache.acts
    delta = np.asarray(output_grad, dtype=FLOAT)
    if delta.ndim == 1:
        delta = delta[None, :]
    if delta.shape != acts[-1].shape:
        raise ConfigError(f"output_grad shape {delta.shape} does not match output {acts[-1].shape}")
    layers = params.layers()
    n = delta.shape[0]
    pieces = [None] * (2 * len(layers))
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        a_in = acts[i]
        if per_sample:
            pieces[2 * i] = (a_in[:, :, None] * delta[:, None, :]).reshape(n, -1)
            pieces[2 * i + 1] = delta
        else:
            pieces[2 * i] = (a_in.T @ delta).ravel()
            pieces[2 * i + 1] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ w.T) * (1.0 - a_in * a_in)
    return np.concatenate(pieces, axis=1 if per_sample else 0)


def mlp_jvp(params, cache, direction):
    """Forward-mode derivative of the output along a flat parameter direction."""
    tangent = MlpParams(params.sizes, direction)
    acts = cache.acts
    dh = np.zeros_like(acts[0])
    layers = params.layers()
    for i, ((w, _), (dw, db)) in enumerate(zip(layers, tangent.layers())):
        dz = dh @ w + acts[i] @ dw + db
        if i < len(layers) - 1:
            dh = (1.0 - acts[i + 1] ** 2) * dz
        else:
            dh = dz
    return dh[0] if cache.squeeze else dh


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0


def adam_init(n):
    return AdamState(np.zeros(n), np.zeros(n), 0)


def adam_step(params, grads, state, lr, betas=(0.9, 0.999), eps=1e-8):
    """One bias-corrected Adam descent step. Returns ``(new_params, new_state)``."""
    grads = np.asarray(grads, dtype=FLOAT)
    if grads.shape != params.shape:
        raise ConfigError(f"gradient shape {grads.shape} != parameter shape {params.shape}")
    bad = ~np.isfinite(grads)
    if bad.any():
        raise NumericalError(
            "non-finite gradient; update aborted",
            n_bad=int(bad.sum()),
            first_bad_index=int(np.flatnonzero(bad)[0]),
        )
    b1, b2 = betas
    t = state.step + 1
    m = b1 * state.m + (1.0 - b1) * grads
    v = b2 * state.v + (1.0 - b2) * grads * grads
    m_hat = m / (1.0 - b1 ** t)
    v_hat = v / (1.0 - b2 ** t)
    new = params - lr * m_hat / (np.sqrt(v_hat) + eps)
    return new, AdamState(m, v, t)


@dataclass
class DiagGaussianPolicy:
    """Gaussian policy with an MLP mean and a learned state-independent log-std."""

    mean_net: MlpParams
    log_std: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.log_std is None:
            self.log_std = np.zeros(self.mean_net.sizes[-1])
        self.log_std = np.asarray(self.log_std, dtype=FLOAT)
        if self.log_std.shape != (self.mean_net.sizes[-1],):
            raise ConfigError("log_std length must equal the action dimension")

    @property
    def obs_dim(self):
        return self.mean_net.sizes[0]

    @property
    def action_dim(self):
        return self.mean_net.sizes[-1]

    @property
    def n_params(self):
        return self.mean_net.n_params + self.action_dim

    @property
    def std(self):
        return np.exp(self.log_std)

    @property
    def flat(self):
        return np.concatenate([self.mean_net.flat, self.log_std])

    def with_flat(self, vec):
        vec = np.asarray(vec, dtype=FLOAT)
        if vec.shape != (self.n_params,):
            raise ConfigError(f"policy vector has shape {vec.shape}, expected ({self.n_params},)")
        k = self.mean_net.n_params
        return DiagGaussianPolicy(MlpParams(self.mean_net.sizes, vec[:k].copy()), vec[k:].copy())

    def copy(self):
        return self.with_flat(self.flat)


def make_policy(obs_dim, action_dim, rng, hidden=DEFAULT_HIDDEN, init_log_std=0.0):
    net = init_mlp((obs_dim, *hidden, action_dim), rng, out_scale=0.01)
    return DiagGaussianPolicy(net, np.full(action_dim, float(init_log_std)))


def make_value_net(obs_dim, rng, hidden=DEFAULT_HIDDEN):
    return init_mlp((obs_dim, *hidden, 1), rng, out_scale=1.0)


def value_predict(net, states):
    out = mlp_forward(net, states)
    return out[..., 0]


def policy_mean(policy, states, keep_cache=False):
    res = mlp_forward(policy.mean_net, states, keep_cache=keep_cache)
    mean = res[0] if keep_cache else res
    if not np.all(np.isfinite(mean)):
        raise NumericalError("policy mean is not finite")
    return res


def gaussian_log_prob_from_mean(mean, log_std, actions):
    z = (actions - mean) * np.exp(-log_std)
    return -0.5 * np.sum(z * z, axis=-1) - np.sum(log_std) - 0.5 * mean.shape[-1] * LOG_2PI


def gaussian_log_prob(policy, states, actions):
    """Exact log-density of ``actions`` under the policy at ``states`` (vector or batch)."""
    mean = policy_mean(policy, states)
    actions = np.asarray(actions, dtype=FLOAT)
    if actions.shape != mean.shape:
        raise ConfigError(f"action shape {actions.shape} does not match policy output {mean.shape}")
    return gaussian_log_prob_from_mean(mean, policy.log_std, actions)


def _log_prob_output_grads(policy, mean, actions):
    inv_var = np.exp(-2.0 * policy.log_std)
    diff = np.asarray(actions, dtype=FLOAT) - mean
    d_mean = diff * inv_var
    d_log_std = diff * diff * inv_var - 1.0
    return d_mean, d_log_std


def log_prob_grad(policy, states, actions, weights=None):
    """Flat gradient of ``sum_n weights[n] * log pi(a_n | s_n)`` over policy parameters."""
    mean, cache = policy_mean(policy, states, keep_cache=True)
    mean2 = mean[None, :] if mean.ndim == 1 else mean
    acts2 = np.atleast_2d(actions)
    d_mean, d_ls = _log_prob_output_grads(policy, mean2, acts2)
    w = np.ones(mean2.shape[0]) if weights is None else np.atleast_1d(np.asarray(weights, dtype=FLOAT))
    g_net = mlp_backward(policy.mean_net, cache, d_mean * w[:, None])
    g_ls = (d_ls * w[:, None]).sum(axis=0)
    return np.concatenate([g_net, g_ls])


def log_prob_per_sample_grads(policy, states, actions):
    """``(N, P)`` array whose rows are the gradients of each sample's log-probability."""
    mean, cache = policy_mean(policy, np.atleast_2d(states), keep_cache=True)
    d_mean, d_ls = _log_prob_output_grads(policy, mean, np.atleast_2d(actions))
    g_net = mlp_backward(policy.mean_net, cache, d_mean, per_sample=True)
    return np.concatenate([g_net, d_ls], axis=1)


def gaussian_kl(mean_p, log_std_p, mean_q, log_std_q):
    """Row-wise KL(p || q) between diagonal Gaussians."""
    var_p = np.exp(2.0 * log_std_p)
    var_q = np.exp(2.0 * log_std_q)
    kl = log_std_q - log_std_p + (var_p + (mean_p - mean_q) ** 2) / (2.0 * var_q) - 0.5
    return np.sum(kl, axis=-1)


def diag_gaussian_kl(p, q, states):
    """KL(p || q) of two policies, averaged over the given state(s)."""
    if p.action_dim != q.action_dim:
        raise ConfigError("policies have different action dimensions")
    kl = gaussian_kl(policy_mean(p, states), p.log_std, policy_mean(q, states), q.log_std)
    return float(np.mean(kl))


def sample_actions(policy, states, rng):
    mean = policy_mean(policy, states)
    return mean + policy.std * rng.standard_normal(mean.shape)
