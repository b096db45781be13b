"""Small numpy neural-network engine for the agents.

Two-hidden-layer ReLU MLPs with hand-written reverse mode, Adam, the
tanh-squashed Gaussian policy head, a uniform replay buffer and a
versioned ``.npz`` checkpoint format.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
CHECKPOINT_VERSION = 1
_LOG_2PI = float(np.log(2.0 * np.pi))
_LOG_2 = float(np.log(2.0))


class Mlp:
    """Dense ``in -> h1 -> h2 -> out`` network, ReLU hidden layers, linear output.

    ``params`` is the flat list ``[W1, b1, W2, b2, W3, b3]`` with ``W`` shaped
    ``(fan_in, fan_out)``; inputs are row-batched ``(B, in)``.
    """

    def __init__(self, layer_dims, rng: np.random.Generator | None = None, out_scale: float = 1.0):
        layer_dims = tuple(int(d) for d in layer_dims)
        if len(layer_dims) != 4:
            raise ValueError(f"expected (input, hidden1, hidden2, output) dims, got {layer_dims}")
        self.layer_dims = layer_dims
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params = []
        for k, (fan_in, fan_out) in enumerate(zip(layer_dims[:-1], layer_dims[1:])):
            bound = 1.0 / np.sqrt(fan_in)
            if k == 2:
                bound *= out_scale
            self.params.append(rng.uniform(-bound, bound, (fan_in, fan_out)))
            self.params.append(rng.uniform(-bound, bound, fan_out))

    @classmethod
    def from_params(cls, params) -> "Mlp":
        net = cls.__new__(cls)
        net.params = [np.array(p, dtype=float) for p in params]
        W1, _, W2, _, W3, _ = net.params
        net.layer_dims = (W1.shape[0], W2.shape[0], W3.shape[0], W3.shape[1])
        return net

    def copy(self) -> "Mlp":
        return Mlp.from_params(self.params)

    def _check_input(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.layer_dims[0]:
            raise ValueError(f"input width {x.shape[-1]} != {self.layer_dims[0]}")
        return x

    def forward(self, x, return_cache: bool = False):
        x = self._check_input(x)
        W1, b1, W2, b2, W3, b3 = self.params
        h1 = np.maximum(x @ W1 + b1, 0.0)
        h2 = np.maximum(h1 @ W2 + b2, 0.0)
        out = h2 @ W3 + b3
        if return_cache:
            return out, (x, h1, h2)
        return out

    __call__ = forward

    def backward(self, x, output_grad, cache=None):
        """Gradients of ``sum(output * output_grad)``: ``(param_grads, input_grad)``.

        ReLU is given derivative 0 at exactly 0.
        """
        if cache is None:
            _, cache = self.forward(x, return_cache=True)
        x, h1, h2 = cache
        g = np.asarray(output_grad, dtype=float)
        if g.shape[-1] != self.layer_dims[-1]:
            raise ValueError(f"output_grad width {g.shape[-1]} != {self.layer_dims[-1]}")
        W1, _, W2, _, W3, _ = self.params
        batched = g.ndim > 1
        outer = (lambda a, b: a.T @ b) if batched else np.outer
        colsum = (lambda a: a.sum(axis=0)) if batched else (lambda a: a)

        gW3 = outer(h2, g)
        gb3 = colsum(g)
        g = (g @ W3.T) * (h2 > 0)
        gW2 = outer(h1, g)
        gb2 = colsum(g)
        g = (g @ W2.T) * (h1 > 0)
        gW1 = outer(x, g)
        gb1 = colsum(g)
        g_in = g @ W1.T
        return [gW1, gb1, gW2, gb2, gW3, gb3], g_in


def forward(net: Mlp, x):
    return net.forward(x)


def backward(net: Mlp, x, output_grad):
    return net.backward(x, output_grad)


def soft_update(target: Mlp, source: Mlp, tau: float) -> None:
    """Polyak average ``target <- (1 - tau) target + tau source`` in place."""
    for pt, ps in zip(target.params, source.params):
        if tau == 1.0:
            pt[...] = ps
        else:
            pt *= 1.0 - tau
            pt += tau * ps


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, **hyper) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], **hyper)


def adam_step(params, grads, opt: AdamState) -> list:
    """Bias-corrected Adam update applied to ``params`` in place."""
    if len(params) != len(grads) or len(params) != len(opt.m):
        raise ValueError("params, grads and optimizer state lengths differ")
    opt.step += 1
    c1 = 1.0 - opt.beta1 ** opt.step
    c2 = 1.0 - opt.beta2 ** opt.step
    for p, g, m, v in zip(params, grads, opt.m, opt.v):
        if p.shape != np.shape(g) or p.shape != m.shape:
            raise ValueError(f"shape mismatch: param {p.shape}, grad {np.shape(g)}")
        m *= opt.beta1
        m += (1.0 - opt.beta1) * g
        v *= opt.beta2
        v += (1.0 - opt.beta2) * np.square(g)
        p -= opt.lr * (m / c1) / (np.sqrt(v / c2) + opt.eps)
    return params


# --- squashed Gaussian policy head -----------------------------------------

def _log1m_tanh_sq(u):
    # log(1 - tanh(u)^2), stable for large |u|
    return 2.0 * (_LOG_2 - u - np.logaddexp(0.0, -2.0 * u))


def gaussian_tanh_sample(mean, log_std, noise):
    """Reparameterised ``tanh(mean + exp(log_std) * noise)`` and its log-density.

    ``log_std`` is clamped to ``[LOG_STD_MIN, LOG_STD_MAX]``; the log-density
    includes the tanh Jacobian and is summed over the last axis.
    """
    mean = np.asarray(mean, dtype=float)
    log_std = np.clip(np.asarray(log_std, dtype=float), LOG_STD_MIN, LOG_STD_MAX)
    noise = np.asarray(noise, dtype=float)
    if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(log_std)) and np.all(np.isfinite(noise))):
        raise ValueError("non-finite policy head input")
    u = mean + np.exp(log_std) * noise
    action = np.tanh(u)
    log_prob = -0.5 * noise ** 2 - log_std - 0.5 * _LOG_2PI - _log1m_tanh_sq(u)
    return action, log_prob.sum(axis=-1)


def gaussian_tanh_backward(mean, log_std_raw, noise, action_grad, logp_grad):
    """Pull ``(dL/daction, dL/dlog_prob)`` back to ``(dL/dmean, dL/dlog_std_raw)``.

    ``log_std_raw`` is the pre-clamp head output; the clamp passes no gradient
    outside its range.  ``logp_grad`` has one entry per row.
    """
    log_std_raw = np.asarray(log_std_raw, dtype=float)
    log_std = np.clip(log_std_raw, LOG_STD_MIN, LOG_STD_MAX)
    std = np.exp(log_std)
    u = mean + std * noise
    a = np.tanh(u)
    lg = np.asarray(logp_grad, dtype=float)[..., None]
    # d log_prob / du = 2 tanh(u) (from the Jacobian term)
    g_u = action_grad * (1.0 - a * a) + lg * 2.0 * a
    g_mean = g_u
    g_log_std = g_u * std * noise - lg
    inside = (log_std_raw >= LOG_STD_MIN) & (log_std_raw <= LOG_STD_MAX)
    return g_mean, g_log_std * inside


def squashed_log_prob(action, mean, log_std):
    """Log-density of an action already in (-1, 1) under the squashed Gaussian."""
    log_std = np.clip(np.asarray(log_std, dtype=float), LOG_STD_MIN, LOG_STD_MAX)
    u = np.arctanh(action)
    z = (u - mean) / np.exp(log_std)
    lp = -0.5 * z ** 2 - log_std - 0.5 * _LOG_2PI - _log1m_tanh_sq(u)
    return lp.sum(axis=-1)


# --- replay buffer ---------------------------------------------------------

@dataclass
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward: float
    aux_cost: float
    next_state: np.ndarray
    done: bool


@dataclass
class ReplayBuffer:
    obs_dim: int
    act_dim: int
    capacity: int = 100_000
    size: int = 0
    ptr: int = 0
    data: dict = field(default=None, repr=False)

    def __post_init__(self):
        if self.data is None:
            self.data = {
                "state": np.zeros((self.capacity, self.obs_dim)),
                "action": np.zeros((self.capacity, self.act_dim)),
                "reward": np.zeros(self.capacity),
                "aux_cost": np.zeros(self.capacity),
                "next_state": np.zeros((self.capacity, self.obs_dim)),
                "done": np.zeros(self.capacity),
            }

    def __len__(self):
        return self.size

    def push(self, tr: Transition) -> None:
        if np.shape(tr.state) != (self.obs_dim,) or np.shape(tr.next_state) != (self.obs_dim,):
            raise ValueError("transition state has the wrong length")
        if np.shape(tr.action) != (self.act_dim,):
            raise ValueError("transition action has the wrong length")
        i = self.ptr
        d = self.data
        d["state"][i] = tr.state
        d["action"][i] = tr.action
        d["reward"][i] = tr.reward
        d["aux_cost"][i] = tr.aux_cost
        d["next_state"][i] = tr.next_state
        d["done"][i] = float(tr.done)
        self.ptr = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> dict:
        """Uniform sample with replacement."""
        if self.size < batch_size:
            raise ValueError(f"buffer holds {self.size} transitions, need {batch_size}")
        idx = rng.integers(0, self.size, batch_size)
        return {k: v[idx] for k, v in self.data.items()}


def buffer_push(buf: ReplayBuffer, tr: Transition) -> None:
    buf.push(tr)


def buffer_sample(buf: ReplayBuffer, batch_size: int, rng: np.random.Generator) -> dict:
    return buf.sample(batch_size, rng)


# --- checkpoints -----------------------------------------------------------

def save_checkpoint(path, arrays: dict, meta: dict) -> Path:
    """Write arrays plus JSON metadata to an uncompressed ``.npz`` blob."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = json.dumps({"version": CHECKPOINT_VERSION, **meta}, sort_keys=True)
    with path.open("wb") as fh:
        np.savez(fh, __meta__=np.array(header), **arrays)
    return path


def load_checkpoint(path) -> tuple:
    with np.load(Path(path), allow_pickle=False) as z:
        meta = json.loads(str(z["__meta__"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {meta.get('version')}")
        arrays = {k: z[k].copy() for k in z.files if k != "__meta__"}
    return arrays, meta
