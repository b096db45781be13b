"""Off-policy agents: SAC-Lagrangian, SAC with a fixed violation penalty, DDPG.

All agents act in the normalised box ``[-1, 1]^k``; :func:`to_env_action`
maps that box onto the environment's ``[action_low, action_high]``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .nn import (
    AdamState,
    Mlp,
    ReplayBuffer,
    Transition,
    adam_step,
    gaussian_tanh_backward,
    gaussian_tanh_sample,
    load_checkpoint,
    save_checkpoint,
    soft_update,
)

ALGORITHMS = ("sacl", "sac", "ddpg")


@dataclass(frozen=True)
class TrainConfig:
    episodes: int = 100
    gamma: float = 0.99
    tau_target: float = 0.005
    lr_policy: float = 3e-4
    lr_critic: float = 3e-4
    lr_alpha: float = 3e-4
    lr_lambda: float = 1e-3
    alpha_init: float = 0.01
    lambda_init: float = 0.0
    lambda_mode: str = "scalar"  # or "network"
    cost_budget: float = 2.0  # d, aux-cost units per episode
    w_pen: float = 1.0
    twin_critics: bool = True
    hidden: int = 256
    batch_size: int = 256
    buffer_size: int = 100_000
    warmup: int = 1000
    updates_per_step: int = 1
    ddpg_noise: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if not 0.0 < self.tau_target <= 1.0:
            raise ValueError(f"tau_target must lie in (0, 1], got {self.tau_target}")
        if self.episodes < 0:
            raise ValueError("episodes must be >= 0")
        if self.lambda_mode not in ("scalar", "network"):
            raise ValueError(f"lambda_mode must be 'scalar' or 'network', got {self.lambda_mode!r}")
        if self.w_pen < 0:
            raise ValueError("w_pen must be non-negative")

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def to_env_action(u, env):
    """Map a policy action in [-1, 1] onto the environment's action box."""
    u = np.clip(u, -1.0, 1.0)
    return env.action_low + 0.5 * (u + 1.0) * (env.action_high - env.action_low)


def _mse(pred, target):
    err = pred - target
    return float(np.mean(err ** 2)), 2.0 * err / err.size


def _softplus(z):
    return np.logaddexp(0.0, z)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class SacAgent:
    """Maximum-entropy actor-critic with a fixed violation penalty ``w_pen``."""

    algo = "sac"
    constrained = False

    def __init__(self, obs_dim: int, act_dim: int, cfg: TrainConfig):
        self.obs_dim, self.act_dim, self.cfg = obs_dim, act_dim, cfg
        seeds = np.random.SeedSequence(cfg.seed).spawn(3)
        init_rng = np.random.default_rng(seeds[0])
        self.rng = np.random.default_rng(seeds[1])  # exploration, batches, reparameterisation
        h = cfg.hidden
        self.policy = Mlp((obs_dim, h, h, 2 * act_dim), init_rng, out_scale=1e-3)
        n_q = 2 if cfg.twin_critics else 1
        self.critics = [Mlp((obs_dim + act_dim, h, h, 1), init_rng) for _ in range(n_q)]
        self.targets = [q.copy() for q in self.critics]
        self.log_alpha = np.array([np.log(cfg.alpha_init)])
        self.target_entropy = -float(act_dim)
        self.opt_policy = AdamState.for_params(self.policy.params, lr=cfg.lr_policy)
        self.opt_critics = [AdamState.for_params(q.params, lr=cfg.lr_critic) for q in self.critics]
        self.opt_alpha = AdamState.for_params([self.log_alpha], lr=cfg.lr_alpha)
        self.updates = 0
        self._init_extra(np.random.default_rng(seeds[2]))

    def _init_extra(self, rng):
        pass

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha[0]))

    @property
    def lam(self) -> float:
        return 0.0

    # -- acting --------------------------------------------------------------

    def _head(self, s, cache=False):
        out = self.policy.forward(s, return_cache=cache)
        raw = out[0] if cache else out
        mean, log_std_raw = raw[..., : self.act_dim], raw[..., self.act_dim:]
        return (mean, log_std_raw, out[1]) if cache else (mean, log_std_raw)

    def act(self, state, mode: str = "explore"):
        s = np.asarray(state, dtype=float)
        if not np.all(np.isfinite(s)):
            raise ValueError("non-finite state")
        mean, log_std_raw = self._head(s)
        if mode == "greedy":
            return np.tanh(mean)
        noise = self.rng.standard_normal(self.act_dim)
        action, _ = gaussian_tanh_sample(mean, log_std_raw, noise)
        return action

    def random_action(self):
        return self.rng.uniform(-1.0, 1.0, self.act_dim)

    # -- learning ------------------------------------------------------------

    def _train_reward(self, batch):
        return batch["reward"] - self.cfg.w_pen * batch["aux_cost"]

    def _q_values(self, nets, s, a):
        sa = np.concatenate([s, a], axis=1)
        return [q.forward(sa)[:, 0] for q in nets]

    def critic_targets(self, batch, noise=None):
        """One-step soft Bellman targets ``(y_r, y_c)``; ``y_c`` is None when unconstrained."""
        cfg = self.cfg
        s2 = batch["next_state"]
        if noise is None:
            noise = self.rng.standard_normal((len(s2), self.act_dim))
        mean, log_std_raw = self._head(s2)
        a2, logp2 = gaussian_tanh_sample(mean, log_std_raw, noise)
        q_next = np.min(self._q_values(self.targets, s2, a2), axis=0)
        live = cfg.gamma * (1.0 - batch["done"])
        y_r = self._train_reward(batch) + live * (q_next - self.alpha * logp2)
        y_c = None
        if self.constrained:
            # costs are non-negative, so is their value; clipping stops the
            # policy from steering into regions the critic underestimates
            qc_next = np.maximum(self._q_values([self.cost_target], s2, a2)[0], 0.0)
            y_c = batch["aux_cost"] + live * qc_next
        return y_r, y_c

    def _fit_critic(self, q, opt, sa, y):
        pred, cache = q.forward(sa, return_cache=True)
        loss, g = _mse(pred[:, 0], y)
        grads, _ = q.backward(sa, g[:, None], cache)
        adam_step(q.params, grads, opt)
        return loss

    def _lambda_weights(self, s):
        return None

    def policy_loss_and_grads(self, s, noise):
        """Sampled Lagrangian ``mean(alpha*logp - min Q + lam*Q_c)`` and its policy gradient.

        ``noise`` fixes the reparameterised draw; critics and multiplier are frozen.
        """
        B = len(s)
        mean, log_std_raw, pcache = self._head(s, cache=True)
        a_pi, logp = gaussian_tanh_sample(mean, log_std_raw, noise)
        sa_pi = np.concatenate([s, a_pi], axis=1)
        q_out = []
        for q in self.critics:
            out, cache = q.forward(sa_pi, return_cache=True)
            q_out.append((out[:, 0], cache))
        q_stack = np.stack([v for v, _ in q_out])
        pick = np.argmin(q_stack, axis=0)
        q_min = q_stack[pick, np.arange(B)]
        alpha = self.alpha
        g_action = np.zeros_like(a_pi)
        for k, (q, (_, cache)) in enumerate(zip(self.critics, q_out)):
            g_out = -(pick == k).astype(float)[:, None] / B
            _, g_in = q.backward(sa_pi, g_out, cache)
            g_action += g_in[:, self.obs_dim:]
        objective = alpha * logp - q_min
        qc_pi = None
        if self.constrained:
            lam_w = self._lambda_weights(s)
            qc_out, qc_cache = self.cost_critic.forward(sa_pi, return_cache=True)
            qc_pi = qc_out[:, 0]
            _, g_in = self.cost_critic.backward(sa_pi, (lam_w / B)[:, None], qc_cache)
            g_action += g_in[:, self.obs_dim:]
            objective = objective + lam_w * qc_pi
        g_mean, g_log_std = gaussian_tanh_backward(
            mean, log_std_raw, noise, g_action, np.full(B, alpha / B)
        )
        grads, _ = self.policy.backward(s, np.concatenate([g_mean, g_log_std], axis=1), pcache)
        return float(objective.mean()), grads, {"logp": logp, "q_min": q_min, "qc_pi": qc_pi}

    def update(self, buffer: ReplayBuffer) -> dict:
        cfg = self.cfg
        batch = buffer.sample(cfg.batch_size, self.rng)
        target_noise = self.rng.standard_normal((cfg.batch_size, self.act_dim))
        policy_noise = self.rng.standard_normal((cfg.batch_size, self.act_dim))
        return self.update_on_batch(batch, target_noise, policy_noise)

    def update_on_batch(self, batch, target_noise, policy_noise, freeze_targets: bool = False) -> dict:
        cfg = self.cfg
        s, a = batch["state"], batch["action"]
        y_r, y_c = self.critic_targets(batch, target_noise)
        sa = np.concatenate([s, a], axis=1)

        # (1)-(2) critics
        diag = {}
        diag["critic_loss"] = sum(
            self._fit_critic(q, opt, sa, y_r) for q, opt in zip(self.critics, self.opt_critics)
        )
        if self.constrained:
            diag["cost_critic_loss"] = self._fit_critic(self.cost_critic, self.opt_cost, sa, y_c)

        # (3) policy on the sampled Lagrangian
        loss, grads, aux = self.policy_loss_and_grads(s, policy_noise)
        adam_step(self.policy.params, grads, self.opt_policy)
        logp, q_min, qc_pi = aux["logp"], aux["q_min"], aux["qc_pi"]
        diag["policy_loss"] = loss

        # (4) temperature
        g_log_alpha = -np.mean(logp + self.target_entropy)
        adam_step([self.log_alpha], [np.array([g_log_alpha])], self.opt_alpha)

        # (5) multiplier
        if self.constrained:
            self._update_lambda(s, qc_pi)

        # (6) targets
        if not freeze_targets:
            for tq, q in zip(self.targets, self.critics):
                soft_update(tq, q, cfg.tau_target)
            if self.constrained:
                soft_update(self.cost_target, self.cost_critic, cfg.tau_target)
        self.updates += 1
        diag.update(
            alpha=self.alpha,
            lam=self.lam,
            q_mean=float(q_min.mean()),
            qc_mean=float(qc_pi.mean()) if qc_pi is not None else 0.0,
            entropy=float(-logp.mean()),
        )
        return diag

    # -- persistence ---------------------------------------------------------

    def _networks(self) -> dict:
        nets = {"policy": self.policy}
        for k, (q, t) in enumerate(zip(self.critics, self.targets)):
            nets[f"q{k}"] = q
            nets[f"q{k}_target"] = t
        return nets

    def _optimizers(self) -> dict:
        opts = {"policy": self.opt_policy, "alpha": self.opt_alpha}
        for k, o in enumerate(self.opt_critics):
            opts[f"q{k}"] = o
        return opts

    def _scalars(self) -> dict:
        return {"log_alpha": self.log_alpha}

    def state_arrays(self) -> tuple:
        arrays = {}
        for name, net in self._networks().items():
            for i, p in enumerate(net.params):
                arrays[f"net/{name}/{i}"] = p
        opt_meta = {}
        for name, opt in self._optimizers().items():
            for i, (m, v) in enumerate(zip(opt.m, opt.v)):
                arrays[f"opt/{name}/m{i}"] = m
                arrays[f"opt/{name}/v{i}"] = v
            opt_meta[name] = {"step": opt.step, "lr": opt.lr, "beta1": opt.beta1,
                              "beta2": opt.beta2, "eps": opt.eps}
        for name, arr in self._scalars().items():
            arrays[f"scalar/{name}"] = arr
        meta = {
            "algorithm": self.algo,
            "obs_dim": self.obs_dim,
            "act_dim": self.act_dim,
            "config": asdict(self.cfg),
            "config_hash": self.cfg.digest(),
            "updates": self.updates,
            "optimizers": opt_meta,
            "rng_state": self.rng.bit_generator.state,
        }
        return arrays, meta

    def load_state_arrays(self, arrays: dict, meta: dict) -> None:
        for name, net in self._networks().items():
            for i, p in enumerate(net.params):
                p[...] = arrays[f"net/{name}/{i}"]
        for name, opt in self._optimizers().items():
            for i in range(len(opt.m)):
                opt.m[i][...] = arrays[f"opt/{name}/m{i}"]
                opt.v[i][...] = arrays[f"opt/{name}/v{i}"]
            opt.step = int(meta["optimizers"][name]["step"])
        for name, arr in self._scalars().items():
            arr[...] = arrays[f"scalar/{name}"]
        self.updates = int(meta["updates"])
        self.rng.bit_generator.state = meta["rng_state"]

    def save(self, path) -> Path:
        arrays, meta = self.state_arrays()
        return save_checkpoint(path, arrays, meta)


class SaclAgent(SacAgent):
    """SAC with a learned cost critic and a Lagrange multiplier on its value.

    The multiplier is a projected scalar by default; ``lambda_mode="network"``
    uses a state-conditioned two-hidden-layer ReLU net with softplus output.
    """

    algo = "sacl"
    constrained = True

    def _init_extra(self, rng):
        cfg = self.cfg
        h = cfg.hidden
        # zero output layer: the cost critic starts at exactly 0
        self.cost_critic = Mlp((self.obs_dim + self.act_dim, h, h, 1), rng, out_scale=0.0)
        self.cost_target = self.cost_critic.copy()
        self.opt_cost = AdamState.for_params(self.cost_critic.params, lr=cfg.lr_critic)
        self.lam_scalar = np.array([max(cfg.lambda_init, 0.0)])
        self.lam_net = None
        if cfg.lambda_mode == "network":
            self.lam_net = Mlp((self.obs_dim, h, h, 1), rng, out_scale=0.0)
            # softplus^-1 of the initial multiplier
            init = max(cfg.lambda_init, 1e-6)
            self.lam_net.params[-1][...] = np.log(np.expm1(init))
            self.opt_lam = AdamState.for_params(self.lam_net.params, lr=cfg.lr_lambda)
        # per-step equivalent of the per-episode budget
        self.horizon = 24
        self.d_scaled = self.scaled_budget(self.horizon)

    def scaled_budget(self, horizon: int) -> float:
        g = self.cfg.gamma
        return self.cfg.cost_budget * (1.0 - g) / (1.0 - g ** horizon)

    def set_horizon(self, horizon: int) -> None:
        self.horizon = int(horizon)
        self.d_scaled = self.scaled_budget(self.horizon)

    def _train_reward(self, batch):
        return batch["reward"]

    @property
    def lam(self) -> float:
        if self.lam_net is None:
            return float(self.lam_scalar[0])
        return float(_softplus(self.lam_net.params[-1][0]))

    def lambda_of(self, s):
        if self.lam_net is None:
            return np.full(len(s), self.lam_scalar[0])
        return _softplus(self.lam_net.forward(s)[:, 0])

    def _lambda_weights(self, s):
        return self.lambda_of(s)

    def _update_lambda(self, s, qc_pi) -> None:
        excess = np.maximum(qc_pi, 0.0) - self.d_scaled
        if self.lam_net is None:
            self.lam_scalar[0] = project_lambda(self.lam_scalar[0], float(excess.mean()), self.cfg.lr_lambda)
            return
        z, cache = self.lam_net.forward(s, return_cache=True)
        g = -(excess * _sigmoid(z[:, 0]) / len(s))[:, None]
        grads, _ = self.lam_net.backward(s, g, cache)
        adam_step(self.lam_net.params, grads, self.opt_lam)

    def _networks(self) -> dict:
        nets = super()._networks()
        nets["cost"] = self.cost_critic
        nets["cost_target"] = self.cost_target
        if self.lam_net is not None:
            nets["lambda"] = self.lam_net
        return nets

    def _optimizers(self) -> dict:
        opts = super()._optimizers()
        opts["cost"] = self.opt_cost
        if self.lam_net is not None:
            opts["lambda"] = self.opt_lam
        return opts

    def _scalars(self) -> dict:
        return {**super()._scalars(), "lambda": self.lam_scalar}


def project_lambda(lam: float, excess: float, lr: float) -> float:
    """Projected dual ascent: ``max(0, lam + lr * excess)``."""
    return max(0.0, lam + lr * excess)


class DdpgAgent:
    """Deterministic tanh actor with a single critic and Gaussian exploration."""

    algo = "ddpg"
    constrained = False

    def __init__(self, obs_dim: int, act_dim: int, cfg: TrainConfig):
        self.obs_dim, self.act_dim, self.cfg = obs_dim, act_dim, cfg
        seeds = np.random.SeedSequence(cfg.seed).spawn(3)
        init_rng = np.random.default_rng(seeds[0])
        self.rng = np.random.default_rng(seeds[1])
        h = cfg.hidden
        self.actor = Mlp((obs_dim, h, h, act_dim), init_rng, out_scale=1e-3)
        self.critic = Mlp((obs_dim + act_dim, h, h, 1), init_rng)
        self.actor_target = self.actor.copy()
        self.critic_target = self.critic.copy()
        self.opt_actor = AdamState.for_params(self.actor.params, lr=cfg.lr_policy)
        self.opt_critic = AdamState.for_params(self.critic.params, lr=cfg.lr_critic)
        self.updates = 0

    alpha = 0.0
    lam = 0.0

    def act(self, state, mode: str = "explore"):
        s = np.asarray(state, dtype=float)
        if not np.all(np.isfinite(s)):
            raise ValueError("non-finite state")
        a = np.tanh(self.actor.forward(s))
        if mode == "greedy":
            return a
        return np.clip(a + self.cfg.ddpg_noise * self.rng.standard_normal(self.act_dim), -1.0, 1.0)

    def random_action(self):
        return self.rng.uniform(-1.0, 1.0, self.act_dim)

    def critic_targets(self, batch, noise=None):
        cfg = self.cfg
        s2 = batch["next_state"]
        a2 = np.tanh(self.actor_target.forward(s2))
        q2 = self.critic_target.forward(np.concatenate([s2, a2], axis=1))[:, 0]
        # unpenalised: the deterministic baseline sees only the economic reward
        return batch["reward"] + cfg.gamma * (1.0 - batch["done"]) * q2, None

    def update(self, buffer: ReplayBuffer) -> dict:
        batch = buffer.sample(self.cfg.batch_size, self.rng)
        return self.update_on_batch(batch)

    def update_on_batch(self, batch, *_, freeze_targets: bool = False) -> dict:
        cfg = self.cfg
        s, a = batch["state"], batch["action"]
        y, _ = self.critic_targets(batch)
        sa = np.concatenate([s, a], axis=1)
        pred, cache = self.critic.forward(sa, return_cache=True)
        loss, g = _mse(pred[:, 0], y)
        grads, _ = self.critic.backward(sa, g[:, None], cache)
        adam_step(self.critic.params, grads, self.opt_critic)

        out, acache = self.actor.forward(s, return_cache=True)
        a_pi = np.tanh(out)
        sa_pi = np.concatenate([s, a_pi], axis=1)
        q, qcache = self.critic.forward(sa_pi, return_cache=True)
        _, g_in = self.critic.backward(sa_pi, np.full((len(s), 1), -1.0 / len(s)), qcache)
        g_out = g_in[:, self.obs_dim:] * (1.0 - a_pi ** 2)
        grads, _ = self.actor.backward(s, g_out, acache)
        adam_step(self.actor.params, grads, self.opt_actor)

        if not freeze_targets:
            soft_update(self.actor_target, self.actor, cfg.tau_target)
            soft_update(self.critic_target, self.critic, cfg.tau_target)
        self.updates += 1
        return {"critic_loss": loss, "policy_loss": float(-q.mean()), "q_mean": float(q.mean()),
                "alpha": 0.0, "lam": 0.0}

    def _networks(self) -> dict:
        return {"actor": self.actor, "critic": self.critic,
                "actor_target": self.actor_target, "critic_target": self.critic_target}

    def _optimizers(self) -> dict:
        return {"actor": self.opt_actor, "critic": self.opt_critic}

    def _scalars(self) -> dict:
        return {}

    state_arrays = SacAgent.state_arrays
    load_state_arrays = SacAgent.load_state_arrays
    save = SacAgent.save


AGENT_CLASSES = {"sacl": SaclAgent, "sac": SacAgent, "ddpg": DdpgAgent}


def make_agent(algorithm: str, obs_dim: int, act_dim: int, cfg: TrainConfig):
    try:
        cls = AGENT_CLASSES[algorithm]
    except KeyError:
        raise ValueError(f"unknown algorithm {algorithm!r}; choose from {ALGORITHMS}") from None
    return cls(obs_dim, act_dim, cfg)


def load_agent(path):
    arrays, meta = load_checkpoint(path)
    names = {f.name for f in fields(TrainConfig)}
    cfg = TrainConfig(**{k: v for k, v in meta["config"].items() if k in names})
    agent = make_agent(meta["algorithm"], meta["obs_dim"], meta["act_dim"], cfg)
    agent.load_state_arrays(arrays, meta)
    if isinstance(agent, SaclAgent) and "horizon" in meta:
        agent.set_horizon(meta["horizon"])
    return agent


# --- training and evaluation loops ------------------------------------------

METRIC_FIELDS = ("episode", "reward", "cost", "ud", "vvn", "vva", "lambda", "alpha")


def run_episode(agent, env, scenario, seed: int, mode: str, buffer=None, cfg=None,
                step_counter=None, trace: bool = False) -> dict:
    """Roll out one episode; when ``buffer`` is given, store transitions and learn."""
    state = env.reset(scenario, seed=seed)
    totals = {"reward": 0.0, "cost": 0.0, "ud": 0.0, "vvn": 0, "vva": 0.0, "aux": 0.0}
    steps = []
    done = False
    while not done:
        s = state.vector
        if buffer is not None and step_counter[0] < cfg.warmup:
            u = agent.random_action()
        else:
            u = agent.act(s, mode)
        out = env.step(to_env_action(u, env))
        info = out.info
        totals["reward"] += out.reward
        totals["cost"] += info["energy_cost"]
        totals["ud"] += info["ud_kwh"]
        totals["vvn"] += info["vvn"]
        totals["vva"] += info["vva"]
        totals["aux"] += out.aux_cost
        if buffer is not None:
            buffer.push(Transition(s, u, out.reward, out.aux_cost, out.next_state.vector, out.done))
            step_counter[0] += 1
            if step_counter[0] >= cfg.warmup and len(buffer) >= cfg.batch_size:
                for _ in range(cfg.updates_per_step):
                    agent.update(buffer)
        if trace:
            steps.append({
                "t": info["t"],
                "vvn": info["vvn"],
                "vva": info["vva"],
                "v_min": float(info["voltages"].min()),
                "v_max": float(info["voltages"].max()),
                "station_net_kw": [float(x) for x in info["station_net_kw"]],
                "buy": float(scenario.buy[info["t"]]),
                "sell": float(scenario.sell[info["t"]]),
                "solar_kw_per_kwp": float(env.solar[info["t"]]),
                "injections_p": [float(x) for x in info["injections_p"]],
                "injections_q": [float(x) for x in info["injections_q"]],
                "voltages": [float(x) for x in info["voltages"]],
            })
        state = out.next_state
        done = out.done
    if trace:
        totals["steps"] = steps
    return totals


def train(agent, env, cfg: TrainConfig, scenarios, checkpoint_dir=None, on_episode=None) -> tuple:
    """Train for ``cfg.episodes`` episodes, cycling over ``scenarios``.

    Returns ``(metrics, checkpoints)`` where ``metrics`` holds one record per
    episode and ``checkpoints`` lists written checkpoint paths (the initial
    one, then the final one).
    """
    if env.obs_dim != agent.obs_dim or env.act_dim != agent.act_dim:
        raise ValueError(
            f"agent dims ({agent.obs_dim}, {agent.act_dim}) do not match env ({env.obs_dim}, {env.act_dim})"
        )
    if isinstance(agent, SaclAgent):
        agent.set_horizon(env.config.horizon)
    scenarios = list(scenarios)
    buffer = ReplayBuffer(agent.obs_dim, agent.act_dim,
                          min(cfg.buffer_size, max(cfg.episodes, 1) * env.config.horizon))
    checkpoints = []
    if checkpoint_dir is not None:
        checkpoints.append(save_agent(agent, Path(checkpoint_dir) / "initial.npz", env))
    metrics = []
    counter = [0]
    for ep in range(cfg.episodes):
        scenario = scenarios[ep % len(scenarios)]
        totals = run_episode(agent, env, scenario, seed=cfg.seed * 1_000_003 + ep, mode="explore",
                             buffer=buffer, cfg=cfg, step_counter=counter)
        record = {
            "episode": ep + 1,
            "reward": totals["reward"],
            "cost": totals["cost"],
            "ud": totals["ud"],
            "vvn": totals["vvn"],
            "vva": totals["vva"],
            "lambda": agent.lam,
            "alpha": agent.alpha,
        }
        metrics.append(record)
        if on_episode is not None:
            on_episode(record)
    if checkpoint_dir is not None and cfg.episodes > 0:
        checkpoints.append(save_agent(agent, Path(checkpoint_dir) / "final.npz", env))
    return metrics, checkpoints


def save_agent(agent, path, env=None) -> Path:
    arrays, meta = agent.state_arrays()
    if env is not None:
        meta["horizon"] = env.config.horizon
    return save_checkpoint(path, arrays, meta)


def evaluate(agent, env, scenarios, seed: int = 0, trace: bool = True) -> dict:
    """Greedy rollouts; returns summed cost, UD, VVN, VVA plus per-step traces."""
    if env.obs_dim != agent.obs_dim or env.act_dim != agent.act_dim:
        raise ValueError("agent and environment dimensions differ")
    agg = {"cost": 0.0, "ud": 0.0, "vvn": 0, "vva": 0.0, "reward": 0.0, "aux": 0.0,
           "steps": len(scenarios) * env.config.horizon, "episodes": []}
    for k, sc in enumerate(scenarios):
        res = run_episode(agent, env, sc, seed=seed + k, mode="greedy", trace=trace)
        for key in ("cost", "ud", "vvn", "vva", "reward", "aux"):
            agg[key] += res[key]
        agg["episodes"].append({"scenario": sc.name, **res})
    return agg
