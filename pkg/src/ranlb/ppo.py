"""Squashed-Gaussian PPO actor-critic on top of :mod:`ranlb.nn`.

The actor outputs the Gaussian mean of a pre-squash action ``u``; the
executed action is ``tanh(u)`` in (-1, 1)^M. The log-std is a free vector
(optionally a second actor head). Gradients of the PPO objective are worked
out by hand and pushed through :meth:`DenseNet.backward`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .config import PPOHyperparams
from .nn import Adam, DenseNet, check_format, clip_global_norm

log = logging.getLogger(__name__)

LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0
SQUASH_EPS = 1e-6
_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


class NonFiniteLoss(RuntimeError):
    pass


# ---------------------------------------------------------------- densities

def gaussian_log_prob(u, mu, log_std):
    """Sum over the last axis of log N(u; mu, exp(log_std)^2)."""
    z = (u - mu) * np.exp(-log_std)
    return np.sum(-0.5 * z * z - log_std - _HALF_LOG_2PI, axis=-1)


def squash_correction(a):
    return np.sum(np.log(1.0 - a * a + SQUASH_EPS), axis=-1)


def squashed_log_prob(u, mu, log_std):
    """log pi(a) for a = tanh(u), including the change-of-variables term."""
    return gaussian_log_prob(u, mu, log_std) - squash_correction(np.tanh(u))


def gaussian_entropy(log_std):
    """Entropy of the pre-squash diagonal Gaussian."""
    return np.sum(log_std + 0.5 + _HALF_LOG_2PI, axis=-1)


# ---------------------------------------------------------------- policy

class ActorCritic:
    def __init__(self, obs_dim, act_dim, hyper: PPOHyperparams, rng):
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.state_dependent_std = hyper.state_dependent_std
        out = 2 * act_dim if self.state_dependent_std else act_dim
        self.actor = DenseNet((obs_dim, *hyper.hidden, out), rng, out_scale=0.01)
        self.critic = DenseNet((obs_dim, *hyper.hidden, 1), rng)
        self.log_std = np.full(act_dim, float(hyper.init_log_std))
        if self.state_dependent_std:
            self.actor.params[-1][act_dim:] += hyper.init_log_std

    def parameters(self):
        """Flat list of every trainable array (mutated in place by Adam)."""
        ps = self.actor.params + self.critic.params
        return ps if self.state_dependent_std else ps + [self.log_std]

    def bump(self):
        self.actor.version += 1
        self.critic.version += 1

    def heads(self, obs):
        out, cache = self.actor.forward(obs)
        if self.state_dependent_std:
            mu, raw = out[..., : self.act_dim], out[..., self.act_dim:]
        else:
            mu, raw = out, np.broadcast_to(self.log_std, out.shape)
        return mu, np.clip(raw, LOG_STD_MIN, LOG_STD_MAX), raw, cache

    def value(self, obs):
        v = self.critic(obs)
        return v[..., 0]

    def sample_action(self, obs, rng):
        """Return ``(u, a, log_prob, value)`` for one observation."""
        mu, log_std, _, _ = self.heads(obs)
        u = mu + np.exp(log_std) * rng.standard_normal(self.act_dim)
        a = np.tanh(u)
        return u, a, float(squashed_log_prob(u, mu, log_std)), float(self.value(obs))

    def act_deterministic(self, obs):
        mu, _, _, _ = self.heads(obs)
        return np.tanh(mu)

    # -------------------------------------------------------------- io

    def to_arrays(self):
        out = {"format": np.array("ranlb-densenet"), "version": np.array(1)}
        out.update(self.actor.to_arrays())
        out.update(self.critic.to_arrays("critic_"))
        out["log_std"] = self.log_std
        out["state_dependent_std"] = np.array(self.state_dependent_std)
        return out

    @classmethod
    def from_arrays(cls, data):
        check_format(data)
        ac = cls.__new__(cls)
        ac.actor = DenseNet.from_arrays(data)
        ac.critic = DenseNet.from_arrays(data, "critic_")
        ac.log_std = np.array(data["log_std"], dtype=float)
        ac.state_dependent_std = bool(data["state_dependent_std"])
        ac.obs_dim = ac.actor.widths[0]
        ac.act_dim = ac.log_std.shape[0]
        return ac


def sample_action(policy: ActorCritic, obs, rng):
    return policy.sample_action(obs, rng)


# ---------------------------------------------------------------- rollouts

@dataclass
class RolloutBuffer:
    obs: list = field(default_factory=list)
    u: list = field(default_factory=list)
    a: list = field(default_factory=list)
    log_prob: list = field(default_factory=list)
    reward: list = field(default_factory=list)
    value: list = field(default_factory=list)
    done: list = field(default_factory=list)
    advantages: np.ndarray | None = None
    targets: np.ndarray | None = None

    def add(self, obs, u, a, log_prob, reward, value, done):
        self.obs.append(obs)
        self.u.append(u)
        self.a.append(a)
        self.log_prob.append(log_prob)
        self.reward.append(reward)
        self.value.append(value)
        self.done.append(done)

    def __len__(self):
        return len(self.reward)

    def arrays(self):
        return {
            "obs": np.asarray(self.obs, dtype=float),
            "u": np.asarray(self.u, dtype=float),
            "log_prob": np.asarray(self.log_prob, dtype=float),
            "adv": self.advantages,
            "tgt": self.targets,
        }


def compute_gae(rewards, values, dones, gamma, lam, bootstrap=0.0):
    """GAE advantages and value targets.

    ``values[t]`` is V(s_t); ``bootstrap`` is V of the state after the last
    sample (ignored when that sample is terminal). A done flag zeroes both the
    next-state value and the advantage recursion across the boundary.
    """
    r = np.asarray(rewards, dtype=float)
    v = np.asarray(values, dtype=float)
    d = np.asarray(dones, dtype=bool)
    T = r.shape[0]
    adv = np.zeros(T)
    nxt_v = float(bootstrap)
    running = 0.0
    for t in range(T - 1, -1, -1):
        nonterm = 0.0 if d[t] else 1.0
        delta = r[t] + gamma * nxt_v * nonterm - v[t]
        running = delta + gamma * lam * nonterm * running
        adv[t] = running
        nxt_v = v[t]
    return adv, adv + v


def standardize(x):
    x = np.asarray(x, dtype=float)
    s = x.std()
    return (x - x.mean()) / (s if s > 0 else 1.0)


# ---------------------------------------------------------------- loss

def clipped_surrogate(ratio, adv, clip_eps):
    """Per-sample ``min(r A, clip(r) A)`` and its derivative w.r.t. log-ratio.

    The derivative is ``r A`` where the unclipped branch is selected and 0
    where the clipped (constant) branch binds.
    """
    ratio = np.asarray(ratio, dtype=float)
    adv = np.asarray(adv, dtype=float)
    s1 = ratio * adv
    s2 = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * adv
    obj = np.minimum(s1, s2)
    inside = (ratio >= 1.0 - clip_eps) & (ratio <= 1.0 + clip_eps)
    active = (s1 <= s2) | inside
    return obj, np.where(active, s1, 0.0), ~active


@dataclass
class LossInfo:
    policy_loss: float
    value_loss: float
    entropy: float
    approx_kl: float
    clip_fraction: float
    total: float


def ppo_loss(policy: ActorCritic, batch, hyper: PPOHyperparams, with_grads=True):
    """Loss ``-(L_clip + c_ent H - c_v L_V)`` on a minibatch and its gradients.

    ``batch`` holds ``obs, u, log_prob (old), adv, tgt``. Returns
    ``(LossInfo, grads)``; grads align with ``policy.parameters()``.
    """
    obs, u, old_lp, adv, tgt = batch["obs"], batch["u"], batch["log_prob"], batch["adv"], batch["tgt"]
    B = obs.shape[0]
    mu, log_std, raw_ls, a_cache = policy.heads(obs)
    new_lp = squashed_log_prob(u, mu, log_std)
    log_ratio = new_lp - old_lp
    ratio = np.exp(log_ratio)
    obj, dobj_dlp, clipped = clipped_surrogate(ratio, adv, hyper.clip_eps)
    policy_loss = -float(obj.mean())
    ent = gaussian_entropy(log_std)
    entropy = float(ent.mean())
    v, c_cache = policy.critic.forward(obs)
    v = v[:, 0]
    err = v - tgt
    value_loss = float(np.mean(err * err))
    total = policy_loss - hyper.entropy_coef * entropy + hyper.value_coef * value_loss
    info = LossInfo(policy_loss, value_loss, entropy, float(np.mean(old_lp - new_lp)),
                    float(clipped.mean()), total)
    if not with_grads:
        return info, None

    # d total / d new_lp, then through the Gaussian log-density
    g_lp = -dobj_dlp / B
    sig_inv = np.exp(-log_std)
    z = (u - mu) * sig_inv
    g_mu = g_lp[:, None] * z * sig_inv
    g_ls = g_lp[:, None] * (z * z - 1.0) - hyper.entropy_coef / B
    in_range = (raw_ls >= LOG_STD_MIN) & (raw_ls <= LOG_STD_MAX)
    g_ls = g_ls * in_range
    if policy.state_dependent_std:
        actor_grads = policy.actor.backward(a_cache, np.concatenate([g_mu, g_ls], axis=1))
        ls_grads = []
    else:
        actor_grads = policy.actor.backward(a_cache, g_mu)
        ls_grads = [g_ls.sum(axis=0)]
    critic_grads = policy.critic.backward(c_cache, (hyper.value_coef * 2.0 * err / B)[:, None])
    return info, actor_grads + critic_grads + ls_grads


@dataclass
class UpdateInfo:
    policy_loss: float = 0.0
    value_loss: float = 0.0
    entropy: float = 0.0
    approx_kl: float = 0.0
    clip_fraction: float = 0.0
    epochs: int = 0
    steps: int = 0
    grad_norm: float = 0.0


class PPOAgent:
    def __init__(self, obs_dim, act_dim, hyper: PPOHyperparams | None = None, seed=0):
        self.hyper = hyper or PPOHyperparams()
        ss = np.random.SeedSequence(seed)
        init_ss, act_ss, shuf_ss = ss.spawn(3)
        self.policy = ActorCritic(obs_dim, act_dim, self.hyper, np.random.default_rng(init_ss))
        self.act_rng = np.random.default_rng(act_ss)
        self.shuffle_rng = np.random.default_rng(shuf_ss)
        self.opt = Adam(self.policy.parameters(), lr=self.hyper.lr)
        self.obs_norm = None  # environment normalizer state stored with checkpoints

    def act(self, obs, deterministic=False):
        if deterministic:
            return self.policy.act_deterministic(obs)
        return self.policy.sample_action(obs, self.act_rng)[1]

    def update(self, buf: RolloutBuffer, bootstrap=0.0) -> UpdateInfo:
        h = self.hyper
        adv, tgt = compute_gae(buf.reward, buf.value, buf.done, h.gamma, h.gae_lambda, bootstrap)
        buf.advantages = standardize(adv)
        buf.targets = tgt
        data = buf.arrays()
        T = len(buf)
        mb = min(h.batch_size, T)
        per_epoch = min(h.minibatches, max(1, T // mb))
        info = UpdateInfo()
        stats = []
        for epoch in range(h.epochs):
            perm = self.shuffle_rng.permutation(T)
            for k in range(per_epoch):
                idx = perm[k * mb:(k + 1) * mb]
                batch = {key: val[idx] for key, val in data.items()}
                li, grads = ppo_loss(self.policy, batch, h)
                if not np.isfinite(li.total) or not all(np.all(np.isfinite(g)) for g in grads):
                    raise NonFiniteLoss(f"non-finite PPO loss at epoch {epoch}, minibatch {k}: {li}")
                grads, norm = clip_global_norm(grads, h.max_grad_norm)
                self.opt.step(self.policy.parameters(), grads)
                self.policy.bump()
                stats.append(li)
                info.grad_norm = norm
                info.steps += 1
            info.epochs = epoch + 1
            # early stop on the KL of the whole buffer under the updated policy
            kl, _ = ppo_loss(self.policy, data, h, with_grads=False)
            info.approx_kl = kl.approx_kl
            if abs(kl.approx_kl) > h.kl_target:
                break
        if stats:
            info.policy_loss = float(np.mean([s.policy_loss for s in stats]))
            info.value_loss = float(np.mean([s.value_loss for s in stats]))
            info.entropy = float(np.mean([s.entropy for s in stats]))
            info.clip_fraction = float(np.mean([s.clip_fraction for s in stats]))
        return info

    # -------------------------------------------------------------- io

    def save(self, path):
        arrays = self.policy.to_arrays()
        if self.obs_norm is not None:
            arrays.update({f"obsnorm_{k}": np.asarray(v) for k, v in self.obs_norm.items()})
        np.savez(path, **arrays)

    @classmethod
    def load(cls, path, hyper=None):
        with np.load(path) as data:
            agent = cls.__new__(cls)
            agent.hyper = hyper or PPOHyperparams()
            agent.policy = ActorCritic.from_arrays(data)
            agent.act_rng = np.random.default_rng(0)
            agent.shuffle_rng = np.random.default_rng(0)
            agent.opt = Adam(agent.policy.parameters(), lr=agent.hyper.lr)
            agent.obs_norm = None
            if "obsnorm_n" in data:
                agent.obs_norm = {k: data[f"obsnorm_{k}"] for k in ("n", "mean", "m2")}
        return agent


def episode_seed(seed, episode):
    """Deterministic environment seed of training episode ``episode``."""
    return [int(seed), int(episode)]


def train(env, total_episodes, hyper: PPOHyperparams | None = None, seed=0, agent=None, on_episode=None):
    """Roll out and update until ``total_episodes`` episodes have finished.

    Rollouts span episode boundaries; a trailing partial buffer with at least
    one minibatch is used for a final update. Returns ``(agent, log)`` where
    ``log`` has one dict per episode (the environment's episode record plus
    the diagnostics of the latest update).
    """
    hyper = hyper or PPOHyperparams()
    if agent is None:
        agent = PPOAgent(env.obs_dim, env.act_dim, hyper, seed)
    logs = []
    if total_episodes <= 0:
        return agent, logs
    buf = RolloutBuffer()
    last = UpdateInfo()
    n_updates = 0
    for ep in range(total_episodes):
        obs = env.reset(episode_seed(seed, ep))
        done = False
        while not done:
            u, a, lp, v = agent.policy.sample_action(obs, agent.act_rng)
            res = env.step(a)
            buf.add(obs, u, a, lp, res.reward, v, res.done)
            obs = res.observation
            done = res.done
            if len(buf) >= hyper.horizon:
                boot = 0.0 if done else float(agent.policy.value(obs))
                last = agent.update(buf, boot)
                n_updates += 1
                buf = RolloutBuffer()
        rec = dict(res.info["episode"])
        rec.update(episode=ep, updates=n_updates, approx_kl=last.approx_kl, entropy=last.entropy,
                   clip_fraction=last.clip_fraction)
        logs.append(rec)
        log.debug("episode %d reward %.3f", ep, rec["reward"])
        if on_episode is not None:
            on_episode(rec)
    if len(buf) >= min(hyper.batch_size, hyper.horizon):
        agent.update(buf, 0.0)
    norm = getattr(env, "observation_normalizer", None)
    if norm is not None:
        agent.obs_norm = norm.state_dict()
    return agent, logs


class BanditStub:
    """Two-state contextual bandit with a known optimum.

    Each step draws ``s`` uniformly from {0, 1} (one-hot observation); the
    reward is ``a`` in state 0 and ``-a`` in state 1 for a scalar action
    ``a`` in (-1, 1). The optimal mean reward approaches 1.
    """

    optimum = 1.0
    obs_dim = 2
    act_dim = 1

    def __init__(self, episode_length=16):
        self.episode_length = episode_length

    def _obs(self):
        o = np.zeros(2)
        o[self.s] = 1.0
        return o

    def reset(self, seed=0):
        self.rng = np.random.default_rng(np.random.SeedSequence(seed))
        self.t = 0
        self.total = 0.0
        self.s = int(self.rng.integers(2))
        return self._obs()

    def step(self, action):
        from .env import StepResult

        a = float(np.clip(np.asarray(action, dtype=float).reshape(-1)[0], -1.0, 1.0))
        r = a if self.s == 0 else -a
        self.total += r
        self.t += 1
        self.s = int(self.rng.integers(2))
        done = self.t >= self.episode_length
        info = {"episode": {"reward": self.total, "mean_reward": self.total / self.t}} if done else {}
        return StepResult(self._obs(), r, done, info)
