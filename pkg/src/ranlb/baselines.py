"""Comparison controllers: fixed A3, the utilization-threshold ReBuHa rule and
clipped double Q-learning (CDQL) over a per-cell CIO grid.

Every controller exposes ``reset()`` and ``act(obs, info) -> action`` with the
action in the environment's normalized [-1, 1]^M range; ``info`` is the
``info`` dict of the previous step (empty right after ``reset``).
"""

from __future__ import annotations

import numpy as np

from .config import CDQLParams, ReBuHaParams
from .nn import Adam, DenseNet, check_format, clip_global_norm


def cio_to_action(cio_db, cio_min, cio_max):
    return 2.0 * (np.asarray(cio_db, dtype=float) - cio_min) / (cio_max - cio_min) - 1.0


class A3Controller:
    """No CIO bias: handover is governed by the plain A3 rule."""

    def __init__(self, m):
        self.m = m

    def reset(self):
        pass

    def act(self, obs=None, info=None):
        return np.zeros(self.m)


def a3_controller(obs, m=None):
    m = len(obs) // 6 if m is None else m
    return np.zeros(m)


def rebuha_step(cio_db, eta, params: ReBuHaParams, cio_min=-6.0, cio_max=6.0):
    """One ReBuHa update of the per-cell CIOs (dB) from utilization ``eta``.

    Overloaded cells (eta > rbu_high) lower their CIO by one step and raise
    the least-loaded other cell by one step if that cell has spare capacity
    (eta < rbu_low). Every other cell relaxes one step toward 0.
    """
    cio = np.array(cio_db, dtype=float)
    eta = np.asarray(eta, dtype=float)
    if eta.shape != cio.shape:
        raise ValueError("utilization and CIO vectors must have the same length")
    step = params.cio_step
    over = eta > params.rbu_high
    boosted = np.zeros(cio.shape, dtype=bool)
    new = cio.copy()
    for i in np.flatnonzero(over):
        new[i] -= step
        others = np.delete(np.arange(cio.size), i)
        if others.size:
            j = others[np.argmin(eta[others])]  # ties -> lowest cell id
            if eta[j] < params.rbu_low:
                new[j] += step
                boosted[j] = True
    relax = ~over & ~boosted
    new[relax] = np.sign(cio[relax]) * np.maximum(np.abs(cio[relax]) - step, 0.0)
    return np.clip(new, cio_min, cio_max)


def rebuha_controller(eta, cio_db, params: ReBuHaParams | None = None, cio_min=-6.0, cio_max=6.0):
    return rebuha_step(cio_db, eta, params or ReBuHaParams(), cio_min, cio_max)


class ReBuHaController:
    """Stateful ReBuHa: keeps the current CIOs and nudges them each step.

    With ``clean_utilization`` it reads the true PRB utilization of the last
    window (a rule engine reading cell counters); otherwise it uses the
    utilization block as delivered through the lagged, lossy report pipe.
    """

    def __init__(self, m, params: ReBuHaParams | None = None, cio_min=-6.0, cio_max=6.0):
        self.m = m
        self.params = params or ReBuHaParams()
        self.cio_min, self.cio_max = cio_min, cio_max
        self.reset()

    def reset(self):
        self.cio = np.zeros(self.m)

    def act(self, obs=None, info=None):
        info = info or {}
        if self.params.clean_utilization:
            eta = info["window"].eta if "window" in info else None
        else:
            eta = info.get("observed_eta")
        if eta is not None:
            self.cio = rebuha_step(self.cio, eta, self.params, self.cio_min, self.cio_max)
        return cio_to_action(self.cio, self.cio_min, self.cio_max)


# ---------------------------------------------------------------- CDQL

class ReplayBuffer:
    def __init__(self, capacity, obs_dim, act_dim):
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim))
        self.nxt = np.zeros((capacity, obs_dim))
        self.act = np.zeros((capacity, act_dim), dtype=np.int64)
        self.rew = np.zeros(capacity)
        self.done = np.zeros(capacity)
        self.size = 0
        self.ptr = 0

    def add(self, obs, act, rew, nxt, done):
        i = self.ptr
        self.obs[i], self.act[i], self.rew[i], self.nxt[i], self.done[i] = obs, act, rew, nxt, float(done)
        self.ptr = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, n, rng):
        idx = rng.integers(0, self.size, n)
        return {"obs": self.obs[idx], "act": self.act[idx], "rew": self.rew[idx],
                "nxt": self.nxt[idx], "done": self.done[idx]}


def cdql_select(obs, q1: DenseNet, m, levels, epsilon, rng):
    """Epsilon-greedy factored choice: one level index per cell.

    Greedy picks the per-head argmax of Q1 (ties -> lowest level index).
    """
    k = len(levels)
    if epsilon > 0 and rng.random() < epsilon:
        return rng.integers(0, k, m)
    q = q1(np.asarray(obs, dtype=float)).reshape(m, k)
    return np.argmax(q, axis=1)


def cdql_targets(batch, q1_t: DenseNet, q2_t: DenseNet, m, k, gamma):
    """Per-head targets y = r + gamma (1 - done) min(Q1', Q2') at argmax Q1'."""
    n = batch["nxt"].shape[0]
    q1n = q1_t(batch["nxt"]).reshape(n, m, k)
    q2n = q2_t(batch["nxt"]).reshape(n, m, k)
    best = np.argmax(q1n, axis=2)
    rows, heads = np.arange(n)[:, None], np.arange(m)[None, :]
    nxt = np.minimum(q1n[rows, heads, best], q2n[rows, heads, best])
    return batch["rew"][:, None] + gamma * (1.0 - batch["done"])[:, None] * nxt


def _regress(net: DenseNet, opt: Adam, obs, act, y, m, k, max_norm):
    n = obs.shape[0]
    q, cache = net.forward(obs)
    q = q.reshape(n, m, k)
    rows, heads = np.arange(n)[:, None], np.arange(m)[None, :]
    err = q[rows, heads, act] - y
    loss = float(np.mean(err * err))
    g = np.zeros_like(q)
    g[rows, heads, act] = 2.0 * err / err.size
    grads = net.backward(cache, g.reshape(n, m * k))
    grads, _ = clip_global_norm(grads, max_norm)
    opt.step(net.params, grads)
    net.version += 1
    return loss


def cdql_update(batch, q1, q2, q1_t, q2_t, opt1, opt2, m, k, gamma, max_norm=10.0):
    """One regression step of both online nets toward the clipped target."""
    y = cdql_targets(batch, q1_t, q2_t, m, k, gamma)
    l1 = _regress(q1, opt1, batch["obs"], batch["act"], y, m, k, max_norm)
    l2 = _regress(q2, opt2, batch["obs"], batch["act"], y, m, k, max_norm)
    return l1, l2


class CDQLAgent:
    """Clipped double Q-learning with factored per-cell heads."""

    def __init__(self, obs_dim, m, params: CDQLParams | None = None, seed=0, cio_min=-6.0, cio_max=6.0):
        self.params = p = params or CDQLParams()
        if min(p.levels) < cio_min or max(p.levels) > cio_max:
            raise ValueError("CDQL levels must lie within the CIO bounds")
        self.m, self.k = m, len(p.levels)
        self.cio_min, self.cio_max = cio_min, cio_max
        init, sel, smp = np.random.SeedSequence(seed).spawn(3)
        irng = np.random.default_rng(init)
        widths = (obs_dim, *p.hidden, m * self.k)
        self.q1 = DenseNet(widths, irng)
        self.q2 = DenseNet(widths, irng)
        self.q1_t, self.q2_t = self.q1.copy(), self.q2.copy()
        self.opt1 = Adam(self.q1.params, lr=p.lr)
        self.opt2 = Adam(self.q2.params, lr=p.lr)
        self.rng = np.random.default_rng(sel)
        self.sample_rng = np.random.default_rng(smp)
        self.replay = ReplayBuffer(p.replay_capacity, obs_dim, m)
        self.steps = 0
        self.epsilon = 0.0
        self.obs_norm = None

    def levels_to_action(self, idx):
        return cio_to_action(np.asarray(self.params.levels)[idx], self.cio_min, self.cio_max)

    def select(self, obs, epsilon=None):
        eps = self.epsilon if epsilon is None else epsilon
        return cdql_select(obs, self.q1, self.m, self.params.levels, eps, self.rng)

    def reset(self):
        pass

    def act(self, obs, info=None):
        return self.levels_to_action(self.select(obs, 0.0))

    def observe(self, obs, idx, reward, nxt, done):
        p = self.params
        self.replay.add(obs, idx, reward, nxt, done)
        self.steps += 1
        loss = None
        if self.replay.size >= p.batch_size:
            batch = self.replay.sample(p.batch_size, self.sample_rng)
            loss = cdql_update(batch, self.q1, self.q2, self.q1_t, self.q2_t, self.opt1, self.opt2,
                               self.m, self.k, p.gamma, p.max_grad_norm)
        if self.steps % p.target_sync == 0:
            self.q1_t, self.q2_t = self.q1.copy(), self.q2.copy()
        return loss

    def save(self, path):
        arrays = {"format": np.array("ranlb-densenet"), "version": np.array(1)}
        arrays.update(self.q1.to_arrays())
        arrays.update(self.q2.to_arrays("q2_"))
        arrays["levels"] = np.asarray(self.params.levels)
        if self.obs_norm is not None:
            arrays.update({f"obsnorm_{k}": np.asarray(v) for k, v in self.obs_norm.items()})
        np.savez(path, **arrays)

    @classmethod
    def load(cls, path, params: CDQLParams | None = None, cio_min=-6.0, cio_max=6.0):
        with np.load(path) as data:
            check_format(data)
            q1 = DenseNet.from_arrays(data)
            q2 = DenseNet.from_arrays(data, "q2_")
            levels = tuple(float(v) for v in data["levels"])
            norm = {k: data[f"obsnorm_{k}"] for k in ("n", "mean", "m2")} if "obsnorm_n" in data else None
        p = params or CDQLParams()
        p = CDQLParams(**{**p.__dict__, "levels": levels, "hidden": q1.widths[1:-1]})
        agent = cls(q1.widths[0], q1.widths[-1] // len(levels), p, 0, cio_min, cio_max)
        agent.q1, agent.q2 = q1, q2
        agent.q1_t, agent.q2_t = q1.copy(), q2.copy()
        agent.obs_norm = norm
        return agent


def epsilon_at(step, total_steps, params: CDQLParams):
    horizon = max(1.0, params.eps_decay_fraction * total_steps)
    frac = min(1.0, step / horizon)
    return params.eps_start + frac * (params.eps_end - params.eps_start)


def train_cdql(env, total_episodes, params: CDQLParams | None = None, seed=0, agent=None, on_episode=None):
    """Epsilon-greedy CDQL training; one gradient step per environment step."""
    from .ppo import episode_seed

    params = params or CDQLParams()
    if agent is None:
        agent = CDQLAgent(env.obs_dim, env.act_dim, params, seed, env.cfg.cio_min, env.cfg.cio_max)
    total_steps = total_episodes * env.cfg.episode_length
    logs = []
    for ep in range(total_episodes):
        obs = env.reset(episode_seed(seed, ep))
        done = False
        losses = []
        while not done:
            agent.epsilon = epsilon_at(agent.steps, total_steps, params)
            idx = agent.select(obs)
            res = env.step(agent.levels_to_action(idx))
            loss = agent.observe(obs, idx, res.reward, res.observation, res.done)
            if loss is not None:
                losses.append(loss[0])
            obs, done = res.observation, res.done
        rec = dict(res.info["episode"])
        rec.update(episode=ep, epsilon=agent.epsilon, q_loss=float(np.mean(losses)) if losses else 0.0)
        logs.append(rec)
        if on_episode is not None:
            on_episode(rec)
    agent.obs_norm = env.observation_normalizer.state_dict()
    return agent, logs
