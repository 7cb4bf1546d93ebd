import math

import numpy as np
import pytest
from scipy import stats

from ranlb.config import PPOHyperparams
from ranlb.ppo import (ActorCritic, BanditStub, PPOAgent, RolloutBuffer, clipped_surrogate, compute_gae,
                       gaussian_entropy, ppo_loss, squashed_log_prob, standardize, train)

SMALL = PPOHyperparams(hidden=(16, 16), horizon=64, batch_size=16, minibatches=4, epochs=3)


def brute_gae(r, v, d, gamma, lam, boot):
    T = len(r)
    nxt = np.append(v[1:], boot)
    delta = [r[t] + gamma * nxt[t] * (0.0 if d[t] else 1.0) - v[t] for t in range(T)]
    adv = np.zeros(T)
    for t in range(T):
        acc, coef = 0.0, 1.0
        for k in range(t, T):
            acc += coef * delta[k]
            if d[k]:
                break
            coef *= gamma * lam
        adv[t] = acc
    return adv


def test_gae_examples():
    adv, tgt = compute_gae([1.0, 1.0], [0.0, 0.0], [False, True], 0.5, 1.0)
    assert adv.tolist() == [1.5, 1.0] and tgt.tolist() == [1.5, 1.0]
    r, v = np.array([0.3, -1.0, 2.0]), np.array([0.1, 0.5, -0.2])
    adv, _ = compute_gae(r, v, [False, False, False], 0.9, 0.0, bootstrap=0.7)
    assert np.allclose(adv, r + 0.9 * np.array([0.5, -0.2, 0.7]) - v, atol=1e-15)
    adv, _ = compute_gae(np.zeros(5), np.zeros(5), [False] * 5, 0.99, 0.95)
    assert np.all(adv == 0)


def test_gae_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(50):
        T = int(rng.integers(1, 33))
        r, v = rng.normal(size=T), rng.normal(size=T)
        d = rng.random(T) < 0.15
        boot = rng.normal()
        adv, _ = compute_gae(r, v, d, 0.97, 0.9, boot)
        assert np.max(np.abs(adv - brute_gae(r, v, d, 0.97, 0.9, boot))) < 1e-10


def test_log_prob_matches_density_oracle():
    mu, ls, u = np.array([0.3, -1.2]), np.array([-0.5, 0.2]), np.array([0.9, -0.4])
    a = np.tanh(u)
    ref = sum(stats.norm.logpdf(u[i], mu[i], math.exp(ls[i])) - math.log(1 - a[i] ** 2 + 1e-6) for i in range(2))
    assert squashed_log_prob(u, mu, ls) == pytest.approx(ref, abs=1e-10)


def test_sample_action_properties():
    pol = ActorCritic(4, 3, SMALL, np.random.default_rng(0))
    rng = np.random.default_rng(1)
    for _ in range(500):
        u, a, lp, v = pol.sample_action(rng.normal(size=4) * 5, rng)
        assert np.all(np.abs(a) <= 1) and math.isfinite(lp) and math.isfinite(v)
    pol.log_std[:] = -5.0
    obs = np.ones(4)
    u, a, _, _ = pol.sample_action(obs, rng)
    assert np.allclose(a, pol.act_deterministic(obs), atol=0.05)
    pol.actor.load_params([np.zeros_like(p) for p in pol.actor.params])
    assert np.all(pol.act_deterministic(obs) == 0)


def test_entropy_decreases_with_log_std():
    assert gaussian_entropy(np.array([-1.0, 0.0])) < gaussian_entropy(np.array([-0.5, 0.0]))
    assert gaussian_entropy(np.zeros(1)) == pytest.approx(0.5 * math.log(2 * math.pi * math.e))


def test_clip_branches():
    obj, grad, clipped = clipped_surrogate(np.array([1.5, 0.5, 1.0]), np.array([1.0, -1.0, 2.0]), 0.2)
    assert obj[0] == pytest.approx(1.2, abs=1e-12) and obj[1] == pytest.approx(-0.8, abs=1e-12)
    assert grad[0] == 0.0 and grad[1] == 0.0 and clipped[:2].all()
    assert grad[2] == 2.0 and not clipped[2]
    # the unclipped branch is chosen by the min when it is the pessimistic one
    obj, grad, clipped = clipped_surrogate(np.array([0.5, 1.5]), np.array([1.0, -1.0]), 0.2)
    assert obj.tolist() == [0.5, -1.5] and grad.tolist() == [0.5, -1.5] and not clipped.any()


def _batch(pol, rng, n=12):
    obs = rng.normal(size=(n, pol.obs_dim))
    u = rng.normal(size=(n, pol.act_dim))
    mu, ls, _, _ = pol.heads(obs)
    lp = squashed_log_prob(u, mu, ls)
    return {"obs": obs, "u": u, "log_prob": lp + rng.normal(scale=0.3, size=n),
            "adv": standardize(rng.normal(size=n)), "tgt": rng.normal(size=n)}


def test_ratio_one_means_minus_mean_advantage(rng):
    pol = ActorCritic(3, 2, SMALL, rng)
    b = _batch(pol, rng)
    mu, ls, _, _ = pol.heads(b["obs"])
    b["log_prob"] = squashed_log_prob(b["u"], mu, ls)
    info, _ = ppo_loss(pol, b, SMALL)
    assert info.policy_loss == pytest.approx(-b["adv"].mean(), abs=1e-12)
    assert info.approx_kl == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("sds", [False, True])
def test_ppo_loss_gradient_check(sds):
    hyper = PPOHyperparams(hidden=(5,), state_dependent_std=sds)
    rng = np.random.default_rng(3)
    pol = ActorCritic(3, 2, hyper, rng)
    for p in pol.actor.params:
        p += rng.normal(scale=0.3, size=p.shape)
    b = _batch(pol, rng)
    _, grads = ppo_loss(pol, b, hyper)
    h = 1e-6
    worst = 0.0
    for p, g in zip(pol.parameters(), grads):
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(0, flat.size, max(1, flat.size // 7)):
            old = flat[i]
            flat[i] = old + h
            pol.bump()
            up = ppo_loss(pol, b, hyper, with_grads=False)[0].total
            flat[i] = old - h
            pol.bump()
            dn = ppo_loss(pol, b, hyper, with_grads=False)[0].total
            flat[i] = old
            pol.bump()
            num = (up - dn) / (2 * h)
            worst = max(worst, abs(num - gflat[i]) / max(abs(num), abs(gflat[i]), 1e-6))
    assert worst < 1e-4


def test_zero_advantage_moves_policy_only_by_entropy():
    rng = np.random.default_rng(0)
    pol = ActorCritic(3, 2, SMALL, rng)
    b = _batch(pol, rng)
    b["adv"] = np.zeros(12)
    _, grads = ppo_loss(pol, b, SMALL)
    n_actor = len(pol.actor.params)
    assert all(np.all(g == 0) for g in grads[:n_actor])
    assert np.allclose(grads[-1], -SMALL.entropy_coef)
    assert any(np.any(g != 0) for g in grads[n_actor:-1])


def _filled_buffer(agent, n, rng):
    buf = RolloutBuffer()
    for t in range(n):
        o = rng.normal(size=agent.policy.obs_dim)
        u, a, lp, v = agent.policy.sample_action(o, rng)
        buf.add(o, u, a, lp, float(a.sum()), v, t % 16 == 15)
    return buf


def test_kl_target_zero_stops_after_first_epoch():
    hyper = PPOHyperparams(hidden=(16,), horizon=64, batch_size=16, minibatches=4, epochs=10, kl_target=0.0)
    agent = PPOAgent(3, 2, hyper, seed=0)
    info = agent.update(_filled_buffer(agent, 64, np.random.default_rng(1)))
    assert info.epochs == 1 and info.steps == 4


def test_advantages_standardized():
    agent = PPOAgent(3, 2, SMALL, seed=0)
    buf = _filled_buffer(agent, 64, np.random.default_rng(2))
    agent.update(buf)
    assert abs(buf.advantages.mean()) < 1e-10 and abs(buf.advantages.std() - 1) < 1e-10


def test_train_zero_episodes_and_determinism():
    env = BanditStub(8)
    agent, logs = train(env, 0, SMALL, seed=0)
    assert logs == [] and isinstance(agent, PPOAgent)
    a = train(BanditStub(8), 12, SMALL, seed=4)[1]
    b = train(BanditStub(8), 12, SMALL, seed=4)[1]
    assert a == b


def test_checkpoint_roundtrip(tmp_path):
    agent = PPOAgent(3, 2, SMALL, seed=0)
    agent.obs_norm = {"n": 3, "mean": np.ones(3), "m2": np.ones(3)}
    agent.save(tmp_path / "p.npz")
    back = PPOAgent.load(tmp_path / "p.npz", SMALL)
    o = np.array([0.1, 0.2, -0.3])
    assert np.array_equal(back.act(o, deterministic=True), agent.act(o, deterministic=True))
    assert back.obs_norm["n"] == 3


def test_non_finite_loss_aborts():
    from ranlb.ppo import NonFiniteLoss

    agent = PPOAgent(3, 2, SMALL, seed=0)
    buf = _filled_buffer(agent, 64, np.random.default_rng(0))
    buf.reward[5] = float("nan")
    with pytest.raises(NonFiniteLoss):
        agent.update(buf)
