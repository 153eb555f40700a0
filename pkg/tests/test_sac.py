import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import norm

from cellfree_ho import nn, sac
from cellfree_ho.config import ScenarioConfig

HYPER64 = dict(dtype="float64")


def small_params(rng, obs_dim=6, act_dim=2, **kw):
    hyper = sac.SacHyper(hidden=(16, 16), batch=8, buffer=64, **{**HYPER64, **kw})
    return sac.init_params(obs_dim, act_dim, hyper, rng), hyper


def fill_buffer(buf, rng, n, reward=None):
    for _ in range(n):
        r = rng.standard_normal() if reward is None else reward
        buf.add(rng.uniform(-1, 1, buf.obs_dim), rng.uniform(-1, 1, buf.act_dim), r,
                rng.uniform(-1, 1, buf.obs_dim), rng.random() < 0.1)


def test_log_prob_at_origin():
    actor = nn.Mlp((1, 2), [np.zeros((1, 2))], [np.zeros(2)])
    s = sac.actor_forward_sample(actor, np.zeros(1), eps=np.zeros(1))
    assert s.action[0] == 0.0
    assert s.log_prob == pytest.approx(-0.5 * math.log(2 * math.pi) - 1e-6, abs=1e-12)


@settings(max_examples=50)
@given(st.floats(-2, 2), st.floats(-3, 1.5), st.floats(-3, 3))
def test_log_prob_change_of_variables(mu, log_std, eps):
    actor = nn.Mlp((1, 2), [np.zeros((1, 2))], [np.array([mu, log_std])])
    s = sac.actor_forward_sample(actor, np.zeros(1), eps=np.array([eps]))
    a = float(s.action[0])
    if abs(a) > 0.999:
        return
    # density of a = tanh(u) via the inverse map and its Jacobian
    u = math.atanh(a)
    dens = norm.pdf(u, mu, math.exp(log_std)) / (1 - a * a)
    # the 1e-6 stabilizer shifts the log-density by at most 1e-6 / (1 - a^2)
    assert float(s.log_prob) == pytest.approx(math.log(dens), abs=1e-6 / (1 - a * a) + 1e-9)


def test_log_std_clamp():
    actor = nn.Mlp((1, 2), [np.zeros((1, 2))], [np.array([0.0, 50.0])])
    s = sac.actor_forward_sample(actor, np.zeros(1), eps=np.array([0.3]))
    assert s.log_std[0] == sac.LOG_STD_MAX and s.clamped[0]


def test_deterministic_and_range(rng):
    p, _ = small_params(rng)
    o = rng.uniform(-1, 1, 6)
    a, _ = sac.actor_sample(p.actor, o, deterministic=True)
    out = nn.forward(p.actor, o)[0]
    np.testing.assert_allclose(a, np.tanh(out[:2]))
    np.testing.assert_allclose(sac.deterministic_action(p.actor, o), a, rtol=1e-12)
    acts, _ = sac.actor_sample(p.actor, rng.uniform(-1, 1, (500, 6)), rng)
    assert np.all(np.abs(acts) < 1)


def test_critic_target_examples(rng):
    p, hyper = small_params(rng, obs_dim=1, act_dim=1, gamma=0.99, reward_scale=1.0)
    for q in (p.q1_targ, p.q2_targ):
        for w in q.weights:
            w[:] = 0.0
        q.biases[-1][:] = 2.0
    p.log_alpha = -math.inf
    batch = {"next_obs": np.zeros((2, 1)), "rew": np.array([1.0, 1.0]), "done": np.array([0.0, 1.0])}
    np.testing.assert_allclose(sac.critic_target(batch, p, hyper, rng), [2.98, 1.0])
    scaled = sac.SacHyper(**{**hyper.__dict__, "reward_scale": 0.1})
    np.testing.assert_allclose(sac.critic_target(batch, p, scaled, rng), [2.08, 0.1])


def test_min_over_twins(rng):
    p, hyper = small_params(rng)
    o = rng.uniform(-1, 1, (50, 6))
    a = rng.uniform(-1, 1, (50, 2))
    q1, _ = sac.q_value(p.q1_targ, o, a)
    q2, _ = sac.q_value(p.q2_targ, o, a)
    batch = {"next_obs": o, "rew": np.zeros(50), "done": np.zeros(50)}
    p.log_alpha = -math.inf
    eps = rng.standard_normal((50, 2))
    y = sac.critic_target(batch, p, hyper, None, eps=eps)
    s = sac.actor_forward_sample(p.actor, o, eps=eps)
    t1, _ = sac.q_value(p.q1_targ, o, s.action)
    t2, _ = sac.q_value(p.q2_targ, o, s.action)
    assert np.all(y <= hyper.gamma * t1 + 1e-12) and np.all(y <= hyper.gamma * t2 + 1e-12)


def test_perfect_critic_zero_gradient(rng):
    p, _ = small_params(rng)
    batch = {"obs": rng.uniform(-1, 1, (8, 6)), "act": rng.uniform(-1, 1, (8, 2))}
    y, _ = sac.q_value(p.q1, batch["obs"], batch["act"])
    loss, grads = sac.critic_loss_grads(p.q1, batch, y)
    assert loss == 0.0 and all(np.all(g == 0) for g in grads)


def test_critic_loss_decreases(rng):
    p, hyper = small_params(rng, lr=1e-3)
    buf = sac.ReplayBuffer(64, 6, 2)
    fill_buffer(buf, rng, 64)
    batch = buf.sample(32, rng)
    y = rng.standard_normal(32)
    losses = [sac.critic_update(batch, p, hyper, rng, y=y) for _ in range(100)]
    assert losses[-1] < losses[0]
    assert np.all(np.diff(losses) < 0)
    assert not np.allclose(p.q1.weights[0], p.q2.weights[0])


def test_zero_rewards_drive_critics_to_zero(rng):
    # small discount keeps the clipped double-Q underestimation bias well below the tolerance
    p, hyper = small_params(rng, lr=1e-3, gamma=0.2, tau=0.05)
    buf = sac.ReplayBuffer(64, 6, 2)
    fill_buffer(buf, rng, 64, reward=0.0)
    p.log_alpha = -math.inf
    for _ in range(5000):
        batch = buf.sample(64, rng)
        sac.critic_update(batch, p, hyper, rng)
        sac.polyak_update(p, hyper)
    full = {k: getattr(buf, k)[:64] for k in ("obs", "act")}
    for q in (p.q1, p.q2):
        v, _ = sac.q_value(q, full["obs"], full["act"])
        assert np.mean(v ** 2) < 1e-3


def actor_loss_value(p, obs, eps, alpha):
    return sac.actor_loss_grads(p.actor, p.q1, p.q2, obs, alpha, eps=eps)[0]


def test_actor_gradient_finite_differences(rng):
    p, _ = small_params(rng, obs_dim=3, act_dim=2)
    obs = rng.uniform(-1, 1, (4, 3))
    eps = rng.standard_normal((4, 2))
    _, grads, _ = sac.actor_loss_grads(p.actor, p.q1, p.q2, obs, 0.3, eps=eps)
    for P, G in zip(p.actor.params, grads):
        num = np.zeros_like(P)
        it = np.nditer(P, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = P[i]
            P[i] = old + 1e-6
            lp = actor_loss_value(p, obs, eps, 0.3)
            P[i] = old - 1e-6
            lm = actor_loss_value(p, obs, eps, 0.3)
            P[i] = old
            num[i] = (lp - lm) / 2e-6
        assert np.max(np.abs(num - G)) <= 1e-3 * max(np.max(np.abs(num)), 1e-6)


def test_actor_pure_q_ascent(rng):
    p, hyper = small_params(rng, obs_dim=3, act_dim=2, lr=1e-3)
    p.log_alpha = -math.inf
    obs = rng.uniform(-1, 1, (64, 3))
    q_before = [sac.q_value(p.q1, obs, sac.actor_sample(p.actor, obs, deterministic=True)[0])[0]]
    frozen = [w.copy() for w in p.q1.params]
    for _ in range(200):
        sac.actor_update({"obs": obs}, p, hyper, rng)
    for a, b in zip(frozen, p.q1.params):
        np.testing.assert_array_equal(a, b)
    a_det = sac.actor_sample(p.actor, obs, deterministic=True)[0]
    qmin = np.minimum(sac.q_value(p.q1, obs, a_det)[0], sac.q_value(p.q2, obs, a_det)[0])
    q0 = np.minimum(q_before[0], q_before[0])
    assert np.mean(qmin) > np.mean(q0) - 1e-9


def test_entropy_raises_log_std_under_flat_q(rng):
    p, _ = small_params(rng, obs_dim=3, act_dim=2)
    for q in (p.q1, p.q2):
        for w in q.weights:
            w[:] = 0.0
    obs = rng.uniform(-1, 1, (16, 3))
    eps = 0.01 * rng.standard_normal((16, 2))
    _, grads, _ = sac.actor_loss_grads(p.actor, p.q1, p.q2, obs, 1.0, eps=eps)
    # output-layer bias gradient for the log-std half is negative: descent raises log-std
    assert np.all(grads[-1][2:] < 0)


@pytest.mark.parametrize("log_prob, lower", [(-5.0, True), (5.0, False)])
def test_temperature_direction(rng, log_prob, lower):
    # target entropy -2: log_prob -5 means entropy above target, 5 below it
    p, hyper = small_params(rng, act_dim=2)
    start = p.alpha
    sac.temperature_update(np.full(10, log_prob), p, hyper)
    assert (p.alpha < start) == lower
    assert p.alpha > 0


def test_polyak_examples(rng):
    p, hyper = small_params(rng)
    for q, t in ((p.q1, p.q1_targ), (p.q2, p.q2_targ)):
        for a, b in zip(q.params, t.params):
            a[...] = 1.0
            b[...] = 0.0
    sac.polyak_update(p, hyper)
    assert np.all(p.q1_targ.weights[0] == pytest.approx(0.005))
    for k in range(1, 50):
        sac.polyak_update(p, hyper)
    np.testing.assert_allclose(p.q2_targ.biases[0], 1 - 0.995 ** 50, rtol=1e-12)


def test_polyak_fixed_point(rng):
    p, hyper = small_params(rng)
    before = [x.copy() for x in p.q1_targ.params]
    sac.polyak_update(p, hyper)
    for a, b in zip(before, p.q1_targ.params):
        np.testing.assert_allclose(a, b, rtol=1e-15)


def test_targets_stay_convex_combination(rng):
    p, hyper = small_params(rng)
    buf = sac.ReplayBuffer(64, 6, 2)
    fill_buffer(buf, rng, 64)
    hist = [[x.copy() for x in p.q1.params]]
    for _ in range(30):
        sac.gradient_cycle(buf, p, hyper, rng)
        hist.append([x.copy() for x in p.q1.params])
    for k, t in enumerate(p.q1_targ.params):
        lo = np.min([h[k] for h in hist], axis=0)
        hi = np.max([h[k] for h in hist], axis=0)
        assert np.all(t >= lo - 1e-12) and np.all(t <= hi + 1e-12)


def test_buffer_fifo_and_distinct(rng):
    buf = sac.ReplayBuffer(5000, 2, 1)
    for i in range(6000):
        buf.add(np.full(2, i), np.zeros(1), float(i), np.zeros(2), False)
    assert len(buf) == 5000
    assert set(buf.rew.tolist()) == set(float(i) for i in range(1000, 6000))
    idx = buf.sample_indices(256, rng)
    assert len(set(idx.tolist())) == 256
    with pytest.raises(ValueError):
        sac.ReplayBuffer(10, 2, 1).sample_indices(3, rng)


def test_hyper_validation():
    with pytest.raises(ValueError):
        sac.SacHyper(gamma=1.0)
    with pytest.raises(ValueError):
        sac.SacHyper(tau=0.0)
    assert sac.SacHyper().warmup == 400 and sac.SacHyper().window == 100


def tiny_cfg():
    return ScenarioConfig(B=4, B_con=2, tau_0=500.0)


def test_no_gradient_steps_before_warmup():
    hyper = sac.SacHyper(hidden=(8, 8), batch=16, warmup=400)
    res = sac.train(tiny_cfg(), hyper, "da", episodes=20)
    assert res.steps == 400
    assert all(math.isnan(r["critic_loss"]) for r in res.log)
    res = sac.train(tiny_cfg(), hyper, "da", episodes=21)
    assert not math.isnan(res.log[-1]["critic_loss"])
    assert res.params.opt_q1.step == 20


def test_training_is_deterministic_and_checkpoints(tmp_path):
    hyper = sac.SacHyper(hidden=(8, 8), batch=16, warmup=40, window=5)
    a = sac.train(tiny_cfg(), hyper, "ha", episodes=12, seed=3, checkpoint_path=tmp_path / "a.npz",
                  log_path=tmp_path / "a.csv")
    b = sac.train(tiny_cfg(), hyper, "ha", episodes=12, seed=3, checkpoint_path=tmp_path / "b.npz",
                  log_path=tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_text() == (tmp_path / "b.csv").read_text()
    assert (tmp_path / "a.npz").read_bytes() == (tmp_path / "b.npz").read_bytes()
    header = (tmp_path / "a.csv").read_text().splitlines()[0]
    assert header == "episode,sum_reward,rolling_reward,alpha_t,critic_loss,actor_loss"
    best = max(r["rolling_reward"] for r in a.log[4:])
    assert a.best_rolling == pytest.approx(best)
    actor, meta = sac.load_actor(tmp_path / "a.npz")
    for x, y in zip(actor.params, a.best_actor.params):
        np.testing.assert_array_equal(x, y)
    assert meta["mode"] == "ha" and meta["B"] == 4
