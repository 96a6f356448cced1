from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memg.neural import AdamState, DenseNetwork, adam_step, soft_update_network
from memg.td3 import (
    Batch,
    ReplayBuffer,
    TD3Agent,
    Td3Hyperparams,
    Transition,
    compute_target,
    critic_loss_and_grads,
    select_action,
    smoothing_noise,
    train,
    update_actor,
    update_critics,
)


def const_critic(value, in_dim):
    net = DenseNetwork.build([in_dim, 1], np.random.default_rng(0))
    net.layers[0].weight[:] = 0.0
    net.layers[0].bias[:] = value
    return net


def random_batch(rng, m, s_dim, a_dim, terminal_p=0.2):
    return Batch(
        rng.normal(size=(m, s_dim)),
        rng.uniform(-1, 1, (m, a_dim)),
        rng.normal(size=m),
        rng.normal(size=(m, s_dim)),
        rng.uniform(size=m) < terminal_p,
    )


# ---------------------------------------------------------------- hyperparameters


def test_defaults():
    hp = Td3Hyperparams()
    assert (hp.actor_lr, hp.critic_lr, hp.gamma, hp.batch_size, hp.buffer_size, hp.tau) == (
        5e-6, 5e-5, 0.95, 256, 36000, 0.001)
    assert (hp.policy_noise, hp.noise_clip, hp.policy_delay, hp.exploration_noise) == (0.2, 0.5, 2, 0.1)
    assert hp.warmup_steps == 1000


@pytest.mark.parametrize("bad", [dict(gamma=1.0), dict(tau=0.0), dict(noise_clip=0.0), dict(policy_delay=0),
                                 dict(warmup=50_000), dict(actor_lr=0.0)])
def test_invalid_hyperparams(bad):
    with pytest.raises(ValueError):
        Td3Hyperparams(**bad)


# ---------------------------------------------------------------- targets


def test_target_example():
    batch = Batch(np.zeros((2, 1)), np.zeros((2, 1)), np.array([-5.0, -5.0]), np.zeros((2, 1)), np.array([False, True]))
    actor = DenseNetwork.build([1, 1], np.random.default_rng(0), output="tanh")
    hp = Td3Hyperparams()
    y = compute_target(batch, actor, (const_critic(-40, 2), const_critic(-38, 2)), hp, np.random.default_rng(0))
    assert y[0] == pytest.approx(-43.0, rel=1e-12)
    assert y[1] == -5.0


def test_ddpg_target_when_twins_agree():
    rng = np.random.default_rng(1)
    batch = random_batch(rng, 8, 3, 2, terminal_p=0.0)
    actor = DenseNetwork.build([3, 4, 2], rng, output="tanh")
    critic = DenseNetwork.build([5, 4, 1], rng)
    hp = Td3Hyperparams(policy_noise=0.0)
    y = compute_target(batch, actor, (critic, critic.copy()), hp, rng)
    a = actor.forward(batch.next_states)
    q = critic.forward(np.hstack([batch.next_states, a]))[:, 0]
    np.testing.assert_array_equal(y, batch.rewards + 0.95 * q)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_min_dominance(seed):
    rng = np.random.default_rng(seed)
    batch = random_batch(rng, 16, 3, 2)
    actor = DenseNetwork.build([3, 4, 2], rng, output="tanh")
    c1, c2 = DenseNetwork.build([5, 4, 1], rng), DenseNetwork.build([5, 4, 1], rng)
    hp = Td3Hyperparams()
    noise_rng = np.random.default_rng(seed + 1)
    y = compute_target(batch, actor, (c1, c2), hp, noise_rng)
    # recompute the smoothed action with the same noise stream
    noise = smoothing_noise(np.random.default_rng(seed + 1), (16, 2), hp.policy_noise, hp.noise_clip)
    a = np.clip(actor.forward(batch.next_states) + noise, -1, 1)
    live = ~batch.terminals
    for c in (c1, c2):
        q = c.forward(np.hstack([batch.next_states, a]))[:, 0]
        assert np.all(y[live] <= batch.rewards[live] + hp.gamma * q[live])


@given(seed=st.integers(0, 2**32 - 1), sigma=st.floats(0.01, 5.0), clip=st.floats(0.01, 2.0))
def test_smoothing_noise_clipped(seed, sigma, clip):
    n = smoothing_noise(np.random.default_rng(seed), (64, 5), sigma, clip)
    assert np.all(np.abs(n) <= clip)


# ---------------------------------------------------------------- actions


def test_select_action():
    rng = np.random.default_rng(0)
    actor = DenseNetwork.build([3, 4, 2], rng, output="tanh")
    s = rng.normal(size=3)
    assert np.array_equal(select_action(actor, s), select_action(actor, s))
    assert np.array_equal(select_action(actor, s, True, rng, 0.0), select_action(actor, s))
    # output 0.9 plus noise 0.3 clips to 1
    fixed = const_critic(0.0, 3)
    fixed.layers[0].bias[:] = 0.9

    class Rng:
        def normal(self, mu, sd, shape):
            return np.full(shape, 0.3)

    assert select_action(fixed, s, True, Rng(), 0.1)[0] == 1.0


# ---------------------------------------------------------------- critic and actor updates


def test_critic_loss_examples():
    critic = const_critic(0.0, 2)
    loss, grads = critic_loss_and_grads(critic, np.zeros((1, 1)), np.zeros((1, 1)), np.array([2.0]))
    assert loss == 4.0
    assert grads[1][0] == pytest.approx(-4.0)
    exact = const_critic(2.0, 2)
    before = [p.copy() for p in exact.params()]
    opt = AdamState.for_params(exact.params(), 0.1)
    l1, _ = update_critics(
        Batch(np.zeros((1, 1)), np.zeros((1, 1)), np.zeros(1), np.zeros((1, 1)), np.zeros(1, bool)),
        (exact, exact.copy()), (opt, AdamState.for_params(exact.params(), 0.1)), np.array([2.0]))
    assert l1 == 0.0
    assert all(np.array_equal(a, b) for a, b in zip(before, exact.params()))


def test_identical_critics_identical_losses():
    rng = np.random.default_rng(3)
    c = DenseNetwork.build([5, 4, 1], rng)
    batch = random_batch(rng, 8, 3, 2)
    opts = tuple(AdamState.for_params(c.params(), 1e-3) for _ in range(2))
    l1, l2 = update_critics(batch, (c, c.copy()), opts, rng.normal(size=8))
    assert l1 == l2


def test_action_independent_critic_leaves_actor_unchanged():
    rng = np.random.default_rng(4)
    actor = DenseNetwork.build([3, 4, 2], rng, output="tanh")
    before = [p.copy() for p in actor.params()]
    update_actor(random_batch(rng, 8, 3, 2), actor, AdamState.for_params(actor.params(), 0.1), const_critic(1.0, 5))
    assert all(np.array_equal(a, b) for a, b in zip(before, actor.params()))


class QuadraticCritic:
    """Q(s, a) = -k (a - 0.3)^2 on a single action dimension."""

    def __init__(self, k):
        self.k = k

    def forward(self, x, mode="eval"):
        self._x = x
        return (-self.k * (x[:, -1:] - 0.3) ** 2)

    def backward(self, g):
        dx = np.zeros_like(self._x)
        dx[:, -1:] = g * (-2 * self.k * (self._x[:, -1:] - 0.3))
        return [], dx


@pytest.mark.parametrize("k", [1.0, 100.0, 0.01])
def test_toy_actor_converges_to_optimum_for_any_reward_scale(k):
    rng = np.random.default_rng(5)
    actor = DenseNetwork.build([1, 1], rng, output="tanh")
    opt = AdamState.for_params(actor.params(), 0.01)
    batch = Batch(np.ones((4, 1)), np.zeros((4, 1)), np.zeros(4), np.ones((4, 1)), np.zeros(4, bool))
    for _ in range(2000):
        update_actor(batch, actor, opt, QuadraticCritic(k))
    assert actor.forward(np.ones((1, 1)))[0, 0] == pytest.approx(0.3, abs=1e-3)


# ---------------------------------------------------------------- full update


def _ddpg_step(actor, critic, t_actor, t_critic, a_opt, c_opt, batch, hp):
    a2 = t_actor.forward(batch.next_states)
    q2 = t_critic.forward(np.hstack([batch.next_states, a2]))[:, 0]
    y = batch.rewards + np.where(batch.terminals, 0.0, hp.gamma * q2)
    _, grads = critic_loss_and_grads(critic, batch.states, batch.actions, y)
    adam_step(critic.params(), grads, c_opt)
    update_actor(batch, actor, a_opt, critic)
    soft_update_network(t_actor, actor, hp.tau)
    soft_update_network(t_critic, critic, hp.tau)


@pytest.mark.parametrize("seed", range(5))
def test_td3_with_cloned_twins_and_no_smoothing_is_ddpg(seed):
    rng = np.random.default_rng(seed)
    hp = Td3Hyperparams(policy_noise=0.0, policy_delay=1, tau=0.05, actor_lr=1e-2, critic_lr=1e-2, hidden=(6, 5))
    agent = TD3Agent.create(4, 2, hp, rng)
    agent.critic2 = agent.critic1.copy()
    agent.target_critic2 = agent.target_critic1.copy()
    agent.critic2_opt = AdamState.for_params(agent.critic2.params(), hp.critic_lr)
    ref = [agent.actor.copy(), agent.critic1.copy(), agent.target_actor.copy(), agent.target_critic1.copy()]
    a_opt = AdamState.for_params(ref[0].params(), hp.actor_lr)
    c_opt = AdamState.for_params(ref[1].params(), hp.critic_lr)
    for _ in range(3):
        batch = random_batch(rng, 16, 4, 2)
        agent.update(batch, np.random.default_rng(0))
        _ddpg_step(*ref, a_opt, c_opt, batch, hp)
    for mine, theirs in zip((agent.actor, agent.critic1, agent.target_actor, agent.target_critic1), ref):
        for p, q in zip(mine.params(), theirs.params()):
            np.testing.assert_allclose(p, q, rtol=1e-9, atol=1e-12)


def test_actor_changes_only_on_delayed_updates():
    rng = np.random.default_rng(6)
    hp = Td3Hyperparams(policy_delay=3, actor_lr=1e-2, hidden=(4,))
    agent = TD3Agent.create(3, 2, hp, rng)
    for i in range(1, 10):
        before = [p.copy() for p in agent.actor.params()]
        agent.update(random_batch(rng, 8, 3, 2), rng)
        changed = any(not np.array_equal(a, b) for a, b in zip(before, agent.actor.params()))
        assert changed == (i % 3 == 0)


# ---------------------------------------------------------------- replay buffer


def _t(i, s_dim=2):
    return Transition(np.full(s_dim, float(i)), np.zeros(1), float(i), np.zeros(s_dim), False)


def test_buffer_fifo_at_default_capacity():
    buf = ReplayBuffer(36000, 2, 1)
    for i in range(36000 + 1234):
        buf.add(_t(i))
        assert len(buf) <= 36000
    assert len(buf) == 36000
    # the oldest 1234 entries are gone, the rest are all present
    assert sorted(buf.seq.tolist()) == list(range(1234, 37234))
    assert set(buf.rewards.astype(int).tolist()) == set(range(1234, 37234))


@given(capacity=st.integers(1, 50), n=st.integers(0, 200))
def test_buffer_fifo_property(capacity, n):
    buf = ReplayBuffer(capacity, 2, 1)
    for i in range(n):
        buf.add(_t(i))
    assert len(buf) == min(n, capacity)
    live = sorted(s for s in buf.seq.tolist() if s >= 0)
    assert live == list(range(max(0, n - capacity), n))


def test_buffer_rejects_bad_transitions():
    buf = ReplayBuffer(4, 2, 1)
    with pytest.raises(ValueError):
        buf.add(Transition(np.zeros(2), np.array([1.5]), 0.0, np.zeros(2), False))
    with pytest.raises(ValueError):
        buf.add(Transition(np.zeros(2), np.zeros(1), float("nan"), np.zeros(2), False))
    with pytest.raises(ValueError):
        buf.sample(2, np.random.default_rng(0))


# ---------------------------------------------------------------- training loop


class ToyEnv:
    """Two-step episodes rewarding actions near 0.3."""

    def __init__(self):
        self.t = 0

    def reset(self):
        self.t = 0
        return np.array([0.0])

    def step(self, a):
        self.t += 1
        return np.array([float(self.t)]), -float((a[0] - 0.3) ** 2), self.t >= 2, None


def test_train_zero_episodes():
    res = train(lambda rng: ToyEnv(), Td3Hyperparams(hidden=(4,)), 0, seed=1, state_dim=1, action_dim=1)
    assert res.curve == [] and res.steps == 0 and res.agent.n_updates == 0


def test_train_deterministic():
    hp = Td3Hyperparams(hidden=(8,), batch_size=16, warmup=32, actor_lr=1e-3, critic_lr=1e-3)
    a = train(lambda rng: ToyEnv(), hp, 60, seed=3, state_dim=1, action_dim=1)
    b = train(lambda rng: ToyEnv(), hp, 60, seed=3, state_dim=1, action_dim=1)
    assert [r.total_return for r in a.curve] == [r.total_return for r in b.curve]
    assert a.agent.n_updates == 120 - 32 + 1
    for p, q in zip(a.agent.actor.params(), b.agent.actor.params()):
        assert np.array_equal(p, q)
    assert a.metadata()["hyperparams"]["hidden"] == [8]
