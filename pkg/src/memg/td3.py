"""Twin Delayed DDPG on top of :mod:`memg.neural`."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from .neural import AdamState, DenseNetwork, adam_step, soft_update_network

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class Td3Hyperparams:
    actor_lr: float = 5e-6
    critic_lr: float = 5e-5
    gamma: float = 0.95
    batch_size: int = 256
    buffer_size: int = 36000
    tau: float = 0.001
    policy_noise: float = 0.2
    noise_clip: float = 0.5
    policy_delay: int = 2
    exploration_noise: float = 0.1
    warmup: Optional[int] = None
    hidden: tuple[int, ...] = (128, 128)
    reward_scale: float = 1.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999

    def __post_init__(self) -> None:
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")
        if self.policy_noise < 0 or self.noise_clip <= 0:
            raise ValueError("policy_noise must be >= 0 and noise_clip > 0")
        if self.policy_delay < 1:
            raise ValueError("policy_delay must be >= 1")
        if self.batch_size < 1 or self.buffer_size < 1:
            raise ValueError("batch_size and buffer_size must be positive")
        if self.warmup_steps > self.buffer_size:
            raise ValueError("warm-up threshold exceeds buffer capacity")
        if self.actor_lr <= 0 or self.critic_lr <= 0:
            raise ValueError("learning rates must be positive")
        if self.reward_scale <= 0:
            raise ValueError("reward_scale must be positive")

    @property
    def warmup_steps(self) -> int:
        return max(self.batch_size, 1000) if self.warmup is None else int(self.warmup)


@dataclass
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    terminal: bool


@dataclass
class Batch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminals: np.ndarray

    def __len__(self) -> int:
        return self.rewards.shape[0]


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions."""

    def __init__(self, capacity: int, state_dim: int, action_dim: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.states = np.zeros((capacity, state_dim))
        self.actions = np.zeros((capacity, action_dim))
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, state_dim))
        self.terminals = np.zeros(capacity, dtype=bool)
        # insertion sequence number of each slot
        self.seq = np.full(capacity, -1, dtype=np.int64)
        self._next = 0
        self._count = 0

    def __len__(self) -> int:
        return min(self._count, self.capacity)

    @property
    def inserted(self) -> int:
        return self._count

    def add(self, t: Transition) -> None:
        action = np.asarray(t.action, dtype=float)
        if not (np.all(np.isfinite(t.state)) and np.all(np.isfinite(t.next_state))
                and np.all(np.isfinite(action)) and np.isfinite(t.reward)):
            raise ValueError("transition has non-finite entries")
        if np.any(np.abs(action) > 1.0):
            raise ValueError("transition action outside [-1, 1]")
        i = self._next
        self.states[i] = t.state
        self.actions[i] = action
        self.rewards[i] = t.reward
        self.next_states[i] = t.next_state
        self.terminals[i] = t.terminal
        self.seq[i] = self._count
        self._count += 1
        self._next = (i + 1) % self.capacity

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        n = len(self)
        if n == 0:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.integers(0, n, size=batch_size)
        return Batch(
            self.states[idx],
            self.actions[idx],
            self.rewards[idx],
            self.next_states[idx],
            self.terminals[idx],
        )


# --------------------------------------------------------------------------
# the update rules


def select_action(
    actor: DenseNetwork,
    state: np.ndarray,
    explore: bool = False,
    rng: Optional[np.random.Generator] = None,
    noise_scale: float = 0.1,
) -> np.ndarray:
    action = actor.forward(np.asarray(state, dtype=float)[None, :], mode="eval")[0]
    if explore and noise_scale > 0:
        if rng is None:
            raise ValueError("exploration needs an rng")
        action = action + rng.normal(0.0, noise_scale, action.shape)
    return np.clip(action, -1.0, 1.0)


def smoothing_noise(
    rng: np.random.Generator, shape: tuple[int, ...], sigma: float, clip: float
) -> np.ndarray:
    if sigma == 0:
        return np.zeros(shape)
    return np.clip(rng.normal(0.0, sigma, shape), -clip, clip)


def _q(critic: DenseNetwork, states: np.ndarray, actions: np.ndarray, mode: str = "eval") -> np.ndarray:
    return critic.forward(np.hstack([states, actions]), mode=mode)[:, 0]


def compute_target(
    batch: Batch,
    target_actor: DenseNetwork,
    target_critics: tuple[DenseNetwork, DenseNetwork],
    hp: Td3Hyperparams,
    rng: np.random.Generator,
) -> np.ndarray:
    """Clipped double-Q target with target-policy smoothing."""
    next_actions = target_actor.forward(batch.next_states, mode="eval")
    noise = smoothing_noise(rng, next_actions.shape, hp.policy_noise, hp.noise_clip)
    next_actions = np.clip(next_actions + noise, -1.0, 1.0)
    q1 = _q(target_critics[0], batch.next_states, next_actions)
    q2 = _q(target_critics[1], batch.next_states, next_actions)
    bootstrap = np.where(batch.terminals, 0.0, hp.gamma * np.minimum(q1, q2))
    return batch.rewards + bootstrap


def critic_loss_and_grads(
    critic: DenseNetwork, states: np.ndarray, actions: np.ndarray, y: np.ndarray
) -> tuple[float, list[np.ndarray]]:
    q = _q(critic, states, actions, mode="train")
    err = q - y
    loss = float(np.mean(err * err))
    grads, _ = critic.backward((2.0 / err.size) * err[:, None])
    return loss, grads


def update_critics(
    batch: Batch,
    critics: tuple[DenseNetwork, DenseNetwork],
    optimizers: tuple[AdamState, AdamState],
    y: np.ndarray,
) -> tuple[float, float]:
    """One Adam step per critic on the squared error to ``y``; pre-step losses."""
    losses = []
    for critic, opt in zip(critics, optimizers):
        loss, grads = critic_loss_and_grads(critic, batch.states, batch.actions, y)
        adam_step(critic.params(), grads, opt)
        losses.append(loss)
    return losses[0], losses[1]


def actor_loss_and_grads(
    actor: DenseNetwork, critic: DenseNetwork, states: np.ndarray
) -> tuple[float, list[np.ndarray]]:
    """``-mean Q(s, pi(s))`` and its gradient with respect to the actor."""
    actions = actor.forward(states, mode="train")
    q = _q(critic, states, actions, mode="train")
    loss = -float(np.mean(q))
    _, dx = critic.backward(np.full((q.size, 1), -1.0 / q.size))
    grads, _ = actor.backward(dx[:, states.shape[1]:])
    return loss, grads


def update_actor(
    batch: Batch, actor: DenseNetwork, optimizer: AdamState, critic1: DenseNetwork
) -> float:
    loss, grads = actor_loss_and_grads(actor, critic1, batch.states)
    adam_step(actor.params(), grads, optimizer)
    return loss


@dataclass
class TD3Agent:
    actor: DenseNetwork
    critic1: DenseNetwork
    critic2: DenseNetwork
    target_actor: DenseNetwork
    target_critic1: DenseNetwork
    target_critic2: DenseNetwork
    actor_opt: AdamState
    critic1_opt: AdamState
    critic2_opt: AdamState
    hp: Td3Hyperparams
    n_updates: int = 0

    @classmethod
    def create(
        cls, state_dim: int, action_dim: int, hp: Td3Hyperparams, rng: np.random.Generator
    ) -> "TD3Agent":
        actor = DenseNetwork.build(
            [state_dim, *hp.hidden, action_dim], rng, hidden="relu", output="tanh"
        )
        critic1 = DenseNetwork.build([state_dim + action_dim, *hp.hidden, 1], rng, hidden="relu")
        critic2 = DenseNetwork.build([state_dim + action_dim, *hp.hidden, 1], rng, hidden="relu")
        betas = dict(beta1=hp.adam_beta1, beta2=hp.adam_beta2)
        return cls(
            actor=actor,
            critic1=critic1,
            critic2=critic2,
            target_actor=actor.copy(),
            target_critic1=critic1.copy(),
            target_critic2=critic2.copy(),
            actor_opt=AdamState.for_params(actor.params(), hp.actor_lr, **betas),
            critic1_opt=AdamState.for_params(critic1.params(), hp.critic_lr, **betas),
            critic2_opt=AdamState.for_params(critic2.params(), hp.critic_lr, **betas),
            hp=hp,
        )

    def networks(self) -> dict[str, DenseNetwork]:
        return {
            "actor": self.actor,
            "critic1": self.critic1,
            "critic2": self.critic2,
            "target_actor": self.target_actor,
            "target_critic1": self.target_critic1,
            "target_critic2": self.target_critic2,
        }

    def sync_targets(self, tau: Optional[float] = None) -> None:
        sync_targets(self, self.hp.tau if tau is None else tau)

    def update(self, batch: Batch, rng: np.random.Generator) -> dict:
        """Critic step every call; actor and target step every ``policy_delay`` calls."""
        y = compute_target(
            batch, self.target_actor, (self.target_critic1, self.target_critic2), self.hp, rng
        )
        l1, l2 = update_critics(
            batch, (self.critic1, self.critic2), (self.critic1_opt, self.critic2_opt), y
        )
        self.n_updates += 1
        info = {"critic1_loss": l1, "critic2_loss": l2, "actor_loss": None}
        if self.n_updates % self.hp.policy_delay == 0:
            info["actor_loss"] = update_actor(batch, self.actor, self.actor_opt, self.critic1)
            self.sync_targets()
        return info

    def all_finite(self) -> bool:
        return all(net.all_finite() for net in self.networks().values())


def sync_targets(agent: TD3Agent, tau: float) -> None:
    soft_update_network(agent.target_actor, agent.actor, tau)
    soft_update_network(agent.target_critic1, agent.critic1, tau)
    soft_update_network(agent.target_critic2, agent.critic2, tau)


# --------------------------------------------------------------------------
# training loop


@dataclass
class EpisodeRecord:
    episode: int
    total_return: float
    energy_cost: float
    carbon_cost: float
    penalty_cost: float


@dataclass
class TrainResult:
    agent: TD3Agent
    curve: list[EpisodeRecord] = field(default_factory=list)
    seed: int = 0
    steps: int = 0

    def metadata(self) -> dict:
        hp = asdict(self.agent.hp)
        hp["hidden"] = list(hp["hidden"])
        return {
            "kind": "td3",
            "seed": self.seed,
            "episodes": len(self.curve),
            "steps": self.steps,
            "updates": self.agent.n_updates,
            "hyperparams": hp,
        }


def train_streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent generators for each stochastic part of training."""
    names = ("init", "env", "explore", "replay", "target_noise")
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {n: np.random.default_rng(c) for n, c in zip(names, children)}


def train(
    env_factory: Callable[[np.random.Generator], "object"],
    hp: Td3Hyperparams,
    episodes: int,
    seed: int,
    state_dim: Optional[int] = None,
    action_dim: Optional[int] = None,
    on_episode: Optional[Callable[[EpisodeRecord], None]] = None,
) -> TrainResult:
    """Train a TD3 agent.

    ``env_factory(rng)`` returns a fresh environment for each episode; it
    must expose ``reset() -> state`` and ``step(action) -> (state, reward,
    done, info)``, where ``info`` may carry ``energy_cost``/``carbon_cost``/
    ``penalty_cost`` attributes.  Before ``warmup_steps`` transitions are
    stored, actions are uniform random and no updates happen.
    """
    from .environment import N_ACTIONS, N_FEATURES

    state_dim = N_FEATURES if state_dim is None else state_dim
    action_dim = N_ACTIONS if action_dim is None else action_dim
    rngs = train_streams(seed)
    agent = TD3Agent.create(state_dim, action_dim, hp, rngs["init"])
    buffer = ReplayBuffer(hp.buffer_size, state_dim, action_dim)
    result = TrainResult(agent=agent, seed=seed)
    warmup = hp.warmup_steps

    for ep in range(episodes):
        env = env_factory(rngs["env"])
        state = env.reset()
        done = False
        record = EpisodeRecord(ep, 0.0, 0.0, 0.0, 0.0)
        while not done:
            if result.steps < warmup:
                action = rngs["explore"].uniform(-1.0, 1.0, action_dim)
            else:
                action = select_action(
                    agent.actor, state, True, rngs["explore"], hp.exploration_noise
                )
            next_state, reward, done, info = env.step(action)
            buffer.add(Transition(state, action, reward * hp.reward_scale, next_state, done))
            record.total_return += reward
            record.energy_cost += getattr(info, "energy_cost", 0.0)
            record.carbon_cost += getattr(info, "carbon_cost", 0.0)
            record.penalty_cost += getattr(info, "penalty_cost", 0.0)
            state = next_state
            result.steps += 1
            if len(buffer) >= warmup:
                agent.update(buffer.sample(hp.batch_size, rngs["replay"]), rngs["target_noise"])
                if not agent.all_finite():
                    raise TrainingDiverged(
                        f"non-finite network parameters at episode {ep}, "
                        f"update {agent.n_updates}"
                    )
        result.curve.append(record)
        if on_episode is not None:
            on_episode(record)
        log.debug("episode %d return %.3f", ep, record.total_return)
    return result
