"""Double DQN over {wait, deploy} with experience replay and a target network."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import neural
from .errors import ConfigurationError, PreconditionError
from .neural import AdamState, NetworkSpec, QNetwork

WAIT = 0
DEPLOY = 1
ACTION_NAMES = ("wait", "deploy")


@dataclass
class AgentConfig:
    gamma: float = 0.95
    epsilon_start: float = 1.0
    epsilon_min: float = 0.01
    epsilon_decay: float = 0.995
    # "multiplicative" applies epsilon_decay per decision; "linear" reaches
    # epsilon_min after linear_decay_steps decisions
    epsilon_schedule: str = "multiplicative"
    linear_decay_steps: int = 1000
    replay_capacity: int = 10000
    batch_size: int = 32
    target_sync_every: int = 1000
    learning_rate: float = 0.001
    clip_norm: float = 10.0
    huber_delta: float = 1.0
    train_every: int = 1

    def validate(self) -> "AgentConfig":
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigurationError(f"agent.gamma must be in (0, 1], got {self.gamma}")
        if not 0.0 <= self.epsilon_min <= self.epsilon_start <= 1.0:
            raise ConfigurationError("agent: need 0 <= epsilon_min <= epsilon_start <= 1")
        if not 0.0 < self.epsilon_decay <= 1.0:
            raise ConfigurationError("agent.epsilon_decay must be in (0, 1]")
        if self.epsilon_schedule not in ("multiplicative", "linear"):
            raise ConfigurationError(f"agent.epsilon_schedule: unknown {self.epsilon_schedule!r}")
        for name in ("replay_capacity", "batch_size", "target_sync_every", "train_every", "linear_decay_steps"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"agent.{name} must be >= 1")
        if self.batch_size > self.replay_capacity:
            raise ConfigurationError("agent.batch_size cannot exceed replay_capacity")
        return self


@dataclass
class AgentState:
    """What the network sees: masked sequence plus runtime features."""

    seq: np.ndarray
    mask: np.ndarray
    runtime: np.ndarray


@dataclass
class Transition:
    state: AgentState
    action: int
    reward: float | None = None
    next_state: AgentState | None = None
    done: bool = False
    pending: bool = True
    promoted: bool = False
    info: dict = field(default_factory=dict)

    def complete(self, reward: float, done: bool, next_state: AgentState | None = None) -> "Transition":
        if not self.pending:
            raise PreconditionError("transition already completed")
        self.reward = float(reward)
        self.done = bool(done)
        self.next_state = next_state if next_state is not None else self.state
        self.pending = False
        return self


class ReplayBuffer:
    """Fixed-capacity ring of completed transitions with FIFO eviction."""

    def __init__(self, capacity: int = 10000):
        if capacity < 1:
            raise ConfigurationError("replay capacity must be >= 1")
        self.capacity = capacity
        self._items: list[Transition] = []
        self._next = 0

    def __len__(self):
        return len(self._items)

    def push(self, tr: Transition) -> None:
        if tr.pending:
            raise PreconditionError("pending transitions cannot enter the replay buffer")
        if len(self._items) < self.capacity:
            self._items.append(tr)
        else:
            self._items[self._next] = tr
        self._next = (self._next + 1) % self.capacity

    def items(self) -> list[Transition]:
        """Stored transitions, oldest first."""
        if len(self._items) < self.capacity:
            return list(self._items)
        return self._items[self._next:] + self._items[:self._next]

    def sample(self, n: int, rng: np.random.Generator) -> list[Transition]:
        idx = rng.choice(len(self._items), size=n, replace=False)
        return [self._items[i] for i in idx]


def decay_epsilon(epsilon: float, epsilon_min: float = 0.01, decay: float = 0.995) -> float:
    return max(epsilon_min, epsilon * decay)


def greedy_action(q) -> int:
    """Argmax over (wait, deploy); ties go to wait."""
    return DEPLOY if q[DEPLOY] > q[WAIT] else WAIT


def select_action(q_fn, state: AgentState, epsilon: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy choice. ``q_fn(state)`` returns the two Q-values.

    One uniform draw is consumed per call, plus one more when exploring, so
    the rng stream does not depend on the network.
    """
    if not 0.0 <= epsilon <= 1.0:
        raise PreconditionError(f"epsilon must be in [0, 1], got {epsilon}")
    if rng.random() < epsilon:
        return int(rng.integers(2))
    return greedy_action(q_fn(state))


def double_dqn_target_from_q(reward, done, q_online_next, q_target_next, gamma):
    """y = r + (1 - done) * gamma * Q_target(s', argmax_a Q_online(s', a))."""
    reward = np.asarray(reward, dtype=float)
    done = np.asarray(done, dtype=float)
    q_online_next = np.atleast_2d(q_online_next)
    q_target_next = np.atleast_2d(q_target_next)
    best = (q_online_next[:, DEPLOY] > q_online_next[:, WAIT]).astype(int)
    boot = q_target_next[np.arange(len(best)), best]
    y = reward + (1.0 - done) * gamma * boot.reshape(reward.shape)
    return y


def stack_states(states: list[AgentState]):
    return (
        np.stack([s.seq for s in states]),
        np.stack([s.mask for s in states]),
        np.stack([s.runtime for s in states]),
    )


def double_dqn_target(reward, next_states, done, online: QNetwork, target: QNetwork, gamma: float):
    """Batched double-DQN targets; both networks evaluated in eval mode.

    Terminal rows never touch the networks, so their targets depend on the
    reward alone.
    """
    reward = np.asarray(reward, dtype=float)
    done = np.asarray(done, dtype=bool)
    y = reward.copy()
    live = np.flatnonzero(~done)
    if live.size:
        seq, mask, rt = stack_states([next_states[i] for i in live])
        y[live] = double_dqn_target_from_q(
            reward[live], np.zeros(live.size), online.q_values(seq, mask, rt), target.q_values(seq, mask, rt), gamma
        )
    return y


class DQNAgent:
    """Online/target networks, optimizer, replay buffer and exploration state."""

    def __init__(self, config: AgentConfig | None = None, spec: NetworkSpec | None = None, seed: int = 0):
        self.config = (config or AgentConfig()).validate()
        self.spec = spec or NetworkSpec()
        self.online = QNetwork.create(self.spec, seed=seed)
        self.target = self.online.copy()
        self.adam = AdamState(learning_rate=self.config.learning_rate, clip_norm=self.config.clip_norm)
        self.buffer = ReplayBuffer(self.config.replay_capacity)
        self.rng = np.random.default_rng(seed)
        self.epsilon = self.config.epsilon_start
        self.decisions = 0
        self.train_steps = 0
        self.last_loss: float | None = None

    # -- acting --------------------------------------------------------------

    def q_values(self, state: AgentState) -> np.ndarray:
        return self.online.q_values(state.seq, state.mask, state.runtime)

    def act(self, state: AgentState, explore: bool = True) -> int:
        eps = self.epsilon if explore else 0.0
        return select_action(self.q_values, state, eps, self.rng)

    def decay(self) -> float:
        """Advance the exploration schedule by one decision."""
        cfg = self.config
        self.decisions += 1
        if cfg.epsilon_schedule == "linear":
            frac = min(1.0, self.decisions / cfg.linear_decay_steps)
            self.epsilon = max(cfg.epsilon_min, cfg.epsilon_start - frac * (cfg.epsilon_start - cfg.epsilon_min))
        else:
            self.epsilon = decay_epsilon(self.epsilon, cfg.epsilon_min, cfg.epsilon_decay)
        return self.epsilon

    def remember(self, tr: Transition) -> None:
        self.buffer.push(tr)

    # -- learning ------------------------------------------------------------

    def train_step(self) -> float | None:
        """One minibatch update; ``None`` when the buffer is still too small."""
        cfg = self.config
        if len(self.buffer) < cfg.batch_size:
            return None
        batch = self.buffer.sample(cfg.batch_size, self.rng)
        rewards = np.array([t.reward for t in batch])
        dones = np.array([t.done for t in batch])
        actions = np.array([t.action for t in batch])
        y = double_dqn_target(rewards, [t.next_state for t in batch], dones, self.online, self.target, cfg.gamma)
        seq, mask, rt = stack_states([t.state for t in batch])
        q, cache = self.online.forward(seq, mask, rt, train=True, rng=self.rng)
        rows = np.arange(len(batch))
        q_sa = q[rows, actions]
        loss = neural.huber(q_sa, y, cfg.huber_delta)
        dq = np.zeros_like(q)
        dq[rows, actions] = neural.huber_grad(q_sa, y, cfg.huber_delta)
        grads = self.online.backward(cache, dq)
        neural.adam_step(self.online.params, grads, self.adam)
        self.train_steps += 1
        if self.train_steps % cfg.target_sync_every == 0:
            self.target.load_state_from(self.online)
        self.last_loss = loss
        return loss

    # -- persistence ---------------------------------------------------------

    def save(self, path, include_replay: bool = False) -> Path:
        extra = {
            "agent_config": asdict(self.config),
            "epsilon": self.epsilon,
            "decisions": self.decisions,
            "train_steps": self.train_steps,
            "rng_state": self.rng.bit_generator.state,
        }
        path = neural.save_checkpoint(path, {"online": self.online, "target": self.target}, {"online": self.adam}, extra)
        if include_replay:
            self._save_replay(Path(str(path) + ".replay.npz"))
        return path

    @classmethod
    def load(cls, path) -> "DQNAgent":
        nets, adam, extra = neural.load_checkpoint(path)
        agent = cls(AgentConfig(**extra["agent_config"]), nets["online"].spec)
        agent.online, agent.target = nets["online"], nets["target"]
        agent.adam = adam["online"]
        agent.epsilon = float(extra["epsilon"])
        agent.decisions = int(extra["decisions"])
        agent.train_steps = int(extra["train_steps"])
        agent.rng.bit_generator.state = extra["rng_state"]
        replay = Path(str(path) + ".replay.npz")
        if replay.exists():
            agent._load_replay(replay)
        return agent

    def _save_replay(self, path: Path) -> None:
        items = self.buffer.items()
        if not items:
            np.savez(path, n=np.array(0))
            return
        s = stack_states([t.state for t in items])
        ns = stack_states([t.next_state for t in items])
        np.savez(
            path, n=np.array(len(items)),
            seq=s[0], mask=s[1], rt=s[2], nseq=ns[0], nmask=ns[1], nrt=ns[2],
            action=np.array([t.action for t in items]),
            reward=np.array([t.reward for t in items]),
            done=np.array([t.done for t in items]),
            promoted=np.array([t.promoted for t in items]),
        )

    def _load_replay(self, path: Path) -> None:
        with np.load(path) as npz:
            # NpzFile re-reads an array on every key access, so materialize once
            d = {k: npz[k] for k in npz.files}
            for i in range(int(d["n"])):
                tr = Transition(AgentState(d["seq"][i], d["mask"][i], d["rt"][i]), int(d["action"][i]),
                                promoted=bool(d["promoted"][i]))
                tr.complete(float(d["reward"][i]), bool(d["done"][i]),
                            AgentState(d["nseq"][i], d["nmask"][i], d["nrt"][i]))
                self.buffer.push(tr)

