"""Double-DQN orchestrator: replay buffer, online/target networks, epsilon-greedy."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import (CheckpointError, InsufficientDataError, InvalidParameterError,
                     NumericError, ShapeError)
from .nn import Network, adam_step, mlp


@dataclass
class AgentConfig:
    state_dim: int = 0
    n_actions: int = 0
    hidden: tuple[int, ...] = (128, 128)
    gamma: float = 0.99
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay: float = 0.0  # steps; 0 means episodes * steps / 5
    tau: float = 0.005
    capacity: int = 50_000
    batch_size: int = 64
    learn_start: int = 500
    lr: float = 5e-4
    seed: int = 0

    def validate(self):
        if not 0.0 <= self.gamma < 1.0:
            raise InvalidParameterError(f"agent.gamma (discount) must lie in [0, 1), got {self.gamma}")
        if not 0.0 <= self.tau <= 1.0:
            raise InvalidParameterError(f"agent.tau must lie in [0, 1], got {self.tau}")
        for name in ("eps_start", "eps_end"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise InvalidParameterError(f"agent.{name} must lie in [0, 1]")
        if self.eps_end > self.eps_start:
            raise InvalidParameterError("agent.eps_end must not exceed agent.eps_start")
        if self.eps_decay < 0:
            raise InvalidParameterError("agent.eps_decay must be >= 0")
        if self.batch_size < 1 or self.capacity < self.batch_size:
            raise InvalidParameterError("agent.capacity must be >= agent.batch_size >= 1")
        if self.lr <= 0:
            raise InvalidParameterError("agent.lr must be > 0")
        if self.learn_start < 0:
            raise InvalidParameterError("agent.learn_start must be >= 0")
        if any(h < 1 for h in self.hidden):
            raise InvalidParameterError("agent.hidden sizes must be >= 1")


@dataclass
class Transition:
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    done: bool


@dataclass
class Batch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray
    index: np.ndarray = field(default=None)

    def __len__(self):
        return len(self.actions)


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions stored in flat arrays."""

    def __init__(self, capacity: int, state_dim: int):
        if capacity < 1:
            raise InvalidParameterError("replay capacity must be >= 1")
        self.capacity = capacity
        self.state_dim = state_dim
        self.size = 0
        self.stores = 0
        self._s = np.zeros((capacity, state_dim))
        self._s2 = np.zeros((capacity, state_dim))
        self._a = np.zeros(capacity, dtype=np.int64)
        self._r = np.zeros(capacity)
        self._d = np.zeros(capacity, dtype=bool)

    def __len__(self):
        return self.size

    def store(self, tr: Transition) -> int:
        """Append ``tr`` (evicting the oldest when full); returns the slot used."""
        s, s2 = np.asarray(tr.state), np.asarray(tr.next_state)
        if s.shape != (self.state_dim,) or s2.shape != (self.state_dim,):
            raise ShapeError(f"transition states must have shape ({self.state_dim},)")
        if not math.isfinite(tr.reward):
            raise NumericError("non-finite reward")
        i = self.stores % self.capacity
        self._s[i], self._s2[i] = s, s2
        self._a[i], self._r[i], self._d[i] = tr.action, tr.reward, tr.done
        self.stores += 1
        self.size = min(self.size + 1, self.capacity)
        return i

    def sample(self, n: int, rng: np.random.Generator) -> Batch:
        """Uniform sample of ``n`` transitions, with replacement."""
        if self.size < n:
            raise InsufficientDataError(f"buffer holds {self.size} transitions, {n} requested")
        idx = rng.integers(0, self.size, size=n)
        return Batch(self._s[idx], self._a[idx], self._r[idx], self._s2[idx], self._d[idx], idx)

    def contents(self) -> list[Transition]:
        """Stored transitions, oldest first."""
        first = self.stores - self.size
        out = []
        for k in range(first, self.stores):
            i = k % self.capacity
            out.append(Transition(self._s[i].copy(), int(self._a[i]), float(self._r[i]),
                                  self._s2[i].copy(), bool(self._d[i])))
        return out


def epsilon_at(step: int, start: float, end: float, decay: float) -> float:
    """``end + (start - end) * exp(-step / decay)``."""
    if step < 0:
        raise InvalidParameterError("step must be >= 0")
    if decay <= 0:
        return end
    return end + (start - end) * math.exp(-step / decay)


def greedy(q: np.ndarray) -> int:
    """Argmax with ties broken by the lowest index."""
    return int(np.argmax(q))


class DDQNAgent:
    def __init__(self, cfg: AgentConfig):
        cfg.validate()
        if cfg.state_dim < 1 or cfg.n_actions < 1:
            raise InvalidParameterError("agent.state_dim and agent.n_actions must be >= 1")
        self.cfg = cfg
        self.online = Network((cfg.state_dim,), mlp(cfg.state_dim, cfg.hidden, cfg.n_actions),
                              seed=cfg.seed)
        self.target = self.online.clone()
        self.buffer = ReplayBuffer(cfg.capacity, cfg.state_dim)
        self.epsilon = cfg.eps_start

    def q_values(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=np.float64)
        if s.shape != (self.cfg.state_dim,):
            raise ShapeError(f"state shape {s.shape} != ({self.cfg.state_dim},)")
        return self.online.predict(s[None])[0]

    def select_action(self, s, epsilon: float, rng: np.random.Generator) -> int:
        if not 0.0 <= epsilon <= 1.0:
            raise InvalidParameterError("epsilon must lie in [0, 1]")
        q = self.q_values(s)
        if rng.random() < epsilon:
            return int(rng.integers(0, self.cfg.n_actions))
        return greedy(q)

    def store(self, tr: Transition) -> int:
        if not 0 <= tr.action < self.cfg.n_actions:
            raise InvalidParameterError(f"action {tr.action} outside [0, {self.cfg.n_actions})")
        return self.buffer.store(tr)

    def ddqn_targets(self, batch: Batch, gamma: float | None = None) -> np.ndarray:
        """Online network picks the next action, target network values it."""
        if len(batch) == 0:
            raise InsufficientDataError("empty batch")
        gamma = self.cfg.gamma if gamma is None else gamma
        q_next_online = self.online.predict(batch.next_states)
        q_next_target = self.target.predict(batch.next_states)
        best = np.argmax(q_next_online, axis=1)
        v = q_next_target[np.arange(len(batch)), best]
        y = np.where(batch.dones, batch.rewards, batch.rewards + gamma * v)
        if not np.all(np.isfinite(y)):
            raise NumericError("non-finite TD target")
        return y

    def learn(self, batch: Batch) -> float:
        """One Adam step on the mean squared TD error; returns the pre-step loss."""
        y = self.ddqn_targets(batch)
        q, cache = self.online.forward(batch.states)
        rows = np.arange(len(batch))
        err = q[rows, batch.actions] - y
        loss = float(np.mean(err ** 2))
        if not math.isfinite(loss):
            raise NumericError("non-finite TD loss")
        dq = np.zeros_like(q)
        dq[rows, batch.actions] = 2.0 * err / len(batch)
        adam_step(self.online, self.online.backward(cache, dq), lr=self.cfg.lr)
        return loss

    def soft_update(self, tau: float | None = None):
        """``target <- tau * online + (1 - tau) * target``."""
        tau = self.cfg.tau if tau is None else tau
        if not 0.0 <= tau <= 1.0:
            raise InvalidParameterError("tau must lie in [0, 1]")
        if tau == 1.0:
            self.target.set_params(self.online.params)
        elif tau > 0.0:
            self.target.set_params(tau * self.online.params + (1.0 - tau) * self.target.params)

    def decay_epsilon(self, step: int, decay: float | None = None) -> float:
        decay = self.cfg.eps_decay if decay is None else decay
        self.epsilon = epsilon_at(step, self.cfg.eps_start, self.cfg.eps_end, decay)
        return self.epsilon

    def maybe_learn(self, rng) -> float | None:
        need = max(self.cfg.learn_start, self.cfg.batch_size)
        if len(self.buffer) < need:
            return None
        loss = self.learn(self.buffer.sample(self.cfg.batch_size, rng))
        self.soft_update()
        return loss

    # -- checkpoints ------------------------------------------------------------
    def to_dict(self) -> dict:
        cfg = asdict(self.cfg)
        cfg["hidden"] = list(cfg["hidden"])
        return {"format": "proedge-agent", "version": 1, "config": cfg,
                "epsilon": self.epsilon, "online": self.online.to_dict(),
                "target": self.target.to_dict()}

    @classmethod
    def from_dict(cls, d: dict, state_dim: int | None = None, n_actions: int | None = None):
        if d.get("format") != "proedge-agent":
            raise CheckpointError("not a proedge agent checkpoint")
        raw = dict(d["config"])
        raw["hidden"] = tuple(raw["hidden"])
        cfg = AgentConfig(**raw)
        if state_dim is not None and cfg.state_dim != state_dim:
            raise CheckpointError(f"checkpoint state_dim {cfg.state_dim} != expected {state_dim}")
        if n_actions is not None and cfg.n_actions != n_actions:
            raise CheckpointError(f"checkpoint n_actions {cfg.n_actions} != expected {n_actions}")
        agent = cls(cfg)
        agent.online = Network.from_dict(d["online"], expect=agent.online)
        agent.target = Network.from_dict(d["target"], expect=agent.target)
        agent.epsilon = float(d["epsilon"])
        return agent
