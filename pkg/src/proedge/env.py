"""Tiered edge-cloud simulator (local device, edge servers, cloud).

One environment step is one unit of simulated time. The agent dispatches
the head-of-line pending task to a node together with an allocation
vector; every node then runs its FIFO queue as a fluid server over
``[t, t + 1)`` and completed / expired tasks are accounted for.

Timing model for a dispatched task (all times in timesteps):

* transfer  = data_size * link * (1 + congestion) / bandwidth_share
* wait      = time spent pending plus time queued behind earlier tasks
* processing= work / (cpu_share * cpu_capacity * (1 - background_load))

Cost and energy are linear in the work processed, with the rates depending
on the allocation:

* energy    = energy_per_work * cpu_share**2 * work + energy_idle * busy_time
* cost      = cost_per_work * cpu_capacity * busy_time

so at full share on an unloaded node the cost is exactly
``cost_per_work * work``. A lower share lowers the dynamic energy term but
keeps the node busy (and billed) for longer.

Raw state layout (``state_dim = (history + 1) * (3 * n_nodes + 1) + 5``)::

    snapshot(t), snapshot(t-1), ..., snapshot(t-history),
    pending work, pending data, pending deadline, pending location, pending count

where ``snapshot = [cpu_0..cpu_{n-1}, mem_0..mem_{n-1}, net, queue_0..queue_{n-1}]``.
"""
from __future__ import annotations

import itertools
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import (InvalidActionError, InvalidBoundsError, InvalidParameterError,
                     NumericError, StateError)
from .workload import WorkloadTrace

TIERS = ("local", "edge", "cloud")
MIN_FREE_SHARE = 0.05


@dataclass
class NodeProfile:
    name: str
    tier: str
    cpu_capacity: float
    mem_capacity: float
    link_latency: float
    energy_per_work: float
    energy_idle: float
    cost_per_work: float
    home_location: int = 0


def default_nodes() -> list[NodeProfile]:
    return [
        NodeProfile("device", "local", 1.0, 4.0, 0.0, 0.5, 0.5, 0.0),
        NodeProfile("edge-a", "edge", 2.5, 16.0, 0.5, 0.3, 0.8, 0.25, home_location=0),
        NodeProfile("edge-b", "edge", 2.5, 16.0, 0.5, 0.3, 0.8, 0.25, home_location=1),
        NodeProfile("cloud", "cloud", 8.0, 64.0, 1.0, 0.2, 1.2, 0.6),
    ]


@dataclass
class RewardWeights:
    w_latency: float = 0.3
    w_energy: float = 0.3
    w_cost: float = 0.3
    w_sla: float = 0.1
    sla_penalty: float = 10.0
    latency_bounds: tuple[float, float] = (0.0, 20.0)
    energy_bounds: tuple[float, float] = (0.0, 4.0)
    cost_bounds: tuple[float, float] = (0.0, 4.0)

    def validate(self):
        for name in ("w_latency", "w_energy", "w_cost", "w_sla", "sla_penalty"):
            if getattr(self, name) < 0:
                raise InvalidParameterError(f"reward.{name} must be >= 0")
        for name in ("latency_bounds", "energy_bounds", "cost_bounds"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise InvalidBoundsError(f"reward.{name}: min {lo} must be < max {hi}")

    @property
    def floor(self) -> float:
        """Most negative reward attainable."""
        return -(self.w_latency + self.w_energy + self.w_cost + self.w_sla * self.sla_penalty)


@dataclass
class EnvConfig:
    nodes: list[NodeProfile] = field(default_factory=default_nodes)
    alloc_dims: int = 1
    alloc_levels: int = 4
    history: int = 4
    steps: int = 200
    queue_scale: float = 10.0
    tx_energy: float = 0.05
    task_scale: tuple[float, float, float] = (4.0, 2.0, 14.0)
    reward: RewardWeights = field(default_factory=RewardWeights)

    def validate(self):
        if not self.nodes:
            raise InvalidParameterError("env.nodes must not be empty")
        for n in self.nodes:
            if n.tier not in TIERS:
                raise InvalidParameterError(f"node {n.name}: tier must be one of {TIERS}")
            if n.cpu_capacity <= 0 or n.mem_capacity <= 0:
                raise InvalidParameterError(f"node {n.name}: capacities must be > 0")
            if min(n.link_latency, n.energy_per_work, n.energy_idle, n.cost_per_work) < 0:
                raise InvalidParameterError(f"node {n.name}: rates must be >= 0")
            if n.tier == "local" and n.link_latency != 0:
                raise InvalidParameterError(f"node {n.name}: local node must have zero link latency")
        clouds = [n for n in self.nodes if n.tier == "cloud"]
        others = [n for n in self.nodes if n.tier != "cloud"]
        for c in clouds:
            for o in others:
                if not (c.cpu_capacity > o.cpu_capacity and c.link_latency > o.link_latency
                        and c.cost_per_work > o.cost_per_work):
                    raise InvalidParameterError(
                        f"cloud node {c.name} must have the highest cpu_capacity, "
                        f"link_latency and cost_per_work (violated against {o.name})")
        if not 1 <= self.alloc_dims <= 2:
            raise InvalidParameterError("env.alloc_dims must be 1 (cpu) or 2 (cpu, bandwidth)")
        if self.alloc_levels < 1:
            raise InvalidParameterError("env.alloc_levels must be >= 1")
        if self.history < 0:
            raise InvalidParameterError("env.history must be >= 0")
        if self.steps < 1:
            raise InvalidParameterError("env.steps must be >= 1")
        if self.queue_scale <= 0 or min(self.task_scale) <= 0:
            raise InvalidParameterError("env normalisation scales must be > 0")
        self.reward.validate()

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def snapshot_dim(self) -> int:
        return 3 * self.n_nodes + 1

    @property
    def state_dim(self) -> int:
        return (self.history + 1) * self.snapshot_dim + 5

    @property
    def n_channels(self) -> int:
        """Exogenous channels seen by the forecaster: one cpu load per node plus congestion."""
        return self.n_nodes + 1


@dataclass(frozen=True)
class HybridAction:
    target: int
    allocation: tuple[float, ...]


class ActionSpace:
    """Flat enumeration of ``(target, quantised allocation)`` pairs.

    Index layout is row-major: ``index = target * L**m + sum(level_j * L**(m-1-j))``
    with allocation component ``j`` equal to ``(level_j + 1) / L``. Passing
    ``fixed_level`` collapses the allocation to a single level so that only
    the target is selectable (the reactive baseline's action set).
    """

    def __init__(self, n_targets: int, dims: int, levels: int, fixed_level: int | None = None):
        if n_targets < 1 or dims < 1 or levels < 1:
            raise InvalidParameterError("action space sizes must be positive")
        self.n_targets = n_targets
        self.dims = dims
        self.levels = levels
        self.fixed_level = fixed_level
        self.per_target = 1 if fixed_level is not None else levels ** dims

    @classmethod
    def from_config(cls, cfg: EnvConfig, targets_only: bool = False) -> "ActionSpace":
        fixed = baseline_level(cfg.alloc_levels) if targets_only else None
        return cls(cfg.n_nodes, cfg.alloc_dims, cfg.alloc_levels, fixed)

    @property
    def n(self) -> int:
        return self.n_targets * self.per_target

    def decode(self, index: int) -> HybridAction:
        if not 0 <= index < self.n:
            raise InvalidActionError(f"action index {index} outside [0, {self.n})")
        target, rest = divmod(int(index), self.per_target)
        if self.fixed_level is not None:
            levels = [self.fixed_level] * self.dims
        else:
            levels = []
            for _ in range(self.dims):
                rest, lv = divmod(rest, self.levels)
                levels.append(lv)
            levels.reverse()
        return HybridAction(target, tuple((lv + 1) / self.levels for lv in levels))

    def encode(self, action: HybridAction) -> int:
        if not 0 <= action.target < self.n_targets or len(action.allocation) != self.dims:
            raise InvalidActionError(f"action {action} does not fit this space")
        levels = [round(x * self.levels) - 1 for x in action.allocation]
        if any(not 0 <= lv < self.levels for lv in levels) or any(
                not math.isclose((lv + 1) / self.levels, x) for lv, x in zip(levels, action.allocation)):
            raise InvalidActionError(f"allocation {action.allocation} is not on the quantisation grid")
        if self.fixed_level is not None:
            if any(lv != self.fixed_level for lv in levels):
                raise InvalidActionError("allocation differs from the fixed baseline level")
            return action.target
        rest = 0
        for lv in levels:
            rest = rest * self.levels + lv
        return action.target * self.per_target + rest

    def all(self) -> list[HybridAction]:
        return [self.decode(i) for i in range(self.n)]


def baseline_level(levels: int) -> int:
    """Zero-based level index of the mid allocation ceil(L/2)/L."""
    return math.ceil(levels / 2) - 1


def action_space(cfg: EnvConfig, targets_only: bool = False) -> ActionSpace:
    return ActionSpace.from_config(cfg, targets_only)


def normalize(x: float, lo: float, hi: float) -> float:
    """Min-max scale ``x`` into [0, 1] (clipped)."""
    if not lo < hi:
        raise InvalidBoundsError(f"normalisation bounds need min < max, got ({lo}, {hi})")
    return min(1.0, max(0.0, (x - lo) / (hi - lo)))


@dataclass
class Breakdown:
    latency: float
    energy: float
    cost: float
    sla_violated: bool
    completed: int = 0
    throughput: float = 0.0
    utilization: float = 0.0
    makespan: float = 0.0


def compute_reward(b: Breakdown, w: RewardWeights) -> float:
    """Negative weighted sum of normalised latency, energy, cost plus the SLA penalty."""
    vals = (b.latency, b.energy, b.cost)
    if not all(math.isfinite(v) for v in vals):
        raise NumericError(f"non-finite metric in {b}")
    penalty = w.sla_penalty if b.sla_violated else 0.0
    return -(w.w_latency * normalize(b.latency, *w.latency_bounds)
             + w.w_energy * normalize(b.energy, *w.energy_bounds)
             + w.w_cost * normalize(b.cost, *w.cost_bounds)
             + w.w_sla * penalty)


@dataclass
class StepOutcome:
    next_state: np.ndarray
    reward: float
    breakdown: Breakdown
    done: bool


class _Task:
    __slots__ = ("seq", "arrival", "location", "work", "remaining", "data", "deadline",
                 "node", "cpu_share", "bw_share", "ready", "transfer")

    def __init__(self, seq, a, offset):
        self.seq = seq
        self.arrival = a.arrival_time - offset
        self.location = a.location
        self.work = a.work
        self.remaining = a.work
        self.data = a.data_size
        self.deadline = a.sla_deadline
        self.node = -1
        self.cpu_share = 1.0
        self.bw_share = 1.0
        self.ready = 0.0
        self.transfer = 0.0


class EdgeCloudEnv:
    """Single-threaded simulator; one instance per episode stream."""

    def __init__(self, cfg: EnvConfig):
        cfg.validate()
        self.cfg = cfg
        self.trace = None
        self.done = True
        self.t = 0

    # -- helpers -----------------------------------------------------------
    @property
    def state_dim(self) -> int:
        return self.cfg.state_dim

    def _bg(self, t: int) -> np.ndarray:
        """Background CPU load per node at episode time ``t`` (clamped to the trace)."""
        i = min(max(self.start + t, 0), self.trace.horizon - 1)
        return self._channels[i, :-1]

    def _net(self, t: int) -> float:
        i = min(max(self.start + t, 0), self.trace.horizon - 1)
        return float(self.trace.net_series[i])

    def exogenous_window(self, length: int) -> np.ndarray:
        """Last ``length`` rows of ``[cpu per node, net]`` ending at the current step.

        Rows before the start of the trace are back-filled with its first row.
        """
        end = self.start + self.t
        idx = np.clip(np.arange(end - length + 1, end + 1), 0, self.trace.horizon - 1)
        return self._channels[idx]

    def _link(self, node: NodeProfile, location: int) -> float:
        if node.tier == "local":
            return 0.0
        if node.tier == "edge":
            return node.link_latency * (1 + abs(location - node.home_location))
        return node.link_latency

    def _snapshot(self) -> np.ndarray:
        cfg = self.cfg
        bg = self._bg(self.t)
        mem = np.zeros(cfg.n_nodes)
        queue = np.zeros(cfg.n_nodes)
        for j, q in enumerate(self.queues):
            node = cfg.nodes[j]
            rate = node.cpu_capacity * max(1.0 - bg[j], MIN_FREE_SHARE)
            mem[j] = sum(task.data for task in q) / node.mem_capacity
            backlog = sum(task.remaining / (task.cpu_share * rate) for task in q)
            queue[j] = backlog / cfg.queue_scale
        return np.concatenate([bg, np.clip(mem, 0, 1), [self._net(self.t)], np.clip(queue, 0, 1)])

    def _observe(self) -> np.ndarray:
        snap = self._snapshot()
        self.history.appendleft(snap)
        cfg = self.cfg
        if self.pending:
            head = self.pending[0]
            loc = head.location / max(self.trace.n_locations - 1, 1)
            desc = [min(head.work / cfg.task_scale[0], 1.0), min(head.data / cfg.task_scale[1], 1.0),
                    min(head.deadline / cfg.task_scale[2], 1.0), loc,
                    min(len(self.pending) / 10.0, 1.0)]
        else:
            desc = [0.0] * 5
        return np.concatenate(list(self.history) + [np.asarray(desc)])

    # -- public API ----------------------------------------------------------
    def reset(self, trace: WorkloadTrace, episode_seed: int = 0, start: int | None = None) -> np.ndarray:
        """Start an episode on ``trace[start : start + steps]``.

        When ``start`` is None it is drawn uniformly from the valid offsets
        using ``episode_seed``.
        """
        T = self.cfg.steps
        if start is None:
            hi = max(trace.horizon - T, 0)
            start = int(np.random.default_rng(episode_seed).integers(0, hi + 1))
        if not 0 <= start < trace.horizon:
            raise InvalidParameterError(f"start {start} outside trace horizon {trace.horizon}")
        self.trace = trace
        self._channels = node_channels(trace, self.cfg.n_nodes)
        self.start = start
        self.steps = min(T, trace.horizon - start)
        self.t = 0
        self.done = False
        self._seq = itertools.count()
        self.pending: deque[_Task] = deque()
        self.queues: list[list[_Task]] = [[] for _ in self.cfg.nodes]
        self.arrived_work = 0.0
        self.done_work = 0.0
        self.dropped_work = 0.0
        self.n_arrived = 0
        self.spans: list[float] = []
        self.latencies: list[float] = []
        self._admit(0)
        self.history: deque[np.ndarray] = deque(maxlen=self.cfg.history + 1)
        snap = self._snapshot()
        for _ in range(self.cfg.history):
            self.history.append(snap)
        return self._observe()

    def _admit(self, t: int):
        for a in self.trace.arrivals_at(self.start + t):
            task = _Task(next(self._seq), a, self.start)
            self.pending.append(task)
            self.arrived_work += task.work
            self.n_arrived += 1

    def step(self, action: HybridAction) -> StepOutcome:
        if self.done:
            raise StateError("step() called on a finished episode; call reset()")
        cfg = self.cfg
        if not 0 <= action.target < cfg.n_nodes:
            raise InvalidActionError(f"target {action.target} outside [0, {cfg.n_nodes})")
        if len(action.allocation) != cfg.alloc_dims or any(
                not 0.0 < x <= 1.0 for x in action.allocation):
            raise InvalidActionError(f"allocation {action.allocation} invalid for m={cfg.alloc_dims}")

        t = self.t
        energy = 0.0
        if self.pending:
            task = self.pending.popleft()
            node = cfg.nodes[action.target]
            task.node = action.target
            task.cpu_share = action.allocation[0]
            task.bw_share = action.allocation[1] if cfg.alloc_dims > 1 else 1.0
            link = self._link(node, task.location)
            task.transfer = task.data * link * (1.0 + self._net(t)) / task.bw_share
            task.ready = t + task.transfer
            if link > 0:
                energy += cfg.tx_energy * task.data * task.bw_share
            self.queues[action.target].append(task)

        bg = self._bg(t)
        latency = cost = 0.0
        violated = False
        completed = 0
        util = 0.0
        for j, q in enumerate(self.queues):
            node = cfg.nodes[j]
            free = max(1.0 - bg[j], MIN_FREE_SHARE)
            q.sort(key=lambda task: (task.ready, task.seq))
            cur = float(t)
            used = 0.0
            while q and cur < t + 1:
                head = q[0]
                cur = max(cur, head.ready)
                if cur >= t + 1:
                    break
                rate = head.cpu_share * node.cpu_capacity * free
                finish = cur + head.remaining / rate
                if finish <= t + 1:
                    work, dt = head.remaining, finish - cur
                    head.remaining = 0.0
                    q.pop(0)
                    span = finish - head.arrival
                    latency += span
                    self.spans.append(span)
                    self.latencies.append(span)
                    completed += 1
                    if span > head.deadline:
                        violated = True
                else:
                    dt = t + 1 - cur
                    work = rate * dt
                    head.remaining -= work
                cur += dt
                self.done_work += work
                energy += node.energy_per_work * head.cpu_share ** 2 * work + node.energy_idle * dt
                cost += node.cost_per_work * node.cpu_capacity * dt
                used += head.cpu_share * dt
            util += min(1.0, bg[j] + (1.0 - bg[j]) * used)
        util /= cfg.n_nodes

        # expire tasks whose deadline has passed at the end of the step
        now = t + 1
        for pool in [self.pending] + self.queues:
            keep = [task for task in pool if now - task.arrival <= task.deadline]
            if len(keep) != len(pool):
                violated = True
                for task in pool:
                    if now - task.arrival > task.deadline:
                        self.dropped_work += task.remaining
                        self.spans.append(now - task.arrival)
                pool.clear()
                pool.extend(keep)

        self.t += 1
        if self.t >= self.steps:
            self.done = True
            for pool in [self.pending] + self.queues:
                self.spans.extend(self.t - task.arrival for task in pool)
        else:
            self._admit(self.t)

        b = Breakdown(latency, energy, cost, violated, completed, float(completed), util, latency)
        reward = compute_reward(b, cfg.reward)
        return StepOutcome(self._observe(), reward, b, self.done)

    def work_ledger(self) -> dict:
        queued = sum(task.remaining for task in self.pending) + sum(
            task.remaining for q in self.queues for task in q)
        return {"arrived": self.arrived_work, "completed": self.done_work,
                "queued": queued, "dropped": self.dropped_work}


def node_channels(trace: WorkloadTrace, n_nodes: int) -> np.ndarray:
    """Trace columns as seen by the nodes: ``[cpu for node 0..n-1, net]``."""
    cols = [j % trace.n_series for j in range(n_nodes)]
    return np.column_stack([trace.cpu_series[:, cols], trace.net_series])
