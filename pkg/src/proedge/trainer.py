"""End-to-end experiment: forecaster pre-training, DDQN training in
baseline (reactive) or hybrid (forecast-augmented) mode, evaluation and
the baseline-vs-hybrid comparison."""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .agent import AgentConfig, DDQNAgent, Transition
from .config import ExperimentConfig, to_dict
from .env import ActionSpace, EdgeCloudEnv
from .errors import CheckpointError, ComparisonError, ProEdgeError, TrainingError
from .forecaster import (Forecaster, LossCurve, build_dataset, extend_state,
                         forecaster_from_checkpoint, pretrain)
from .workload import WorkloadTrace, generate_trace

log = logging.getLogger(__name__)

EPISODE_COLUMNS = ("episode", "reward", "latency", "energy", "cost", "throughput",
                   "utilization", "makespan", "epsilon", "td_loss")
METRICS = ("reward", "latency", "energy", "cost", "throughput", "utilization", "makespan")
HIGHER_IS_BETTER = {"reward": True, "latency": False, "energy": False, "cost": False,
                    "throughput": True, "utilization": True, "makespan": False}
METRIC_LABELS = {"reward": "Total Reward", "latency": "Avg. Latency", "energy": "Avg. Energy",
                 "cost": "Avg. Cost", "throughput": "Avg. Throughput",
                 "utilization": "Avg. Utilization", "makespan": "Avg. Makespan"}


# -- traces ----------------------------------------------------------------------

def make_trace(cfg: ExperimentConfig, seed: int) -> WorkloadTrace:
    w = cfg.workload
    cpu = dataclasses.replace(w.cpu, horizon=w.horizon, seed=seed)
    net = dataclasses.replace(w.congestion, seed=seed)
    mob = dataclasses.replace(w.mobility, seed=seed)
    return generate_trace(cpu, net, mob)


# -- phase 1 -----------------------------------------------------------------------

def pretrain_forecaster(cfg: ExperimentConfig) -> tuple[Forecaster, LossCurve]:
    """Fit the forecaster on a history trace drawn from ``seeds.history``."""
    fcfg = dataclasses.replace(cfg.forecast, seed=cfg.seeds.agent)
    ds = build_dataset(make_trace(cfg, cfg.seeds.history), fcfg)
    net, curve = pretrain(ds, fcfg)
    return Forecaster(net, fcfg), curve


# -- phase 2 -----------------------------------------------------------------------

@dataclass
class EpisodeMetrics:
    episode: int
    reward: float
    latency: float
    energy: float
    cost: float
    throughput: float
    utilization: float
    makespan: float
    epsilon: float = 0.0
    td_loss: float = math.nan


@dataclass
class EvalTable:
    mode: str
    seeds: list[int]
    per_seed: list[EpisodeMetrics]
    mean: dict
    std: dict
    env_digest: str = ""

    def to_dict(self) -> dict:
        return {"mode": self.mode, "seeds": self.seeds, "env_digest": self.env_digest,
                "mean": self.mean, "std": self.std,
                "per_seed": [dataclasses.asdict(m) for m in self.per_seed]}


@dataclass
class TrainingReport:
    mode: str
    episodes: list[EpisodeMetrics]
    evaluation: EvalTable | None = None
    forecaster_curve: LossCurve | None = None

    @property
    def epsilon_trace(self) -> list[float]:
        return [e.epsilon for e in self.episodes]

    def rewards(self) -> np.ndarray:
        return np.array([e.reward for e in self.episodes])


@dataclass
class TrainingResult:
    report: TrainingReport
    agent: DDQNAgent
    forecaster: Forecaster | None
    audit: "Audit | None" = None


@dataclass
class Audit:
    """Per-transition log kept in debug mode, aligned with the replay buffer slots."""

    raw: dict = field(default_factory=dict)
    window: dict = field(default_factory=dict)
    next_raw: dict = field(default_factory=dict)
    next_window: dict = field(default_factory=dict)
    episode: dict = field(default_factory=dict)


def env_digest(cfg: ExperimentConfig) -> str:
    blob = json.dumps(to_dict(cfg.env), sort_keys=True) + json.dumps(to_dict(cfg.workload), sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _spaces(cfg: ExperimentConfig, mode: str):
    space = ActionSpace.from_config(cfg.env, targets_only=(mode == "baseline"))
    state_dim = cfg.env.state_dim
    if mode == "hybrid":
        state_dim += cfg.forecast.horizon * cfg.forecast.input_channels
    return space, state_dim


def agent_config(cfg: ExperimentConfig, mode: str) -> AgentConfig:
    space, state_dim = _spaces(cfg, mode)
    decay = cfg.agent.eps_decay or cfg.training.episodes * cfg.env.steps / 5.0
    return dataclasses.replace(cfg.agent, state_dim=state_dim, n_actions=space.n,
                               eps_decay=decay, seed=cfg.seeds.agent)


class _Observer:
    """Builds the agent-facing state: raw, or raw + forecast."""

    def __init__(self, env: EdgeCloudEnv, forecaster: Forecaster | None):
        self.env = env
        self.forecaster = forecaster

    def __call__(self, raw):
        if self.forecaster is None:
            return raw, None
        window = self.env.exogenous_window(self.forecaster.cfg.window)
        return extend_state(raw, self.forecaster(window)), window


def _episode_metrics(env: EdgeCloudEnv, ep: int, reward, energy, cost, util, steps) -> EpisodeMetrics:
    lat = float(np.mean(env.latencies)) if env.latencies else 0.0
    span = float(np.mean(env.spans)) if env.spans else 0.0
    return EpisodeMetrics(ep, reward, lat, energy / steps, cost / steps,
                          len(env.latencies) / steps, util / steps, span)


def run_training(cfg: ExperimentConfig, mode: str | None = None,
                 forecaster: Forecaster | None = None, trace: WorkloadTrace | None = None,
                 progress=None) -> TrainingResult:
    """Algorithm-1 training loop for either mode.

    Hybrid mode pre-trains the forecaster first unless one is passed in.
    The forecaster stays frozen while the agent trains.
    """
    mode = mode or cfg.training.mode
    curve = None
    if mode == "hybrid" and forecaster is None:
        forecaster, curve = pretrain_forecaster(cfg)
    if mode == "baseline":
        forecaster = None
    space, _ = _spaces(cfg, mode)
    agent = DDQNAgent(agent_config(cfg, mode))
    trace = trace or make_trace(cfg, cfg.seeds.workload)
    env = EdgeCloudEnv(cfg.env)
    observe = _Observer(env, forecaster)
    rng_env = np.random.default_rng(np.random.SeedSequence([cfg.seeds.env, 1]))
    rng_act = np.random.default_rng(np.random.SeedSequence([cfg.seeds.agent, 2]))
    rng_replay = np.random.default_rng(np.random.SeedSequence([cfg.seeds.agent, 3]))
    audit = Audit() if cfg.training.audit else None
    lo = cfg.forecast.window
    hi = max(trace.horizon - cfg.env.steps, lo)

    episodes, total_steps = [], 0
    for ep in range(1, cfg.training.episodes + 1):
        eps = agent.epsilon
        raw = env.reset(trace, start=int(rng_env.integers(lo, hi + 1)))
        state, window = observe(raw)
        total = energy = cost = util = 0.0
        losses, steps = [], 0
        while not env.done:
            try:
                a = agent.select_action(state, eps, rng_act)
                out = env.step(space.decode(a))
                next_state, next_window = observe(out.next_state)
                slot = agent.store(Transition(state, a, out.reward, next_state, out.done))
                if audit is not None:
                    audit.raw[slot], audit.next_raw[slot] = raw, out.next_state
                    audit.window[slot], audit.next_window[slot] = window, next_window
                    audit.episode[slot] = ep
                loss = agent.maybe_learn(rng_replay)
            except ProEdgeError as exc:
                raise TrainingError(f"{mode} episode {ep}, step {steps}: {exc}") from exc
            if loss is not None:
                losses.append(loss)
            total += out.reward
            energy += out.breakdown.energy
            cost += out.breakdown.cost
            util += out.breakdown.utilization
            raw, state, window = out.next_state, next_state, next_window
            steps += 1
        total_steps += steps
        m = _episode_metrics(env, ep, total, energy, cost, util, steps)
        m.epsilon = eps
        m.td_loss = float(np.mean(losses)) if losses else math.nan
        episodes.append(m)
        agent.decay_epsilon(total_steps)
        if progress:
            progress(m)
    report = TrainingReport(mode, episodes, forecaster_curve=curve)
    return TrainingResult(report, agent, forecaster, audit)


def train_hybrid(cfg: ExperimentConfig, **kw) -> TrainingResult:
    return run_training(cfg, "hybrid", **kw)


def train_baseline(cfg: ExperimentConfig, **kw) -> TrainingResult:
    return run_training(cfg, "baseline", **kw)


# -- evaluation ------------------------------------------------------------------

def rollout(agent: DDQNAgent, forecaster: Forecaster | None, cfg: ExperimentConfig,
            mode: str, seed: int) -> EpisodeMetrics:
    """One greedy episode on the evaluation trace generated from ``seed``."""
    space, _ = _spaces(cfg, mode)
    trace = make_trace(cfg, seed)
    env = EdgeCloudEnv(cfg.env)
    observe = _Observer(env, forecaster if mode == "hybrid" else None)
    state, _ = observe(env.reset(trace, start=cfg.forecast.window))
    total = energy = cost = util = 0.0
    steps = 0
    while not env.done:
        a = int(np.argmax(agent.q_values(state)))
        out = env.step(space.decode(a))
        state, _ = observe(out.next_state)
        total += out.reward
        energy += out.breakdown.energy
        cost += out.breakdown.cost
        util += out.breakdown.utilization
        steps += 1
    return _episode_metrics(env, 0, total, energy, cost, util, steps)


def evaluate(agent: DDQNAgent, forecaster: Forecaster | None, cfg: ExperimentConfig,
             seeds=None, mode: str | None = None) -> EvalTable:
    """Frozen greedy policy over each seed; mean and population std per metric."""
    mode = mode or cfg.training.mode
    _, state_dim = _spaces(cfg, mode)
    if agent.cfg.state_dim != state_dim:
        raise CheckpointError(f"agent expects state_dim {agent.cfg.state_dim}, "
                              f"{mode} config produces {state_dim}")
    if mode == "hybrid" and forecaster is None:
        raise CheckpointError("hybrid evaluation needs a forecaster")
    seeds = sorted(int(s) for s in (cfg.seeds.eval if seeds is None else seeds))
    rows = [rollout(agent, forecaster, cfg, mode, s) for s in seeds]
    for s, r in zip(seeds, rows):
        r.episode = s
    mean = {k: float(np.mean([getattr(r, k) for r in rows])) for k in METRICS}
    std = {k: float(np.std([getattr(r, k) for r in rows])) for k in METRICS}
    return EvalTable(mode, seeds, rows, mean, std, env_digest(cfg))


# -- comparison --------------------------------------------------------------------

@dataclass
class ComparisonRow:
    metric: str
    baseline: float
    hybrid_mean: float
    hybrid_std: float
    direction: str  # "hybrid-better" | "hybrid-worse" | "tie"


@dataclass
class ComparisonSummary:
    rows: list[ComparisonRow]

    def row(self, metric: str) -> ComparisonRow:
        return next(r for r in self.rows if r.metric == metric)

    def to_dict(self) -> dict:
        return {"rows": [dataclasses.asdict(r) for r in self.rows]}

    def table(self) -> str:
        head = ("Metric", "Baseline (DDQN)", "Hybrid (Mean +- StdDev)", "Direction")
        body = [(METRIC_LABELS[r.metric], f"{r.baseline:.4f}",
                 f"{r.hybrid_mean:.4f} +- {r.hybrid_std:.4f}", r.direction) for r in self.rows]
        widths = [max(len(row[i]) for row in [head] + body) for i in range(4)]
        fmt = lambda row: "  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip()
        lines = [fmt(head), "  ".join("-" * w for w in widths)] + [fmt(r) for r in body]
        return "\n".join(lines) + "\n"


def compare(base: EvalTable, hyb: EvalTable) -> ComparisonSummary:
    if base.seeds != hyb.seeds:
        raise ComparisonError(f"evaluation seeds differ: {base.seeds} vs {hyb.seeds}")
    if base.env_digest != hyb.env_digest:
        raise ComparisonError("evaluations were run on different env/workload configs")
    rows = []
    for k in METRICS:
        b, h = base.mean[k], hyb.mean[k]
        if h == b:
            d = "tie"
        elif (h > b) == HIGHER_IS_BETTER[k]:
            d = "hybrid-better"
        else:
            d = "hybrid-worse"
        rows.append(ComparisonRow(k, b, h, hyb.std[k], d))
    return ComparisonSummary(rows)


# -- artifacts ---------------------------------------------------------------------

def episodes_csv(episodes: list[EpisodeMetrics]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(EPISODE_COLUMNS)
    for e in episodes:
        row = [getattr(e, c) for c in EPISODE_COLUMNS]
        w.writerow([row[0]] + ["" if isinstance(v, float) and math.isnan(v) else repr(float(v))
                               for v in row[1:]])
    return buf.getvalue()


def checkpoint_dict(result: TrainingResult, cfg: ExperimentConfig) -> dict:
    d = result.agent.to_dict()
    d["mode"] = result.report.mode
    d["env_digest"] = env_digest(cfg)
    if result.forecaster is not None:
        d["forecaster"] = {"config": dataclasses.asdict(result.forecaster.cfg),
                           "network": result.forecaster.net.to_dict()}
    return d


def load_checkpoint(d: dict, cfg: ExperimentConfig):
    """Restore ``(agent, forecaster, mode)``; rejects checkpoints that do not fit ``cfg``."""
    mode = d.get("mode")
    if mode not in ("baseline", "hybrid"):
        raise CheckpointError("checkpoint does not record a valid mode")
    space, state_dim = _spaces(cfg, mode)
    agent = DDQNAgent.from_dict(d, state_dim=state_dim, n_actions=space.n)
    forecaster = forecaster_from_checkpoint(d["forecaster"]) if mode == "hybrid" else None
    if forecaster is not None and (forecaster.cfg.window, forecaster.cfg.horizon,
                                   forecaster.cfg.input_channels) != (
            cfg.forecast.window, cfg.forecast.horizon, cfg.forecast.input_channels):
        raise CheckpointError("forecaster in checkpoint does not match forecast config")
    return agent, forecaster, mode
