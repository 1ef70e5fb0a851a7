import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from proedge.env import (ActionSpace, Breakdown, EdgeCloudEnv, EnvConfig, HybridAction,
                         NodeProfile, RewardWeights, action_space, compute_reward, normalize)
from proedge.errors import (InvalidActionError, InvalidBoundsError, InvalidParameterError,
                            NumericError, StateError)
from proedge.workload import (CongestionParams, MobilityParams, TaskArrival, TraceParams,
                              compose, generate_trace)


def two_node_cfg(steps=10, **kw):
    nodes = [NodeProfile("dev", "local", 1.0, 4.0, 0.0, 0.5, 0.5, 0.0),
             NodeProfile("edge", "edge", 2.0, 8.0, 1.0, 0.4, 0.5, 0.2)]
    return EnvConfig(nodes=nodes, steps=steps, **kw)


def single_task_trace(work=4.0, data=1.0, deadline=50, horizon=20, load=0.0, net=0.0):
    return compose(np.full((horizon, 2), load), np.full(horizon, net),
                   [TaskArrival(0, 0, work, data, deadline)], n_locations=1)


def run_single(cfg, trace, action):
    env = EdgeCloudEnv(cfg)
    env.reset(trace, start=0)
    env.step(action)
    while not env.done and not env.latencies:
        env.step(HybridAction(0, (1.0,)))
    return env.latencies[0]


@pytest.fixture(scope="module")
def trace():
    return generate_trace(TraceParams(horizon=600, seed=21), CongestionParams(seed=22),
                          MobilityParams(seed=23))


def test_reset_deterministic(trace):
    a = EdgeCloudEnv(EnvConfig()).reset(trace, episode_seed=5)
    b = EdgeCloudEnv(EnvConfig()).reset(trace, episode_seed=5)
    assert a.tobytes() == b.tobytes()


def test_reset_zero_load_trace():
    cfg = EnvConfig()
    tr = compose(np.zeros((300, 4)), np.zeros(300), [], n_locations=2)
    s = EdgeCloudEnv(cfg).reset(tr, start=0)
    n = cfg.n_nodes
    snap = s[:cfg.snapshot_dim]
    assert np.all(snap[:n] == 0)          # cpu
    assert np.all(snap[2 * n + 1:] == 0)  # queues


def test_state_dimension_formula(trace):
    for nodes, history in ((None, 4), (2, 0), (2, 3)):
        cfg = EnvConfig(history=history) if nodes is None else two_node_cfg(history=history)
        s = EdgeCloudEnv(cfg).reset(trace, start=0)
        n = cfg.n_nodes
        assert s.shape == ((history + 1) * (3 * n + 1) + 5,) == (cfg.state_dim,)


def test_local_latency_is_pure_processing():
    cfg = two_node_cfg()
    lat = run_single(cfg, single_task_trace(work=2.0), HybridAction(0, (0.5,)))
    assert lat == 2.0 / (0.5 * 1.0)


def test_single_task_hand_simulated():
    # capacity 2, work 4, alloc 1, data 1, link 1, congestion 0: 1 + 0 + 4/2
    cfg = two_node_cfg()
    lat = run_single(cfg, single_task_trace(work=4.0, data=1.0), HybridAction(1, (1.0,)))
    assert lat == 3.0


def test_congestion_scales_transfer():
    cfg = two_node_cfg()
    lat = run_single(cfg, single_task_trace(work=4.0, data=1.0, net=0.5), HybridAction(1, (1.0,)))
    assert lat == pytest.approx(1.5 + 2.0)


def test_allocation_monotone_single_task():
    cfg = EnvConfig(steps=40)
    tr = compose(np.full((40, 4), 0.3), np.full(40, 0.2),
                 [TaskArrival(0, 1, 3.0, 1.0, 40)], n_locations=2)
    for target in range(4):
        hi = run_single(cfg, tr, HybridAction(target, (1.0,)))
        lo = run_single(cfg, tr, HybridAction(target, (0.25,)))
        assert hi <= lo


def test_step_errors(trace):
    env = EdgeCloudEnv(two_node_cfg(steps=2))
    env.reset(trace, start=0)
    with pytest.raises(InvalidActionError):
        env.step(HybridAction(2, (1.0,)))
    with pytest.raises(InvalidActionError):
        env.step(HybridAction(0, (0.0,)))
    env.step(HybridAction(0, (1.0,)))
    env.step(HybridAction(0, (1.0,)))
    with pytest.raises(StateError):
        env.step(HybridAction(0, (1.0,)))


def test_sla_violation_flags_expired_task():
    cfg = two_node_cfg(steps=10)
    env = EdgeCloudEnv(cfg)
    env.reset(single_task_trace(work=4.0, deadline=2), start=0)
    outs = [env.step(HybridAction(0, (0.25,))) for _ in range(3)]
    assert [o.breakdown.sla_violated for o in outs] == [False, False, True]
    led = env.work_ledger()
    assert led["dropped"] == pytest.approx(4.0 - 0.75)


# -- reward -----------------------------------------------------------------------

def test_reward_at_min_bounds_is_zero():
    assert compute_reward(Breakdown(0.0, 0.0, 0.0, False), RewardWeights()) == 0.0


def test_reward_at_max_with_violation():
    w = RewardWeights(1, 1, 1, 1, 10.0, (0, 5), (0, 5), (0, 5))
    assert compute_reward(Breakdown(5, 5, 5, True), w) == -13.0


def test_reward_weighted_example():
    w = RewardWeights(0.5, 0.3, 0.2, 1.0, 10.0, (0, 1), (0, 1), (0, 1))
    expected = -(0.5 * 0.4 + 0.3 * 0.2 + 0.2 * 0.5)
    assert compute_reward(Breakdown(0.4, 0.2, 0.5, False), w) == pytest.approx(-0.36)
    assert compute_reward(Breakdown(0.4, 0.2, 0.5, False), w) == expected


def test_reward_rejects_non_finite():
    with pytest.raises(NumericError):
        compute_reward(Breakdown(math.nan, 0, 0, False), RewardWeights())


def test_normalize_examples():
    assert normalize(2, 2, 12) == 0.0
    assert normalize(12, 2, 12) == 1.0
    assert normalize(7, 2, 12) == 0.5
    assert normalize(50, 2, 12) == 1.0
    with pytest.raises(InvalidBoundsError):
        normalize(1, 3, 3)


# -- action space ------------------------------------------------------------------

def test_action_space_sizes():
    assert ActionSpace(3, 1, 4).n == 12
    assert ActionSpace(4, 2, 3).n == 36
    assert ActionSpace(4, 1, 4, fixed_level=1).n == 4


@pytest.mark.parametrize("targets,dims,levels", [(3, 1, 4), (4, 2, 3), (2, 3, 2)])
def test_action_space_bijection(targets, dims, levels):
    sp = ActionSpace(targets, dims, levels)
    acts = sp.all()
    assert len(set(acts)) == sp.n == targets * levels ** dims
    assert [sp.encode(a) for a in acts] == list(range(sp.n))
    for a in acts:
        assert all(x in {(k + 1) / levels for k in range(levels)} for x in a.allocation)


def test_baseline_action_space_uses_mid_allocation():
    sp = action_space(EnvConfig(), targets_only=True)
    assert sp.n == 4
    assert {a.allocation for a in sp.all()} == {(0.5,)}
    sp5 = ActionSpace(2, 1, 5, fixed_level=2)
    assert sp5.decode(1).allocation == (3 / 5,)


def test_action_decode_out_of_range():
    with pytest.raises(InvalidActionError):
        ActionSpace(3, 1, 4).decode(12)


def test_config_validation():
    bad_cloud = EnvConfig(nodes=[NodeProfile("c", "cloud", 1.0, 1.0, 1.0, 0, 0, 1.0),
                                 NodeProfile("e", "edge", 2.0, 1.0, 0.5, 0, 0, 0.5)])
    with pytest.raises(InvalidParameterError):
        bad_cloud.validate()
    bad_local = EnvConfig(nodes=[NodeProfile("d", "local", 1.0, 1.0, 0.2, 0, 0, 0)])
    with pytest.raises(InvalidParameterError):
        bad_local.validate()
    with pytest.raises(InvalidBoundsError):
        EnvConfig(reward=RewardWeights(latency_bounds=(1, 1))).validate()


# -- properties -------------------------------------------------------------------

def random_episode(seed, cfg=None, trace_seed=None):
    cfg = cfg or EnvConfig(steps=60)
    ts = seed if trace_seed is None else trace_seed
    tr = generate_trace(TraceParams(horizon=120, seed=ts), CongestionParams(seed=ts),
                        MobilityParams(mean_arrival_rate=0.4, seed=ts))
    env = EdgeCloudEnv(cfg)
    env.reset(tr, episode_seed=seed)
    sp = action_space(cfg)
    rng = np.random.default_rng(seed)
    yield env
    while not env.done:
        out = env.step(sp.decode(int(rng.integers(sp.n))))
        yield env, out


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_reward_recomputable_and_bounded(seed):
    it = random_episode(seed)
    env = next(it)
    w = env.cfg.reward
    for _, out in it:
        assert out.reward == compute_reward(out.breakdown, w)
        assert w.floor <= out.reward <= 0.0


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_work_conservation(seed):
    it = random_episode(seed)
    next(it)
    for env, _ in it:
        led = env.work_ledger()
        total = led["completed"] + led["queued"] + led["dropped"]
        assert total == pytest.approx(led["arrived"], rel=1e-9, abs=1e-9)


def test_trajectory_deterministic():
    a = [(o.reward, o.next_state.tobytes()) for _, o in list(random_episode(3))[1:]]
    b = [(o.reward, o.next_state.tobytes()) for _, o in list(random_episode(3))[1:]]
    assert a == b


def test_allocation_levels_order_latency_under_load():
    cfg = EnvConfig(steps=60)
    tr = compose(np.full((60, 4), 0.4), np.full(60, 0.3),
                 [TaskArrival(0, 0, 3.5, 1.5, 60)], n_locations=2)
    for target in range(cfg.n_nodes):
        lat = [run_single(cfg, tr, HybridAction(target, (lv,))) for lv in (0.25, 0.5, 0.75, 1.0)]
        assert lat == sorted(lat, reverse=True)
        assert lat[0] > lat[-1]
