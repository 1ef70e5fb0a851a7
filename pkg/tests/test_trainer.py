import dataclasses

import pytest

from conftest import small_config
from proedge.config import ExperimentConfig, dump_config, parse_config
from proedge.errors import CheckpointError, ComparisonError, ConfigError
from proedge.forecaster import split_state
from proedge.trainer import (METRICS, EvalTable, checkpoint_dict, compare, episodes_csv, evaluate,
                             load_checkpoint, run_training, train_baseline, train_hybrid)


def test_one_episode_one_step():
    cfg = small_config(episodes=1, steps=1)
    res = train_hybrid(cfg)
    assert len(res.report.episodes) == 1
    assert len(res.agent.buffer) == 1


def test_training_is_deterministic(small_cfg):
    a = train_hybrid(small_cfg)
    b = train_hybrid(small_cfg)
    assert episodes_csv(a.report.episodes) == episodes_csv(b.report.episodes)
    assert a.agent.online.params.tobytes() == b.agent.online.params.tobytes()


def test_baseline_dimensions(small_cfg):
    res = train_baseline(small_cfg)
    assert res.agent.cfg.state_dim == small_cfg.env.state_dim
    assert res.agent.cfg.n_actions == small_cfg.env.n_nodes
    assert res.forecaster is None


def test_hybrid_dimensions(small_cfg):
    res = train_hybrid(small_cfg)
    f = small_cfg.forecast
    assert res.agent.cfg.state_dim == small_cfg.env.state_dim + f.horizon * f.input_channels
    assert res.agent.cfg.n_actions == small_cfg.env.n_nodes * small_cfg.env.alloc_levels


def test_epsilon_trace_decays(small_cfg):
    rep = train_baseline(small_cfg).report
    eps = rep.epsilon_trace
    assert eps[0] == 1.0 and all(a > b for a, b in zip(eps, eps[1:]))


def test_audit_state_fidelity_and_continuity():
    cfg = small_config(episodes=3, audit=True)
    res = run_training(cfg, "hybrid")
    audit, fc = res.audit, res.forecaster
    raw_dim, f = cfg.env.state_dim, cfg.forecast
    rows = res.agent.buffer.contents()
    assert len(rows) == len(audit.raw) == cfg.training.episodes * cfg.env.steps
    for slot, t in enumerate(rows):
        for state, raw, window in ((t.state, audit.raw[slot], audit.window[slot]),
                                   (t.next_state, audit.next_raw[slot], audit.next_window[slot])):
            prefix, suffix = split_state(state, raw_dim, f.horizon, f.input_channels)
            assert prefix.tobytes() == raw.tobytes()
            assert suffix.tobytes() == fc(window).tobytes()
    for slot in range(len(rows) - 1):
        if audit.episode[slot] == audit.episode[slot + 1]:
            assert rows[slot].next_state.tobytes() == rows[slot + 1].state.tobytes()


def test_episode_metrics_accounting(small_cfg):
    rep = train_baseline(small_cfg).report
    for e in rep.episodes:
        done = e.throughput * small_cfg.env.steps
        assert done == pytest.approx(round(done))
        assert e.latency >= 0 and e.energy >= 0 and e.cost >= 0


def test_evaluate_single_seed_has_zero_std(small_cfg):
    res = train_baseline(small_cfg)
    table = evaluate(res.agent, None, small_cfg, seeds=[101], mode="baseline")
    assert all(v == 0.0 for v in table.std.values())


def test_evaluate_repeatable_and_order_insensitive(small_cfg):
    res = train_hybrid(small_cfg)
    a = evaluate(res.agent, res.forecaster, small_cfg, seeds=[102, 101], mode="hybrid")
    b = evaluate(res.agent, res.forecaster, small_cfg, seeds=[101, 102], mode="hybrid")
    assert a.to_dict() == b.to_dict()


def test_checkpoint_round_trip(small_cfg):
    res = train_hybrid(small_cfg)
    agent, fc, mode = load_checkpoint(checkpoint_dict(res, small_cfg), small_cfg)
    assert mode == "hybrid"
    a = evaluate(res.agent, res.forecaster, small_cfg, mode="hybrid")
    b = evaluate(agent, fc, small_cfg, mode="hybrid")
    assert a.to_dict() == b.to_dict()


def test_checkpoint_mismatch_rejected(small_cfg):
    d = checkpoint_dict(train_baseline(small_cfg), small_cfg)
    other = dataclasses.replace(small_cfg, env=dataclasses.replace(small_cfg.env, history=2))
    with pytest.raises(CheckpointError):
        load_checkpoint(d, other)


def _table(mode, **means):
    mean = {k: 1.0 for k in METRICS} | means
    return EvalTable(mode, [1, 2], [], mean, {k: 0.0 for k in METRICS}, "x")


def test_compare_flags():
    same = compare(_table("baseline"), _table("hybrid"))
    assert {r.direction for r in same.rows} == {"tie"}
    s = compare(_table("baseline", reward=-10.0, cost=2.0, latency=1.0),
                _table("hybrid", reward=-5.0, cost=1.0, latency=1.5))
    assert s.row("reward").direction == "hybrid-better"
    assert s.row("cost").direction == "hybrid-better"
    assert s.row("latency").direction == "hybrid-worse"
    assert [r.metric for r in s.rows] == list(METRICS)
    assert "Total Reward" in s.table()


def test_compare_requires_same_seeds_and_env():
    b = _table("baseline")
    h = _table("hybrid")
    h.seeds = [1, 3]
    with pytest.raises(ComparisonError):
        compare(b, h)
    h = _table("hybrid")
    h.env_digest = "y"
    with pytest.raises(ComparisonError):
        compare(b, h)


def test_episodes_csv_schema(small_cfg):
    text = episodes_csv(train_baseline(small_cfg).report.episodes)
    lines = text.splitlines()
    assert lines[0] == "episode,reward,latency,energy,cost,throughput,utilization,makespan,epsilon,td_loss"
    assert len(lines) == small_cfg.training.episodes + 1


# -- config ----------------------------------------------------------------------

def test_empty_config_is_defaults():
    assert parse_config("") == ExperimentConfig()


def test_config_round_trip():
    cfg = small_config()
    assert parse_config(dump_config(cfg)) == cfg


def test_config_errors_name_the_field():
    with pytest.raises(ConfigError, match="discount"):
        parse_config("agent:\n  gamma: 1.5\n")
    with pytest.raises(ConfigError, match="typo"):
        parse_config("env:\n  typo: 1\n")
    with pytest.raises(ConfigError, match="line 3"):
        parse_config("env:\n  steps: 3\n   bad: : x\n")
    with pytest.raises(ConfigError, match="input_channels"):
        parse_config("forecast:\n  input_channels: 3\n")
