import dataclasses

import pytest

from proedge.config import ExperimentConfig


def small_config(episodes=3, steps=12, **training) -> ExperimentConfig:
    """A config that trains in well under a second per mode."""
    cfg = ExperimentConfig()
    cfg = dataclasses.replace(
        cfg,
        workload=dataclasses.replace(cfg.workload, horizon=120),
        env=dataclasses.replace(cfg.env, steps=steps, history=1),
        forecast=dataclasses.replace(cfg.forecast, window=8, horizon=2, conv_channels=4,
                                     kernel_width=3, lstm_hidden=6, train_epochs=2),
        agent=dataclasses.replace(cfg.agent, hidden=(16,), batch_size=8, learn_start=8,
                                  capacity=500),
        training=dataclasses.replace(cfg.training, episodes=episodes, **training),
        seeds=dataclasses.replace(cfg.seeds, eval=(101, 102)),
    )
    return cfg.validate()


@pytest.fixture
def small_cfg():
    return small_config()


# one summary line per acceptance criterion, printed at the end of the run
ACCEPTANCE: dict[int, str] = {}


def record(criterion: int, passed: bool, detail: str) -> bool:
    ACCEPTANCE[criterion] = f"criterion {criterion}: {'PASS' if passed else 'FAIL'}  {detail}"
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
