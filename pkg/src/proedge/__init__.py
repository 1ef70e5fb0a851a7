"""Proactive edge-cloud orchestration: workload synthesis, simulator,
CNN-LSTM forecaster and a double-DQN orchestrator."""

__version__ = "0.1.0"
