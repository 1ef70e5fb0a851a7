"""CNN-LSTM k-step workload forecaster and the extended (lookahead) state."""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np

from .env import node_channels
from .errors import InsufficientDataError, ShapeError, TrainingError, UsageError
from .nn import LayerSpec, Network, adam_step
from .workload import WorkloadTrace

log = logging.getLogger(__name__)


@dataclass
class ForecastConfig:
    window: int = 32
    horizon: int = 4
    input_channels: int = 5
    conv_channels: int = 16
    kernel_width: int = 5
    lstm_hidden: int = 32
    train_epochs: int = 40
    batch_size: int = 32
    lr: float = 1e-3
    val_fraction: float = 0.2
    early_stopping: bool = True
    seed: int = 0

    def validate(self):
        from .errors import InvalidParameterError
        if self.window < self.kernel_width:
            raise InvalidParameterError("forecast.window must be >= forecast.kernel_width")
        if self.horizon < 1:
            raise InvalidParameterError("forecast.horizon must be >= 1")
        for name in ("input_channels", "conv_channels", "kernel_width", "lstm_hidden", "batch_size"):
            if getattr(self, name) < 1:
                raise InvalidParameterError(f"forecast.{name} must be >= 1")
        if self.train_epochs < 0:
            raise InvalidParameterError("forecast.train_epochs must be >= 0")
        if self.lr <= 0:
            raise InvalidParameterError("forecast.lr must be > 0")
        if not 0.0 <= self.val_fraction < 1.0:
            raise InvalidParameterError("forecast.val_fraction must lie in [0, 1)")


@dataclass
class HistoryDataset:
    """Sliding windows split into contiguous train / validation blocks."""

    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray

    def __len__(self):
        return len(self.x_train) + len(self.x_val)

    @property
    def samples(self) -> list[tuple[np.ndarray, np.ndarray]]:
        xs = np.concatenate([self.x_train, self.x_val])
        ys = np.concatenate([self.y_train, self.y_val])
        return list(zip(xs, ys))


@dataclass
class LossCurve:
    epochs: list[int] = field(default_factory=list)
    train_mse: list[float] = field(default_factory=list)
    val_mse: list[float] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_mse", "val_mse"])
        for row in zip(self.epochs, self.train_mse, self.val_mse):
            w.writerow([row[0], repr(row[1]), repr(row[2])])
        return buf.getvalue()


def build_network(cfg: ForecastConfig) -> Network:
    """conv1d + relu -> LSTM -> dense(k * channels)."""
    c, k = cfg.input_channels, cfg.horizon
    specs = [
        LayerSpec("conv1d", {"in_channels": c, "out_channels": cfg.conv_channels,
                             "kernel": cfg.kernel_width}),
        LayerSpec("activation", {}, "relu"),
        LayerSpec("lstm", {"in": cfg.conv_channels, "hidden": cfg.lstm_hidden}),
        LayerSpec("dense", {"in": cfg.lstm_hidden, "out": k * c}),
    ]
    return Network((cfg.window, c), specs, seed=cfg.seed)


def build_dataset(series, cfg: ForecastConfig) -> HistoryDataset:
    """Windows of ``cfg.window`` rows with the next ``cfg.horizon`` rows as targets.

    ``series`` is a (time, channels) array or a trace, whose node-mapped
    channels are used.
    """
    if isinstance(series, WorkloadTrace):
        series = node_channels(series, cfg.input_channels - 1)
    series = np.asarray(series, dtype=np.float64)
    if series.ndim != 2 or series.shape[1] != cfg.input_channels:
        raise ShapeError(f"series shape {series.shape} does not have {cfg.input_channels} channels")
    H, k = cfg.window, cfg.horizon
    n = series.shape[0] - H - k + 1
    if n < 1:
        raise InsufficientDataError(f"need at least {H + k} timesteps, got {series.shape[0]}")
    win = np.lib.stride_tricks.sliding_window_view(series, H + k, axis=0)  # (n, C, H+k)
    win = np.ascontiguousarray(win.transpose(0, 2, 1))
    x, y = win[:, :H], win[:, H:]
    n_val = int(n * cfg.val_fraction)
    n_train = n - n_val
    return HistoryDataset(x[:n_train], y[:n_train], x[n_train:], y[n_train:])


def persistence_baseline(window, horizon: int) -> np.ndarray:
    """Repeat the last observed row ``horizon`` times."""
    window = np.asarray(window, dtype=np.float64)
    if window.ndim != 2 or window.shape[0] == 0:
        raise ShapeError("persistence needs a non-empty (time, channels) window")
    return np.repeat(window[-1:], horizon, axis=0)


def persistence_mse(x, y) -> float:
    """MSE of the persistence forecast over a batch of windows/targets."""
    if len(x) == 0:
        return float("nan")
    pred = np.repeat(x[:, -1:, :], y.shape[1], axis=1)
    return float(np.mean((pred - y) ** 2))


def _mse(net, x, y, batch=256) -> float:
    if len(x) == 0:
        return float("nan")
    total = 0.0
    for i in range(0, len(x), batch):
        pred = net.predict(x[i:i + batch]).reshape(y[i:i + batch].shape)
        total += float(np.sum((pred - y[i:i + batch]) ** 2))
    return total / y.size


def pretrain(ds: HistoryDataset, cfg: ForecastConfig, net: Network | None = None):
    """Fit the forecaster by minibatch Adam on MSE; returns ``(net, LossCurve)``.

    With early stopping the parameters of the best validation epoch are
    restored at the end.
    """
    if len(ds.x_train) == 0:
        raise InsufficientDataError("empty training set")
    net = net or build_network(cfg)
    curve = LossCurve()
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 17]))
    best_val, best_params = np.inf, None
    n = len(ds.x_train)
    for epoch in range(1, cfg.train_epochs + 1):
        order = rng.permutation(n)
        sq = 0.0
        for b in range(0, n, cfg.batch_size):
            idx = order[b:b + cfg.batch_size]
            x, y = ds.x_train[idx], ds.y_train[idx].reshape(len(idx), -1)
            pred, cache = net.forward(x)
            err = pred - y
            loss = float(np.mean(err ** 2))
            if not np.isfinite(loss):
                raise TrainingError(f"forecaster diverged at epoch {epoch}, batch {b // cfg.batch_size}")
            sq += float(np.sum(err ** 2))
            adam_step(net, net.backward(cache, 2.0 * err / err.size), lr=cfg.lr)
        train = sq / ds.y_train.size
        val = _mse(net, ds.x_val, ds.y_val)
        curve.epochs.append(epoch)
        curve.train_mse.append(train)
        curve.val_mse.append(val)
        log.info("forecaster epoch %d train_mse=%.6f val_mse=%.6f", epoch, train, val)
        if cfg.early_stopping and np.isfinite(val) and val < best_val:
            best_val, best_params = val, net.params.copy()
    if best_params is not None:
        net.set_params(best_params)
    return net, curve


class Forecaster:
    """Frozen predictor ``window (H, C) -> forecast (k, C)``."""

    def __init__(self, net: Network, cfg: ForecastConfig):
        if net.input_shape != (cfg.window, cfg.input_channels):
            raise ShapeError("network input does not match forecast config")
        self.net = net
        self.cfg = cfg

    def __call__(self, window) -> np.ndarray:
        return forecast(self.net, window, self.cfg)

    def clone(self) -> "Forecaster":
        return Forecaster(self.net.clone(), self.cfg)


def forecast(net: Network, window, cfg: ForecastConfig) -> np.ndarray:
    window = np.asarray(window, dtype=np.float64)
    if window.shape != (cfg.window, cfg.input_channels):
        raise ShapeError(f"window shape {window.shape} != ({cfg.window}, {cfg.input_channels})")
    return net.predict(window[None])[0].reshape(cfg.horizon, cfg.input_channels)


def extend_state(raw, fc) -> np.ndarray:
    """Lookahead state: raw observation followed by the flattened forecast."""
    raw = np.asarray(raw, dtype=np.float64)
    fc = np.asarray(fc, dtype=np.float64)
    if raw.ndim != 1 or fc.ndim != 2:
        raise ShapeError(f"expected raw vector and (k, C) forecast, got {raw.shape}, {fc.shape}")
    return np.concatenate([raw, fc.ravel()])


def split_state(ext, raw_dim: int, horizon: int, channels: int):
    ext = np.asarray(ext)
    if ext.shape != (raw_dim + horizon * channels,):
        raise ShapeError(f"extended state of shape {ext.shape} does not split at {raw_dim}")
    return ext[:raw_dim], ext[raw_dim:].reshape(horizon, channels)


def forecaster_from_checkpoint(d: dict) -> Forecaster:
    cfg = ForecastConfig(**d["config"])
    expect = build_network(cfg)
    try:
        net = Network.from_dict(d["network"], expect=expect)
    except KeyError as exc:
        raise UsageError(f"forecaster checkpoint missing {exc}") from exc
    return Forecaster(net, cfg)
