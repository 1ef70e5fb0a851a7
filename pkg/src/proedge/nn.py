"""Small float64 neural-network substrate with hand-written backprop.

Layers operate on batched arrays:

* ``dense``      (B, in)        -> (B, out)
* ``conv1d``     (B, T, C)      -> (B, T - K + 1, F)   valid padding, stride 1
* ``lstm``       (B, T, in)     -> (B, hidden)         last hidden state
* ``activation`` any shape      -> same shape

A :class:`Network` owns one flat parameter vector; each layer reads its
weights through views into it, so gradients and Adam moments are flat too.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointError, NumericError, ShapeError, UsageError

ACTIVATIONS = ("relu", "tanh", "sigmoid", "identity")
CHECKPOINT_FORMAT = "proedge-network"
CHECKPOINT_VERSION = 1


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class LayerSpec:
    kind: str
    dims: dict = field(default_factory=dict)
    activation: str = "identity"


class Layer:
    kind = ""

    def __init__(self, spec: LayerSpec, in_shape: tuple):
        self.spec = spec
        self.in_shape = tuple(in_shape)

    @property
    def n_params(self) -> int:
        return sum(math.prod(s) for s in self.param_shapes())

    def param_shapes(self) -> list[tuple]:
        return []

    def unpack(self, flat):
        out, i = [], 0
        for s in self.param_shapes():
            n = math.prod(s)
            out.append(flat[i:i + n].reshape(s))
            i += n
        return out

    def init(self, flat, rng):
        pass


class Dense(Layer):
    kind = "dense"

    def __init__(self, spec, in_shape):
        super().__init__(spec, in_shape)
        n_in, n_out = spec.dims["in"], spec.dims["out"]
        if self.in_shape != (n_in,):
            raise ShapeError(f"dense expects input ({n_in},), got {self.in_shape}")
        self.out_shape = (n_out,)

    def param_shapes(self):
        return [(self.spec.dims["in"], self.spec.dims["out"]), (self.spec.dims["out"],)]

    def init(self, flat, rng):
        W, b = self.unpack(flat)
        limit = math.sqrt(6.0 / (W.shape[0] + W.shape[1]))
        W[...] = rng.uniform(-limit, limit, W.shape)
        b[...] = 0.0

    def forward(self, flat, x):
        W, b = self.unpack(flat)
        return x @ W + b, x

    def backward(self, flat, x, dy):
        W, _ = self.unpack(flat)
        return dy @ W.T, [x.T @ dy, dy.sum(axis=0)]


class Conv1d(Layer):
    kind = "conv1d"

    def __init__(self, spec, in_shape):
        super().__init__(spec, in_shape)
        d = spec.dims
        if len(self.in_shape) != 2 or self.in_shape[1] != d["in_channels"]:
            raise ShapeError(f"conv1d expects input (T, {d['in_channels']}), got {self.in_shape}")
        if d["kernel"] > self.in_shape[0]:
            raise ShapeError(f"kernel width {d['kernel']} exceeds input length {self.in_shape[0]}")
        self.out_shape = (self.in_shape[0] - d["kernel"] + 1, d["out_channels"])

    def param_shapes(self):
        d = self.spec.dims
        return [(d["kernel"], d["in_channels"], d["out_channels"]), (d["out_channels"],)]

    def init(self, flat, rng):
        W, b = self.unpack(flat)
        k, c, f = W.shape
        limit = math.sqrt(6.0 / (k * c + k * f))
        W[...] = rng.uniform(-limit, limit, W.shape)
        b[...] = 0.0

    def forward(self, flat, x):
        W, b = self.unpack(flat)
        win = np.lib.stride_tricks.sliding_window_view(x, W.shape[0], axis=1)  # (B, T', C, K)
        return np.einsum("btck,kcf->btf", win, W) + b, win

    def backward(self, flat, win, dy):
        W, _ = self.unpack(flat)
        k = W.shape[0]
        dW = np.einsum("btck,btf->kcf", win, dy)
        B, Tp, _ = dy.shape
        dx = np.zeros((B, Tp + k - 1, W.shape[1]))
        for j in range(k):
            dx[:, j:j + Tp, :] += dy @ W[j].T
        return dx, [dW, dy.sum(axis=(0, 1))]


def _lstm_cell(xw_t, h_prev, c_prev, Wh):
    H = Wh.shape[0]
    z = xw_t + h_prev @ Wh
    i = _sigmoid(z[:, :H])
    f = _sigmoid(z[:, H:2 * H])
    g = np.tanh(z[:, 2 * H:3 * H])
    o = _sigmoid(z[:, 3 * H:])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    return o * tc, c, (i, f, g, o, tc)


def lstm_step(x_t, h_prev, c_prev, Wx, Wh, b):
    """One LSTM cell update; returns ``(h, c)``."""
    h, c, _ = _lstm_cell(x_t @ Wx + b, h_prev, c_prev, Wh)
    return h, c


class LSTM(Layer):
    """Standard LSTM (gate order: input, forget, candidate, output); returns h_T."""

    kind = "lstm"

    def __init__(self, spec, in_shape):
        super().__init__(spec, in_shape)
        d = spec.dims
        if len(self.in_shape) != 2 or self.in_shape[1] != d["in"]:
            raise ShapeError(f"lstm expects input (T, {d['in']}), got {self.in_shape}")
        self.out_shape = (d["hidden"],)

    def param_shapes(self):
        n, h = self.spec.dims["in"], self.spec.dims["hidden"]
        return [(n, 4 * h), (h, 4 * h), (4 * h,)]

    def init(self, flat, rng):
        Wx, Wh, b = self.unpack(flat)
        h = Wh.shape[0]
        limit = 1.0 / math.sqrt(h)
        Wx[...] = rng.uniform(-limit, limit, Wx.shape)
        Wh[...] = rng.uniform(-limit, limit, Wh.shape)
        b[...] = 0.0
        b[h:2 * h] = 1.0

    def forward(self, flat, x):
        Wx, Wh, b = self.unpack(flat)
        B, T, _ = x.shape
        h = np.zeros((B, Wh.shape[0]))
        c = np.zeros_like(h)
        xw = x @ Wx + b  # (B, T, 4H)
        steps = []
        for t in range(T):
            h_prev, c_prev = h, c
            h, c, gates = _lstm_cell(xw[:, t], h_prev, c_prev, Wh)
            steps.append((h_prev, c_prev) + gates)
        return h, (x, steps)

    def backward(self, flat, cache, dh):
        Wx, Wh, _ = self.unpack(flat)
        x, steps = cache
        B, T, _ = x.shape
        H = Wh.shape[0]
        dWx = np.zeros_like(Wx)
        dWh = np.zeros_like(Wh)
        db = np.zeros(4 * H)
        dx = np.zeros_like(x)
        dc = np.zeros((B, H))
        dh = dh.copy()
        dz = np.empty((B, 4 * H))
        for t in reversed(range(T)):
            h_prev, c_prev, i, f, g, o, tc = steps[t]
            dc = dc + dh * o * (1.0 - tc ** 2)
            dz[:, :H] = dc * g * i * (1.0 - i)
            dz[:, H:2 * H] = dc * c_prev * f * (1.0 - f)
            dz[:, 2 * H:3 * H] = dc * i * (1.0 - g ** 2)
            dz[:, 3 * H:] = dh * tc * o * (1.0 - o)
            dWx += x[:, t].T @ dz
            dWh += h_prev.T @ dz
            db += dz.sum(axis=0)
            dx[:, t] = dz @ Wx.T
            dh = dz @ Wh.T
            dc = dc * f
        return dx, [dWx, dWh, db]


class Activation(Layer):
    kind = "activation"

    def __init__(self, spec, in_shape):
        super().__init__(spec, in_shape)
        if spec.activation not in ACTIVATIONS:
            raise ShapeError(f"unknown activation {spec.activation!r}")
        self.out_shape = self.in_shape

    def forward(self, flat, x):
        a = self.spec.activation
        if a == "relu":
            y = np.maximum(x, 0.0)
        elif a == "tanh":
            y = np.tanh(x)
        elif a == "sigmoid":
            y = _sigmoid(x)
        else:
            y = x
        return y, (x, y)

    def backward(self, flat, cache, dy):
        x, y = cache
        a = self.spec.activation
        if a == "relu":
            return dy * (x > 0), []
        if a == "tanh":
            return dy * (1.0 - y ** 2), []
        if a == "sigmoid":
            return dy * y * (1.0 - y), []
        return dy, []


LAYER_TYPES = {cls.kind: cls for cls in (Dense, Conv1d, LSTM, Activation)}


class Cache:
    """Intermediates of one forward pass, bound to the network and parameter version."""

    __slots__ = ("owner", "version", "items", "batch")

    def __init__(self, owner, version, items, batch):
        self.owner = owner
        self.version = version
        self.items = items
        self.batch = batch


class Network:
    def __init__(self, input_shape, specs: list[LayerSpec], seed: int = 0):
        self.input_shape = tuple(input_shape)
        self.specs = list(specs)
        self.layers: list[Layer] = []
        shape = self.input_shape
        for spec in self.specs:
            if spec.kind not in LAYER_TYPES:
                raise ShapeError(f"unknown layer kind {spec.kind!r}")
            layer = LAYER_TYPES[spec.kind](spec, shape)
            self.layers.append(layer)
            shape = layer.out_shape
        self.output_shape = shape
        self.offsets = [0]
        for layer in self.layers:
            self.offsets.append(self.offsets[-1] + layer.n_params)
        self.params = np.zeros(self.offsets[-1])
        rng = np.random.default_rng(seed)
        for k, layer in enumerate(self.layers):
            layer.init(self._view(self.params, k), rng)
        self.reset_optimizer()
        self.version = 0

    @property
    def n_params(self) -> int:
        return self.params.size

    def _view(self, flat, k):
        return flat[self.offsets[k]:self.offsets[k + 1]]

    def reset_optimizer(self):
        self.m = np.zeros_like(self.params)
        self.v = np.zeros_like(self.params)
        self.adam_t = 0

    def set_params(self, values):
        values = np.asarray(values, dtype=np.float64)
        if values.shape != self.params.shape:
            raise ShapeError(f"expected {self.params.shape} parameters, got {values.shape}")
        self.params[...] = values
        self.version += 1

    def clone(self) -> "Network":
        other = Network.__new__(Network)
        other.__dict__.update(self.__dict__)
        other.params = self.params.copy()
        other.m = self.m.copy()
        other.v = self.v.copy()
        other.version = 0
        return other

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[1:] != self.input_shape:
            raise ShapeError(f"input shape {x.shape[1:]} != declared {self.input_shape}")
        items = []
        for k, layer in enumerate(self.layers):
            x, c = layer.forward(self._view(self.params, k), x)
            items.append(c)
        if not np.all(np.isfinite(x)):
            raise NumericError("non-finite network output")
        return x, Cache(self, self.version, items, x.shape)

    def predict(self, x):
        return self.forward(x)[0]

    def backward(self, cache: Cache, output_grad, return_input_grad: bool = False):
        if not isinstance(cache, Cache) or cache.owner is not self or cache.version != self.version:
            raise UsageError("cache does not belong to the current parameters of this network")
        dy = np.asarray(output_grad, dtype=np.float64)
        if dy.shape != cache.batch:
            raise ShapeError(f"output grad shape {dy.shape} != output shape {cache.batch}")
        grad = np.zeros_like(self.params)
        for k in reversed(range(len(self.layers))):
            layer = self.layers[k]
            dy, pgrads = layer.backward(self._view(self.params, k), cache.items[k], dy)
            g = self._view(grad, k)
            i = 0
            for p in pgrads:
                g[i:i + p.size] = p.ravel()
                i += p.size
        return (grad, dy) if return_input_grad else grad

    # -- checkpoints -----------------------------------------------------------
    def header(self) -> dict:
        return {"input_shape": list(self.input_shape),
                "layers": [asdict(s) for s in self.specs]}

    def to_dict(self) -> dict:
        return {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION,
                **self.header(), "params": [float(v) for v in self.params]}

    @classmethod
    def from_dict(cls, d: dict, expect: "Network | None" = None) -> "Network":
        if d.get("format") != CHECKPOINT_FORMAT or d.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError("not a proedge network checkpoint")
        net = cls(d["input_shape"], [LayerSpec(**s) for s in d["layers"]])
        if expect is not None and net.header() != expect.header():
            raise CheckpointError("checkpoint architecture does not match the expected network")
        if len(d["params"]) != net.n_params:
            raise CheckpointError(f"checkpoint has {len(d['params'])} parameters, "
                                  f"architecture needs {net.n_params}")
        net.set_params(np.array(d["params"], dtype=np.float64))
        return net

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path, expect=None):
        return cls.from_dict(json.loads(Path(path).read_text()), expect)


def adam_step(net: Network, grad, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
    """In-place Adam update of ``net.params``."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != net.params.shape:
        raise ShapeError(f"gradient length {grad.shape} != parameter count {net.params.shape}")
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite gradient")
    b1, b2 = betas
    net.adam_t += 1
    net.m *= b1
    net.m += (1 - b1) * grad
    net.v *= b2
    net.v += (1 - b2) * grad * grad
    m_hat = net.m / (1 - b1 ** net.adam_t)
    v_hat = net.v / (1 - b2 ** net.adam_t)
    net.params -= lr * m_hat / (np.sqrt(v_hat) + eps)
    net.version += 1


@dataclass
class GradCheckReport:
    max_rel_error: float
    tolerance: float
    n_params: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def gradient_check(net: Network, x, tolerance=1e-4, step=1e-5, seed=0) -> GradCheckReport:
    """Compare backprop against central differences on ``L = sum(P * net(x))``.

    ``P`` is a fixed random projection. The error per parameter is
    ``|a - n| / max(|a| + |n|, 1e-6)``; the report holds the maximum.
    """
    if net.n_params > 10_000:
        raise UsageError("gradient_check is limited to networks with <= 1e4 parameters")
    x = np.asarray(x, dtype=np.float64)
    y, cache = net.forward(x)
    proj = np.random.default_rng(seed).normal(size=y.shape)
    analytic = net.backward(cache, proj)
    base = net.params.copy()
    numeric = np.empty_like(base)
    for i in range(base.size):
        p = base.copy()
        p[i] += step
        net.set_params(p)
        up = float(np.sum(proj * net.predict(x)))
        p[i] -= 2 * step
        net.set_params(p)
        down = float(np.sum(proj * net.predict(x)))
        numeric[i] = (up - down) / (2 * step)
    net.set_params(base)
    rel = np.abs(analytic - numeric) / np.maximum(np.abs(analytic) + np.abs(numeric), 1e-6)
    return GradCheckReport(float(rel.max(initial=0.0)), tolerance, base.size)


def dense(n_in, n_out, activation=None) -> list[LayerSpec]:
    specs = [LayerSpec("dense", {"in": n_in, "out": n_out})]
    if activation:
        specs.append(LayerSpec("activation", {}, activation))
    return specs


def mlp(n_in, hidden, n_out, activation="relu") -> list[LayerSpec]:
    specs, prev = [], n_in
    for h in hidden:
        specs += dense(prev, h, activation)
        prev = h
    return specs + dense(prev, n_out)
