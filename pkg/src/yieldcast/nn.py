"""Dual-path yield network with hand-written reverse-mode gradients.

Dynamic path: additive Gaussian noise (training only) -> stacked LSTM over
the window months -> last hidden state of the top layer.
Static path: stack of relu dense layers.
Head: concatenation of both paths -> dense layers (relu, linear output).

Parameters live in a flat ``dict`` keyed by ``"<block>.<tensor>"``:

* ``lstm{k}.W`` (4h, in), ``lstm{k}.U`` (4h, h), ``lstm{k}.b`` (4h,) with
  gate blocks stacked in the order input, forget, candidate, output;
* ``static{k}.W`` / ``static{k}.b`` and ``head{k}.W`` / ``head{k}.b`` for
  dense layers, weights shaped (out, in).

All batched arrays are float64: dynamic inputs ``(batch, n, 4)``, static
inputs ``(batch, 65)``, predictions ``(batch,)``.
"""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .errors import ShapeError, StateError
from .features import N_DYNAMIC, N_STATIC

GATES = ("i", "f", "g", "o")


@dataclass(frozen=True)
class NetworkArch:
    n: int
    dynamic_input_width: int = N_DYNAMIC
    static_input_width: int = N_STATIC
    lstm_sizes: tuple = (64, 64)
    static_sizes: tuple = (64, 32)
    head_sizes: tuple = (32, 1)
    noise_sigma: float = 0.3

    def __post_init__(self):
        for name in ("lstm_sizes", "static_sizes", "head_sizes"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        if self.n < 1:
            raise ShapeError(f"window length n must be >= 1, got {self.n}")
        if not self.lstm_sizes:
            raise ShapeError("at least one LSTM layer is required")
        if not self.head_sizes or self.head_sizes[-1] != 1:
            raise ShapeError("last head layer must have width 1")
        if any(v < 1 for v in self.lstm_sizes + self.static_sizes + self.head_sizes):
            raise ShapeError("layer sizes must be positive")
        if self.noise_sigma < 0:
            raise ShapeError("noise_sigma must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("lstm_sizes", "static_sizes", "head_sizes"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d) -> "NetworkArch":
        return cls(**d)

    @property
    def static_out(self) -> int:
        return self.static_sizes[-1] if self.static_sizes else self.static_input_width

    def param_shapes(self) -> dict[str, tuple]:
        shapes = {}
        width = self.dynamic_input_width
        for k, h in enumerate(self.lstm_sizes):
            shapes[f"lstm{k}.W"] = (4 * h, width)
            shapes[f"lstm{k}.U"] = (4 * h, h)
            shapes[f"lstm{k}.b"] = (4 * h,)
            width = h
        width = self.static_input_width
        for k, h in enumerate(self.static_sizes):
            shapes[f"static{k}.W"] = (h, width)
            shapes[f"static{k}.b"] = (h,)
            width = h
        width = self.lstm_sizes[-1] + self.static_out
        for k, h in enumerate(self.head_sizes):
            shapes[f"head{k}.W"] = (h, width)
            shapes[f"head{k}.b"] = (h,)
            width = h
        return shapes


def param_count(arch: NetworkArch) -> int:
    """Closed form: ``4h(in + h + 1)`` per LSTM layer, ``out(in + 1)`` per dense layer."""
    total, width = 0, arch.dynamic_input_width
    for h in arch.lstm_sizes:
        total += 4 * h * (width + h + 1)
        width = h
    width = arch.static_input_width
    for h in arch.static_sizes:
        total += h * (width + 1)
        width = h
    width = arch.lstm_sizes[-1] + arch.static_out
    for h in arch.head_sizes:
        total += h * (width + 1)
        width = h
    return total


def is_weight(name: str) -> bool:
    return name.endswith(".W") or name.endswith(".U")


@dataclass
class LstmParams:
    """View over one LSTM layer's stacked tensors, split per gate."""

    W: np.ndarray
    U: np.ndarray
    b: np.ndarray

    @property
    def hidden(self) -> int:
        return self.U.shape[1]

    def gate(self, name: str):
        h = self.hidden
        k = GATES.index(name)
        sl = slice(k * h, (k + 1) * h)
        return self.W[sl], self.U[sl], self.b[sl]


_version_counter = itertools.count()


@dataclass
class Network:
    arch: NetworkArch
    params: dict
    mode: str = "eval"
    version: int = field(default_factory=lambda: next(_version_counter))

    def train(self) -> "Network":
        self.mode = "train"
        return self

    def eval(self) -> "Network":
        self.mode = "eval"
        return self

    def touch(self):
        """Mark parameters as modified; outstanding caches become stale."""
        self.version = next(_version_counter)

    def lstm(self, k: int) -> LstmParams:
        return LstmParams(self.params[f"lstm{k}.W"], self.params[f"lstm{k}.U"],
                          self.params[f"lstm{k}.b"])

    def copy(self) -> "Network":
        return Network(self.arch, {k: v.copy() for k, v in self.params.items()}, self.mode)


def init_params(arch: NetworkArch, seed) -> Network:
    """Glorot-uniform weights (per gate for LSTM), zero biases, forget bias 1."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in arch.param_shapes().items():
        if name.endswith(".b"):
            b = np.zeros(shape)
            if name.startswith("lstm"):
                h = shape[0] // 4
                b[h:2 * h] = 1.0
            params[name] = b
        elif name.startswith("lstm"):
            h = shape[0] // 4
            fan_out, fan_in = h, shape[1]
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            params[name] = rng.uniform(-limit, limit, size=shape)
        else:
            fan_out, fan_in = shape
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            params[name] = rng.uniform(-limit, limit, size=shape)
    return Network(arch, params)


def sigmoid(x):
    out = np.negative(x)
    # exp overflow gives inf, and 1/(1+inf) = 0 is the correct limit
    with np.errstate(over="ignore"):
        np.exp(out, out=out)
    out += 1.0
    return np.reciprocal(out, out=out)


def gaussian_noise(x, sigma: float, rng: Optional[np.random.Generator] = None):
    """Return ``x + eps`` with ``eps ~ N(0, sigma^2)`` elementwise."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    x = np.asarray(x, dtype=float)
    if sigma == 0:
        return x.copy()
    if rng is None:
        raise ValueError("a random generator is required when sigma > 0")
    return x + rng.normal(0.0, sigma, size=x.shape)


def lstm_step(x_t, h_prev, c_prev, p: LstmParams):
    """One LSTM time step; works on single vectors or ``(batch, width)`` arrays."""
    x_t, h_prev, c_prev = (np.asarray(a, dtype=float) for a in (x_t, h_prev, c_prev))
    h = p.hidden
    if x_t.shape[-1] != p.W.shape[1] or h_prev.shape[-1] != h or c_prev.shape[-1] != h:
        raise ShapeError(f"lstm_step shapes x{x_t.shape} h{h_prev.shape} c{c_prev.shape} "
                         f"do not match W{p.W.shape}")
    a = x_t @ p.W.T + h_prev @ p.U.T + p.b
    i = sigmoid(a[..., :h])
    f = sigmoid(a[..., h:2 * h])
    g = np.tanh(a[..., 2 * h:3 * h])
    o = sigmoid(a[..., 3 * h:])
    c_t = f * c_prev + i * g
    h_t = o * np.tanh(c_t)
    return h_t, c_t


def _lstm_layer_forward(X, p: LstmParams, keep: bool):
    """Run one LSTM layer over ``X`` of shape (batch, n, in)."""
    B, n, _ = X.shape
    h = p.hidden
    H = np.empty((B, n, h))
    h_t = np.zeros((B, h))
    c_t = np.zeros((B, h))
    steps = []
    xw = (X.reshape(B * n, -1) @ p.W.T).reshape(B, n, 4 * h) + p.b
    for t in range(n):
        a = xw[:, t] + h_t @ p.U.T
        s = sigmoid(a)
        i, f, o = s[:, :h], s[:, h:2 * h], s[:, 3 * h:]
        g = np.tanh(a[:, 2 * h:3 * h])
        c_prev, h_prev = c_t, h_t
        c_t = f * c_prev + i * g
        tc = np.tanh(c_t)
        h_t = o * tc
        H[:, t] = h_t
        if keep:
            steps.append((h_prev, c_prev, i, f, g, o, tc))
    return H, steps


def _lstm_layer_backward(X, dH, p: LstmParams, steps):
    B, n, width = X.shape
    h = p.hidden
    dA = np.empty((B, n, 4 * h))
    H_prev = np.empty((B, n, h))
    dh_next = np.zeros((B, h))
    dc_next = np.zeros((B, h))
    for t in reversed(range(n)):
        h_prev, c_prev, i, f, g, o, tc = steps[t]
        dh = dH[:, t] + dh_next
        dc = dh * o * (1.0 - tc * tc) + dc_next
        da = dA[:, t]
        da[:, :h] = dc * g * i * (1.0 - i)
        da[:, h:2 * h] = dc * c_prev * f * (1.0 - f)
        da[:, 2 * h:3 * h] = dc * i * (1.0 - g * g)
        da[:, 3 * h:] = dh * tc * o * (1.0 - o)
        H_prev[:, t] = h_prev
        dh_next = da @ p.U
        dc_next = dc * f
    # parameter and input gradients do not feed the recurrence: one matmul each
    dA2 = dA.reshape(B * n, 4 * h)
    dW = dA2.T @ X.reshape(B * n, width)
    dU = dA2.T @ H_prev.reshape(B * n, h)
    db = dA2.sum(axis=0)
    dX = (dA2 @ p.W).reshape(B, n, width)
    return dX, dW, dU, db


def _check_inputs(arch: NetworkArch, dynamic, static):
    dynamic = np.asarray(dynamic, dtype=float)
    static = np.asarray(static, dtype=float)
    if dynamic.ndim == 2:
        dynamic = dynamic[None]
    if static.ndim == 1:
        static = static[None]
    if dynamic.ndim != 3 or dynamic.shape[1:] != (arch.n, arch.dynamic_input_width):
        raise ShapeError(f"dynamic input must be (batch, {arch.n}, {arch.dynamic_input_width}), "
                         f"got {dynamic.shape}")
    if static.ndim != 2 or static.shape[1] != arch.static_input_width:
        raise ShapeError(f"static input must be (batch, {arch.static_input_width}), got {static.shape}")
    if dynamic.shape[0] != static.shape[0]:
        raise ShapeError("dynamic and static batch sizes differ")
    return dynamic, static


def forward(net: Network, dynamic, static, rng: Optional[np.random.Generator] = None, *,
            noise: Optional[np.ndarray] = None):
    """Predict normalized yields.

    In eval mode returns ``(pred, None)`` and never draws noise. In train
    mode the noise is drawn from ``rng`` (or taken verbatim from ``noise``)
    and a cache for :func:`backward` is returned alongside the predictions.
    """
    arch = net.arch
    dynamic, static = _check_inputs(arch, dynamic, static)
    train = net.mode == "train"
    if train:
        if noise is None:
            if arch.noise_sigma > 0 and rng is None:
                raise StateError("train-mode forward needs an rng when noise_sigma > 0")
            noise = (rng.normal(0.0, arch.noise_sigma, size=dynamic.shape)
                     if arch.noise_sigma > 0 else np.zeros_like(dynamic))
        elif noise.shape != dynamic.shape:
            raise ShapeError(f"noise shape {noise.shape} != dynamic shape {dynamic.shape}")
        x = dynamic + noise
    else:
        x = dynamic

    lstm_cache = []
    for k in range(len(arch.lstm_sizes)):
        p = net.lstm(k)
        H, steps = _lstm_layer_forward(x, p, keep=train)
        lstm_cache.append((x, steps))
        x = H
    dyn_out = x[:, -1]

    s = static
    static_acts = [s]
    for k in range(len(arch.static_sizes)):
        s = np.maximum(s @ net.params[f"static{k}.W"].T + net.params[f"static{k}.b"], 0.0)
        static_acts.append(s)

    z = np.concatenate([dyn_out, s], axis=1)
    head_acts = [z]
    last = len(arch.head_sizes) - 1
    for k in range(len(arch.head_sizes)):
        z = z @ net.params[f"head{k}.W"].T + net.params[f"head{k}.b"]
        if k < last:
            z = np.maximum(z, 0.0)
        head_acts.append(z)
    pred = z[:, 0]
    if not train:
        return pred, None
    cache = {
        "version": net.version,
        "net_id": id(net),
        "noise": noise,
        "lstm": lstm_cache,
        "lstm_top": H,
        "static_acts": static_acts,
        "head_acts": head_acts,
    }
    return pred, cache


def predict(net: Network, dynamic, static) -> np.ndarray:
    mode = net.mode
    net.eval()
    try:
        return forward(net, dynamic, static)[0]
    finally:
        net.mode = mode


def backward(net: Network, cache, loss_grad) -> dict:
    """Gradients of the loss w.r.t. every parameter.

    ``loss_grad`` is dL/dpred, a scalar for a single sample or a
    ``(batch,)`` vector.
    """
    if cache is None:
        raise StateError("backward needs the cache of a train-mode forward")
    if cache["net_id"] != id(net) or cache["version"] != net.version:
        raise StateError("stale cache: parameters changed since the forward pass")
    arch = net.arch
    params = net.params
    grads = {}
    head_acts = cache["head_acts"]
    B = head_acts[0].shape[0]
    dz = np.broadcast_to(np.asarray(loss_grad, dtype=float), (B,)).reshape(B, 1)

    last = len(arch.head_sizes) - 1
    for k in reversed(range(len(arch.head_sizes))):
        out = head_acts[k + 1]
        if k < last:
            dz = dz * (out > 0)
        grads[f"head{k}.W"] = dz.T @ head_acts[k]
        grads[f"head{k}.b"] = dz.sum(axis=0)
        dz = dz @ params[f"head{k}.W"]

    h_top = arch.lstm_sizes[-1]
    d_dyn = dz[:, :h_top]
    ds = dz[:, h_top:]

    static_acts = cache["static_acts"]
    for k in reversed(range(len(arch.static_sizes))):
        ds = ds * (static_acts[k + 1] > 0)
        grads[f"static{k}.W"] = ds.T @ static_acts[k]
        grads[f"static{k}.b"] = ds.sum(axis=0)
        if k > 0:
            ds = ds @ params[f"static{k}.W"]

    dH = np.zeros_like(cache["lstm_top"])
    dH[:, -1] = d_dyn
    for k in reversed(range(len(arch.lstm_sizes))):
        X, steps = cache["lstm"][k]
        dH, dW, dU, db = _lstm_layer_backward(X, dH, net.lstm(k), steps)
        grads[f"lstm{k}.W"] = dW
        grads[f"lstm{k}.U"] = dU
        grads[f"lstm{k}.b"] = db
    return {name: grads[name] for name in params}


def mse_and_grad(pred, target):
    diff = pred - np.asarray(target, dtype=float)
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def grad_check(net: Network, dynamic, static, target, epsilon: float = 1e-5, *,
               noise: Optional[np.ndarray] = None, max_params: int = 10_000,
               seed: int = 0) -> float:
    """Max relative error between :func:`backward` and central differences.

    The loss is batch MSE. ``noise`` freezes the noise draw so the forward
    pass is deterministic; by default no noise is applied. Above
    ``max_params`` parameters a seeded subsample is checked.

    Relative error per element is ``|a - n| / max(|a| + |n|, 1e-7)``.
    """
    dynamic, static = _check_inputs(net.arch, dynamic, static)
    if noise is None:
        noise = np.zeros_like(dynamic)
    mode = net.mode
    net.train()
    try:
        pred, cache = forward(net, dynamic, static, noise=noise)
        _, dpred = mse_and_grad(pred, target)
        analytic = backward(net, cache, dpred)

        def loss():
            return mse_and_grad(forward(net, dynamic, static, noise=noise)[0], target)[0]

        index = [(name, j) for name, arr in net.params.items() for j in range(arr.size)]
        if len(index) > max_params:
            rng = np.random.default_rng(seed)
            pick = rng.choice(len(index), size=max_params, replace=False)
            index = [index[j] for j in sorted(pick)]
        worst = 0.0
        for name, j in index:
            flat = net.params[name].reshape(-1)
            orig = flat[j]
            flat[j] = orig + epsilon
            up = loss()
            flat[j] = orig - epsilon
            down = loss()
            flat[j] = orig
            numeric = (up - down) / (2.0 * epsilon)
            a = analytic[name].reshape(-1)[j]
            err = abs(a - numeric) / max(abs(a) + abs(numeric), 1e-7)
            worst = max(worst, err)
        return worst
    finally:
        net.mode = mode
