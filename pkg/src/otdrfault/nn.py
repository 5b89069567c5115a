"""A small float64 neural-network engine with hand-written gradients.

Layers work on batched arrays: ``(batch, channels, length)`` for the
convolutional part and ``(batch, features)`` for dense layers.  A dense layer
flattens whatever it receives in row-major (channel, then position) order.

``forward`` returns the output plus a cache; ``backward`` consumes that cache
and returns per-layer parameter gradients and the input gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    pass


class Layer:
    kind = "Layer"
    param_names: tuple[str, ...] = ()

    def __init__(self) -> None:
        self.params: dict[str, np.ndarray] = {}

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, Any]:
        raise NotImplementedError

    def backward(self, cache: Any, gy: np.ndarray) -> tuple[dict[str, np.ndarray], np.ndarray]:
        raise NotImplementedError

    def output_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        return in_shape

    def spec(self) -> dict[str, Any]:
        return {"kind": self.kind}


class Conv1d(Layer):
    """Valid (unpadded) cross-correlation."""

    kind = "Conv1d"
    param_names = ("weight", "bias")

    def __init__(self, in_ch: int, out_ch: int, kernel: int, stride: int = 1):
        super().__init__()
        if min(in_ch, out_ch, kernel, stride) < 1:
            raise ShapeError("Conv1d dimensions must be positive")
        self.in_ch, self.out_ch, self.kernel, self.stride = in_ch, out_ch, kernel, stride
        self.params = {
            "weight": np.zeros((out_ch, in_ch, kernel)),
            "bias": np.zeros(out_ch),
        }

    def output_shape(self, in_shape):
        c, n = in_shape
        if c != self.in_ch:
            raise ShapeError(f"Conv1d expects {self.in_ch} channels, got {c}")
        if n < self.kernel:
            raise ShapeError(f"Conv1d kernel {self.kernel} longer than input {n}")
        return (self.out_ch, (n - self.kernel) // self.stride + 1)

    def forward(self, x):
        b, c, n = x.shape
        _, n_out = self.output_shape((c, n))
        win = sliding_window_view(x, self.kernel, axis=2)[:, :, :: self.stride][:, :, :n_out]
        cols = win.transpose(0, 2, 1, 3).reshape(b, n_out, c * self.kernel)
        wmat = self.params["weight"].reshape(self.out_ch, -1)
        y = cols @ wmat.T + self.params["bias"]
        return np.ascontiguousarray(y.transpose(0, 2, 1)), (x.shape, cols)

    def backward(self, cache, gy):
        x_shape, cols = cache
        b, c, n = x_shape
        n_out = gy.shape[2]
        gyt = gy.transpose(0, 2, 1)
        wmat = self.params["weight"].reshape(self.out_ch, -1)
        gw = np.tensordot(gyt, cols, axes=([0, 1], [0, 1])).reshape(self.params["weight"].shape)
        gb = gy.sum(axis=(0, 2))
        dcols = (gyt @ wmat).reshape(b, n_out, c, self.kernel)
        gx = np.zeros(x_shape)
        s = self.stride
        stop = s * (n_out - 1) + 1
        for k in range(self.kernel):
            gx[:, :, k : k + stop : s] += dcols[:, :, :, k].transpose(0, 2, 1)
        return {"weight": gw, "bias": gb}, gx

    def spec(self):
        return {
            "kind": self.kind,
            "in_ch": self.in_ch,
            "out_ch": self.out_ch,
            "kernel": self.kernel,
            "stride": self.stride,
        }


class ReLU(Layer):
    kind = "ReLU"

    def forward(self, x):
        mask = x > 0
        return np.where(mask, x, 0.0), mask

    def backward(self, cache, gy):
        return {}, np.where(cache, gy, 0.0)


class MaxPool1d(Layer):
    """Non-overlapping max over windows of ``width``; a trailing remainder is dropped."""

    kind = "MaxPool1d"

    def __init__(self, width: int):
        super().__init__()
        if width < 1:
            raise ShapeError("MaxPool1d width must be positive")
        self.width = width

    def output_shape(self, in_shape):
        c, n = in_shape
        if n < self.width:
            raise ShapeError(f"MaxPool1d width {self.width} longer than input {n}")
        return (c, n // self.width)

    def forward(self, x):
        b, c, n = x.shape
        m = n // self.width
        if m == 0:
            raise ShapeError(f"MaxPool1d width {self.width} longer than input {n}")
        blocks = x[:, :, : m * self.width].reshape(b, c, m, self.width)
        arg = blocks.argmax(axis=3)  # first maximum wins ties
        y = np.take_along_axis(blocks, arg[..., None], axis=3)[..., 0]
        return y, (x.shape, arg)

    def backward(self, cache, gy):
        x_shape, arg = cache
        b, c, n = x_shape
        m = arg.shape[2]
        blocks = np.zeros((b, c, m, self.width))
        np.put_along_axis(blocks, arg[..., None], gy[..., None], axis=3)
        gx = np.zeros(x_shape)
        gx[:, :, : m * self.width] = blocks.reshape(b, c, m * self.width)
        return {}, gx

    def spec(self):
        return {"kind": self.kind, "width": self.width}


class Dense(Layer):
    kind = "Dense"
    param_names = ("weight", "bias")

    def __init__(self, n_in: int, n_out: int):
        super().__init__()
        if min(n_in, n_out) < 1:
            raise ShapeError("Dense dimensions must be positive")
        self.n_in, self.n_out = n_in, n_out
        self.params = {"weight": np.zeros((n_out, n_in)), "bias": np.zeros(n_out)}

    def output_shape(self, in_shape):
        size = int(np.prod(in_shape))
        if size != self.n_in:
            raise ShapeError(f"Dense expects {self.n_in} inputs, got {size}")
        return (self.n_out,)

    def forward(self, x):
        flat = x.reshape(x.shape[0], -1)
        if flat.shape[1] != self.n_in:
            raise ShapeError(f"Dense expects {self.n_in} inputs, got {flat.shape[1]}")
        return flat @ self.params["weight"].T + self.params["bias"], (x.shape, flat)

    def backward(self, cache, gy):
        x_shape, flat = cache
        gw = gy.T @ flat
        gb = gy.sum(axis=0)
        gx = (gy @ self.params["weight"]).reshape(x_shape)
        return {"weight": gw, "bias": gb}, gx

    def spec(self):
        return {"kind": self.kind, "in": self.n_in, "out": self.n_out}


class Softmax(Layer):
    kind = "Softmax"

    def forward(self, x):
        s = softmax(x)
        return s, s

    def backward(self, cache, gy):
        s = cache
        return {}, s * (gy - np.sum(gy * s, axis=-1, keepdims=True))


def softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def check_shapes(layers: Sequence[Layer], in_shape: tuple[int, ...]) -> list[tuple[int, ...]]:
    """Shape after every layer, starting with ``in_shape``."""
    shapes = [tuple(in_shape)]
    for layer in layers:
        shapes.append(layer.output_shape(shapes[-1]))
    return shapes


def _batched(x: np.ndarray, layers: Sequence[Layer]) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    first = layers[0] if layers else None
    unbatched_ndim = 1 if isinstance(first, (Dense, Softmax)) else 2
    if x.ndim == unbatched_ndim:
        return x[None], True
    return x, False


def forward(layers: Sequence[Layer], x: np.ndarray) -> tuple[np.ndarray, list[Any]]:
    """Run ``x`` through ``layers``; accepts a single sample or a batch."""
    x, squeeze = _batched(x, layers)
    caches = []
    for layer in layers:
        x, c = layer.forward(x)
        caches.append(c)
    return (x[0] if squeeze else x), [squeeze, caches]


def backward(
    layers: Sequence[Layer], cache: list[Any], grad_out: np.ndarray
) -> tuple[list[dict[str, np.ndarray]], np.ndarray]:
    """Reverse-mode gradients for the cache produced by :func:`forward`."""
    squeeze, caches = cache
    if len(caches) != len(layers):
        raise ShapeError("cache does not match the layer stack")
    g = np.asarray(grad_out, dtype=np.float64)
    if squeeze:
        g = g[None]
    grads: list[dict[str, np.ndarray]] = [{} for _ in layers]
    for k in range(len(layers) - 1, -1, -1):
        grads[k], g = layers[k].backward(caches[k], g)
    return grads, (g[0] if squeeze else g)


def smooth_l1(d: float) -> tuple[float, float]:
    """Huber loss with unit threshold and its derivative."""
    if abs(d) < 1.0:
        return 0.5 * d * d, d
    return abs(d) - 0.5, float(np.sign(d))


def loss_ce_smoothl1(
    logits: np.ndarray,
    class_target: int,
    pos_pred: float,
    pos_target: float | None,
    lam: float = 1.0,
    normal_index: int = 0,
) -> tuple[float, np.ndarray, float]:
    """Cross-entropy plus weighted smooth-L1 position loss for one sample.

    The position term only applies when ``class_target`` is not the normal
    class.  Returns ``(loss, d_loss/d_logits, d_loss/d_pos_pred)``.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if not 0 <= int(class_target) < logits.shape[-1]:
        raise ValueError(f"bad class index {class_target}")
    z = logits - logits.max()
    log_p = z - np.log(np.sum(np.exp(z)))
    loss = -float(log_p[class_target])
    g_logits = np.exp(log_p)
    g_logits[class_target] -= 1.0
    g_pos = 0.0
    if class_target != normal_index:
        if pos_target is None:
            raise ValueError("fault targets need a position")
        sl, d_sl = smooth_l1(float(pos_pred) - float(pos_target))
        loss += lam * sl
        g_pos = lam * d_sl
    return loss, g_logits, g_pos


def batch_loss(
    logits: np.ndarray,
    targets: np.ndarray,
    pos_pred: np.ndarray,
    pos_target: np.ndarray,
    lam: float = 1.0,
    normal_index: int = 0,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean of :func:`loss_ce_smoothl1` over a batch, vectorized."""
    n = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    log_p = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    rows = np.arange(n)
    ce = -log_p[rows, targets]
    g_logits = np.exp(log_p)
    g_logits[rows, targets] -= 1.0
    faulty = targets != normal_index
    d = np.where(faulty, pos_pred - np.nan_to_num(pos_target), 0.0)
    small = np.abs(d) < 1.0
    sl = np.where(small, 0.5 * d * d, np.abs(d) - 0.5)
    dsl = np.where(small, d, np.sign(d))
    loss = float(np.mean(ce + lam * np.where(faulty, sl, 0.0)))
    return loss, g_logits / n, lam * np.where(faulty, dsl, 0.0) / n


@dataclass
class OptimizerState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(
    params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: OptimizerState
) -> tuple[list[np.ndarray], OptimizerState]:
    """One bias-corrected Adam update.  Inputs are left untouched."""
    if len(params) != len(grads):
        raise ShapeError("params and grads differ in length")
    for p, g in zip(params, grads):
        if np.shape(p) != np.shape(g):
            raise ShapeError(f"gradient shape {np.shape(g)} does not match {np.shape(p)}")
    m = state.m or [np.zeros_like(p, dtype=np.float64) for p in params]
    v = state.v or [np.zeros_like(p, dtype=np.float64) for p in params]
    if len(m) != len(params) or any(a.shape != np.shape(p) for a, p in zip(m, params)):
        raise ShapeError("optimizer state does not match parameters")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    step_size = state.lr / (1.0 - b1**t)
    bc2 = 1.0 - b2**t
    new_params, new_m, new_v = [], [], []
    for p, g, mk, vk in zip(params, grads, m, v):
        g = np.asarray(g, dtype=np.float64)
        mk = b1 * mk + (1.0 - b1) * g
        vk = b2 * vk + (1.0 - b2) * (g * g)
        new_params.append(np.asarray(p, dtype=np.float64) - step_size * mk / (np.sqrt(vk / bc2) + state.eps))
        new_m.append(mk)
        new_v.append(vk)
    new_state = OptimizerState(state.lr, b1, b2, state.eps, t, new_m, new_v)
    return new_params, new_state


def parameters(layers: Sequence[Layer]) -> list[np.ndarray]:
    return [layer.params[name] for layer in layers for name in layer.param_names]


def flat_grads(layers: Sequence[Layer], grads: Sequence[dict[str, np.ndarray]]) -> list[np.ndarray]:
    return [g[name] for layer, g in zip(layers, grads) for name in layer.param_names]


def assign_parameters(layers: Sequence[Layer], values: Sequence[np.ndarray]) -> None:
    it = iter(values)
    for layer in layers:
        for name in layer.param_names:
            layer.params[name] = next(it)


def he_init(layers: Sequence[Layer], rng: np.random.Generator) -> None:
    """He-normal weights and zero biases, drawn in layer order."""
    for layer in layers:
        if isinstance(layer, Conv1d):
            fan_in = layer.in_ch * layer.kernel
        elif isinstance(layer, Dense):
            fan_in = layer.n_in
        else:
            continue
        w = layer.params["weight"]
        layer.params["weight"] = rng.standard_normal(w.shape) * np.sqrt(2.0 / fan_in)
        layer.params["bias"] = np.zeros_like(layer.params["bias"])


def layer_to_dict(layer: Layer) -> dict[str, Any]:
    d = layer.spec()
    if layer.param_names:
        d["weights"] = layer.params["weight"].ravel().tolist()
        d["bias"] = layer.params["bias"].ravel().tolist()
    return d


def layer_from_dict(d: dict[str, Any]) -> Layer:
    kind = d.get("kind")
    if kind == "Conv1d":
        layer: Layer = Conv1d(int(d["in_ch"]), int(d["out_ch"]), int(d["kernel"]), int(d.get("stride", 1)))
    elif kind == "Dense":
        layer = Dense(int(d["in"]), int(d["out"]))
    elif kind == "ReLU":
        return ReLU()
    elif kind == "MaxPool1d":
        return MaxPool1d(int(d["width"]))
    elif kind == "Softmax":
        return Softmax()
    else:
        raise ShapeError(f"unknown layer kind {kind!r}")
    for name, key in (("weight", "weights"), ("bias", "bias")):
        want = layer.params[name].shape
        arr = np.asarray(d[key], dtype=np.float64)
        if arr.size != int(np.prod(want)):
            raise ShapeError(f"{kind} {key}: expected {int(np.prod(want))} values, got {arr.size}")
        layer.params[name] = arr.reshape(want)
    return layer
