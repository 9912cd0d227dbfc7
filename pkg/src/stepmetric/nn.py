"""Minimal dense-tensor network engine: four layer kinds, reverse-mode backprop, SGD.

Tensors are plain :class:`numpy.ndarray` objects in row-major (C) order.
Image batches use NHWC layout, i.e. ``(batch, height, width, channels)``.
Training runs in float32; ``Model.astype(np.float64)`` gives a 64-bit copy
for gradient checking.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, StateError, TrainingError

LAYER_KINDS = ("conv2d", "relu", "maxpool2x2", "linear")


@dataclass
class Parameter:
    value: np.ndarray
    grad: np.ndarray = None
    momentum_buf: np.ndarray = None

    def __post_init__(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        if self.momentum_buf is None:
            self.momentum_buf = np.zeros_like(self.value)
        if not (self.value.shape == self.grad.shape == self.momentum_buf.shape):
            raise ConfigError("parameter value/grad/momentum shapes differ")

    def zero_grad(self):
        self.grad.fill(0)


@dataclass(frozen=True)
class LayerSpec:
    """Description of one layer; only the fields relevant to ``kind`` are used."""

    kind: str
    in_channels: int = 0
    out_channels: int = 0
    kernel: int = 3
    stride: int = 1
    padding: int = 0
    in_features: int = 0
    out_features: int = 0

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ConfigError(f"unknown layer kind {self.kind!r}; expected one of {LAYER_KINDS}")


def conv_spec(in_channels, out_channels, kernel=3, stride=1, padding=1):
    return LayerSpec("conv2d", in_channels=in_channels, out_channels=out_channels,
                     kernel=kernel, stride=stride, padding=padding)


def linear_spec(in_features, out_features):
    return LayerSpec("linear", in_features=in_features, out_features=out_features)


RELU = LayerSpec("relu")
MAXPOOL = LayerSpec("maxpool2x2")


class Layer:
    """Base layer. Subclasses cache what they need in ``forward`` for ``backward``."""

    def __init__(self, spec: LayerSpec, name: str):
        self.spec = spec
        self.name = name
        self.params: dict[str, Parameter] = {}
        self._cache = None

    def out_shape(self, in_shape: tuple) -> tuple:
        return in_shape

    def forward(self, x: np.ndarray, retain: bool = True) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray, need_input_grad: bool = True) -> np.ndarray | None:
        raise NotImplementedError

    def signature(self):
        """Discrete activation pattern of the last forward (for kink detection)."""
        return None

    def __repr__(self):
        return f"{type(self).__name__}({self.name})"


def _he_uniform(rng, shape, fan_in, dtype):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv2d(Layer):
    """2-D cross-correlation; weight layout ``(k, k, in, out)``."""

    def __init__(self, spec, name, rng=None, dtype=np.float32):
        super().__init__(spec, name)
        k, cin, cout = spec.kernel, spec.in_channels, spec.out_channels
        if min(k, cin, cout, spec.stride) < 1 or spec.padding < 0:
            raise ConfigError(f"{name}: invalid conv sizes {spec}")
        w = (_he_uniform(rng, (k, k, cin, cout), k * k * cin, dtype) if rng is not None
             else np.zeros((k, k, cin, cout), dtype))
        self.params = {"weight": Parameter(w), "bias": Parameter(np.zeros(cout, dtype))}

    def out_shape(self, in_shape):
        s = self.spec
        if len(in_shape) != 3 or in_shape[2] != s.in_channels:
            raise ConfigError(f"{self.name}: expected (H, W, {s.in_channels}) input, got {tuple(in_shape)}")
        h, w, _ = in_shape
        ho = (h + 2 * s.padding - s.kernel) // s.stride + 1
        wo = (w + 2 * s.padding - s.kernel) // s.stride + 1
        if ho < 1 or wo < 1:
            raise ConfigError(f"{self.name}: input {tuple(in_shape)} too small for kernel {s.kernel}")
        return (ho, wo, s.out_channels)

    def forward(self, x, retain=True):
        s = self.spec
        n = x.shape[0]
        ho, wo, cout = self.out_shape(x.shape[1:])
        p = s.padding
        xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0))) if p else x
        cols = _im2col(xp, s.kernel, s.stride, ho, wo)
        w = self.params["weight"].value.reshape(-1, cout)
        out = cols @ w
        out += self.params["bias"].value
        if retain:
            self._cache = (cols, xp.shape, x.shape)
        return out.reshape(n, ho, wo, cout)

    def backward(self, grad, need_input_grad=True):
        s = self.spec
        cols, xp_shape, x_shape = self._cache
        cout = s.out_channels
        g2 = grad.reshape(-1, cout)
        w = self.params["weight"]
        w.grad += (cols.T @ g2).reshape(w.value.shape)
        self.params["bias"].grad += g2.sum(axis=0)
        if not need_input_grad:
            return None
        k, p, st = s.kernel, s.padding, s.stride
        n, ho, wo = grad.shape[:3]
        if st == 1 and p <= k - 1:
            # input gradient = full correlation of grad with the flipped kernel
            q = k - 1 - p
            gp = np.pad(grad, ((0, 0), (q, q), (q, q), (0, 0))) if q else grad
            hin, win = x_shape[1], x_shape[2]
            wflip = w.value[::-1, ::-1].transpose(0, 1, 3, 2).reshape(-1, s.in_channels)
            return (_im2col(gp, k, 1, hin, win) @ wflip).reshape(x_shape)
        gcols = (g2 @ w.value.reshape(-1, cout).T).reshape(n, ho, wo, k, k, s.in_channels)
        gxp = np.zeros(xp_shape, dtype=grad.dtype)
        for i in range(k):
            for j in range(k):
                gxp[:, i:i + st * (ho - 1) + 1:st, j:j + st * (wo - 1) + 1:st, :] += gcols[:, :, :, i, j, :]
        if p:
            gxp = gxp[:, p:p + x_shape[1], p:p + x_shape[2], :]
        return gxp


def _im2col(xp, k, stride, ho, wo):
    n, _, _, c = xp.shape
    win = sliding_window_view(xp, (k, k), axis=(1, 2))[:, :stride * (ho - 1) + 1:stride,
                                                         :stride * (wo - 1) + 1:stride]
    # (n, ho, wo, c, k, k) -> rows ordered (ki, kj, c) to match the weight layout
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(n * ho * wo, k * k * c)


class ReLU(Layer):
    def forward(self, x, retain=True):
        if retain:
            self._cache = x > 0
        return np.maximum(x, np.zeros((), x.dtype))

    def backward(self, grad, need_input_grad=True):
        return grad * self._cache

    def signature(self):
        return None if self._cache is None else self._cache


class MaxPool2x2(Layer):
    """2x2 max pooling with stride 2; odd trailing rows/columns are dropped."""

    def out_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[0] < 2 or in_shape[1] < 2:
            raise ConfigError(f"{self.name}: needs (H>=2, W>=2, C) input, got {tuple(in_shape)}")
        return (in_shape[0] // 2, in_shape[1] // 2, in_shape[2])

    def forward(self, x, retain=True):
        n, h, w, c = x.shape
        h2, w2 = h // 2, w // 2
        a = x[:, 0:2 * h2:2, 0:2 * w2:2]
        b = x[:, 0:2 * h2:2, 1:2 * w2:2]
        cc = x[:, 1:2 * h2:2, 0:2 * w2:2]
        d = x[:, 1:2 * h2:2, 1:2 * w2:2]
        ab = np.maximum(a, b)
        cd = np.maximum(cc, d)
        out = np.maximum(ab, cd)
        if retain:
            # window position of the first maximum in (a, b, c, d) order:
            # the top pair wins ties, and the left element within a pair
            top = ab >= cd
            left = np.where(top, a >= b, cc >= d)
            idx = (~top).astype(np.int8) * 2 + ~left
            self._cache = (idx, x.shape)
        return out

    def backward(self, grad, need_input_grad=True):
        idx, x_shape = self._cache
        h2, w2 = x_shape[1] // 2, x_shape[2] // 2
        gx = np.zeros(x_shape, dtype=grad.dtype)
        for k, (di, dj) in enumerate(((0, 0), (0, 1), (1, 0), (1, 1))):
            np.multiply(grad, idx == k, out=gx[:, di:2 * h2:2, dj:2 * w2:2])
        return gx

    def signature(self):
        return None if self._cache is None else self._cache[0]


class Linear(Layer):
    """Fully connected layer; flattens any trailing dimensions of its input."""

    def __init__(self, spec, name, rng=None, dtype=np.float32):
        super().__init__(spec, name)
        fin, fout = spec.in_features, spec.out_features
        if fin < 1 or fout < 1:
            raise ConfigError(f"{name}: invalid linear sizes {spec}")
        w = _he_uniform(rng, (fin, fout), fin, dtype) if rng is not None else np.zeros((fin, fout), dtype)
        self.params = {"weight": Parameter(w), "bias": Parameter(np.zeros(fout, dtype))}

    def out_shape(self, in_shape):
        if int(np.prod(in_shape)) != self.spec.in_features:
            raise ConfigError(f"{self.name}: expected {self.spec.in_features} input features, "
                              f"got shape {tuple(in_shape)} ({int(np.prod(in_shape))} features)")
        return (self.spec.out_features,)

    def forward(self, x, retain=True):
        self.out_shape(x.shape[1:])
        flat = x.reshape(x.shape[0], -1)
        if retain:
            self._cache = (flat, x.shape)
        out = flat @ self.params["weight"].value
        out += self.params["bias"].value
        return out

    def backward(self, grad, need_input_grad=True):
        flat, x_shape = self._cache
        self.params["weight"].grad += flat.T @ grad
        self.params["bias"].grad += grad.sum(axis=0)
        if not need_input_grad:
            return None
        return (grad @ self.params["weight"].value.T).reshape(x_shape)


_LAYER_TYPES = {"conv2d": Conv2d, "relu": ReLU, "maxpool2x2": MaxPool2x2, "linear": Linear}


class Model:
    """An ordered chain of layers with shape checking and retained activations."""

    def __init__(self, specs: Sequence[LayerSpec], input_shape: Sequence[int],
                 seed: int | None = 0, dtype=np.float32):
        self.specs = list(specs)
        self.input_shape = tuple(int(d) for d in input_shape)
        self.dtype = np.dtype(dtype)
        self.seed = seed
        rng = np.random.default_rng(seed) if seed is not None else None
        self.layers: list[Layer] = []
        counts: dict[str, int] = {}
        for spec in self.specs:
            counts[spec.kind] = counts.get(spec.kind, 0) + 1
            name = f"{spec.kind}{counts[spec.kind]}"
            cls = _LAYER_TYPES[spec.kind]
            if spec.kind in ("conv2d", "linear"):
                self.layers.append(cls(spec, name, rng=rng, dtype=self.dtype))
            else:
                self.layers.append(cls(spec, name))
        self.output_shape = self.check_shapes(self.input_shape)
        self._forwarded = False

    def check_shapes(self, in_shape):
        shape = tuple(in_shape)
        for layer in self.layers:
            shape = layer.out_shape(shape)
        return shape

    def parameters(self) -> list[tuple[str, Parameter]]:
        return [(f"{layer.name}.{key}", p) for layer in self.layers for key, p in layer.params.items()]

    def zero_grad(self):
        for _, p in self.parameters():
            p.zero_grad()

    def forward(self, x: np.ndarray, retain: bool = True) -> np.ndarray:
        """Run the chain on one image ``(H, W, C)`` or a batch ``(N, H, W, C)``."""
        x = np.asarray(x)
        single = x.ndim == len(self.input_shape)
        if single:
            x = x[None]
        if tuple(x.shape[1:]) != self.input_shape:
            first = self.layers[0].name if self.layers else "input"
            raise ConfigError(f"{first}: input shape {tuple(x.shape[1:])} does not match "
                              f"configured {self.input_shape}")
        x = x.astype(self.dtype, copy=False)
        for layer in self.layers:
            x = layer.forward(x, retain=retain)
        if retain:
            self._forwarded = True
        return x[0] if single else x

    __call__ = forward

    def backward(self, upstream_grad: np.ndarray, input_grad: bool = True) -> np.ndarray | None:
        """Accumulate parameter gradients and return the gradient w.r.t. the input.

        With ``input_grad=False`` the first layer skips its input gradient and
        ``None`` is returned (the usual case in training).
        """
        if not self._forwarded:
            raise StateError("backward called before forward (no retained activations)")
        g = np.asarray(upstream_grad, dtype=self.dtype)
        single = g.ndim == len(self.output_shape)
        if single:
            g = g[None]
        for pos in range(len(self.layers) - 1, -1, -1):
            g = self.layers[pos].backward(g, need_input_grad=input_grad or pos > 0)
        if g is None:
            return None
        return g[0] if single else g

    def activation_signature(self) -> list[np.ndarray]:
        """ReLU masks and max-pool argmax indices from the last retained forward."""
        return [s for s in (layer.signature() for layer in self.layers) if s is not None]

    def astype(self, dtype) -> "Model":
        clone = Model(self.specs, self.input_shape, seed=None, dtype=dtype)
        clone.seed = self.seed
        clone.load_state(self.state(), cast=True)
        return clone

    def copy(self) -> "Model":
        return self.astype(self.dtype)

    def state(self) -> dict[str, np.ndarray]:
        return {name: p.value for name, p in self.parameters()}

    def load_state(self, state: dict[str, np.ndarray], cast: bool = False):
        own = dict(self.parameters())
        if set(state) != set(own):
            missing = sorted(set(own) - set(state))
            extra = sorted(set(state) - set(own))
            raise ConfigError(f"state mismatch: missing {missing}, unexpected {extra}")
        for name, p in own.items():
            arr = np.asarray(state[name])
            if arr.shape != p.value.shape:
                raise ConfigError(f"{name}: shape {arr.shape} != expected {p.value.shape}")
            p.value = arr.astype(self.dtype, copy=True) if cast or arr.dtype != self.dtype else arr.copy()
            p.grad = np.zeros_like(p.value)
            p.momentum_buf = np.zeros_like(p.value)

    def flat_params(self) -> np.ndarray:
        return np.concatenate([p.value.ravel() for _, p in self.parameters()])

    def flat_grads(self) -> np.ndarray:
        return np.concatenate([p.grad.ravel() for _, p in self.parameters()])

    def set_flat_params(self, flat: np.ndarray):
        offset = 0
        for _, p in self.parameters():
            size = p.value.size
            p.value[...] = flat[offset:offset + size].reshape(p.value.shape)
            offset += size


def sgd_step(params: Iterable[tuple[str, Parameter]] | Iterable[Parameter], lr: float,
             momentum: float = 0.0, where: str = ""):
    """Momentum SGD: ``buf = momentum*buf + grad; value -= lr*buf``, then zero grads.

    All gradients are checked for finiteness before any parameter is touched.
    """
    items = [(p if isinstance(p, tuple) else ("", p)) for p in params]
    for name, p in items:
        if not np.all(np.isfinite(p.grad)):
            raise TrainingError(f"non-finite gradient in {name or 'parameter'}{' at ' + where if where else ''}")
    for _, p in items:
        p.momentum_buf *= momentum
        p.momentum_buf += p.grad
        p.value -= lr * p.momentum_buf
        p.grad.fill(0)
