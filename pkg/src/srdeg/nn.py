"""A small numpy tensor engine for the super-resolution networks.

Activations are ``(N, C, H, W)`` float arrays. Each layer caches what it
needs during ``forward`` and returns the input gradient from ``backward``,
accumulating parameter gradients into ``Param.grad``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    pass


# -- functional ops ----------------------------------------------------------

def _windows(xp: np.ndarray, k: int, stride: int, out_h: int, out_w: int) -> np.ndarray:
    """View of shape ``(N, C, out_h, out_w, k, k)`` over a padded input."""
    win = sliding_window_view(xp, (k, k), axis=(2, 3))
    return win[:, :, : (out_h - 1) * stride + 1 : stride, : (out_w - 1) * stride + 1 : stride]


def _scatter(cols: np.ndarray, weights: np.ndarray, stride: int, full_h: int, full_w: int) -> np.ndarray:
    """Adjoint of the window gather.

    ``cols`` is ``(N, A, H, W)``, ``weights`` is ``(A, B, k, k)``; returns
    ``(N, B, full_h, full_w)`` with ``out[n, b, h*s+i, w*s+j] += cols[n, a, h, w] * weights[a, b, i, j]``.
    """
    n, _, h, w = cols.shape
    _, b, k, _ = weights.shape
    out = np.zeros((n, b, full_h, full_w), dtype=np.result_type(cols, weights))
    taps = np.tensordot(cols, weights, axes=([1], [0]))  # N, H, W, B, k, k
    taps = np.ascontiguousarray(taps.transpose(0, 3, 4, 5, 1, 2))
    for i in range(k):
        for j in range(k):
            out[:, :, i : i + (h - 1) * stride + 1 : stride, j : j + (w - 1) * stride + 1 : stride] += taps[:, :, i, j]
    return out


def conv2d_forward(x, weights, bias, stride: int = 1, pad: int = 0) -> np.ndarray:
    """Cross-correlation with zero padding. ``weights`` is ``(out, in, k, k)``."""
    n, c, h, w = x.shape
    o, ci, k, k2 = weights.shape
    if ci != c or k != k2:
        raise ShapeError(f"conv weights {weights.shape} do not fit input {x.shape}")
    oh = (h + 2 * pad - k) // stride + 1
    ow = (w + 2 * pad - k) // stride + 1
    if oh < 1 or ow < 1:
        raise ShapeError(f"conv output would be empty for input {x.shape}, k={k}, pad={pad}")
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    win = _windows(xp, k, stride, oh, ow)
    out = np.tensordot(win, weights, axes=([1, 4, 5], [1, 2, 3]))  # N, oh, ow, O
    out = out.transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias[None, :, None, None]
    return np.ascontiguousarray(out)


def conv2d_backward(x, weights, grad_out, stride: int = 1, pad: int = 0):
    """Return ``(grad_x, grad_w, grad_b)`` for :func:`conv2d_forward`."""
    n, c, h, w = x.shape
    o, _, k, _ = weights.shape
    gn, go, oh, ow = grad_out.shape
    if gn != n or go != o:
        raise ShapeError(f"grad_out {grad_out.shape} does not match conv output channels {o}")
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    win = _windows(xp, k, stride, oh, ow)
    grad_w = np.tensordot(grad_out, win, axes=([0, 2, 3], [0, 2, 3]))  # O, C, k, k
    grad_b = grad_out.sum(axis=(0, 2, 3))
    grad_xp = _scatter(grad_out, weights, stride, h + 2 * pad, w + 2 * pad)
    grad_x = grad_xp[:, :, pad : pad + h, pad : pad + w] if pad else grad_xp
    return np.ascontiguousarray(grad_x), grad_w, grad_b


def deconv2d_forward(x, weights, bias, stride: int = 2, pad: int = 0, output_pad: int = 0) -> np.ndarray:
    """Transposed convolution. ``weights`` is ``(in, out, k, k)``.

    Output size is ``(H - 1) * stride + k - 2 * pad + output_pad``.
    """
    n, c, h, w = x.shape
    ci, o, k, _ = weights.shape
    if ci != c:
        raise ShapeError(f"deconv weights {weights.shape} do not fit input {x.shape}")
    if output_pad > pad:
        raise ShapeError("output_pad must not exceed pad")
    full_h = (h - 1) * stride + k
    full_w = (w - 1) * stride + k
    full = _scatter(x, weights, stride, full_h, full_w)
    oh = full_h - 2 * pad + output_pad
    ow = full_w - 2 * pad + output_pad
    if oh < 1 or ow < 1:
        raise ShapeError(f"deconv output would be empty for input {x.shape}")
    out = full[:, :, pad : pad + oh, pad : pad + ow]
    if bias is not None:
        out = out + bias[None, :, None, None]
    return np.ascontiguousarray(out)


def deconv2d_backward(x, weights, grad_out, stride: int = 2, pad: int = 0):
    n, c, h, w = x.shape
    _, o, k, _ = weights.shape
    full_h = (h - 1) * stride + k
    full_w = (w - 1) * stride + k
    oh, ow = grad_out.shape[2:]
    gfull = np.zeros((n, o, full_h, full_w), dtype=grad_out.dtype)
    gfull[:, :, pad : pad + oh, pad : pad + ow] = grad_out
    win = _windows(gfull, k, stride, h, w)  # N, O, h, w, k, k
    grad_x = np.tensordot(win, weights, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    grad_w = np.tensordot(x, win, axes=([0, 2, 3], [0, 2, 3]))  # C, O, k, k
    grad_b = grad_out.sum(axis=(0, 2, 3))
    return np.ascontiguousarray(grad_x), grad_w, grad_b


def prelu_forward(x, slope):
    return np.where(x > 0, x, slope[None, :, None, None] * x)


def prelu_backward(x, slope, grad_out):
    neg = x <= 0
    grad_x = np.where(neg, slope[None, :, None, None] * grad_out, grad_out)
    grad_slope = (grad_out * x * neg).sum(axis=(0, 2, 3))
    return grad_x, grad_slope


def pixel_shuffle(x, s: int) -> np.ndarray:
    """``(N, C*s*s, H, W) -> (N, C, H*s, W*s)``.

    ``out[c, y, x] = in[c*s*s + (y % s)*s + (x % s), y // s, x // s]``.
    """
    n, c, h, w = x.shape
    if c % (s * s):
        raise ShapeError(f"channels {c} not divisible by {s * s}")
    co = c // (s * s)
    return x.reshape(n, co, s, s, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, co, h * s, w * s)


def pixel_unshuffle(x, s: int) -> np.ndarray:
    n, c, h, w = x.shape
    if h % s or w % s:
        raise ShapeError(f"spatial dims {h}x{w} not divisible by {s}")
    return x.reshape(n, c, h // s, s, w // s, s).transpose(0, 1, 3, 5, 2, 4).reshape(n, c * s * s, h // s, w // s)


def mse_loss(pred, target) -> tuple[float, np.ndarray]:
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} and target {target.shape} differ")
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


# -- layers ------------------------------------------------------------------

@dataclass
class Param:
    value: np.ndarray
    grad: np.ndarray = None

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=np.float64)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)

    def zero_grad(self):
        self.grad[...] = 0.0


@dataclass
class LayerSpec:
    kind: str
    k: int = 0
    n: int = 0
    stride: int = 1
    pad: int = 0
    skip_from: int | None = None


class Layer:
    kind = "layer"

    def params(self) -> dict[str, Param]:
        return {}

    def buffers(self) -> dict[str, np.ndarray]:
        return {}

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    @property
    def spec(self) -> LayerSpec:
        return LayerSpec(self.kind)


def he_normal(rng: np.random.Generator, shape, fan_in: float) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


class Conv2d(Layer):
    kind = "conv"

    def __init__(self, in_ch: int, out_ch: int, k: int, stride: int = 1, pad: int = 0, rng=None):
        if k < 1 or out_ch < 1 or in_ch < 1:
            raise ValueError("conv needs k, in_ch, out_ch >= 1")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_ch, self.out_ch, self.k, self.stride, self.pad = in_ch, out_ch, k, stride, pad
        self.weight = Param(he_normal(rng, (out_ch, in_ch, k, k), in_ch * k * k))
        self.bias = Param(np.zeros(out_ch))
        self._x = None

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def forward(self, x, training=False):
        self._x = x
        return conv2d_forward(x, self.weight.value, self.bias.value, self.stride, self.pad)

    def backward(self, grad):
        gx, gw, gb = conv2d_backward(self._x, self.weight.value, grad, self.stride, self.pad)
        self.weight.grad += gw
        self.bias.grad += gb
        return gx

    @property
    def spec(self):
        return LayerSpec(self.kind, self.k, self.out_ch, self.stride, self.pad)


class Deconv2d(Layer):
    kind = "deconv"

    def __init__(self, in_ch: int, out_ch: int, k: int, stride: int = 2, pad: int = 0,
                 output_pad: int = 0, rng=None):
        if k < 1 or out_ch < 1 or in_ch < 1:
            raise ValueError("deconv needs k, in_ch, out_ch >= 1")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_ch, self.out_ch, self.k = in_ch, out_ch, k
        self.stride, self.pad, self.output_pad = stride, pad, output_pad
        fan_in = in_ch * k * k
        self.weight = Param(he_normal(rng, (in_ch, out_ch, k, k), fan_in))
        self.bias = Param(np.zeros(out_ch))
        self._x = None

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def forward(self, x, training=False):
        self._x = x
        return deconv2d_forward(x, self.weight.value, self.bias.value, self.stride, self.pad, self.output_pad)

    def backward(self, grad):
        gx, gw, gb = deconv2d_backward(self._x, self.weight.value, grad, self.stride, self.pad)
        self.weight.grad += gw
        self.bias.grad += gb
        return gx

    @property
    def spec(self):
        return LayerSpec(self.kind, self.k, self.out_ch, self.stride, self.pad)


class PReLU(Layer):
    kind = "prelu"

    def __init__(self, channels: int, init: float = 0.25):
        self.slope = Param(np.full(channels, init))
        self._x = None

    def params(self):
        return {"slope": self.slope}

    def forward(self, x, training=False):
        if x.shape[1] != self.slope.value.size:
            raise ShapeError(f"PReLU has {self.slope.value.size} slopes, input has {x.shape[1]} channels")
        self._x = x
        return prelu_forward(x, self.slope.value)

    def backward(self, grad):
        gx, gs = prelu_backward(self._x, self.slope.value, grad)
        self.slope.grad += gs
        return gx


class BatchNorm2d(Layer):
    """Per-channel batch normalisation.

    Training mode normalises with the (biased) batch statistics and folds
    them into the running estimates as ``running = momentum * running +
    (1 - momentum) * batch``; inference mode uses the running estimates.
    """

    kind = "batchnorm"

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.9):
        self.gamma = Param(np.ones(channels))
        self.beta = Param(np.zeros(channels))
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.eps, self.momentum = eps, momentum
        self._cache = None
        self._infer_cache = None

    def params(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def forward(self, x, training=False):
        c = self.gamma.value.size
        if x.shape[1] != c:
            raise ShapeError(f"BatchNorm has {c} channels, input has {x.shape[1]}")
        g = self.gamma.value[None, :, None, None]
        b = self.beta.value[None, :, None, None]
        if training:
            count = x.shape[0] * x.shape[2] * x.shape[3]
            if count < 2:
                raise ShapeError("batch norm in training mode needs N*H*W >= 2")
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            self.running_mean[...] = self.momentum * self.running_mean + (1 - self.momentum) * mean
            self.running_var[...] = self.momentum * self.running_var + (1 - self.momentum) * var
            inv = 1.0 / np.sqrt(var + self.eps)
            xhat = (x - mean[None, :, None, None]) * inv[None, :, None, None]
            self._cache = (xhat, inv)
        else:
            inv = 1.0 / np.sqrt(self.running_var + self.eps)
            xhat = (x - self.running_mean[None, :, None, None]) * inv[None, :, None, None]
            self._cache = None
            self._infer_cache = (xhat, inv)
        return g * xhat + b

    def backward(self, grad):
        if self._cache is None:
            xhat, inv = self._infer_cache
            self.gamma.grad += (grad * xhat).sum(axis=(0, 2, 3))
            self.beta.grad += grad.sum(axis=(0, 2, 3))
            return grad * (self.gamma.value * inv)[None, :, None, None]
        xhat, inv = self._cache
        gsum = grad.sum(axis=(0, 2, 3))
        gxhat_sum = (grad * xhat).sum(axis=(0, 2, 3))
        self.gamma.grad += gxhat_sum
        self.beta.grad += gsum
        count = grad.shape[0] * grad.shape[2] * grad.shape[3]
        gx = grad - (gsum / count)[None, :, None, None] - xhat * (gxhat_sum / count)[None, :, None, None]
        return gx * (self.gamma.value * inv)[None, :, None, None]


class PixelShuffle(Layer):
    kind = "pixelshuffle"

    def __init__(self, s: int = 2):
        if s < 2:
            raise ValueError("pixel shuffle factor must be >= 2")
        self.s = s

    def forward(self, x, training=False):
        return pixel_shuffle(x, self.s)

    def backward(self, grad):
        return pixel_unshuffle(grad, self.s)

    @property
    def spec(self):
        return LayerSpec(self.kind, stride=self.s)


class Add(Layer):
    """Adds the output of layer ``skip_from`` (``-1`` = graph input)."""

    kind = "add"

    def __init__(self, skip_from: int):
        self.skip_from = skip_from

    def forward(self, x, training=False):
        raise RuntimeError("Add is evaluated by the graph, not standalone")

    def backward(self, grad):
        return grad

    @property
    def spec(self):
        return LayerSpec(self.kind, skip_from=self.skip_from)


@dataclass
class ModelGraph:
    """Layers evaluated in list order with additive skip connections."""

    layers: list[Layer]
    scale: int = 2
    kind: str = "custom"
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Add) and not -1 <= layer.skip_from < i:
                raise ValueError(f"layer {i}: skip must come from an earlier layer, got {layer.skip_from}")

    @property
    def skips(self) -> list[tuple[int, int]]:
        return [(l.skip_from, i) for i, l in enumerate(self.layers) if isinstance(l, Add)]

    @property
    def specs(self) -> list[LayerSpec]:
        return [l.spec for l in self.layers]

    def named_params(self) -> list[tuple[str, Param]]:
        out = []
        for i, layer in enumerate(self.layers):
            for name, p in layer.params().items():
                out.append((f"{i}.{layer.kind}.{name}", p))
        return out

    def named_buffers(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for i, layer in enumerate(self.layers):
            for name, b in layer.buffers().items():
                out.append((f"{i}.{layer.kind}.{name}", b))
        return out

    def state(self) -> dict[str, np.ndarray]:
        state = {name: p.value.copy() for name, p in self.named_params()}
        state.update({name: b.copy() for name, b in self.named_buffers()})
        return state

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for name, p in self.named_params():
            p.value[...] = state[name]
        for name, b in self.named_buffers():
            b[...] = state[name]

    def num_params(self) -> int:
        return sum(p.value.size for _, p in self.named_params())

    def zero_grad(self):
        for _, p in self.named_params():
            p.zero_grad()

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 4 or x.shape[1] != 1:
            raise ShapeError(f"expected input of shape (N, 1, H, W), got {x.shape}")
        outputs = {-1: x}
        for i, layer in enumerate(self.layers):
            try:
                if isinstance(layer, Add):
                    other = outputs[layer.skip_from]
                    if other.shape != x.shape:
                        raise ShapeError(f"skip from {layer.skip_from} has shape {other.shape}, expected {x.shape}")
                    x = x + other
                else:
                    x = layer.forward(x, training)
            except ShapeError as exc:
                raise ShapeError(f"layer {i} ({layer.kind}): {exc}") from None
            outputs[i] = x
        return x

    def backward(self, grad: np.ndarray) -> np.ndarray:
        """Backpropagate ``grad`` from the last forward call; returns input gradient."""
        pending: dict[int, np.ndarray] = {}
        for i in range(len(self.layers) - 1, -1, -1):
            if i in pending:
                grad = grad + pending.pop(i)
            layer = self.layers[i]
            if isinstance(layer, Add):
                j = layer.skip_from
                pending[j] = pending[j] + grad if j in pending else grad
            grad = layer.backward(grad)
        if -1 in pending:
            grad = grad + pending.pop(-1)
        return grad

    __call__ = forward

    def upscale(self, img: np.ndarray) -> np.ndarray:
        """Super-resolve one 2-D image (inference mode, output clamped to [0, 1])."""
        out = self.forward(np.asarray(img, dtype=np.float64)[None, None], training=False)
        return np.clip(out[0, 0], 0.0, 1.0)
