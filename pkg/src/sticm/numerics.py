"""Small differentiable-numerics core.

Everything here works on plain ``numpy.ndarray`` values of dtype float64 laid
out as ``channels x time``. Gradients are written by hand: each forward
function has a matching backward that returns exact partial derivatives.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class DimensionError(ValueError):
    """Raised when array shapes do not agree with a layer specification."""


class DivergenceError(FloatingPointError):
    """Raised when training produces a non-finite value."""

    def __init__(self, message: str, epoch: int | None = None):
        super().__init__(message)
        self.epoch = epoch


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel_size: int = 3
    dilation: int = 1

    def __post_init__(self):
        for name in ("in_channels", "out_channels", "kernel_size", "dilation"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")

    @property
    def reach(self) -> int:
        """Number of extra time steps one layer can see: (k - 1) * d."""
        return (self.kernel_size - 1) * self.dilation

    @property
    def weight_shape(self) -> tuple[int, int, int]:
        return (self.out_channels, self.in_channels, self.kernel_size)


@dataclass
class Parameter:
    """A trainable array together with its gradient and Adam state."""

    value: np.ndarray
    grad: np.ndarray = field(default=None)  # type: ignore[assignment]
    moment1: np.ndarray = field(default=None)  # type: ignore[assignment]
    moment2: np.ndarray = field(default=None)  # type: ignore[assignment]
    step_count: int = 0

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=np.float64)
        for name in ("grad", "moment1", "moment2"):
            arr = getattr(self, name)
            if arr is None:
                setattr(self, name, np.zeros_like(self.value))
            elif np.shape(arr) != self.value.shape:
                raise DimensionError(f"{name} shape {np.shape(arr)} != value shape {self.value.shape}")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad.fill(0.0)


def _check_input(x: np.ndarray, weights: np.ndarray, bias: np.ndarray, spec: ConvSpec) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] < 1:
        raise DimensionError(f"expected a (channels, time) input with time >= 1, got shape {x.shape}")
    if x.shape[0] != spec.in_channels:
        raise DimensionError(f"input has {x.shape[0]} channels, spec expects {spec.in_channels}")
    if weights.shape != spec.weight_shape:
        raise DimensionError(f"weights shape {weights.shape} != {spec.weight_shape}")
    if bias.shape != (spec.out_channels,):
        raise DimensionError(f"bias shape {bias.shape} != ({spec.out_channels},)")
    return x


def _taps(x: np.ndarray, spec: ConvSpec, causal: bool) -> np.ndarray:
    """Stack the k shifted copies of ``x`` into an (in*k, T) column matrix.

    Row ``c*k + i`` holds channel c shifted by d*i: into the past for the causal
    convolution, into the future for the transposed one. Out-of-range samples
    are zero.
    """
    c_in, T = x.shape
    k, d = spec.kernel_size, spec.dilation
    cols = np.zeros((c_in, k, T))
    for i in range(k):
        s = d * i
        if s >= T:
            break
        if causal:
            cols[:, i, s:] = x[:, : T - s]
        else:
            cols[:, i, : T - s] = x[:, s:]
    return cols.reshape(c_in * k, T)


def _scatter_taps(gcols: np.ndarray, spec: ConvSpec, T: int, causal: bool) -> np.ndarray:
    c_in, k, d = spec.in_channels, spec.kernel_size, spec.dilation
    gcols = gcols.reshape(c_in, k, T)
    gx = np.zeros((c_in, T))
    for i in range(k):
        s = d * i
        if s >= T:
            break
        if causal:
            gx[:, : T - s] += gcols[:, i, s:]
        else:
            gx[:, s:] += gcols[:, i, : T - s]
    return gx


def causal_conv_forward(x, weights, bias, spec: ConvSpec) -> tuple[np.ndarray, np.ndarray]:
    """Dilated causal convolution with left zero padding.

    ``out[o, t] = bias[o] + sum_{c,i} weights[o, c, i] * x[c, t - d*i]``

    Returns ``(out, cols)``; ``cols`` is the cache needed by the backward pass.
    """
    x = _check_input(x, weights, bias, spec)
    cols = _taps(x, spec, causal=True)
    out = weights.reshape(spec.out_channels, -1) @ cols
    out += bias[:, None]
    return out, cols


def causal_conv_backward(upstream, cols, weights, spec: ConvSpec):
    """Adjoint of :func:`causal_conv_forward`.

    Returns ``(grad_input, grad_weights, grad_bias)``.
    """
    T = cols.shape[1]
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (spec.out_channels, T):
        raise DimensionError(f"upstream shape {upstream.shape} != ({spec.out_channels}, {T})")
    w2 = weights.reshape(spec.out_channels, -1)
    grad_w = (upstream @ cols.T).reshape(spec.weight_shape)
    grad_b = upstream.sum(axis=1)
    grad_x = _scatter_taps(w2.T @ upstream, spec, T, causal=True)
    return grad_x, grad_w, grad_b


def transposed_conv_forward(x, weights, bias, spec: ConvSpec) -> tuple[np.ndarray, np.ndarray]:
    """Time-reversed dilated convolution, zero padded on the right.

    ``out[o, t] = bias[o] + sum_{c,i} weights[o, c, i] * x[c, t + d*i]``

    so every output column only sees input columns at or after it.
    """
    x = _check_input(x, weights, bias, spec)
    cols = _taps(x, spec, causal=False)
    out = weights.reshape(spec.out_channels, -1) @ cols
    out += bias[:, None]
    return out, cols


def transposed_conv_backward(upstream, cols, weights, spec: ConvSpec):
    T = cols.shape[1]
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (spec.out_channels, T):
        raise DimensionError(f"upstream shape {upstream.shape} != ({spec.out_channels}, {T})")
    w2 = weights.reshape(spec.out_channels, -1)
    grad_w = (upstream @ cols.T).reshape(spec.weight_shape)
    grad_b = upstream.sum(axis=1)
    grad_x = _scatter_taps(w2.T @ upstream, spec, T, causal=False)
    return grad_x, grad_w, grad_b


def relu_forward(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(max(0, x), mask)`` where ``mask`` is ``x > 0``."""
    mask = x > 0
    return np.where(mask, x, 0.0), mask


def relu_backward(upstream: np.ndarray, mask: np.ndarray) -> np.ndarray:
    # subgradient at exactly zero is 0
    return upstream * mask


class ConvLayer:
    """One convolution (causal or transposed) with its parameters.

    The layer caches what it needs during ``forward`` so a following
    ``backward`` call can accumulate into the parameter gradients.
    """

    def __init__(self, spec: ConvSpec, weight: Parameter, bias: Parameter, transposed: bool = False,
                 activation: bool = True):
        if weight.shape != spec.weight_shape:
            raise DimensionError(f"weight shape {weight.shape} != {spec.weight_shape}")
        self.spec = spec
        self.weight = weight
        self.bias = bias
        self.transposed = transposed
        self.activation = activation
        self._cols = None
        self._mask = None

    @classmethod
    def initialise(cls, spec: ConvSpec, rng: np.random.Generator, **kwargs) -> "ConvLayer":
        bound = np.sqrt(1.0 / (spec.in_channels * spec.kernel_size))
        w = rng.uniform(-bound, bound, size=spec.weight_shape)
        b = rng.uniform(-bound, bound, size=spec.out_channels)
        return cls(spec, Parameter(w), Parameter(b), **kwargs)

    @property
    def parameters(self) -> list[Parameter]:
        return [self.weight, self.bias]

    def forward(self, x: np.ndarray) -> np.ndarray:
        fwd = transposed_conv_forward if self.transposed else causal_conv_forward
        out, self._cols = fwd(x, self.weight.value, self.bias.value, self.spec)
        if self.activation:
            out, self._mask = relu_forward(out)
        return out

    def backward(self, upstream: np.ndarray) -> np.ndarray:
        if self._cols is None:
            raise RuntimeError("backward called before forward")
        if self.activation:
            upstream = relu_backward(upstream, self._mask)
        bwd = transposed_conv_backward if self.transposed else causal_conv_backward
        gx, gw, gb = bwd(upstream, self._cols, self.weight.value, self.spec)
        self.weight.grad += gw
        self.bias.grad += gb
        return gx


def adam_step(param: Parameter, learning_rate: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> Parameter:
    """Bias-corrected Adam update, in place. The gradient is left untouched."""
    if not np.all(np.isfinite(param.grad)):
        raise DivergenceError("non-finite gradient in Adam step")
    param.step_count += 1
    t = param.step_count
    param.moment1 *= beta1
    param.moment1 += (1.0 - beta1) * param.grad
    param.moment2 *= beta2
    param.moment2 += (1.0 - beta2) * (param.grad * param.grad)
    m_hat = param.moment1 / (1.0 - beta1 ** t)
    v_hat = param.moment2 / (1.0 - beta2 ** t)
    param.value -= learning_rate * m_hat / (np.sqrt(v_hat) + eps)
    return param


class Adam:
    """Adam over a fixed list of parameters.

    Steps all parameters through one flat buffer, which is much cheaper than
    looping over many small arrays. Agrees with :func:`adam_step` up to
    rounding.
    """

    def __init__(self, params: list[Parameter], learning_rate: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        sizes = [p.value.size for p in self.params]
        total = int(sum(sizes))
        self._value = np.empty(total)
        self._grad = np.zeros(total)
        self._m = np.empty(total)
        self._v = np.empty(total)
        self._tmp = np.empty(total)
        offset = 0
        # re-home every array as a view into the flat buffers
        for p, size in zip(self.params, sizes):
            sl = slice(offset, offset + size)
            for flat, name in ((self._value, "value"), (self._grad, "grad"), (self._m, "moment1"),
                               (self._v, "moment2")):
                view = flat[sl].reshape(p.value.shape)
                view[...] = getattr(p, name)
                setattr(p, name, view)
            offset += size
        self.step_count = self.params[0].step_count if self.params else 0

    def zero_grad(self) -> None:
        self._grad.fill(0.0)

    def step(self) -> None:
        g = self._grad
        if not np.all(np.isfinite(g)):
            raise DivergenceError("non-finite gradient in Adam step")
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        tmp = self._tmp
        self._m *= b1
        np.multiply(g, 1.0 - b1, out=tmp)
        self._m += tmp
        self._v *= b2
        np.multiply(g, g, out=tmp)
        tmp *= 1.0 - b2
        self._v += tmp
        # lr * m_hat / (sqrt(v_hat) + eps), folded to avoid temporaries
        np.sqrt(self._v, out=tmp)
        tmp *= 1.0 / np.sqrt(1.0 - b2 ** t)
        tmp += self.eps
        np.divide(self._m, tmp, out=tmp)
        tmp *= self.learning_rate / (1.0 - b1 ** t)
        self._value -= tmp
        for p in self.params:
            p.step_count = t
