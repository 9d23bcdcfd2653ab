"""Convolution, pooling and activation layers over (C, H, W) spectro-temporal tensors.

H is the spectral axis, W the temporal axis. Every function accepts either a
single tensor (C, H, W) or a batch (N, C, H, W); the batch form is what the
models use to push all spliced frames of an utterance through at once.

Convolution is cross-correlation with valid geometry (no padding) and one
bias scalar per output map.
"""

import enum
from dataclasses import dataclass, replace

import numpy as np

from .errors import GeometryError, SpecError, StaleCache


class ConvType(str, enum.Enum):
    S = "S"
    T = "T"
    ST = "ST"
    FST = "FST"


class Activation(str, enum.Enum):
    RELU = "relu"
    SIGMOID = "sigmoid"
    TANH = "tanh"
    IDENTITY = "identity"


class PoolMode(str, enum.Enum):
    MAX = "max"
    MEAN = "mean"


# pool window and stride per type: S pools spectrally, T/FST temporally, ST both
_POOL_PRESETS = {
    ConvType.S: ((3, 1), (2, 1)),
    ConvType.T: ((1, 3), (1, 2)),
    ConvType.ST: ((3, 3), (2, 2)),
    ConvType.FST: ((1, 3), (1, 2)),
}


@dataclass(frozen=True)
class ConvLayerSpec:
    conv_type: ConvType
    in_channels: int
    out_maps: int
    filter_h: int
    filter_w: int
    stride: tuple = (1, 1)
    pool: tuple = (1, 1)
    pool_stride: tuple = (1, 1)
    activation: Activation = Activation.RELU
    pool_mode: PoolMode = PoolMode.MAX

    def __post_init__(self):
        try:
            for name, kind in (("conv_type", ConvType), ("activation", Activation),
                               ("pool_mode", PoolMode)):
                object.__setattr__(self, name, kind(getattr(self, name)))
        except ValueError as e:
            raise SpecError(str(e)) from e
        for name in ("stride", "pool", "pool_stride"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))

    @classmethod
    def preset(cls, conv_type, in_channels, out_maps, filter_h, filter_w,
               activation=Activation.RELU, pool_mode=PoolMode.MAX):
        """Layer with the fixed pooling (size 3, stride 2) of its type."""
        conv_type = ConvType(conv_type)
        pool, pool_stride = _POOL_PRESETS[conv_type]
        return cls(conv_type, in_channels, out_maps, filter_h, filter_w,
                   pool=pool, pool_stride=pool_stride,
                   activation=Activation(activation), pool_mode=PoolMode(pool_mode))

    def without_pooling(self):
        return replace(self, pool=(1, 1), pool_stride=(1, 1))

    @property
    def has_pooling(self):
        return tuple(self.pool) != (1, 1) or tuple(self.pool_stride) != (1, 1)

    def conv_output_shape(self, in_h, in_w):
        h, w = self.filter_h, self.filter_w
        s, t = self.stride
        if in_h < h or in_w < w:
            raise GeometryError(f"{h}x{w} filter does not fit a {in_h}x{in_w} input")
        return (in_h - h) // s + 1, (in_w - w) // t + 1

    def pool_output_shape(self, in_h, in_w):
        m, n = self.pool
        s, t = self.pool_stride
        if in_h < m or in_w < n:
            raise GeometryError(f"{m}x{n} pool does not fit a {in_h}x{in_w} map")
        return (in_h - m) // s + 1, (in_w - n) // t + 1

    def output_shape(self, in_h, in_w):
        """(K, H2, W2) produced from an (in_channels, in_h, in_w) input."""
        return (self.out_maps,) + self.pool_output_shape(*self.conv_output_shape(in_h, in_w))


def validate_spec(spec, num_bands):
    """Check the filter shape against its type for an input with ``num_bands`` rows.

    S: w = 1, 1 <= h <= M.  T: h = 1, w >= 2.  ST: 2 <= h <= M - 1, w >= 2.
    FST: h = M, w >= 2.
    """
    h, w, M = spec.filter_h, spec.filter_w, num_bands
    ct = ConvType(spec.conv_type)
    if ct is ConvType.S:
        if w != 1:
            raise SpecError(f"S-type filters need width 1, got {w}")
        if not 1 <= h <= M:
            raise SpecError(f"S-type filters need 1 <= h <= {M}, got {h}")
    elif ct is ConvType.T:
        if h != 1:
            raise SpecError(f"T-type filters need height 1, got {h}")
        if w < 2:
            raise SpecError(f"T-type filters need width >= 2, got {w}")
    elif ct is ConvType.ST:
        if not 2 <= h <= M - 1:
            raise SpecError(f"ST-type filters need 2 <= h <= {M - 1}, got {h}")
        if w < 2:
            raise SpecError(f"ST-type filters need width >= 2, got {w}")
    elif ct is ConvType.FST:
        if h != M:
            raise SpecError(f"FST-type filters must span all {M} bands, got h={h}")
        if w < 2:
            raise SpecError(f"FST-type filters need width >= 2, got {w}")
    if spec.in_channels < 1 or spec.out_maps < 1:
        raise SpecError("in_channels and out_maps must be positive")
    if min(spec.stride) < 1 or min(spec.pool) < 1 or min(spec.pool_stride) < 1:
        raise SpecError("strides and pool sizes must be positive")


@dataclass
class ConvParams:
    maps: np.ndarray   # (K, C, h, w)
    bias: np.ndarray   # (K,)

    @classmethod
    def zeros(cls, spec):
        return cls(np.zeros((spec.out_maps, spec.in_channels, spec.filter_h, spec.filter_w)),
                   np.zeros(spec.out_maps))

    @classmethod
    def glorot(cls, spec, rng):
        fan_in = spec.in_channels * spec.filter_h * spec.filter_w
        fan_out = spec.out_maps * spec.filter_h * spec.filter_w
        r = np.sqrt(6.0 / (fan_in + fan_out))
        maps = rng.uniform(-r, r, (spec.out_maps, spec.in_channels, spec.filter_h, spec.filter_w))
        return cls(maps, np.zeros(spec.out_maps))


# -- activations --

def activate(z, kind):
    kind = Activation(kind)
    if kind is Activation.RELU:
        return np.maximum(z, 0.0)
    if kind is Activation.SIGMOID:
        return sigmoid(z)
    if kind is Activation.TANH:
        return np.tanh(z)
    return z


def activation_grad(z, a, grad, kind):
    """Backpropagate ``grad`` through the activation given input z and output a."""
    kind = Activation(kind)
    if kind is Activation.RELU:
        return grad * (z > 0)
    if kind is Activation.SIGMOID:
        return grad * a * (1.0 - a)
    if kind is Activation.TANH:
        return grad * (1.0 - a * a)
    return grad


def sigmoid(z):
    # split by sign so exp never overflows
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


# -- forward primitives --

def _as_batch(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise GeometryError(f"expected a (C, H, W) or (N, C, H, W) tensor, got shape {x.shape}")


def _windows(x, h, w, s, t):
    # (N, C, H1, W1, h, w) strided view onto x
    win = np.lib.stride_tricks.sliding_window_view(x, (h, w), axis=(2, 3))
    return win[:, :, ::s, ::t]


def conv_forward(x, params, spec):
    xb, single = _as_batch(x)
    K, C, h, w = params.maps.shape
    if xb.shape[1] != C:
        raise GeometryError(f"input has {xb.shape[1]} channels, filters expect {C}")
    H1, W1 = spec.conv_output_shape(xb.shape[2], xb.shape[3])
    win = _windows(xb, h, w, *spec.stride)[:, :, :H1, :W1]
    y = np.tensordot(win, params.maps, axes=([1, 4, 5], [1, 2, 3]))   # (N, H1, W1, K)
    y = y.transpose(0, 3, 1, 2) + params.bias[None, :, None, None]
    return y[0] if single else y


def pool_forward(y, spec, mode=None):
    out, _ = _pool_forward(y, spec, mode)
    return out


def _pool_forward(y, spec, mode=None):
    yb, single = _as_batch(y)
    mode = PoolMode(mode or spec.pool_mode)
    m, n = spec.pool
    H2, W2 = spec.pool_output_shape(yb.shape[2], yb.shape[3])
    win = _windows(yb, m, n, *spec.pool_stride)[:, :, :H2, :W2]
    flat = win.reshape(win.shape[:4] + (m * n,))
    if mode is PoolMode.MAX:
        arg = flat.argmax(axis=-1)    # first maximum in row-major window order
        out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    else:
        arg = None
        out = flat.mean(axis=-1)
    return (out[0] if single else out), arg


# -- layer --

@dataclass
class ConvCache:
    x: np.ndarray
    z: np.ndarray
    a: np.ndarray
    argmax: np.ndarray
    params: ConvParams
    spec: ConvLayerSpec
    single: bool


def conv_layer_forward(x, params, spec):
    """Pool(activation(conv(x))). Returns the output and a cache for backward."""
    xb, single = _as_batch(x)
    z = conv_forward(xb, params, spec)
    a = activate(z, spec.activation)
    if spec.has_pooling:
        out, arg = _pool_forward(a, spec)
    else:
        out, arg = a, None
    cache = ConvCache(xb, z, a, arg, params, spec, single)
    return (out[0] if single else out), cache


def conv_layer(x, params, spec):
    return conv_layer_forward(x, params, spec)[0]


def pool_backward(grad_out, a_shape, argmax, spec, mode=None):
    """Route pooled gradients back onto the (N, K, H1, W1) pre-pool map."""
    mode = PoolMode(mode or spec.pool_mode)
    m, n = spec.pool
    s, t = spec.pool_stride
    H2, W2 = grad_out.shape[2:]
    grad = np.zeros(a_shape)
    for a_ in range(m):
        for b_ in range(n):
            rows = slice(a_, a_ + s * (H2 - 1) + 1, s)
            cols = slice(b_, b_ + t * (W2 - 1) + 1, t)
            if mode is PoolMode.MAX:
                grad[:, :, rows, cols] += grad_out * (argmax == a_ * n + b_)
            else:
                grad[:, :, rows, cols] += grad_out / (m * n)
    return grad


def conv_backward(grad_z, x, params, spec):
    """Gradients of a valid cross-correlation w.r.t. input, filters and bias."""
    K, C, h, w = params.maps.shape
    s, t = spec.stride
    N, _, H1, W1 = grad_z.shape
    win = _windows(x, h, w, s, t)[:, :, :H1, :W1]
    grad_maps = np.tensordot(grad_z, win, axes=([0, 2, 3], [0, 2, 3]))   # (K, C, h, w)
    grad_bias = grad_z.sum(axis=(0, 2, 3))
    grad_x = np.zeros_like(x)
    for mu in range(h):
        for nu in range(w):
            contrib = np.tensordot(grad_z, params.maps[:, :, mu, nu], axes=([1], [0]))
            grad_x[:, :, mu:mu + s * (H1 - 1) + 1:s, nu:nu + t * (W1 - 1) + 1:t] += \
                contrib.transpose(0, 3, 1, 2)
    return grad_x, ConvParams(grad_maps, grad_bias)


def conv_layer_backward(grad_out, cache):
    if not isinstance(cache, ConvCache):
        raise StaleCache("conv_layer_backward needs the cache returned by conv_layer_forward")
    g = np.asarray(grad_out, dtype=np.float64)
    if cache.single:
        g = g[None]
    spec = cache.spec
    if spec.has_pooling:
        g = pool_backward(g, cache.a.shape, cache.argmax, spec)
    g = activation_grad(cache.z, cache.a, g, spec.activation)
    grad_x, grads = conv_backward(g, cache.x, cache.params, spec)
    return (grad_x[0] if cache.single else grad_x), grads
