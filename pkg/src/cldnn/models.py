"""LDNN and X-CLDNN classifiers over spliced spectral sequences.

An LDNN is one BLSTM layer, temporal mean pooling, dropout and four FC layers
(ReLU, ReLU, ReLU, softmax). An X-CLDNN puts two X-type Conv layers in front,
applied independently to every spliced D x W block; each block's conv output
is flattened in (map, spectral, temporal) row-major order before the BLSTM.

Parameters live in a flat ``dict[str, np.ndarray]`` so gradients, optimizer
state and checkpoints can all be keyed by the same names.
"""

import enum
import io
import json
import struct
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import conv as C
from .dsp import NUM_CEPS, NUM_MELS, SPLICE_LEFT, SPLICE_RIGHT, FeatureKind
from .errors import FormatError, GeometryError, ShapeError, SpecError
from .recurrent import GATES, LSTMParams, blstm_backward, blstm_forward, glorot_uniform


class Mode(str, enum.Enum):
    TRAIN = "train"
    EVAL = "eval"


class InputKind(str, enum.Enum):
    LOGMEL = "logmel"
    MFCC = "mfcc"

    @property
    def bands(self):
        return NUM_MELS if self is InputKind.LOGMEL else NUM_CEPS

    @property
    def feature_kind(self):
        return FeatureKind.LOGMEL if self is InputKind.LOGMEL else FeatureKind.MFCC


@dataclass(frozen=True)
class LDNNConfig:
    n_classes: int = 6
    blstm_cells: int = 128
    fc_hidden: tuple = (128, 32, 32)
    dropout: float = 0.2

    def __post_init__(self):
        if not 0.0 <= self.dropout < 1.0:
            raise SpecError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.n_classes < 2:
            raise SpecError("need at least two classes")

    @property
    def fc_sizes(self):
        return tuple(self.fc_hidden) + (self.n_classes,)


# default kernel sizes per type, taken from inside the tuning ranges
_DEFAULT_KERNELS = {
    C.ConvType.T: (1, 5, 1, 2),
    C.ConvType.S: (5, 1, 3, 1),
    C.ConvType.ST: (5, 5, 3, 2),
    C.ConvType.FST: (None, 5, 1, 2),
}
CONV_MAPS = 32


@dataclass(frozen=True)
class ModelConfig:
    """Full model description. ``conv1 is None`` means a plain LDNN."""

    input_kind: InputKind = InputKind.LOGMEL
    ldnn: LDNNConfig = field(default_factory=LDNNConfig)
    conv1: C.ConvLayerSpec = None
    conv2: C.ConvLayerSpec = None
    context: tuple = (SPLICE_LEFT, SPLICE_RIGHT)

    def __post_init__(self):
        object.__setattr__(self, "input_kind", InputKind(self.input_kind))
        if (self.conv1 is None) != (self.conv2 is None):
            raise SpecError("a CLDNN needs both conv1 and conv2")
        if self.conv1 is not None:
            self._check_conv_stack()

    @property
    def is_cldnn(self):
        return self.conv1 is not None

    @property
    def block_shape(self):
        return self.input_kind.bands, self.context[0] + 1 + self.context[1]

    @property
    def name(self):
        feats = "log-Mels" if self.input_kind is InputKind.LOGMEL else "MFCCs"
        if not self.is_cldnn:
            return f"LDNN ({feats})"
        return f"{self.conv1.conv_type.value}-CLDNN ({feats})"

    def _check_conv_stack(self):
        kind = self.input_kind
        c1, c2 = self.conv1, self.conv2
        for spec in (c1, c2):
            if kind is InputKind.MFCC and spec.conv_type not in (C.ConvType.T, C.ConvType.FST):
                raise SpecError(f"{spec.conv_type.value}-type convolution is not allowed on MFCC "
                                "input (no spectral locality); use T or FST")
        D, W = self.block_shape
        if c1.in_channels != 1:
            raise SpecError("conv1 reads single-channel blocks")
        C.validate_spec(c1, D)
        K1, H1, W1 = c1.output_shape(D, W)
        if c2.in_channels != K1:
            raise SpecError(f"conv2 expects {c2.in_channels} channels, conv1 produces {K1}")
        C.validate_spec(c2, H1)
        shape = c2.output_shape(H1, W1)
        if min(shape) < 1:
            raise GeometryError(f"conv stack collapses a dimension: {shape}")

    def conv_output_shape(self):
        D, W = self.block_shape
        K1, H1, W1 = self.conv1.output_shape(D, W)
        return self.conv2.output_shape(H1, W1)

    @property
    def frame_dim(self):
        """Length of the per-frame vector fed to the BLSTM."""
        if self.is_cldnn:
            return int(np.prod(self.conv_output_shape()))
        D, W = self.block_shape
        return D * W

    # -- serialization (config echo in checkpoints) --
    def to_dict(self):
        d = {"input_kind": self.input_kind.value, "ldnn": asdict(self.ldnn),
             "context": list(self.context)}
        for key in ("conv1", "conv2"):
            spec = getattr(self, key)
            if spec is None:
                d[key] = None
            else:
                s = asdict(spec)
                s["conv_type"] = spec.conv_type.value
                s["activation"] = C.Activation(spec.activation).value
                s["pool_mode"] = C.PoolMode(spec.pool_mode).value
                for t in ("stride", "pool", "pool_stride"):
                    s[t] = list(s[t])
                d[key] = s
        return d

    @classmethod
    def from_dict(cls, d):
        def spec(s):
            if s is None:
                return None
            return C.ConvLayerSpec(
                C.ConvType(s["conv_type"]), s["in_channels"], s["out_maps"], s["filter_h"],
                s["filter_w"], tuple(s["stride"]), tuple(s["pool"]), tuple(s["pool_stride"]),
                C.Activation(s["activation"]), C.PoolMode(s["pool_mode"]))

        ld = dict(d["ldnn"])
        ld["fc_hidden"] = tuple(ld["fc_hidden"])
        return cls(InputKind(d["input_kind"]), LDNNConfig(**ld), spec(d["conv1"]),
                   spec(d["conv2"]), tuple(d.get("context", (SPLICE_LEFT, SPLICE_RIGHT))))


def make_config(conv_type=None, input_kind="logmel", n_classes=6, h1=None, w1=None,
                h2=None, w2=None, conv_maps=CONV_MAPS, blstm_cells=128,
                fc_hidden=(128, 32, 32), dropout=0.2):
    """Build an LDNN (``conv_type=None``) or an X-CLDNN with per-type pooling presets."""
    kind = InputKind(input_kind)
    ldnn = LDNNConfig(n_classes, blstm_cells, tuple(fc_hidden), dropout)
    if conv_type is None:
        return ModelConfig(kind, ldnn)
    ct = C.ConvType(conv_type)
    dh1, dw1, dh2, dw2 = _DEFAULT_KERNELS[ct]
    if ct is C.ConvType.FST:
        dh1 = kind.bands
    h1, w1, h2, w2 = (dh1 if h1 is None else h1, dw1 if w1 is None else w1,
                      dh2 if h2 is None else h2, dw2 if w2 is None else w2)
    conv1 = C.ConvLayerSpec.preset(ct, 1, conv_maps, h1, w1)
    conv2 = C.ConvLayerSpec.preset(ct, conv_maps, conv_maps, h2, w2)
    return ModelConfig(kind, ldnn, conv1, conv2)


# the eight configurations compared in the experiments
VARIANTS = (
    (None, "mfcc"), (None, "logmel"),
    ("T", "mfcc"), ("FST", "mfcc"),
    ("T", "logmel"), ("S", "logmel"), ("ST", "logmel"), ("FST", "logmel"),
)


def init_params(config, rng):
    """Glorot-uniform weights, zero biases, deterministic given ``rng``."""
    params = {}
    if config.is_cldnn:
        for key in ("conv1", "conv2"):
            p = C.ConvParams.glorot(getattr(config, key), rng)
            params[f"{key}.maps"], params[f"{key}.bias"] = p.maps, p.bias
    H = config.ldnn.blstm_cells
    for d in ("fwd", "bwd"):
        lp = LSTMParams.init(config.frame_dim, H, rng)
        for k, v in lp.arrays().items():
            params[f"blstm.{d}.{k}"] = v
    fan_in = 2 * H
    for j, size in enumerate(config.ldnn.fc_sizes, start=1):
        params[f"fc{j}.W"] = glorot_uniform(rng, size, fan_in)
        params[f"fc{j}.b"] = np.zeros(size)
        fan_in = size
    return params


def _lstm(params, d):
    return LSTMParams(params[f"blstm.{d}.Wx"], params[f"blstm.{d}.Ws"], params[f"blstm.{d}.b"])


def _conv(params, key):
    return C.ConvParams(params[f"{key}.maps"], params[f"{key}.bias"])


def softmax(logits):
    z = logits - logits.max()
    e = np.exp(z)
    return e / e.sum()


def cross_entropy(probs, label):
    """Negative log-likelihood of ``label`` and its gradient w.r.t. the logits."""
    probs = np.asarray(probs, dtype=np.float64)
    if not 0 <= label < probs.shape[0]:
        raise ShapeError(f"label {label} out of range for {probs.shape[0]} classes")
    loss = -np.log(max(probs[label], 1e-300))
    grad = probs.copy()
    grad[label] -= 1.0
    return float(loss), grad


@dataclass
class ForwardCache:
    raw: np.ndarray                 # (T, D * W) flattened spliced input
    conv1: C.ConvCache = None
    conv2: C.ConvCache = None
    frames: np.ndarray = None       # (T, F) BLSTM input
    blstm: object = None
    z: np.ndarray = None            # (T, 2H) BLSTM outputs
    pooled: np.ndarray = None       # utterance vector before dropout
    mask: np.ndarray = None         # inverted-dropout multipliers
    fc_in: list = field(default_factory=list)
    fc_pre: list = field(default_factory=list)
    logits: np.ndarray = None
    probs: np.ndarray = None


def _check_blocks(blocks, config):
    blocks = np.asarray(blocks, dtype=np.float64)
    if blocks.ndim != 3 or blocks.shape[1:] != config.block_shape or blocks.shape[0] < 1:
        raise ShapeError(f"expected (T, {config.block_shape[0]}, {config.block_shape[1]}) "
                         f"blocks, got {blocks.shape}")
    return blocks


def ldnn_forward(frames, params, config, mode=Mode.EVAL, rng=None, mask=None, cache=None):
    """BLSTM -> temporal mean -> dropout -> FC stack -> softmax.

    ``frames`` is (T, F). In train mode the dropout mask is drawn from ``rng``
    unless ``mask`` is given. Returns (probs, cache).
    """
    ld = config.ldnn if isinstance(config, ModelConfig) else config
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[0] < 1:
        raise ShapeError(f"expected a (T, F) frame sequence, got {frames.shape}")
    if cache is None:
        cache = ForwardCache(raw=frames)
    cache.frames = frames
    z, cache.blstm = blstm_forward(frames, _lstm(params, "fwd"), _lstm(params, "bwd"))
    cache.z = z
    c = z.mean(axis=0)
    cache.pooled = c
    if Mode(mode) is Mode.TRAIN and ld.dropout > 0:
        if mask is None:
            if rng is None:
                raise ValueError("train mode needs an rng for dropout")
            mask = (rng.random(c.shape) >= ld.dropout) / (1.0 - ld.dropout)
        c = c * mask
    else:
        mask = None
    cache.mask = mask
    h = c
    n_fc = len(ld.fc_sizes)
    for j in range(1, n_fc + 1):
        cache.fc_in.append(h)
        pre = params[f"fc{j}.W"] @ h + params[f"fc{j}.b"]
        cache.fc_pre.append(pre)
        h = np.maximum(pre, 0.0) if j < n_fc else pre
    cache.logits = h
    cache.probs = softmax(h)
    return cache.probs, cache


def cldnn_forward(blocks, params, config, mode=Mode.EVAL, rng=None, mask=None):
    """Per-frame conv1 -> conv2 -> flatten, then the LDNN. Returns (probs, cache)."""
    blocks = _check_blocks(blocks, config)
    T = blocks.shape[0]
    cache = ForwardCache(raw=blocks.reshape(T, -1))
    y1, cache.conv1 = C.conv_layer_forward(blocks[:, None], _conv(params, "conv1"), config.conv1)
    y2, cache.conv2 = C.conv_layer_forward(y1, _conv(params, "conv2"), config.conv2)
    return ldnn_forward(y2.reshape(T, -1), params, config, mode, rng, mask, cache)


def forward(blocks, params, config, mode=Mode.EVAL, rng=None, mask=None):
    """Dispatch on the config: CLDNN on blocks, or LDNN on flattened blocks."""
    if config.is_cldnn:
        return cldnn_forward(blocks, params, config, mode, rng, mask)
    blocks = _check_blocks(blocks, config)
    return ldnn_forward(blocks.reshape(blocks.shape[0], -1), params, config, mode, rng, mask)


def model_backward(grad_logits, cache, params, config):
    """Gradients of a scalar loss w.r.t. every parameter, keyed like ``params``."""
    ld = config.ldnn
    grads = {}
    g = np.asarray(grad_logits, dtype=np.float64)
    n_fc = len(ld.fc_sizes)
    for j in range(n_fc, 0, -1):
        if j < n_fc:
            g = g * (cache.fc_pre[j - 1] > 0)
        grads[f"fc{j}.W"] = np.outer(g, cache.fc_in[j - 1])
        grads[f"fc{j}.b"] = g.copy()
        g = params[f"fc{j}.W"].T @ g
    if cache.mask is not None:
        g = g * cache.mask
    T = cache.z.shape[0]
    gz = np.broadcast_to(g / T, cache.z.shape)
    gx, gf, gb = blstm_backward(gz, cache.blstm)
    for d, lg in (("fwd", gf), ("bwd", gb)):
        for k, v in lg.arrays().items():
            grads[f"blstm.{d}.{k}"] = v
    if config.is_cldnn:
        g2 = gx.reshape((T,) + config.conv_output_shape())
        g1, p2 = C.conv_layer_backward(g2, cache.conv2)
        _, p1 = C.conv_layer_backward(g1, cache.conv1)
        grads["conv2.maps"], grads["conv2.bias"] = p2.maps, p2.bias
        grads["conv1.maps"], grads["conv1.bias"] = p1.maps, p1.bias
    return {k: grads[k] for k in params}


def loss_and_grads(blocks, label, params, config, mode=Mode.TRAIN, rng=None, mask=None):
    probs, cache = forward(blocks, params, config, mode, rng, mask)
    loss, g = cross_entropy(probs, label)
    return loss, model_backward(g, cache, params, config), probs


def predict_proba(blocks, params, config):
    return forward(blocks, params, config, Mode.EVAL)[0]


# -- checkpoints --
# b"CKPT", u32 version, u32 n + n bytes of JSON config echo, then tensors until EOF:
# u16 name length, UTF-8 name, u8 rank, u32 dims[rank], float64 LE row-major data

_CKPT_MAGIC = b"CKPT"
_CKPT_VERSION = 1


def _expand_lstm_names(name, arr, params):
    # "blstm.fwd.Wx" and friends are written per gate: blstm.fwd.U_ix, ...
    parts = name.rsplit(".", 1)
    if parts[0] in ("blstm.fwd", "blstm.bwd") and parts[1] == "Wx":
        lp = LSTMParams(params[f"{parts[0]}.Wx"], params[f"{parts[0]}.Ws"], params[f"{parts[0]}.b"])
        return [(f"{parts[0]}.{k}", v) for k, v in lp.named().items()]
    if parts[0] in ("blstm.fwd", "blstm.bwd") and parts[1] in ("Ws", "b"):
        return []
    return [(name, arr)]


def _named_for_disk(params):
    out = []
    for name, arr in params.items():
        out.extend(_expand_lstm_names(name, arr, params))
    return out


def _collapse_lstm_names(tensors):
    out = {}
    for d in ("blstm.fwd", "blstm.bwd"):
        keys = [f"{d}.{k}" for q in GATES for k in (f"U_{q}x", f"U_{q}s", f"u_{q}")]
        if all(k in tensors for k in keys):
            lp = LSTMParams.from_named({k.rsplit(".", 1)[1]: tensors[k] for k in keys})
            out.update({f"{d}.Wx": lp.Wx, f"{d}.Ws": lp.Ws, f"{d}.b": lp.b})
    for name, arr in tensors.items():
        if not name.startswith(("blstm.fwd.", "blstm.bwd.")):
            out[name] = arr
    return out


def _write_tensor(buf, name, arr):
    arr = np.ascontiguousarray(arr, dtype="<f8")
    raw = name.encode("utf-8")
    buf.write(struct.pack("<H", len(raw)))
    buf.write(raw)
    buf.write(struct.pack("<B", arr.ndim))
    buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    buf.write(arr.tobytes())


def dump_checkpoint(config, params, extra=None, meta=None):
    """Serialize a model (and optional extra named tensors, e.g. optimizer state)."""
    buf = io.BytesIO()
    buf.write(_CKPT_MAGIC)
    buf.write(struct.pack("<I", _CKPT_VERSION))
    echo = json.dumps({"config": config.to_dict(), "meta": meta or {}}, sort_keys=True).encode()
    buf.write(struct.pack("<I", len(echo)))
    buf.write(echo)
    for name, arr in _named_for_disk(params):
        _write_tensor(buf, name, arr)
    for name, arr in (extra or {}).items():
        _write_tensor(buf, name, arr)
    return buf.getvalue()


def load_checkpoint(data):
    """Inverse of :func:`dump_checkpoint`; returns (config, params, extra, meta)."""
    if data[:4] != _CKPT_MAGIC:
        raise FormatError("not a checkpoint (bad magic)")
    version, n = struct.unpack_from("<II", data, 4)
    if version != _CKPT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    pos = 12
    echo = json.loads(data[pos:pos + n].decode())
    pos += n
    tensors = {}
    while pos < len(data):
        (ln,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos:pos + ln].decode("utf-8")
        pos += ln
        (rank,) = struct.unpack_from("<B", data, pos)
        pos += 1
        dims = struct.unpack_from(f"<{rank}I", data, pos)
        pos += 4 * rank
        size = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(data, dtype="<f8", count=size, offset=pos).reshape(dims)
        pos += 8 * size
        tensors[name] = arr.astype(np.float64)
    config = ModelConfig.from_dict(echo["config"])
    model_names = set(init_param_names(config))
    params = _collapse_lstm_names({k: v for k, v in tensors.items() if not k.startswith("adam.")})
    missing = model_names - set(params)
    if missing:
        raise FormatError(f"checkpoint lacks tensors: {sorted(missing)}")
    ordered = {k: params[k] for k in init_param_names(config)}
    extra = {k: v for k, v in tensors.items() if k.startswith("adam.")}
    return config, ordered, extra, echo.get("meta", {})


def init_param_names(config):
    names = []
    if config.is_cldnn:
        names += ["conv1.maps", "conv1.bias", "conv2.maps", "conv2.bias"]
    for d in ("fwd", "bwd"):
        names += [f"blstm.{d}.Wx", f"blstm.{d}.Ws", f"blstm.{d}.b"]
    for j in range(1, len(config.ldnn.fc_sizes) + 1):
        names += [f"fc{j}.W", f"fc{j}.b"]
    return names


def save_checkpoint(path, config, params, extra=None, meta=None):
    with open(path, "wb") as f:
        f.write(dump_checkpoint(config, params, extra, meta))


def read_checkpoint(path):
    with open(path, "rb") as f:
        return load_checkpoint(f.read())


def with_dropout(config, p):
    return replace(config, ldnn=replace(config.ldnn, dropout=p))
