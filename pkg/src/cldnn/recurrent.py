"""Elman RNN, LSTM and bidirectional LSTM with backpropagation through time.

LSTM weights are kept stacked in gate order (i, f, o, g) so a whole sequence
can be projected with one matmul; ``LSTMParams.named()`` exposes per-gate
views (``U_ix``, ``U_is``, ``u_i``, ...) that share memory with the stacks.
"""

from dataclasses import dataclass

import numpy as np

from .conv import Activation, activate, activation_grad, sigmoid
from .errors import ShapeError, StaleCache

GATES = ("i", "f", "o", "g")


def glorot_uniform(rng, fan_out, fan_in):
    r = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-r, r, (fan_out, fan_in))


# -- Elman RNN --

@dataclass
class RNNParams:
    U_hx: np.ndarray
    U_hh: np.ndarray
    u_h: np.ndarray
    U_yh: np.ndarray
    u_y: np.ndarray
    act_h: Activation = Activation.TANH
    act_y: Activation = Activation.TANH

    @classmethod
    def init(cls, d_in, d_hidden, d_out, rng, act_h=Activation.TANH, act_y=Activation.TANH):
        return cls(glorot_uniform(rng, d_hidden, d_in), glorot_uniform(rng, d_hidden, d_hidden),
                   np.zeros(d_hidden), glorot_uniform(rng, d_out, d_hidden), np.zeros(d_out),
                   Activation(act_h), Activation(act_y))

    def arrays(self):
        return {"U_hx": self.U_hx, "U_hh": self.U_hh, "u_h": self.u_h,
                "U_yh": self.U_yh, "u_y": self.u_y}


def rnn_step(x_t, h_prev, p):
    """One Elman step; returns (h_t, y_t)."""
    x_t = np.asarray(x_t, dtype=np.float64)
    if x_t.shape != (p.U_hx.shape[1],) or np.shape(h_prev) != (p.U_hh.shape[0],):
        raise ShapeError(f"rnn_step: x {x_t.shape}, h {np.shape(h_prev)} do not match parameters")
    h = activate(p.U_hx @ x_t + p.U_hh @ h_prev + p.u_h, p.act_h)
    y = activate(p.U_yh @ h + p.u_y, p.act_y)
    return h, y


@dataclass
class RNNCache:
    xs: np.ndarray
    zh: np.ndarray
    hs: np.ndarray    # (T + 1, H), hs[0] is the initial state
    zy: np.ndarray
    ys: np.ndarray
    params: RNNParams


def rnn_forward(xs, p, h0=None):
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 2 or xs.shape[1] != p.U_hx.shape[1]:
        raise ShapeError(f"rnn_forward: inputs {xs.shape} vs input dim {p.U_hx.shape[1]}")
    T, H = xs.shape[0], p.U_hh.shape[0]
    hs = np.zeros((T + 1, H))
    if h0 is not None:
        hs[0] = h0
    zh = np.empty((T, H))
    proj = xs @ p.U_hx.T + p.u_h
    for t in range(T):
        zh[t] = proj[t] + p.U_hh @ hs[t]
        hs[t + 1] = activate(zh[t], p.act_h)
    zy = hs[1:] @ p.U_yh.T + p.u_y
    ys = activate(zy, p.act_y)
    return ys, RNNCache(xs, zh, hs, zy, ys, p)


def rnn_backward(grad_ys, cache):
    if not isinstance(cache, RNNCache):
        raise StaleCache("rnn_backward needs the cache returned by rnn_forward")
    p = cache.params
    gzy = activation_grad(cache.zy, cache.ys, np.asarray(grad_ys, dtype=np.float64), p.act_y)
    grads = {"U_yh": gzy.T @ cache.hs[1:], "u_y": gzy.sum(axis=0)}
    gh_direct = gzy @ p.U_yh
    T, H = gh_direct.shape
    gzh = np.empty((T, H))
    carry = np.zeros(H)
    for t in range(T - 1, -1, -1):
        gzh[t] = activation_grad(cache.zh[t], cache.hs[t + 1], gh_direct[t] + carry, p.act_h)
        carry = p.U_hh.T @ gzh[t]
    grads["U_hx"] = gzh.T @ cache.xs
    grads["U_hh"] = gzh.T @ cache.hs[:-1]
    grads["u_h"] = gzh.sum(axis=0)
    return gzh @ p.U_hx, grads


# -- LSTM --

@dataclass
class LSTMParams:
    Wx: np.ndarray   # (4H, D) rows: U_ix, U_fx, U_ox, U_gx
    Ws: np.ndarray   # (4H, H)
    b: np.ndarray    # (4H,)

    @classmethod
    def init(cls, d_in, d_hidden, rng):
        """Glorot-uniform per gate matrix, zero biases."""
        Wx = np.concatenate([glorot_uniform(rng, d_hidden, d_in) for _ in GATES])
        Ws = np.concatenate([glorot_uniform(rng, d_hidden, d_hidden) for _ in GATES])
        return cls(Wx, Ws, np.zeros(4 * d_hidden))

    @classmethod
    def zeros(cls, d_in, d_hidden):
        return cls(np.zeros((4 * d_hidden, d_in)), np.zeros((4 * d_hidden, d_hidden)),
                   np.zeros(4 * d_hidden))

    @classmethod
    def from_named(cls, named):
        Wx = np.concatenate([named[f"U_{q}x"] for q in GATES])
        Ws = np.concatenate([named[f"U_{q}s"] for q in GATES])
        b = np.concatenate([named[f"u_{q}"] for q in GATES])
        return cls(Wx, Ws, b)

    @property
    def hidden(self):
        return self.Ws.shape[1]

    @property
    def input_dim(self):
        return self.Wx.shape[1]

    def named(self):
        H = self.hidden
        out = {}
        for j, q in enumerate(GATES):
            rows = slice(j * H, (j + 1) * H)
            out[f"U_{q}x"] = self.Wx[rows]
            out[f"U_{q}s"] = self.Ws[rows]
            out[f"u_{q}"] = self.b[rows]
        return out

    def arrays(self):
        return {"Wx": self.Wx, "Ws": self.Ws, "b": self.b}


@dataclass
class LSTMState:
    c: np.ndarray
    s: np.ndarray


def _gates(pre, H):
    ifo = sigmoid(pre[..., :3 * H])
    g = np.tanh(pre[..., 3 * H:])
    return ifo[..., :H], ifo[..., H:2 * H], ifo[..., 2 * H:], g


def lstm_step(x_t, state, p):
    x_t = np.asarray(x_t, dtype=np.float64)
    H = p.hidden
    if x_t.shape != (p.input_dim,) or state.c.shape != (H,) or state.s.shape != (H,):
        raise ShapeError(f"lstm_step: x {x_t.shape}, state {state.c.shape} vs params D={p.input_dim}, H={H}")
    i, f, o, g = _gates(p.Wx @ x_t + p.Ws @ state.s + p.b, H)
    c = state.c * f + g * i
    return LSTMState(c, np.tanh(c) * o)


@dataclass
class LSTMCache:
    xs: np.ndarray
    gates: np.ndarray   # (T, 4H) activated i, f, o, g
    cs: np.ndarray      # (T + 1, H)
    ss: np.ndarray      # (T + 1, H)
    tanh_c: np.ndarray  # (T, H)
    params: LSTMParams


def lstm_forward(xs, p):
    """Run the LSTM over ``xs`` (T, D) from zero state; returns outputs (T, H) and cache."""
    # reversed views have negative strides, which keep matmul off the BLAS path
    xs = np.ascontiguousarray(xs, dtype=np.float64)
    if xs.ndim != 2 or xs.shape[0] < 1 or xs.shape[1] != p.input_dim:
        raise ShapeError(f"lstm_forward: inputs {xs.shape} vs input dim {p.input_dim}")
    T, H = xs.shape[0], p.hidden
    proj = xs @ p.Wx.T + p.b
    gates = np.empty((T, 4 * H))
    cs = np.zeros((T + 1, H))
    ss = np.zeros((T + 1, H))
    tanh_c = np.empty((T, H))
    WsT = p.Ws.T
    for t in range(T):
        pre = proj[t] + ss[t] @ WsT
        gates[t, :3 * H] = sigmoid(pre[:3 * H])
        gates[t, 3 * H:] = np.tanh(pre[3 * H:])
        i, f, o, g = gates[t, :H], gates[t, H:2 * H], gates[t, 2 * H:3 * H], gates[t, 3 * H:]
        cs[t + 1] = cs[t] * f + g * i
        tanh_c[t] = np.tanh(cs[t + 1])
        ss[t + 1] = tanh_c[t] * o
    return ss[1:].copy(), LSTMCache(xs, gates, cs, ss, tanh_c, p)


def lstm_backward(grad_ss, cache):
    """BPTT. Returns (grad wrt inputs (T, D), LSTMParams of gradients)."""
    if not isinstance(cache, LSTMCache):
        raise StaleCache("lstm_backward needs the cache returned by lstm_forward")
    p = cache.params
    grad_ss = np.ascontiguousarray(grad_ss, dtype=np.float64)
    T, H = grad_ss.shape
    gates = cache.gates
    i, f, o, g = gates[:, :H], gates[:, H:2 * H], gates[:, 2 * H:3 * H], gates[:, 3 * H:]
    d_pre = np.empty((T, 4 * H))
    ds_next = np.zeros(H)
    dc_next = np.zeros(H)
    Ws = p.Ws
    for t in range(T - 1, -1, -1):
        ds = grad_ss[t] + ds_next
        do = ds * cache.tanh_c[t]
        dc = ds * o[t] * (1.0 - cache.tanh_c[t] ** 2) + dc_next
        di = dc * g[t]
        dg = dc * i[t]
        df = dc * cache.cs[t]
        d_pre[t, :H] = di * i[t] * (1.0 - i[t])
        d_pre[t, H:2 * H] = df * f[t] * (1.0 - f[t])
        d_pre[t, 2 * H:3 * H] = do * o[t] * (1.0 - o[t])
        d_pre[t, 3 * H:] = dg * (1.0 - g[t] ** 2)
        dc_next = dc * f[t]
        ds_next = d_pre[t] @ Ws
    grads = LSTMParams(d_pre.T @ cache.xs, d_pre.T @ cache.ss[:-1], d_pre.sum(axis=0))
    return d_pre @ p.Wx, grads


# -- BLSTM --

@dataclass
class BLSTMCache:
    fwd: LSTMCache
    bwd: LSTMCache


def blstm_forward(xs, p_fwd, p_bwd):
    """Concatenate a forward LSTM and a time-reversed LSTM: z_t = [y_t^f; y_t^b].

    The backward direction's outputs are flipped back to natural time order, so
    the second half of z_t summarizes x_T ... x_t.
    """
    xs = np.asarray(xs, dtype=np.float64)
    yf, cf = lstm_forward(xs, p_fwd)
    yb, cb = lstm_forward(xs[::-1], p_bwd)
    return np.concatenate([yf, yb[::-1]], axis=1), BLSTMCache(cf, cb)


def blstm_backward(grad_z, cache):
    if not isinstance(cache, BLSTMCache):
        raise StaleCache("blstm_backward needs the cache returned by blstm_forward")
    grad_z = np.asarray(grad_z, dtype=np.float64)
    H = cache.fwd.params.hidden
    gx_f, grads_f = lstm_backward(grad_z[:, :H], cache.fwd)
    gx_b, grads_b = lstm_backward(grad_z[::-1, H:], cache.bwd)
    return gx_f + gx_b[::-1], grads_f, grads_b
