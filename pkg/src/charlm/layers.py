"""Neural building blocks on top of :mod:`charlm.autograd`.

Each layer owns its parameters as named :class:`Tensor` leaves and is a
pure function of (parameters, inputs) apart from the dropout stream.
"""
import math
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ShapeMismatch


class Layer:
    """Minimal parameter container with dotted-name traversal."""

    training = False

    def named_parameters(self, prefix=""):
        out = OrderedDict()
        for key, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                out[prefix + key] = value
            elif isinstance(value, Layer):
                out.update(value.named_parameters(f"{prefix}{key}."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Layer):
                        out.update(item.named_parameters(f"{prefix}{key}.{i}."))
        return out

    def parameters(self):
        return list(self.named_parameters().values())

    def sublayers(self):
        for value in vars(self).values():
            if isinstance(value, Layer):
                yield value
            elif isinstance(value, (list, tuple)):
                yield from (v for v in value if isinstance(v, Layer))

    def train(self, mode=True):
        self.training = mode
        for sub in self.sublayers():
            sub.train(mode)
        return self

    def eval(self):
        return self.train(False)


def param(data, dtype):
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=True)


def glorot(rng, fan_in, fan_out, dtype, shape=None):
    std = math.sqrt(2.0 / (fan_in + fan_out))
    return param(rng.normal(0.0, std, shape or (fan_in, fan_out)), dtype)


class Embedding(Layer):
    def __init__(self, vocab_size, dim, rng, dtype=np.float32):
        self.weight = param(rng.uniform(-0.05, 0.05, (vocab_size, dim)), dtype)

    def __call__(self, ids):
        return embedding_lookup(ids, self.weight)


def embedding_lookup(ids, table):
    """Gather rows of ``table``; ``[B, T]`` ids give ``[B, T, dim]``."""
    return ag.embedding(ids, table)


class Dense(Layer):
    def __init__(self, in_dim, out_dim, rng, dtype=np.float32, bias=True):
        self.weight = glorot(rng, in_dim, out_dim, dtype)
        self.bias = param(np.zeros(out_dim), dtype) if bias else None

    def __call__(self, x):
        y = ag.matmul(x, self.weight)
        return y if self.bias is None else y + self.bias

    def zero_(self):
        self.weight.data[...] = 0
        if self.bias is not None:
            self.bias.data[...] = 0


class LayerNorm(Layer):
    def __init__(self, dim, dtype=np.float32, eps=1e-5):
        self.gamma = param(np.ones(dim), dtype)
        self.beta = param(np.zeros(dim), dtype)
        self.eps = eps

    def __call__(self, x):
        return ag.layer_norm(x, self.gamma, self.beta, self.eps)


class FeedForward(Layer):
    def __init__(self, dim, inner, rng, dtype=np.float32):
        self.inner = Dense(dim, inner, rng, dtype)
        self.outer = Dense(inner, dim, rng, dtype)

    def __call__(self, x):
        return self.outer(ag.relu(self.inner(x)))


# ---------------------------------------------------------------------------
# LSTM
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LstmState:
    h: Tensor
    c: Tensor

    def detach(self):
        return LstmState(self.h.detach(), self.c.detach())

    @classmethod
    def zeros(cls, batch, hidden, dtype=np.float32):
        return cls(Tensor(np.zeros((batch, hidden), dtype=dtype)),
                   Tensor(np.zeros((batch, hidden), dtype=dtype)))


class LSTMCell(Layer):
    """Gate order in the fused matrices is input, forget, cell, output."""

    def __init__(self, input_dim, hidden_dim, rng, dtype=np.float32, forget_bias=1.0):
        self.hidden_dim = hidden_dim
        self.W = glorot(rng, input_dim, 4 * hidden_dim, dtype)
        self.U = glorot(rng, hidden_dim, 4 * hidden_dim, dtype)
        b = np.zeros(4 * hidden_dim)
        b[hidden_dim:2 * hidden_dim] = forget_bias
        self.b = param(b, dtype)

    def __call__(self, x, state):
        return lstm_step(x, state, self.W, self.U, self.b)

    def unroll(self, xs, state, fused=True):
        """Run over ``xs`` of shape ``[B, T, in]``; return ``([B, T, H], state)``.

        ``fused=False`` chains :func:`lstm_step` primitives instead of the
        hand-written sequence kernel; both give the same values and gradients.
        """
        B, T, _ = xs.shape
        xw = ag.matmul(xs, self.W) + self.b
        if fused:
            H = self.hidden_dim
            hc = lstm_sequence(xw, state.h, state.c, self.U)
            last = hc[:, T - 1, :]
            return hc[:, :, :H], LstmState(last[:, :H], last[:, H:])
        outs = []
        for t in range(T):
            state = _lstm_gates(xw[:, t, :], state, self.U)
            outs.append(state.h)
        return ag.stack(outs, axis=1), state


def lstm_step(x, state, W, U, b):
    """One step: i, f, o = sigmoid(.), g = tanh(.), c' = f*c + i*g, h' = o*tanh(c')."""
    if x.shape[-1] != W.shape[0] or state.h.shape[-1] != U.shape[0]:
        raise ShapeMismatch(f"lstm input {x.shape} / state {state.h.shape} vs weights")
    if state.h.shape != state.c.shape:
        raise ShapeMismatch("h and c must share a shape")
    return _lstm_gates(ag.matmul(x, W) + b, state, U)


def _lstm_gates(xw, state, U):
    H = U.shape[0]
    z = xw + ag.matmul(state.h, U)
    i = ag.sigmoid(z[:, :H])
    f = ag.sigmoid(z[:, H:2 * H])
    g = ag.tanh(z[:, 2 * H:3 * H])
    o = ag.sigmoid(z[:, 3 * H:])
    c = f * state.c + i * g
    return LstmState(o * ag.tanh(c), c)


def lstm_sequence(xw, h0, c0, U):
    """Fused LSTM recurrence over pre-projected inputs ``xw`` ``[B, T, 4H]``.

    Returns ``[B, T, 2H]`` holding ``h_t`` then ``c_t`` for every step;
    backward is explicit backpropagation through time.
    """
    xw, h0, c0, U = (ag.as_tensor(t) for t in (xw, h0, c0, U))
    B, T, H4 = xw.shape
    H = H4 // 4
    if U.shape != (H, H4) or h0.shape != (B, H) or c0.shape != (B, H):
        raise ShapeMismatch(f"lstm_sequence shapes xw={xw.shape} h0={h0.shape} U={U.shape}")
    dt = xw.dtype
    gates = np.empty((T, B, H4), dtype=dt)     # activated i, f, g, o
    cs = np.empty((T + 1, B, H), dtype=dt)
    hs = np.empty((T + 1, B, H), dtype=dt)
    tcs = np.empty((T, B, H), dtype=dt)
    hs[0], cs[0] = h0.data, c0.data
    Ud = U.data
    for t in range(T):
        z = xw.data[:, t, :] + hs[t] @ Ud
        a = gates[t]
        a[:, :2 * H] = 0.5 * (1.0 + np.tanh(0.5 * z[:, :2 * H]))
        a[:, 2 * H:3 * H] = np.tanh(z[:, 2 * H:3 * H])
        a[:, 3 * H:] = 0.5 * (1.0 + np.tanh(0.5 * z[:, 3 * H:]))
        cs[t + 1] = a[:, H:2 * H] * cs[t] + a[:, :H] * a[:, 2 * H:3 * H]
        tcs[t] = np.tanh(cs[t + 1])
        hs[t + 1] = a[:, 3 * H:] * tcs[t]
    out = np.concatenate([hs[1:], cs[1:]], axis=2).transpose(1, 0, 2).copy()

    def bw(g):
        gh = g[:, :, :H].transpose(1, 0, 2)
        gc = g[:, :, H:].transpose(1, 0, 2)
        dz = np.empty((T, B, H4), dtype=dt)
        dh_next = np.zeros((B, H), dtype=dt)
        dc_next = np.zeros((B, H), dtype=dt)
        UT = Ud.T
        for t in range(T - 1, -1, -1):
            a = gates[t]
            i, f, gg, o = a[:, :H], a[:, H:2 * H], a[:, 2 * H:3 * H], a[:, 3 * H:]
            dh = gh[t] + dh_next
            dc = gc[t] + dc_next + dh * o * (1.0 - tcs[t] * tcs[t])
            d = dz[t]
            d[:, :H] = dc * gg * i * (1.0 - i)
            d[:, H:2 * H] = dc * cs[t] * f * (1.0 - f)
            d[:, 2 * H:3 * H] = dc * i * (1.0 - gg * gg)
            d[:, 3 * H:] = dh * tcs[t] * o * (1.0 - o)
            dh_next = d @ UT
            dc_next = dc * f
        dU = hs[:T].reshape(T * B, H).T @ dz.reshape(T * B, H4)
        return dz.transpose(1, 0, 2), dh_next, dc_next, dU

    return ag.make_op(out, (xw, h0, c0, U), bw, "lstm_sequence")


# ---------------------------------------------------------------------------
# positional encodings
# ---------------------------------------------------------------------------

def sinusoid_table(positions, dim, dtype=np.float32):
    """Rows ``[sin(p w_0), cos(p w_0), sin(p w_1), cos(p w_1), ...]`` with
    ``w_i = 10000^(-2i/dim)``."""
    if dim % 2:
        raise ShapeMismatch("sinusoidal encoding needs an even dimension")
    pos = np.asarray(positions, dtype=np.float64)[:, None]
    freq = 10000.0 ** (-np.arange(0, dim, 2, dtype=np.float64) / dim)
    table = np.empty((pos.shape[0], dim))
    table[:, 0::2] = np.sin(pos * freq)
    table[:, 1::2] = np.cos(pos * freq)
    return table.astype(dtype)


class PositionalEncoding:
    """Absolute sinusoidal positions combined with token embeddings.

    ``combine='add'`` sums them (width ``dim``); ``combine='concat'`` appends a
    ``dim``-wide encoding to the embedding.  ``mode='relative'`` is a marker
    for the memory-augmented stack, which builds distance tables itself.
    """

    def __init__(self, dim, max_len=4096, mode="absolute", combine="add", dtype=np.float32):
        if mode not in ("absolute", "relative"):
            raise ValueError(f"unknown positional mode {mode!r}")
        if combine not in ("add", "concat"):
            raise ValueError(f"unknown combine mode {combine!r}")
        self.dim, self.mode, self.combine = dim, mode, combine
        self.table = sinusoid_table(np.arange(max_len), dim, dtype)

    def __call__(self, x, offset=0):
        T = x.shape[1]
        if offset + T > len(self.table):
            self.table = sinusoid_table(np.arange(2 * (offset + T)), self.dim, self.table.dtype)
        pe = self.table[offset:offset + T]
        if self.combine == "add":
            if x.shape[-1] != self.dim:
                raise ShapeMismatch(f"cannot add {self.dim}-wide encoding to {x.shape}")
            return x + Tensor(pe)
        pe = Tensor(np.broadcast_to(pe, x.shape[:-1] + (self.dim,)).copy())
        return ag.concat([x, pe], axis=-1)


# ---------------------------------------------------------------------------
# attention
# ---------------------------------------------------------------------------

def causal_mask(q_len, k_len, mem_len=0):
    """Allowed-entry mask: query ``i`` sees keys ``j <= mem_len + i``."""
    return np.arange(k_len)[None, :] <= (mem_len + np.arange(q_len))[:, None]


def _split_heads(x, heads):
    B, T, D = x.shape
    return x.reshape(B, T, heads, D // heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    B, H, T, dk = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, T, H * dk)


class MultiHeadAttention(Layer):
    def __init__(self, dim, heads, rng, dtype=np.float32, dropout=0.0):
        if dim % heads:
            raise ShapeMismatch(f"model dim {dim} is not divisible by {heads} heads")
        self.heads, self.d_k, self.dropout = heads, dim // heads, dropout
        self.W_q = glorot(rng, dim, dim, dtype)
        self.W_k = glorot(rng, dim, dim, dtype)
        self.W_v = glorot(rng, dim, dim, dtype)
        self.W_o = glorot(rng, dim, dim, dtype)
        self.rng = rng

    def __call__(self, xq, xk=None, xv=None, causal=True, return_weights=False):
        xk = xq if xk is None else xk
        xv = xk if xv is None else xv
        out, w = multi_head_attention(xq, xk, xv, self, causal,
                                      dropout=self.dropout if self.training else 0.0,
                                      rng=self.rng)
        return (out, w) if return_weights else out


def multi_head_attention(xq, xk, xv, params, causal=True, dropout=0.0, rng=None):
    """Scaled dot-product attention per head, heads concatenated and projected.

    Returns ``(output [B, Tq, D], weights [B, H, Tq, Tk])``.
    """
    if xk.shape[1] != xv.shape[1] or xq.shape[-1] != params.W_q.shape[0]:
        raise ShapeMismatch(f"attention inputs {xq.shape}, {xk.shape}, {xv.shape}")
    H = params.heads
    q = _split_heads(ag.matmul(xq, params.W_q), H)
    k = _split_heads(ag.matmul(xk, params.W_k), H)
    v = _split_heads(ag.matmul(xv, params.W_v), H)
    scores = ag.scale(ag.matmul(q, ag.swap_last(k)), 1.0 / math.sqrt(params.d_k))
    mask = causal_mask(xq.shape[1], xk.shape[1]) if causal else None
    weights = ag.softmax(scores, axis=-1, mask=mask)
    attended = ag.matmul(ag.dropout(weights, dropout, rng, dropout > 0), v)
    return ag.matmul(_merge_heads(attended), params.W_o), weights


class RelativeMultiHeadAttention(Layer):
    """Attention over ``memory ++ current`` with distance-based position terms.

    Score between query ``i`` and key ``j`` is

        (q_i + u) . k_j  +  (q_i + v) . (r_{d} W_r),   d = m + i - j

    with ``r_d`` the sinusoidal encoding of distance ``d``, ``u`` and ``v``
    learned per-head biases, and ``m`` the memory length.
    """

    def __init__(self, dim, heads, rng, dtype=np.float32, dropout=0.0):
        if dim % heads:
            raise ShapeMismatch(f"model dim {dim} is not divisible by {heads} heads")
        self.heads, self.d_k, self.dim, self.dropout = heads, dim // heads, dim, dropout
        self.W_q = glorot(rng, dim, dim, dtype)
        self.W_k = glorot(rng, dim, dim, dtype)
        self.W_v = glorot(rng, dim, dim, dtype)
        self.W_o = glorot(rng, dim, dim, dtype)
        self.W_r = glorot(rng, dim, dim, dtype)
        self.u = param(np.zeros((heads, self.d_k)), dtype)
        self.v = param(np.zeros((heads, self.d_k)), dtype)
        self.rng = rng

    def __call__(self, h, mem=None, return_weights=False):
        out, w = relative_attention(h, mem, self,
                                    dropout=self.dropout if self.training else 0.0,
                                    rng=self.rng)
        return (out, w) if return_weights else out


def relative_attention(h, mem, params, dropout=0.0, rng=None):
    """Memory-augmented causal attention; no gradient ever reaches ``mem``.

    ``h`` is ``[B, l, D]``, ``mem`` is ``[B, m, D]`` or None.  Returns
    ``(output [B, l, D], weights [B, H, l, m + l])``.
    """
    B, l, D = h.shape
    if D != params.dim:
        raise ShapeMismatch(f"hidden width {D} != attention width {params.dim}")
    if mem is not None and mem.shape[1] > 0:
        if mem.shape[0] != B or mem.shape[2] != D:
            raise ShapeMismatch(f"memory {mem.shape} incompatible with hidden {h.shape}")
        cat = ag.concat([mem.detach(), h], axis=1)
    else:
        cat = h
    m = cat.shape[1] - l
    klen = m + l
    H, dk = params.heads, params.d_k

    q = _split_heads(ag.matmul(h, params.W_q), H)               # [B,H,l,dk]
    k = _split_heads(ag.matmul(cat, params.W_k), H)             # [B,H,k,dk]
    v = _split_heads(ag.matmul(cat, params.W_v), H)
    r = Tensor(sinusoid_table(np.arange(klen), D, h.dtype))     # distance 0..klen-1
    rk = ag.matmul(r, params.W_r).reshape(klen, H, dk).transpose(1, 0, 2)  # [H,k,dk]

    u = params.u.reshape(1, H, 1, dk)
    vb = params.v.reshape(1, H, 1, dk)
    content = ag.matmul(q + u, ag.swap_last(k))                 # [B,H,l,k]
    by_dist = ag.matmul(q + vb, ag.swap_last(rk))               # [B,H,l,dist]
    dist = m + np.arange(l)[:, None] - np.arange(klen)[None, :]
    position = ag.take_last(by_dist, np.clip(dist, 0, klen - 1))
    scores = ag.scale(content + position, 1.0 / math.sqrt(dk))
    weights = ag.softmax(scores, axis=-1, mask=causal_mask(l, klen, m))
    attended = ag.matmul(ag.dropout(weights, dropout, rng, dropout > 0), v)
    return ag.matmul(_merge_heads(attended), params.W_o), weights
