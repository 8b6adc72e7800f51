"""The three character-level model families behind one forward interface.

``model.forward(ids, state)`` maps ``[B, T]`` ids to ``[B, T, V]`` logits and
returns the state to carry into the next contiguous segment: a list of
LSTM states, ``None`` for the fixed-context transformer, or a
:class:`MemoryCache` for the memory-augmented transformer.
"""
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from . import autograd as ag
from .autograd import Rng, Tensor
from .errors import InvalidConfig, LayerCountMismatch, ShapeMismatch
from .layers import (Dense, Embedding, FeedForward, Layer, LayerNorm, LSTMCell, LstmState,
                     MultiHeadAttention, PositionalEncoding, RelativeMultiHeadAttention)

FAMILIES = ("char_lstm", "transformer", "transformer_xl")


@dataclass(frozen=True)
class ModelConfig:
    family: str
    vocab_size: int = 0
    seq_len: int = 100
    batch_size: int = 64
    num_layers: int = 1
    embedding_dim: int = 256
    hidden_dim: int = 1024
    num_heads: int = 0
    dropout: float = 0.0
    mem_len: int = 0
    ffn_dim: int = 0
    pos_combine: str = "add"
    variable_length: bool = False
    dtype: str = "float32"

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidConfig(f"unknown model family {self.family!r}")
        if self.family != "char_lstm":
            if self.num_heads < 1 or self.hidden_dim % self.num_heads:
                raise InvalidConfig(
                    f"hidden_dim {self.hidden_dim} must be divisible by num_heads {self.num_heads}")
            if self.pos_combine not in ("add", "concat"):
                raise InvalidConfig(f"unknown pos_combine {self.pos_combine!r}")
        if self.num_layers < 1 or self.seq_len < 1 or self.batch_size < 1:
            raise InvalidConfig("num_layers, seq_len and batch_size must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidConfig("dropout must lie in [0, 1)")

    @property
    def ffn_width(self):
        return self.ffn_dim or 4 * self.hidden_dim

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise InvalidConfig(f"unknown ModelConfig fields: {sorted(unknown)}")
        return cls(**d)

    def replace(self, **changes):
        return replace(self, **changes)


class _Base(Layer):
    config: ModelConfig

    def zero_output_layer(self):
        self.output.zero_()

    def num_parameters(self):
        return sum(p.data.size for p in self.parameters())


# ---------------------------------------------------------------------------
# Char-LSTM
# ---------------------------------------------------------------------------

class CharLSTM(_Base):
    """Embedding, ``num_layers`` stacked LSTMs, dense projection to logits."""

    def __init__(self, config, rng):
        dt = np.dtype(config.dtype)
        self.config = config
        self.embedding = Embedding(config.vocab_size, config.embedding_dim, rng, dt)
        dims = [config.embedding_dim] + [config.hidden_dim] * config.num_layers
        self.cells = [LSTMCell(dims[i], config.hidden_dim, rng, dt)
                      for i in range(config.num_layers)]
        self.output = Dense(config.hidden_dim, config.vocab_size, rng, dt)

    def init_state(self, batch):
        return [LstmState.zeros(batch, self.config.hidden_dim, self.config.dtype)
                for _ in self.cells]

    def forward(self, ids, state=None):
        ids = np.asarray(ids)
        if state is None:
            state = self.init_state(ids.shape[0])
        if len(state) != len(self.cells):
            raise LayerCountMismatch(f"{len(state)} states for {len(self.cells)} layers")
        if state[0].h.shape[0] != ids.shape[0]:
            raise ShapeMismatch(f"state batch {state[0].h.shape[0]} vs input batch {ids.shape[0]}")
        x = self.embedding(ids)
        new_state = []
        for cell, s in zip(self.cells, state):
            x, s = cell.unroll(x, s)
            new_state.append(s)
        return self.output(x), new_state


# ---------------------------------------------------------------------------
# Transformer (decoder-style causal stack)
# ---------------------------------------------------------------------------

class Block(Layer):
    """Post-norm block: x = LN(x + attn(x)); x = LN(x + ffn(x))."""

    def __init__(self, attn, dim, ffn_dim, rng, dtype, dropout):
        self.attn = attn
        self.norm1 = LayerNorm(dim, dtype)
        self.ffn = FeedForward(dim, ffn_dim, rng, dtype)
        self.norm2 = LayerNorm(dim, dtype)
        self.dropout = dropout
        self.rng = rng

    def _drop(self, x):
        return ag.dropout(x, self.dropout, self.rng, self.training)

    def __call__(self, x, *attn_args):
        x = self.norm1(x + self._drop(self.attn(x, *attn_args)))
        return self.norm2(x + self._drop(self.ffn(x)))


class _InputStack(_Base):
    """Shared embedding front-end; projects to ``hidden_dim`` when widths differ."""

    def _init_input(self, config, rng, dt, absolute):
        self.embedding = Embedding(config.vocab_size, config.embedding_dim, rng, dt)
        width = config.embedding_dim
        self.positions = None
        if absolute:
            pdim = config.embedding_dim if config.pos_combine == "add" else config.hidden_dim
            self.positions = PositionalEncoding(pdim, max(config.seq_len, 16),
                                                combine=config.pos_combine, dtype=dt)
            if config.pos_combine == "concat":
                width += pdim
        self.proj = Dense(width, config.hidden_dim, rng, dt, bias=False) \
            if width != config.hidden_dim else None
        self.rng = rng

    def _embed(self, ids):
        x = self.embedding(ids)
        if self.positions is not None:
            x = self.positions(x)
        if self.proj is not None:
            x = self.proj(x)
        return ag.dropout(x, self.config.dropout, self.rng, self.training)


class Transformer(_InputStack):
    def __init__(self, config, rng):
        dt = np.dtype(config.dtype)
        self.config = config
        self._init_input(config, rng, dt, absolute=True)
        self.blocks = [
            Block(MultiHeadAttention(config.hidden_dim, config.num_heads, rng, dt, config.dropout),
                  config.hidden_dim, config.ffn_width, rng, dt, config.dropout)
            for _ in range(config.num_layers)]
        self.output = Dense(config.hidden_dim, config.vocab_size, rng, dt)

    def init_state(self, batch):
        return None

    def forward(self, ids, state=None):
        ids = np.asarray(ids)
        x = self._embed(ids)
        for block in self.blocks:
            x = block(x)
        return self.output(x), None


# ---------------------------------------------------------------------------
# Transformer-XL
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MemoryCache:
    """Per-layer hidden states of previous segments, ``[B, m, D]`` each.

    Stored as plain arrays so nothing in the cache can join a graph.
    """
    layers: tuple

    @property
    def length(self):
        return self.layers[0].shape[1] if self.layers else 0

    @classmethod
    def empty(cls, num_layers, batch, dim, dtype=np.float32):
        return cls(tuple(np.zeros((batch, 0, dim), dtype=dtype) for _ in range(num_layers)))


def update_memory(old, new_hidden, mem_len):
    """Append each layer's new hidden states and keep the last ``mem_len`` positions."""
    new = [h.data if isinstance(h, Tensor) else np.asarray(h) for h in new_hidden]
    if old is None:
        old_layers = [np.zeros((h.shape[0], 0, h.shape[2]), dtype=h.dtype) for h in new]
    else:
        old_layers = list(old.layers)
    if len(old_layers) != len(new):
        raise LayerCountMismatch(f"memory has {len(old_layers)} layers, got {len(new)}")
    out = []
    for o, n in zip(old_layers, new):
        if o.shape[0] != n.shape[0] or o.shape[2] != n.shape[2]:
            raise ShapeMismatch(f"memory {o.shape} incompatible with hidden {n.shape}")
        both = np.concatenate([o, n], axis=1)
        start = both.shape[1] - mem_len if mem_len > 0 else both.shape[1]
        out.append(np.array(both[:, max(start, 0):], copy=True))
    return MemoryCache(tuple(out))


class TransformerXL(_InputStack):
    def __init__(self, config, rng):
        dt = np.dtype(config.dtype)
        self.config = config
        self._init_input(config, rng, dt, absolute=False)
        self.blocks = [
            Block(RelativeMultiHeadAttention(config.hidden_dim, config.num_heads, rng, dt,
                                             config.dropout),
                  config.hidden_dim, config.ffn_width, rng, dt, config.dropout)
            for _ in range(config.num_layers)]
        self.output = Dense(config.hidden_dim, config.vocab_size, rng, dt)

    def init_state(self, batch):
        return MemoryCache.empty(len(self.blocks), batch, self.config.hidden_dim,
                                 np.dtype(self.config.dtype))

    def forward(self, ids, memory=None):
        ids = np.asarray(ids)
        if memory is None:
            memory = self.init_state(ids.shape[0])
        if len(memory.layers) != len(self.blocks):
            raise LayerCountMismatch(
                f"memory has {len(memory.layers)} layers, model has {len(self.blocks)}")
        x = self._embed(ids)
        inputs = []
        for block, mem in zip(self.blocks, memory.layers):
            if mem.shape[0] != ids.shape[0]:
                raise ShapeMismatch(f"memory batch {mem.shape[0]} vs input batch {ids.shape[0]}")
            inputs.append(x)
            x = block(x, Tensor(mem) if mem.shape[1] else None)
        return self.output(x), update_memory(memory, inputs, self.config.mem_len)


MODEL_CLASSES = {"char_lstm": CharLSTM, "transformer": Transformer,
                 "transformer_xl": TransformerXL}


def build_model(config, seed=0):
    """Instantiate a model with deterministic initialisation from ``seed``."""
    if not config.vocab_size:
        raise InvalidConfig("vocab_size must be set before building a model")
    rng = seed if isinstance(seed, Rng) else Rng(seed)
    model = MODEL_CLASSES[config.family](config, rng)
    model.rng = rng
    return model


def detach_state(state):
    """Cut the graph between consecutive segments (truncated backprop)."""
    if isinstance(state, list):
        return [s.detach() for s in state]
    return state
