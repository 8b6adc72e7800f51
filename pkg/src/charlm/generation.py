"""Autoregressive character sampling with temperature."""
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Rng
from .errors import InvalidDistribution, NonPositiveTemperature

DEFAULT_TEMPERATURE = 0.7


@dataclass(frozen=True)
class SamplerConfig:
    temperature: float = DEFAULT_TEMPERATURE
    max_chars: int = 1000
    prefix: str = ""
    seed: int = 0
    stop_sequence: str = None
    greedy: bool = False

    def __post_init__(self):
        if not self.greedy and not self.temperature > 0:
            raise NonPositiveTemperature(
                f"temperature must be > 0 (got {self.temperature}); use greedy=True for argmax")
        if self.max_chars < 0:
            raise ValueError("max_chars must be non-negative")


def apply_temperature(logits, temperature):
    if not temperature > 0:
        raise NonPositiveTemperature(f"temperature must be > 0, got {temperature}")
    return np.asarray(logits, dtype=np.float64) / temperature


def softmax(logits):
    z = np.asarray(logits, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def entropy(p):
    p = np.asarray(p, dtype=np.float64)
    nz = p > 0
    return float(-np.sum(p[nz] * np.log(p[nz])))


def sample_next(distribution, rng):
    """Inverse-CDF draw over vocabulary order."""
    p = np.asarray(distribution, dtype=np.float64)
    if p.ndim != 1 or p.size == 0 or (p < 0).any() or abs(p.sum() - 1.0) > 1e-6:
        raise InvalidDistribution("distribution must be non-negative and sum to 1")
    u = rng.random()
    cdf = np.cumsum(p)
    idx = int(np.searchsorted(cdf, u * cdf[-1], side="right"))
    # skip zero-probability ids that share the boundary
    idx = min(idx, p.size - 1)
    while p[idx] == 0 and idx > 0:
        idx -= 1
    return idx


class Session:
    """Feeds characters through a model one segment at a time.

    LSTM state and transformer-xl memory carry across calls; the fixed
    context transformer re-reads a sliding window of its last ``seq_len``
    characters.
    """

    def __init__(self, model):
        self.model = model.eval()
        self.state = model.init_state(1)
        self.window = []
        self.sliding = model.config.family == "transformer"
        self.seq_len = model.config.seq_len

    def feed(self, ids):
        """Consume ``ids``; return the logits predicting the character after them."""
        ids = [int(i) for i in ids]
        if not ids:
            raise ValueError("feed() needs at least one id")
        with ag.no_grad():
            if self.sliding:
                self.window = (self.window + ids)[-self.seq_len:]
                logits, _ = self.model.forward(np.array([self.window]))
                return logits.data[0, -1].astype(np.float64)
            for start in range(0, len(ids), self.seq_len):
                chunk = np.array([ids[start:start + self.seq_len]])
                logits, self.state = self.model.forward(chunk, self.state)
            return logits.data[0, -1].astype(np.float64)


def _seed_ids(prefix, vocab, separator="\n"):
    if prefix:
        return list(vocab.encode(prefix))
    # nothing to condition on: start from a document boundary
    seed = separator if separator in vocab else vocab.chars[0]
    return [vocab.id_of[seed]]


def generate(model, vocab, sampler):
    """Return ``prefix`` followed by up to ``max_chars`` sampled characters."""
    if sampler.max_chars == 0:
        if sampler.prefix:
            vocab.encode(sampler.prefix)
        return sampler.prefix
    rng = Rng(sampler.seed)
    session = Session(model)
    logits = session.feed(_seed_ids(sampler.prefix, vocab))
    out = []
    for _ in range(sampler.max_chars):
        if sampler.greedy:
            nxt = int(np.argmax(logits))
        else:
            nxt = sample_next(softmax(apply_temperature(logits, sampler.temperature)), rng)
        out.append(vocab.chars[nxt])
        if sampler.stop_sequence and "".join(out[-len(sampler.stop_sequence):]) \
                == sampler.stop_sequence:
            break
        logits = session.feed([nxt])
    return sampler.prefix + "".join(out)


def generate_from_checkpoint(path, sampler):
    from .checkpoint import load_checkpoint, restore_model

    ckpt = load_checkpoint(path)
    return generate(restore_model(ckpt), ckpt.vocab, sampler)


def teacher_forced_logits(model, ids):
    """Next-character logits at every position of ``ids`` (state threaded)."""
    session = Session(model)
    return np.stack([session.feed([i]) for i in ids])


def entropy_profile(model, ids, temperatures=(1.0, 0.75, 0.5, 0.25)):
    """Per-step entropy of ``softmax(logits / T)`` along a fixed text.

    Returns ``{T: array of per-step entropies}``.
    """
    logits = teacher_forced_logits(model, ids)
    return {t: np.array([entropy(softmax(apply_temperature(row, t))) for row in logits])
            for t in temperatures}
