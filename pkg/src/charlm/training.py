"""Optimisation loop, learning-rate schedules, metrics and evaluation."""
import csv
import logging
import math
import time
from contextlib import nullcontext
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import autograd as ag
from .autograd import Rng
from .corpus import lane_layout, segment_stream, split_stream, variable_lengths
from .errors import (EmptySplit, InvalidConfig, NegativeInput, NonFiniteError,
                     NonFiniteGradient)
from .models import build_model, detach_state

log = logging.getLogger(__name__)

SCHEDULES = ("constant", "custom", "cosine")
METRICS_HEADER = ("step", "split", "ce_nats", "bpc", "lr", "elapsed_s")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    schedule: str = "constant"
    warmup_steps: int = 0
    decay_steps: int = 0
    lr_min: float = 0.0
    clip_norm: float = 5.0
    steps: int = 1000
    eval_interval: int = 100
    log_interval: int = 10
    checkpoint_interval: int = 0
    val_fraction: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.schedule not in SCHEDULES:
            raise InvalidConfig(f"unknown schedule {self.schedule!r}; choose from {SCHEDULES}")
        if self.schedule == "custom" and self.warmup_steps < 1:
            raise InvalidConfig("the custom schedule needs warmup_steps >= 1")
        if self.lr <= 0 or self.steps < 0 or self.clip_norm <= 0:
            raise InvalidConfig("lr and clip_norm must be positive, steps non-negative")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise InvalidConfig(f"unknown TrainConfig fields: {sorted(unknown)}")
        return cls(**d)

    def replace(self, **changes):
        return replace(self, **changes)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def bpc_from_ce(ce_nats):
    """Bits per character from cross entropy in nats."""
    if ce_nats < 0:
        raise NegativeInput(f"cross entropy cannot be negative: {ce_nats}")
    return ce_nats / math.log(2.0)


@dataclass(frozen=True)
class Metrics:
    split: str
    ce_nats: float
    step: int = 0
    wall_time: float = 0.0

    @property
    def bpc(self):
        return bpc_from_ce(self.ce_nats)


# ---------------------------------------------------------------------------
# optimiser
# ---------------------------------------------------------------------------

@dataclass
class OptimizerState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state, lr=None):
    """Bias-corrected Adam update, in place on ``params`` (a name -> Tensor dict)."""
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise NonFiniteGradient(f"non-finite gradient for {name}", state.step + 1)
    lr = state.lr if lr is None else lr
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.data.dtype)
    return params, state


def clip_grad_norm(grads, max_norm):
    """Rescale ``grads`` so their global L2 norm is at most ``max_norm``.

    Returns ``(grads, norm_before)``; an infinite ``max_norm`` is the identity.
    """
    norm = math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))
    if math.isfinite(max_norm) and norm > max_norm:
        factor = max_norm / (norm + 1e-12)
        grads = {k: g * g.dtype.type(factor) for k, g in grads.items()}
    return grads, norm


def lr_schedule(step, schedule, config):
    """Learning rate at ``step`` (the base rate is folded in).

    ``custom``: ``lr * min(step/warmup, 1) * max(step, warmup)^-0.5``, times a
    linear ramp to zero over the final ``decay_steps`` of ``config.steps``.
    ``cosine``: ``lr_min + (lr - lr_min)(1 + cos(pi * step / steps)) / 2``,
    after an optional linear warmup.
    """
    if step < 0:
        raise InvalidConfig("step must be non-negative")
    if schedule == "constant":
        return config.lr
    if schedule == "custom":
        w = config.warmup_steps
        if w < 1:
            raise InvalidConfig("the custom schedule needs warmup_steps >= 1")
        rate = config.lr * min(step / w, 1.0) / math.sqrt(max(step, w))
        if config.decay_steps > 0:
            rate *= min(1.0, max(0.0, (config.steps - step) / config.decay_steps))
        return rate
    if schedule == "cosine":
        total = config.steps
        if total <= 0:
            raise InvalidConfig("the cosine schedule needs steps > 0")
        if config.warmup_steps and step < config.warmup_steps:
            return config.lr * step / config.warmup_steps
        frac = min(step, total) / total
        return config.lr_min + 0.5 * (config.lr - config.lr_min) * (1.0 + math.cos(math.pi * frac))
    raise InvalidConfig(f"unknown schedule {schedule!r}")


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def _ce_sum(logits, targets):
    z = logits.astype(np.float64).reshape(-1, logits.shape[-1])
    t = np.asarray(targets).reshape(-1)
    m = z.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(z - m).sum(axis=1))
    return float(np.sum(lse - z[np.arange(len(t)), t])), len(t)


def eval_layout(n, seq_len, batch_size):
    """Largest lane layout the split supports, shrinking batch then length."""
    if n < 2:
        raise EmptySplit(f"split of {n} ids has no prediction targets")
    batch = min(batch_size, n // (seq_len + 1))
    if batch >= 1:
        return seq_len, batch
    return n - 1, 1


def evaluate(model, ids, split="validation", step=0):
    """Mean cross entropy over a split, threading state across segments.

    Dropout is off; the model's training flag is restored afterwards.
    """
    ids = np.asarray(ids)
    cfg = model.config
    seq_len, batch = eval_layout(len(ids), cfg.seq_len, cfg.batch_size)
    was_training = model.training
    model.eval()
    total, count = 0.0, 0
    t0 = time.perf_counter()
    try:
        with ag.no_grad():
            state = model.init_state(batch)
            for b in segment_stream(ids, seq_len, batch):
                logits, state = model.forward(b.inputs, state)
                s, n = _ce_sum(logits.data, b.targets)
                total += s
                count += n
    finally:
        model.train(was_training)
    if count == 0:
        raise EmptySplit(f"{split} split produced no batches")
    return Metrics(split, total / count, step, time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    model: object
    optimizer: OptimizerState
    history: list
    best_val: float = math.inf
    data_rng: object = None


class MetricsWriter:
    def __init__(self, path, deterministic=False):
        self.path = Path(path) if path else None
        self.deterministic = deterministic
        if self.path:
            with open(self.path, "w", newline="") as fh:
                csv.writer(fh).writerow(METRICS_HEADER)

    def write(self, step, split, ce, lr, elapsed):
        if not self.path:
            return
        elapsed = 0.0 if self.deterministic else elapsed
        with open(self.path, "a", newline="") as fh:
            csv.writer(fh).writerow([step, split, repr(float(ce)), repr(bpc_from_ce(ce)),
                                     repr(float(lr)), f"{elapsed:.3f}"])


def _thread_limit(deterministic):
    if not deterministic:
        return nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=1)


def train(model_config, train_config, corpus, out_dir=None, deterministic=False,
          on_step=None):
    """Train a model on a :class:`CorpusStream`.

    Writes ``metrics.csv`` and checkpoints (``best.clm``, ``last.clm`` and,
    with ``checkpoint_interval``, ``step-XXXXXXX.clm``) under ``out_dir``.
    In deterministic mode BLAS runs single-threaded and ``elapsed_s`` is
    logged as zero so metric logs of identical runs compare equal.
    """
    from .checkpoint import save_checkpoint

    model_config = model_config.replace(vocab_size=len(corpus.vocab))
    tc = train_config
    train_ids, val_ids = split_stream(corpus, tc.val_fraction)
    root = Rng(tc.seed)
    model = build_model(model_config, root.child(0))
    data_rng = root.child(1)
    params = model.named_parameters()
    opt = OptimizerState(tc.lr, tc.beta1, tc.beta2, tc.eps)
    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    writer = MetricsWriter(out / "metrics.csv" if out else None, deterministic)
    result = TrainResult(model, opt, [], math.inf, data_rng)
    L, B = model_config.seq_len, model_config.batch_size
    lane_layout(len(train_ids), L, B)
    has_val = len(val_ids) >= 2
    t0 = time.perf_counter()

    def save(name):
        if out:
            save_checkpoint(out / name, model, corpus.vocab, opt, tc, data_rng)

    def run_eval(step, lr):
        metrics = evaluate(model, val_ids, "validation", step)
        result.history.append(metrics)
        writer.write(step, "validation", metrics.ce_nats, lr, time.perf_counter() - t0)
        if metrics.ce_nats < result.best_val:
            result.best_val = metrics.ce_nats
            save("best.clm")
        return metrics

    # a zero-step run never consults the schedule (cosine needs steps > 0)
    step, lr = 0, lr_schedule(0, tc.schedule, tc) if tc.steps else tc.lr
    model.train()
    with _thread_limit(deterministic):
        while step < tc.steps:
            lengths = variable_lengths(L, data_rng) if model_config.variable_length else None
            state = model.init_state(B)
            progressed = False
            for batch in segment_stream(train_ids, L, B, lengths):
                progressed = True
                step += 1
                lr = lr_schedule(step, tc.schedule, tc)
                try:
                    logits, state = model.forward(batch.inputs, state)
                    loss = ag.cross_entropy(logits, batch.targets)
                except NonFiniteError as exc:
                    raise NonFiniteError(f"{exc} (step {step})") from exc
                for p in params.values():
                    p.grad = None
                ag.backward(loss)
                grads = {k: (p.grad if p.grad is not None else np.zeros_like(p.data))
                         for k, p in params.items()}
                grads, _ = clip_grad_norm(grads, tc.clip_norm)
                try:
                    adam_step(params, grads, opt, lr)
                except NonFiniteGradient as exc:
                    raise NonFiniteGradient(str(exc).split(" (step")[0], step) from exc
                state = detach_state(state)
                ce = float(loss.data)
                if step % tc.log_interval == 0 or step == tc.steps:
                    result.history.append(Metrics("train", ce, step, time.perf_counter() - t0))
                    writer.write(step, "train", ce, lr, time.perf_counter() - t0)
                if on_step is not None:
                    on_step(step, ce)
                if has_val and (step % tc.eval_interval == 0 or step == tc.steps):
                    run_eval(step, lr)
                if tc.checkpoint_interval and step % tc.checkpoint_interval == 0:
                    save(f"step-{step:07d}.clm")
                if step >= tc.steps:
                    break
            if not progressed:
                raise EmptySplit("training split produced no batches")
    model.eval()
    save("last.clm")
    if not has_val and out:
        save("best.clm")
    return result
