"""Binary checkpoint format.

Layout (all integers unsigned 32-bit little-endian)::

    b"CLM1" | version | len | config blob (UTF-8 JSON) | 32-byte vocab digest
    | record count | records...

Each record is ``name_len | name | rank | dims... | float32 LE values``.
Model parameters are stored under their dotted names, Adam moments under
``adam.m/<name>`` and ``adam.v/<name>``.  The config blob carries the model
and training configs, the vocabulary, the optimiser counters, the random
stream states and the step.
"""
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import Vocabulary
from .errors import CheckpointError, VocabularyMismatch
from .models import ModelConfig, build_model
from .training import OptimizerState, TrainConfig

MAGIC = b"CLM1"
VERSION = 1
_U32 = struct.Struct("<I")


@dataclass
class Checkpoint:
    model_config: ModelConfig
    vocab: Vocabulary
    params: dict
    train_config: TrainConfig = None
    optimizer: OptimizerState = None
    rng_state: dict = field(default_factory=dict)
    step: int = 0


def _records(model, optimizer):
    recs = [(name, p.data) for name, p in model.named_parameters().items()]
    if optimizer is not None:
        for name in model.named_parameters():
            if name in optimizer.m:
                recs.append((f"adam.m/{name}", optimizer.m[name]))
                recs.append((f"adam.v/{name}", optimizer.v[name]))
    return recs


def encode_checkpoint(model, vocab, optimizer=None, train_config=None, data_rng=None):
    rng_state = {}
    if getattr(model, "rng", None) is not None:
        rng_state["model"] = model.rng.get_state()
    if data_rng is not None:
        rng_state["data"] = data_rng.get_state()
    blob = {
        "model": model.config.to_dict(),
        "train": train_config.to_dict() if train_config else None,
        "vocab": vocab.to_records(),
        "optimizer": None if optimizer is None else {
            "lr": optimizer.lr, "beta1": optimizer.beta1, "beta2": optimizer.beta2,
            "eps": optimizer.eps, "step": optimizer.step},
        "rng": rng_state,
        "step": optimizer.step if optimizer else 0,
    }
    cfg = json.dumps(blob, sort_keys=True, ensure_ascii=True).encode("utf-8")
    parts = [MAGIC, _U32.pack(VERSION), _U32.pack(len(cfg)), cfg, vocab.digest()]
    recs = _records(model, optimizer)
    parts.append(_U32.pack(len(recs)))
    for name, arr in recs:
        raw = name.encode("utf-8")
        parts += [_U32.pack(len(raw)), raw, _U32.pack(arr.ndim)]
        parts += [_U32.pack(d) for d in arr.shape]
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def save_checkpoint(path, model, vocab, optimizer=None, train_config=None, data_rng=None):
    payload = encode_checkpoint(model, vocab, optimizer, train_config, data_rng)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


class _Reader:
    def __init__(self, buf):
        self.buf, self.pos = buf, 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise CheckpointError("truncated checkpoint")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self):
        return _U32.unpack(self.take(4))[0]


def decode_checkpoint(buf, expected_vocab=None):
    r = _Reader(buf)
    if r.take(4) != MAGIC:
        raise CheckpointError("not a charlm checkpoint (bad magic)")
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        blob = json.loads(r.take(r.u32()).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError("corrupt config blob") from exc
    digest = r.take(32)
    vocab = Vocabulary.from_records(blob["vocab"])
    if vocab.digest() != digest:
        raise CheckpointError("vocabulary digest does not match the stored vocabulary")
    if expected_vocab is not None and expected_vocab.digest() != digest:
        raise VocabularyMismatch("checkpoint was trained on a different vocabulary")
    arrays = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode("utf-8")
        shape = tuple(r.u32() for _ in range(r.u32()))
        n = int(np.prod(shape)) if shape else 1
        arrays[name] = np.frombuffer(r.take(4 * n), dtype="<f4").reshape(shape).copy()
    if r.pos != len(buf):
        raise CheckpointError("trailing bytes after the last record")
    params = {k: v for k, v in arrays.items() if not k.startswith("adam.")}
    opt = None
    if blob["optimizer"] is not None:
        o = blob["optimizer"]
        opt = OptimizerState(o["lr"], o["beta1"], o["beta2"], o["eps"], o["step"])
        for k, v in arrays.items():
            if k.startswith("adam.m/"):
                opt.m[k[7:]] = v
            elif k.startswith("adam.v/"):
                opt.v[k[7:]] = v
    return Checkpoint(
        model_config=ModelConfig.from_dict(blob["model"]),
        vocab=vocab,
        params=params,
        train_config=TrainConfig.from_dict(blob["train"]) if blob["train"] else None,
        optimizer=opt,
        rng_state=blob["rng"],
        step=blob["step"],
    )


def load_checkpoint(path, expected_vocab=None):
    return decode_checkpoint(Path(path).read_bytes(), expected_vocab)


def restore_model(ckpt):
    """Rebuild the model described by a checkpoint and load its weights."""
    model = build_model(ckpt.model_config, 0)
    named = model.named_parameters()
    if set(named) != set(ckpt.params):
        missing = sorted(set(named) ^ set(ckpt.params))
        raise CheckpointError(f"parameter set mismatch: {missing[:5]}")
    for name, p in named.items():
        if p.shape != ckpt.params[name].shape:
            raise CheckpointError(f"shape mismatch for {name}")
        p.data[...] = ckpt.params[name]
    if "model" in ckpt.rng_state:
        model.rng.set_state(ckpt.rng_state["model"])
    return model.eval()
