"""LaTeX corpus ingestion: cleaning, flattening, vocabulary and batching."""
import hashlib
import json
import os
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (CorpusTooSmall, CyclicInclude, EmptyCorpus, MissingInclude,
                     UnknownChar)

DEFAULT_MIN_COUNT = 100
DEFAULT_SEPARATOR = "\n"
DEFAULT_VAL_FRACTION = 0.05

_INCLUDE = re.compile(r"\\(?:input|include)\s*\{([^{}]*)\}")


def strip_comments(text):
    """Remove every unescaped ``%`` through end of line, keeping the newline.

    ``\\%`` is an escaped percent sign and survives.  Verbatim environments
    get no special treatment.
    """
    return "".join(_strip_line(line) for line in text.splitlines(keepends=True))


def _strip_line(line):
    body = line.rstrip("\r\n")
    eol = line[len(body):]
    i = 0
    while True:
        j = body.find("%", i)
        if j < 0:
            return line
        # count the backslashes before it: an odd run escapes the percent
        k = j
        while k > 0 and body[k - 1] == "\\":
            k -= 1
        if (j - k) % 2 == 0:
            return body[:j] + eol
        i = j + 1


def flatten_document(root, resolver, _chain=None):
    """Recursively inline ``\\input{p}`` and ``\\include{p}``.

    ``resolver`` maps a path to its text and raises ``KeyError``,
    ``FileNotFoundError`` or ``OSError`` when it cannot; ``p`` is tried
    first as written, then with ``.tex`` appended.
    """
    chain = list(_chain or [])
    if root in chain:
        raise CyclicInclude(chain + [root])
    chain.append(root)
    text = _resolve(root, resolver, chain)

    def substitute(match):
        target = match.group(1).strip()
        for candidate in (target, target + ".tex"):
            if candidate in chain:
                raise CyclicInclude(chain + [candidate])
            try:
                resolver(candidate)
            except (KeyError, OSError):
                continue
            return flatten_document(candidate, resolver, chain)
        raise MissingInclude(target)

    return _INCLUDE.sub(substitute, text)


def _resolve(path, resolver, chain):
    try:
        return resolver(path)
    except (KeyError, OSError) as exc:
        raise MissingInclude(path) from exc


def filter_infrequent(text, threshold=DEFAULT_MIN_COUNT, keep=()):
    """Delete every character occurring fewer than ``threshold`` times.

    Counts are taken once over the whole text before deleting anything.
    Characters in ``keep`` are never removed.  Returns ``(text, removed)``.
    """
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    counts = Counter(text)
    removed = {c for c, n in counts.items() if n < threshold and c not in keep}
    if not removed:
        return text, set()
    return "".join(c for c in text if c not in removed), removed


class Vocabulary:
    """Character/id bijection ordered by code point."""

    def __init__(self, chars, counts=None):
        chars = list(chars)
        if sorted(set(chars)) != chars:
            raise ValueError("vocabulary characters must be unique and sorted by code point")
        self.chars = chars
        self.counts = list(counts) if counts is not None else [0] * len(chars)
        self.id_of = {c: i for i, c in enumerate(chars)}

    def __len__(self):
        return len(self.chars)

    def __contains__(self, char):
        return char in self.id_of

    def __eq__(self, other):
        return (isinstance(other, Vocabulary) and self.chars == other.chars
                and self.counts == other.counts)

    def __repr__(self):
        return f"Vocabulary(size={len(self)})"

    def encode(self, text):
        return encode(text, self)

    def decode(self, ids):
        return decode(ids, self)

    def digest(self):
        """SHA-256 over the ordered character list."""
        payload = json.dumps(self.chars, ensure_ascii=True).encode("ascii")
        return hashlib.sha256(payload).digest()

    def to_records(self):
        return [{"char": c, "id": i, "count": n}
                for i, (c, n) in enumerate(zip(self.chars, self.counts))]

    @classmethod
    def from_records(cls, records):
        records = sorted(records, key=lambda r: r["id"])
        return cls([r["char"] for r in records], [r["count"] for r in records])


def build_vocabulary(text):
    if not text:
        raise EmptyCorpus("cannot build a vocabulary from empty text")
    counts = Counter(text)
    chars = sorted(counts)
    return Vocabulary(chars, [counts[c] for c in chars])


def encode(text, vocab):
    id_of = vocab.id_of
    out = np.empty(len(text), dtype=np.int64)
    for i, c in enumerate(text):
        try:
            out[i] = id_of[c]
        except KeyError:
            raise UnknownChar(c, i) from None
    return out


def decode(ids, vocab):
    chars = vocab.chars
    return "".join(chars[int(i)] for i in ids)


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    char_start: int
    char_end: int
    byte_start: int
    byte_end: int


@dataclass(frozen=True)
class CorpusStream:
    ids: np.ndarray
    vocab: Vocabulary
    source_manifest: tuple = ()
    threshold: int = DEFAULT_MIN_COUNT
    separator: str = DEFAULT_SEPARATOR
    removed: frozenset = field(default_factory=frozenset)

    def __len__(self):
        return len(self.ids)

    def text(self):
        return decode(self.ids, self.vocab)


def split_stream(stream, val_fraction=DEFAULT_VAL_FRACTION):
    """Hold out the final ``val_fraction`` of the stream (by characters)."""
    n_val = int(round(len(stream.ids) * val_fraction))
    cut = len(stream.ids) - n_val
    return stream.ids[:cut], stream.ids[cut:]


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SegmentBatch:
    inputs: np.ndarray
    targets: np.ndarray
    segment_index: int

    @property
    def seq_len(self):
        return self.inputs.shape[1]


def lane_layout(n, seq_len, batch_size):
    """Return ``(lane_len, n_batches)`` for a fixed-length layout."""
    if batch_size < 1 or seq_len < 1:
        raise ValueError("seq_len and batch_size must be positive")
    if n < batch_size * (seq_len + 1):
        raise CorpusTooSmall(
            f"stream of {n} ids is shorter than batch_size*(seq_len+1) = "
            f"{batch_size * (seq_len + 1)}")
    lane_len = n // batch_size
    return lane_len, (lane_len - 1) // seq_len


def segment_stream(ids, seq_len, batch_size, lengths=None):
    """Yield SegmentBatches over ``batch_size`` contiguous lanes.

    Batch ``k`` of a fixed-length layout reads positions ``[kL, (k+1)L]`` of
    every lane, so state carried from batch ``k`` into ``k+1`` follows the
    text.  ``lengths`` (an iterable of per-batch lengths) switches to the
    variable-length layout; iteration stops when a lane cannot supply the
    next full segment.
    """
    if isinstance(ids, CorpusStream):
        ids = ids.ids
    ids = np.asarray(ids)
    lane_len, n_batches = lane_layout(len(ids), seq_len, batch_size)
    lanes = ids[:lane_len * batch_size].reshape(batch_size, lane_len)
    if lengths is None:
        for k in range(n_batches):
            s = k * seq_len
            yield SegmentBatch(lanes[:, s:s + seq_len], lanes[:, s + 1:s + seq_len + 1], k)
        return
    pos = 0
    for k, length in enumerate(lengths):
        if pos + length + 1 > lane_len:
            return
        yield SegmentBatch(lanes[:, pos:pos + length], lanes[:, pos + 1:pos + length + 1], k)
        pos += length


def variable_lengths(base_len, rng):
    """Endless per-batch lengths drawn uniformly from ``[ceil(base/2), base]``."""
    lo = max(1, -(-base_len // 2))
    while True:
        yield int(rng.integers(lo, base_len + 1))


# ---------------------------------------------------------------------------
# directory pipeline
# ---------------------------------------------------------------------------

def discover_roots(directory):
    """Top-level documents of a source tree, in lexicographic path order.

    Files containing ``\\documentclass`` are roots; a tree without any is
    treated as a set of independent documents.
    """
    directory = Path(directory)
    files = sorted(p for p in directory.rglob("*.tex") if p.is_file())
    roots = [p for p in files if "\\documentclass" in strip_comments(_read(p))]
    return roots or files


def _read(path):
    return Path(path).read_text(encoding="utf-8")


def _file_resolver(base):
    base = Path(base)
    cache = {}

    def resolve(path):
        p = Path(path)
        full = p if p.is_absolute() else base / p
        if not full.is_file():
            raise FileNotFoundError(str(full))
        key = str(full)
        if key not in cache:
            cache[key] = strip_comments(_read(full))
        return cache[key]

    return resolve


def build_corpus(directory, min_count=DEFAULT_MIN_COUNT, separator=DEFAULT_SEPARATOR):
    """Flatten, clean, concatenate and filter every document under ``directory``."""
    directory = Path(directory)
    docs = []
    for root in discover_roots(directory):
        resolver = _file_resolver(root.parent)
        docs.append((root.relative_to(directory).as_posix(),
                     flatten_document(root.name, resolver)))
    if not docs:
        raise EmptyCorpus(f"no .tex files under {directory}")
    raw = separator.join(text for _, text in docs)
    _, removed = filter_infrequent(raw, min_count, keep={separator})
    cleaned = ["".join(c for c in text if c not in removed) for _, text in docs]
    full = separator.join(cleaned)
    vocab = build_vocabulary(full)

    manifest, pos, bpos = [], 0, 0
    for (path, _), text in zip(docs, cleaned):
        nbytes = len(text.encode("utf-8"))
        manifest.append(ManifestEntry(path, pos, pos + len(text), bpos, bpos + nbytes))
        pos += len(text) + len(separator)
        bpos += nbytes + len(separator.encode("utf-8"))
    return CorpusStream(encode(full, vocab), vocab, tuple(manifest), min_count,
                        separator, frozenset(removed))


def write_corpus(stream, out_dir, val_fraction=DEFAULT_VAL_FRACTION):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "corpus.txt").write_bytes(stream.text().encode("utf-8"))
    vocab_doc = {
        "chars": stream.vocab.to_records(),
        "threshold": stream.threshold,
        "separator": stream.separator,
        "removed": sorted(stream.removed),
    }
    _write_json(out / "vocab.json", vocab_doc)
    _write_json(out / "manifest.json", {
        "val_fraction": val_fraction,
        "total_chars": len(stream),
        "documents": [vars(e) for e in stream.source_manifest],
    })


def load_corpus(corpus_dir):
    """Read a directory written by :func:`write_corpus`.

    Returns ``(stream, val_fraction)``.
    """
    d = Path(corpus_dir)
    vocab_doc = json.loads((d / "vocab.json").read_text(encoding="utf-8"))
    manifest = json.loads((d / "manifest.json").read_text(encoding="utf-8"))
    vocab = Vocabulary.from_records(vocab_doc["chars"])
    text = (d / "corpus.txt").read_bytes().decode("utf-8")
    entries = tuple(ManifestEntry(**e) for e in manifest["documents"])
    stream = CorpusStream(encode(text, vocab), vocab, entries, vocab_doc["threshold"],
                          vocab_doc["separator"], frozenset(vocab_doc.get("removed", ())))
    return stream, manifest.get("val_fraction", DEFAULT_VAL_FRACTION)


def _write_json(path, obj):
    tmp = str(path) + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, ensure_ascii=False, indent=1, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)
