"""scikit-learn style wrappers around the corpus and training pipeline.

``LatexCharEncoder`` learns a character vocabulary and maps text to id
arrays.  ``CharLanguageModel`` trains one of the model families on raw
text and exposes next-character probabilities, scoring and sampling.
"""
import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import autograd as ag
from .corpus import (DEFAULT_MIN_COUNT, DEFAULT_SEPARATOR, CorpusStream, decode,
                     encode, filter_infrequent, build_vocabulary)
from .errors import EmptyCorpus
from .generation import SamplerConfig, Session, generate, softmax
from .presets import load_preset
from .training import evaluate, train


def _as_documents(X):
    if isinstance(X, str):
        return [X]
    docs = list(X)
    if not all(isinstance(d, str) for d in docs):
        raise TypeError("expected a string or an iterable of strings")
    return docs


class LatexCharEncoder(TransformerMixin, BaseEstimator):
    """Character vocabulary learned from documents, rare characters dropped.

    ``transform`` returns one int64 id array per document; characters outside
    the vocabulary are removed first, the way the corpus builder removes them.
    """

    def __init__(self, min_count=DEFAULT_MIN_COUNT, separator=DEFAULT_SEPARATOR):
        self.min_count = min_count
        self.separator = separator

    def fit(self, X, y=None):
        docs = _as_documents(X)
        joined = self.separator.join(docs)
        if not joined:
            raise EmptyCorpus("no text to fit")
        kept, removed = filter_infrequent(joined, self.min_count, keep={self.separator})
        self.vocabulary_ = build_vocabulary(kept)
        self.removed_ = frozenset(removed)
        return self

    def _clean(self, doc):
        return "".join(c for c in doc if c in self.vocabulary_)

    def transform(self, X):
        check_is_fitted(self, "vocabulary_")
        return [encode(self._clean(d), self.vocabulary_) for d in _as_documents(X)]

    def inverse_transform(self, ids):
        check_is_fitted(self, "vocabulary_")
        return [decode(row, self.vocabulary_) for row in ids]

    def stream(self, X):
        """Encode documents joined by the separator into a training stream."""
        check_is_fitted(self, "vocabulary_")
        full = self.separator.join(self._clean(d) for d in _as_documents(X))
        return CorpusStream(encode(full, self.vocabulary_), self.vocabulary_,
                            threshold=self.min_count, separator=self.separator,
                            removed=self.removed_)


class CharLanguageModel(BaseEstimator):
    """Character-level language model with an estimator interface.

    ``preset`` picks the family and hyperparameters; the remaining keyword
    arguments override individual preset fields when not None.
    """

    def __init__(self, preset="micro-char-lstm", steps=None, seed=0, min_count=1,
                 hidden_dim=None, num_layers=None, seq_len=None, batch_size=None, lr=None,
                 val_fraction=None, temperature=0.7):
        self.preset = preset
        self.steps = steps
        self.seed = seed
        self.min_count = min_count
        self.hidden_dim = hidden_dim
        self.num_layers = num_layers
        self.seq_len = seq_len
        self.batch_size = batch_size
        self.lr = lr
        self.val_fraction = val_fraction
        self.temperature = temperature

    def _configs(self):
        overrides = dict(steps=self.steps, seed=self.seed, hidden_dim=self.hidden_dim,
                         num_layers=self.num_layers, seq_len=self.seq_len,
                         batch_size=self.batch_size, lr=self.lr,
                         val_fraction=self.val_fraction)
        if self.hidden_dim is not None:
            mc, _ = load_preset(self.preset)
            if mc.family != "char_lstm":
                overrides["embedding_dim"] = self.hidden_dim
        return load_preset(self.preset, overrides)

    def fit(self, X, y=None):
        self.encoder_ = LatexCharEncoder(self.min_count).fit(X)
        corpus = self.encoder_.stream(X)
        model_config, train_config = self._configs()
        result = train(model_config, train_config, corpus)
        self.model_ = result.model.eval()
        self.history_ = result.history
        self.vocabulary_ = corpus.vocab
        return self

    def _ids(self, text):
        check_is_fitted(self, "model_")
        return encode(text, self.vocabulary_)

    def predict_proba(self, text):
        """Next-character distribution after every prefix of ``text``, shape [n, V]."""
        ids = self._ids(text)
        session = Session(self.model_)
        rows = []
        with ag.no_grad():
            for i in ids:
                rows.append(softmax(session.feed([i])))
        return np.array(rows)

    def predict(self, text):
        """Most likely next character after every prefix of ``text``."""
        return decode(self.predict_proba(text).argmax(axis=1), self.vocabulary_)

    def score(self, text, y=None):
        """Negative mean cross entropy (nats per character); higher is better."""
        return -evaluate(self.model_, self._ids(text), "score").ce_nats

    def generate(self, prefix="", max_chars=200, seed=0, greedy=False):
        check_is_fitted(self, "model_")
        sampler = SamplerConfig(self.temperature, max_chars, prefix, seed, greedy=greedy)
        return generate(self.model_, self.vocabulary_, sampler)
