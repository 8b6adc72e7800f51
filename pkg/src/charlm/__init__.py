"""Character-level language models for LaTeX source.

Char-LSTM, causal Transformer and Transformer-XL on a small numpy
autodiff engine, with temperature sampling and a structural validator.
"""
__version__ = "0.1.0"

from .autograd import Rng, Tensor, backward, grad_check, no_grad
from .corpus import CorpusStream, Vocabulary, build_corpus, load_corpus, write_corpus
from .generation import SamplerConfig, generate
from .models import ModelConfig, build_model
from .presets import PRESETS, load_preset
from .training import TrainConfig, bpc_from_ce, evaluate, train
from .validator import check_structure, lex, score, validate_text

__all__ = [
    "Rng", "Tensor", "backward", "grad_check", "no_grad",
    "CorpusStream", "Vocabulary", "build_corpus", "load_corpus", "write_corpus",
    "SamplerConfig", "generate", "ModelConfig", "build_model", "PRESETS", "load_preset",
    "TrainConfig", "bpc_from_ce", "evaluate", "train",
    "check_structure", "lex", "score", "validate_text",
]
