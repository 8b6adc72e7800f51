"""Named hyperparameter presets.

The three full presets are the published per-family settings.  The
``micro-*`` presets shrink them to desk scale for the bundled fixture
corpus.  The micro transformer and transformer-xl share widths; the
transformer gets a slightly wider feed-forward layer to make up for the
relative-position weights it lacks, so the two parameter counts agree to
within 0.2%.  The micro char-lstm decays its rate on a cosine: at a
constant 0.003, Adam spikes the loss once it is near zero.
"""
from .errors import UnknownPreset
from .models import ModelConfig
from .training import TrainConfig

PRESETS = {
    "char-lstm": (
        dict(family="char_lstm", seq_len=100, batch_size=64, num_layers=1,
             embedding_dim=256, hidden_dim=1024, num_heads=0, dropout=0.0),
        dict(lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8, schedule="constant", clip_norm=5.0),
    ),
    "transformer": (
        dict(family="transformer", seq_len=128, batch_size=4096, num_layers=2,
             embedding_dim=256, hidden_dim=256, num_heads=4, dropout=0.1),
        dict(lr=0.2, beta1=0.9, beta2=0.997, eps=1e-9, schedule="custom",
             warmup_steps=10000, clip_norm=5.0),
    ),
    "transformer-xl": (
        dict(family="transformer_xl", seq_len=128, batch_size=22, num_layers=12,
             embedding_dim=512, hidden_dim=512, num_heads=8, dropout=0.1, mem_len=128,
             variable_length=True),
        dict(lr=0.00025, beta1=0.9, beta2=0.999, eps=1e-8, schedule="cosine", clip_norm=0.25),
    ),
    "micro-char-lstm": (
        dict(family="char_lstm", seq_len=64, batch_size=16, num_layers=1,
             embedding_dim=32, hidden_dim=256, num_heads=0, dropout=0.0),
        dict(lr=0.003, beta1=0.9, beta2=0.999, eps=1e-8, schedule="cosine",
             clip_norm=5.0, steps=2000, eval_interval=200),
    ),
    "micro-transformer": (
        dict(family="transformer", seq_len=64, batch_size=16, num_layers=2,
             embedding_dim=64, hidden_dim=64, num_heads=4, dropout=0.0, ffn_dim=288),
        dict(lr=0.03, beta1=0.9, beta2=0.997, eps=1e-9, schedule="custom",
             warmup_steps=100, clip_norm=5.0, steps=2000, eval_interval=200),
    ),
    "micro-transformer-xl": (
        dict(family="transformer_xl", seq_len=64, batch_size=16, num_layers=2,
             embedding_dim=64, hidden_dim=64, num_heads=4, dropout=0.0, mem_len=64,
             variable_length=True),
        dict(lr=0.003, beta1=0.9, beta2=0.999, eps=1e-8, schedule="cosine",
             clip_norm=0.25, steps=2000, eval_interval=200),
    ),
}

MODEL_FIELDS = {"seq_len", "batch_size", "num_layers", "embedding_dim", "hidden_dim",
                "num_heads", "dropout", "mem_len", "ffn_dim", "pos_combine",
                "variable_length", "dtype", "family", "vocab_size"}


def load_preset(name, overrides=None):
    """Return ``(ModelConfig, TrainConfig)`` for a preset, with overrides applied.

    ``overrides`` is a flat mapping; keys are routed to whichever config
    owns them.
    """
    try:
        model_kw, train_kw = PRESETS[name]
    except KeyError:
        raise UnknownPreset(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    model_kw, train_kw = dict(model_kw), dict(train_kw)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        (model_kw if key in MODEL_FIELDS else train_kw)[key] = value
    if model_kw["family"] == "transformer_xl" and "mem_len" not in (overrides or {}):
        model_kw.setdefault("mem_len", model_kw["seq_len"])
    return ModelConfig.from_dict(model_kw), TrainConfig.from_dict(train_kw)
