import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from charlm.errors import EmptyCorpus
from charlm.estimator import CharLanguageModel, LatexCharEncoder

DOCS = ["\\begin{a} x {y} \\end{a}\n" * 30, "$z$ and \\item b\n" * 30]


def test_encoder_params_and_clone():
    enc = LatexCharEncoder(min_count=7)
    assert enc.get_params() == {"min_count": 7, "separator": "\n"}
    twin = clone(enc)
    assert twin is not enc and twin.get_params() == enc.get_params()


def test_encoder_fit_transform_roundtrip():
    enc = LatexCharEncoder(min_count=1)
    ids = enc.fit_transform(DOCS)
    assert [a.dtype.kind for a in ids] == ["i", "i"]
    assert enc.inverse_transform(ids) == DOCS
    assert list(enc.vocabulary_.chars) == sorted(set("".join(DOCS)))


def test_encoder_drops_rare_characters():
    enc = LatexCharEncoder(min_count=5).fit(["aaaaab", "aaaaa"])
    assert enc.removed_ == frozenset("b")
    assert enc.inverse_transform(enc.transform("abba")) == ["aa"]
    # the separator is kept even though it appears once
    assert "\n" in enc.vocabulary_.chars


def test_encoder_stream_joins_with_separator():
    enc = LatexCharEncoder(min_count=1).fit(["ab", "ba"])
    stream = enc.stream(["ab", "ba"])
    assert enc.vocabulary_.decode(stream.ids) == "ab\nba"


def test_encoder_errors():
    with pytest.raises(NotFittedError):
        LatexCharEncoder().transform(["x"])
    with pytest.raises(EmptyCorpus):
        LatexCharEncoder().fit([""])
    with pytest.raises(TypeError):
        LatexCharEncoder().fit([1, 2])


@pytest.fixture(scope="module")
def fitted():
    model = CharLanguageModel(steps=40, seed=0, hidden_dim=32, seq_len=16, batch_size=4,
                              lr=0.01)
    return model.fit(DOCS)


def test_model_params_and_clone():
    model = CharLanguageModel(preset="micro-transformer", steps=5)
    params = model.get_params()
    assert params["preset"] == "micro-transformer" and params["steps"] == 5
    assert clone(model).get_params() == params


def test_model_not_fitted():
    with pytest.raises(NotFittedError):
        CharLanguageModel().predict_proba("ab")


def test_predict_proba_rows_are_distributions(fitted):
    p = fitted.predict_proba("\\begin{a}")
    assert p.shape == (9, len(fitted.vocabulary_))
    assert np.allclose(p.sum(axis=1), 1.0)
    assert len(fitted.predict("\\begin{a}")) == 9


def test_training_improves_score(fitted):
    text = DOCS[0][:200]
    untrained = CharLanguageModel(steps=0, hidden_dim=32, seq_len=16, batch_size=4).fit(DOCS)
    assert fitted.score(text) > untrained.score(text)
    assert fitted.score(text) <= 0


def test_generate_reproducible(fitted):
    a = fitted.generate("\\begin", max_chars=30, seed=4)
    assert a == fitted.generate("\\begin", max_chars=30, seed=4)
    assert a.startswith("\\begin") and len(a) == 36


@pytest.mark.parametrize("preset", ["micro-transformer", "micro-transformer-xl"])
def test_attention_presets_fit(preset):
    model = CharLanguageModel(preset=preset, steps=3, hidden_dim=16, seq_len=8, batch_size=2)
    model.fit(DOCS)
    assert model.model_.config.embedding_dim == 16
    assert model.predict_proba("ab").shape[0] == 2
