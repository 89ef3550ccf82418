import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from mre.data import SynthConfig, synth_generate
from mre.estimator import MREClassifier, check_bags
from mre.exceptions import ValidationError


@pytest.fixture(scope="module")
def data():
    return synth_generate(SynthConfig(n_samples=90, n_classes=3, dims=(3, 2, 4), lengths=(2, 3, 2), seed=3))


def small(**kw):
    return MREClassifier(**{**dict(d_model=4, rank=2, epochs=3, patience=3, learning_rate=1e-2, batch_size=16), **kw})


def test_get_params_and_clone():
    est = small(tau=0.5)
    params = est.get_params()
    assert params["tau"] == 0.5 and params["d_model"] == 4
    twin = clone(est)
    assert twin.get_params() == params and twin is not est
    est.set_params(rank=3)
    assert est.rank == 3


def test_unfitted_predict_raises(data):
    with pytest.raises(NotFittedError):
        small().predict(data)


def test_fit_predict_shapes_and_determinism(data):
    a = small().fit(data)
    b = small().fit(data)
    proba = a.predict_proba(data)
    assert proba.shape == (90, 3)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0, atol=1e-12)
    assert np.array_equal(a.predict(data), b.predict(data))
    assert a.transform(data).shape == (90, 3)
    h = a.relevance_weights(data)
    assert h.shape == (90, 3)
    np.testing.assert_allclose(h.sum(axis=1), 1.0, atol=1e-12)
    assert 0.0 <= a.score(data, data.labels) <= 1.0


def test_string_labels_roundtrip(data):
    names = np.array(["calm", "happy", "sad"])
    y = names[data.labels]
    est = small().fit(list(data), y)
    assert list(est.classes_) == ["calm", "happy", "sad"]
    assert set(est.predict(data)) <= set(names)


def test_array_triple_input(data):
    X = tuple(np.stack([b.modality(k) for b in data]) for k in ("vision", "audio", "text"))
    est = small().fit(X, data.labels)
    assert np.array_equal(est.predict(X), est.predict(data))


def test_input_validation(data):
    with pytest.raises(ValidationError):
        check_bags("not data")
    with pytest.raises(ValidationError):
        check_bags(list(data), [0, 1])
    X = (np.zeros((2, 1, 3)), np.zeros((3, 1, 2)), np.zeros((2, 1, 4)))
    with pytest.raises(ValidationError):
        check_bags(X, [0, 1])
    with pytest.raises(ValidationError, match="2 classes"):
        small().fit(list(data), np.zeros(len(data), dtype=int))
    with pytest.raises(ValidationError):
        small(validation_fraction=0.0).fit(data)
    est = small().fit(data)
    bad = (np.zeros((2, 1, 5)), np.zeros((2, 1, 2)), np.zeros((2, 1, 4)))
    with pytest.raises(ValidationError, match="dims"):
        est.predict(bad)
