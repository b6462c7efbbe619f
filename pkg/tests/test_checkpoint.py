"""Checkpoint format: bitwise round trips and refusal of bad files."""

import json

import numpy as np
import pytest

from cadp.checkpoint import (load_classifier, load_flow, save_classifier,
                             save_flow)
from cadp.classifier import MlpClassifier
from cadp.data import make_synthetic
from cadp.dpsgd import DpSgdClassifier
from cadp.exceptions import DataError, SchemaError
from cadp.flow import ConditionalFlow


@pytest.fixture(scope="module")
def two_gauss():
    ds = make_synthetic("two-gaussians", n=300, seed=0)
    return ds.features, ds.labels


@pytest.fixture(scope="module")
def fitted_flow(two_gauss):
    X, y = two_gauss
    flow = ConditionalFlow(n_blocks=2, width=16, steps=60, batch_size=64,
                           eval_every=20, random_state=0)
    return flow.fit(X, y)


@pytest.fixture(scope="module")
def fitted_clf(two_gauss):
    X, y = two_gauss
    clf = MlpClassifier(hidden_layers=1, width=16, steps=80, batch_size=64,
                        random_state=0)
    return clf.fit(X, y)


def test_flow_round_trip_bitwise(tmp_path, fitted_flow, two_gauss):
    X, y = two_gauss
    path = str(tmp_path / "flow.json")
    save_flow(path, fitted_flow, metadata={"note": "test"})
    back, meta = load_flow(path)
    assert meta["note"] == "test"
    assert meta["val_nll"] == fitted_flow.val_nll_
    z_orig = fitted_flow.transform(X, y)
    z_back = back.transform(X, y)
    assert np.array_equal(z_orig, z_back)
    x_inv = back.inverse_transform(z_back, y)
    assert np.max(np.abs(x_inv - X)) < 1e-6


def test_flow_round_trip_twice_is_stable(tmp_path, fitted_flow):
    p1 = str(tmp_path / "a.json")
    p2 = str(tmp_path / "b.json")
    save_flow(p1, fitted_flow)
    back, _ = load_flow(p1)
    save_flow(p2, back)
    with open(p1) as fh:
        doc1 = json.load(fh)
    with open(p2) as fh:
        doc2 = json.load(fh)
    assert doc1["params"] == doc2["params"]
    assert doc1["config"] == doc2["config"]


def test_classifier_round_trip_bitwise(tmp_path, fitted_clf, two_gauss):
    X, y = two_gauss
    path = str(tmp_path / "clf.json")
    save_classifier(path, fitted_clf, metadata={"train_acc": 1.0})
    back, meta = load_classifier(path)
    assert isinstance(back, MlpClassifier)
    assert meta["train_acc"] == 1.0
    np.testing.assert_array_equal(back.predict(X), fitted_clf.predict(X))
    assert np.array_equal(back.predict_proba(X), fitted_clf.predict_proba(X))


def test_dpsgd_classifier_kind_preserved(tmp_path, two_gauss):
    X, y = two_gauss
    clf = DpSgdClassifier(hidden_layers=1, width=8, steps=20, batch_size=64,
                          noise_multiplier=0.5, clip_norm=1.0,
                          random_state=0).fit(X, y)
    path = str(tmp_path / "dp.json")
    save_classifier(path, clf)
    back, _ = load_classifier(path)
    assert isinstance(back, DpSgdClassifier)
    np.testing.assert_array_equal(back.predict(X), clf.predict(X))


def test_missing_file_is_data_error(tmp_path):
    with pytest.raises(DataError, match="does not exist"):
        load_flow(str(tmp_path / "nope.json"))


def test_invalid_json_is_schema_error(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json", encoding="utf-8")
    with pytest.raises(SchemaError, match="not valid JSON"):
        load_flow(str(path))


def test_wrong_format_version_rejected(tmp_path, fitted_flow):
    path = tmp_path / "flow.json"
    save_flow(str(path), fitted_flow)
    doc = json.loads(path.read_text())
    doc["format_version"] = 999
    path.write_text(json.dumps(doc))
    with pytest.raises(SchemaError, match="format_version"):
        load_flow(str(path))


def test_wrong_kind_rejected(tmp_path, fitted_clf):
    path = str(tmp_path / "clf.json")
    save_classifier(path, fitted_clf)
    with pytest.raises(SchemaError, match="expected 'flow'"):
        load_flow(path)


def test_param_count_mismatch_rejected(tmp_path, fitted_flow):
    path = tmp_path / "flow.json"
    save_flow(str(path), fitted_flow)
    doc = json.loads(path.read_text())
    doc["params"] = doc["params"][:-1]
    path.write_text(json.dumps(doc))
    with pytest.raises(SchemaError, match="parameter arrays"):
        load_flow(str(path))


def test_param_shape_mismatch_rejected(tmp_path, fitted_clf):
    path = tmp_path / "clf.json"
    save_classifier(str(path), fitted_clf)
    doc = json.loads(path.read_text())
    doc["params"][0] = [[0.0]]
    path.write_text(json.dumps(doc))
    with pytest.raises(SchemaError, match="shape"):
        load_classifier(str(path))


def test_unknown_model_kind_rejected(tmp_path, fitted_clf):
    path = tmp_path / "clf.json"
    save_classifier(str(path), fitted_clf)
    doc = json.loads(path.read_text())
    doc["config"]["model"] = "MysteryModel"
    path.write_text(json.dumps(doc))
    with pytest.raises(SchemaError, match="unknown model kind"):
        load_classifier(str(path))


def test_save_unfitted_raises(tmp_path):
    from sklearn.exceptions import NotFittedError

    with pytest.raises(NotFittedError):
        save_flow(str(tmp_path / "x.json"), ConditionalFlow())
    with pytest.raises(NotFittedError):
        save_classifier(str(tmp_path / "x.json"), MlpClassifier())
