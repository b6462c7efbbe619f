"""Model checkpoints: one JSON document per model.

Layout: {format_version, kind, config, params, metadata}. Parameter
arrays are nested lists of Python floats; json writes them with repr,
the shortest decimal string that parses back to the identical 64-bit
value, so save/load round-trips bitwise.
"""

import json
import os

import numpy as np

from .exceptions import DataError, SchemaError

FORMAT_VERSION = 1

FLOW_KIND = "flow"
CLASSIFIER_KIND = "classifier"


def _write_json(path, doc):
    tmp = str(path) + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")
    os.replace(tmp, path)


def _read_json(path, expect_kind):
    if not os.path.exists(path):
        raise DataError(f"checkpoint {path} does not exist")
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise SchemaError(f"checkpoint {path} is not valid JSON: {e}") from e
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise SchemaError(
            f"checkpoint {path} has format_version {version!r}, "
            f"this build reads {FORMAT_VERSION}"
        )
    kind = doc.get("kind")
    if kind != expect_kind:
        raise SchemaError(
            f"checkpoint {path} holds a {kind!r} model, expected {expect_kind!r}"
        )
    return doc


def _params_out(params):
    return [p.values.tolist() for p in params]


def _params_in(params, stored, path):
    if len(stored) != len(params):
        raise SchemaError(
            f"checkpoint {path} has {len(stored)} parameter arrays, "
            f"model expects {len(params)}"
        )
    for p, values in zip(params, stored):
        arr = np.asarray(values, dtype=np.float64)
        if arr.shape != p.values.shape:
            raise SchemaError(
                f"checkpoint {path}: parameter shape {arr.shape} does not "
                f"match model shape {p.values.shape}"
            )
        np.copyto(p.values, arr)


# ---------------------------------------------------------------------------
# flow

def save_flow(path, flow, metadata=None):
    from .validation import check_is_fitted

    check_is_fitted(flow, "blocks_")
    meta = {
        "val_nll": flow.val_nll_,
        "diagnostics_passed": flow.diagnostics_pass_,
        "condition_mode": flow.condition_mode_,
        "classes": None if flow.classes_ is None else flow.classes_.tolist(),
        "cond_dim_in": flow.cond_dim_in_,
    }
    if flow.diagnostics_ is not None:
        meta["n_failing_dims"] = flow.diagnostics_["n_failing_dims"]
    meta.update(metadata or {})
    doc = {
        "format_version": FORMAT_VERSION,
        "kind": FLOW_KIND,
        "config": {
            "n_blocks": flow.n_blocks,
            "coupling": flow.coupling,
            "width": flow.width,
            "clamp": flow.clamp,
            "dim": flow.dim_,
            "cond_dim": flow.cond_dim_,
            "perm_seeds": flow.perm_seeds_,
            "lr": flow.lr,
            "batch_size": flow.batch_size,
            "steps": flow.steps,
            "val_fraction": flow.val_fraction,
            "eval_every": flow.eval_every,
            "random_state": flow.random_state,
        },
        "params": _params_out(flow.parameters()),
        "metadata": meta,
    }
    _write_json(path, doc)


def load_flow(path):
    from .flow import ConditionalFlow

    doc = _read_json(path, FLOW_KIND)
    cfg = doc["config"]
    flow = ConditionalFlow(
        n_blocks=cfg["n_blocks"], coupling=cfg["coupling"], width=cfg["width"],
        clamp=cfg["clamp"], lr=cfg["lr"], batch_size=cfg["batch_size"],
        steps=cfg["steps"], val_fraction=cfg["val_fraction"],
        eval_every=cfg["eval_every"], random_state=cfg["random_state"],
    )
    meta = doc["metadata"]
    flow.condition_mode_ = meta["condition_mode"]
    flow.classes_ = (None if meta["classes"] is None
                     else np.asarray(meta["classes"], dtype=np.int64))
    flow.cond_dim_in_ = meta["cond_dim_in"]
    flow._build(cfg["dim"], cfg["cond_dim"], perm_seeds=cfg["perm_seeds"])
    _params_in(flow.parameters(), doc["params"], path)
    flow.val_nll_ = meta["val_nll"]
    flow.diagnostics_pass_ = meta["diagnostics_passed"]
    flow.diagnostics_ = None
    flow.n_features_in_ = cfg["dim"]
    return flow, meta


# ---------------------------------------------------------------------------
# classifier

def save_classifier(path, clf, metadata=None):
    from .validation import check_is_fitted

    check_is_fitted(clf, "params_")
    meta = dict(metadata or {})
    doc = {
        "format_version": FORMAT_VERSION,
        "kind": CLASSIFIER_KIND,
        "config": {
            "model": type(clf).__name__,
            "params": clf.get_params(),
            "classes": clf.classes_.tolist(),
            "n_features": clf.n_features_in_,
        },
        "params": _params_out(clf.params_),
        "metadata": meta,
    }
    _write_json(path, doc)


def load_classifier(path):
    from . import classifier as clf_mod
    from . import dpsgd as dpsgd_mod

    doc = _read_json(path, CLASSIFIER_KIND)
    cfg = doc["config"]
    model_cls = {
        "MlpClassifier": clf_mod.MlpClassifier,
        "DpSgdClassifier": dpsgd_mod.DpSgdClassifier,
    }.get(cfg["model"])
    if model_cls is None:
        raise SchemaError(f"checkpoint {path}: unknown model kind {cfg['model']!r}")
    clf = model_cls(**cfg["params"])
    clf.classes_ = np.asarray(cfg["classes"], dtype=np.int64)
    clf.n_features_in_ = cfg["n_features"]
    clf._build(cfg["n_features"], len(clf.classes_))
    _params_in(clf.params_, doc["params"], path)
    return clf, doc["metadata"]
