"""Fully connected softmax classifier used downstream of privatization."""

import warnings

import numpy as np
from numpy.random import SeedSequence, default_rng
from sklearn.base import BaseEstimator, ClassifierMixin

from . import autodiff as ad
from . import nn
from .autodiff import Tensor
from .exceptions import DivergenceError, SchemaError
from .validation import check_array, check_feature_count, check_is_fitted, check_labels


class MlpClassifier(BaseEstimator, ClassifierMixin):
    """MLP with `hidden_layers` hidden layers trained on cross-entropy.

    Prediction is the argmax of the softmax row; numpy's argmax takes
    the first maximum, so ties resolve to the lowest class index.
    Training is bitwise reproducible for a fixed random_state.
    """

    def __init__(self, hidden_layers=2, width=128, activation="relu",
                 optimizer="adam", lr=5e-4, batch_size=512, steps=2000,
                 eval_every=100, random_state=0, verbose=False):
        self.hidden_layers = hidden_layers
        self.width = width
        self.activation = activation
        self.optimizer = optimizer
        self.lr = lr
        self.batch_size = batch_size
        self.steps = steps
        self.eval_every = eval_every
        self.random_state = random_state
        self.verbose = verbose

    def _build(self, n_features, n_classes):
        rng = default_rng(SeedSequence([int(self.random_state), 41]))
        self.net_ = nn.Mlp(rng, n_features, [self.width] * int(self.hidden_layers),
                           n_classes, activation=self.activation)
        self.params_ = self.net_.parameters()

    def _make_optimizer(self):
        if self.optimizer == "adam":
            return nn.Adam(self.params_, lr=self.lr)
        if self.optimizer == "sgd":
            return nn.Sgd(self.params_, lr=self.lr)
        raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def _batches(self, n, rng, batch):
        """Endless deterministic batch index stream, reshuffled per epoch."""
        while True:
            order = rng.permutation(n)
            for pos in range(0, n - batch + 1, batch):
                yield order[pos:pos + batch]

    def _prepare_fit(self, X, y):
        X = check_array(X)
        y = check_labels(y, X.shape[0])
        self.classes_ = np.unique(y)
        if len(self.classes_) == 1:
            warnings.warn(
                "training data holds a single class; the fitted model is trivial"
            )
        self.n_features_in_ = X.shape[1]
        y_idx = np.searchsorted(self.classes_, y)
        self._build(X.shape[1], len(self.classes_))
        return X, y_idx

    def fit(self, X, y):
        X, y_idx = self._prepare_fit(X, y)
        n = X.shape[0]
        n_classes = len(self.classes_)
        rng = default_rng(SeedSequence([int(self.random_state), 42]))
        batch = min(int(self.batch_size), n)
        opt = self._make_optimizer()
        batches = self._batches(n, rng, batch)

        self.loss_curve_ = []
        best = (np.inf, [p.values.copy() for p in self.params_])
        for step in range(1, int(self.steps) + 1):
            idx = next(batches)
            opt.zero_grad()
            logits = self.net_(Tensor(X[idx]))
            loss = nn.cross_entropy(logits, y_idx[idx], n_classes)
            value = loss.item()
            if not np.isfinite(value):
                self._restore(best[1])
                raise DivergenceError(
                    "classifier loss became non-finite; best parameters "
                    "restored, try reducing the learning rate"
                )
            ad.backward(loss)
            opt.step()
            self.loss_curve_.append((step, value))
            if step % int(self.eval_every) == 0 or step == int(self.steps):
                if value < best[0]:
                    best = (value, [p.values.copy() for p in self.params_])
                if self.verbose:
                    print(f"step {step}: loss {value:.4f}")
        return self

    def _restore(self, snapshot):
        for p, v in zip(self.params_, snapshot):
            np.copyto(p.values, v)

    def decision_function(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X)
        check_feature_count(X, self.n_features_in_, what="classifier")
        with ad.no_grad():
            logits = self.net_(Tensor(X))
        return logits.values

    def predict_proba(self, X):
        logits = self.decision_function(X)
        shifted = logits - logits.max(axis=1, keepdims=True)
        expd = np.exp(shifted)
        return expd / expd.sum(axis=1, keepdims=True)

    def predict(self, X):
        logits = self.decision_function(X)
        return self.classes_[np.argmax(logits, axis=1)]

    def score(self, X, y):
        y = check_labels(np.asarray(y), len(np.asarray(y)))
        return float(np.mean(self.predict(X) == y))


def evaluate(clf, dataset):
    """Accuracy of a fitted classifier on a labeled dataset.

    Schema must match what the classifier was trained on: same feature
    count, no labels outside its class set. An empty test set is an
    error rather than a vacuous 0.0.
    """
    check_is_fitted(clf, "params_")
    if dataset.n_samples == 0:
        raise ValueError("cannot evaluate on an empty test set")
    if dataset.dim != clf.n_features_in_:
        raise SchemaError(
            f"classifier expects {clf.n_features_in_} features, test data "
            f"has {dataset.dim}"
        )
    unseen = np.setdiff1d(np.unique(dataset.labels), clf.classes_)
    if unseen.size:
        raise SchemaError(f"test labels {unseen.tolist()} never seen in training")
    predictions = clf.predict(dataset.features)
    return float(np.mean(predictions == dataset.labels))
