"""Conditional invertible networks built from affine coupling blocks.

A model is a stack of coupling blocks with a fixed seeded permutation in
front of each block. Every block splits its input into two halves,
passes the first half plus the condition vector through a small MLP, and
uses the result to scale and translate the second half:

    y_b = x_b * exp(log_s(x_a, c)) + t(x_a, c)

Two block kinds are supported. 'gin' mean-centers the log-scales of each
sample so their sum is zero, making the block volume preserving (the
Jacobian determinant is exactly one). 'glow' keeps the scales free and
contributes sum(log_s) to the log-determinant. Log-scales are soft
clamped through alpha * tanh(. / alpha) in both cases so exp() can never
overflow at sane settings.

The subnet's final layer starts at zero, so a fresh model computes only
its permutations and its log-determinant is zero.
"""

import numpy as np
from numpy.random import SeedSequence, default_rng
from sklearn.base import BaseEstimator, TransformerMixin

from . import autodiff as ad
from . import nn
from .autodiff import Tensor
from .exceptions import DivergenceError
from .validation import check_array, check_condition, check_feature_count, check_is_fitted

COUPLING_KINDS = ("gin", "glow")

# Pass thresholds for the latent normality report, applied per dimension.
DIAG_MAX_ABS_SKEW = 0.5
DIAG_MAX_ABS_EXCESS_KURTOSIS = 1.0
DIAG_VARIANCE_RANGE = (0.5, 2.0)


def _permutation_for_seed(seed, dim):
    """Fixed shuffle used in front of a block.

    An identity draw would leave the same half passive twice in a row
    (certain to happen for dim 2), so identities are replaced by the
    reversal, which always mixes the halves.
    """
    perm = default_rng(SeedSequence(seed)).permutation(dim)
    if np.array_equal(perm, np.arange(dim)):
        perm = np.arange(dim)[::-1].copy()
    return perm


class CouplingBlock:
    """One affine coupling transform with conditioning."""

    def __init__(self, rng, kind, dim, cond_dim, width, clamp):
        if kind not in COUPLING_KINDS:
            raise ValueError(f"unknown coupling kind {kind!r}")
        if dim < 2:
            raise ValueError("coupling needs at least 2 dimensions")
        self.kind = kind
        self.dim = dim
        self.cond_dim = cond_dim
        self.clamp = float(clamp)
        self.d1 = dim // 2
        self.d2 = dim - self.d1
        self.subnet = nn.Mlp(rng, self.d1 + cond_dim, [width, width],
                             2 * self.d2, activation="relu", zero_init_last=True)

    def parameters(self):
        return self.subnet.parameters()

    def _scales_and_shift(self, x_a, c):
        h = self.subnet(ad.concat_cols(x_a, c))
        raw_s = ad.col_slice(h, 0, self.d2)
        t = ad.col_slice(h, self.d2, 2 * self.d2)
        log_s = ad.mul(ad.tanh(ad.mul(raw_s, 1.0 / self.clamp)), self.clamp)
        if self.kind == "gin":
            log_s = ad.center_rows(log_s)
        return log_s, t

    def forward(self, x, c):
        """Returns (y, per-sample logdet). Tape-recorded when grads are on."""
        x_a = ad.col_slice(x, 0, self.d1)
        x_b = ad.col_slice(x, self.d1, self.dim)
        log_s, t = self._scales_and_shift(x_a, c)
        y_b = ad.add(ad.mul(x_b, ad.exp(log_s)), t)
        if not np.all(np.isfinite(y_b.values)):
            raise DivergenceError(
                "non-finite activations in coupling forward; "
                "try reducing the learning rate"
            )
        return ad.concat_cols(x_a, y_b), ad.tsum(log_s, axis=1)

    def inverse(self, y, c):
        """Numpy-only inverse; callers wrap it in no_grad implicitly."""
        with ad.no_grad():
            y = np.asarray(y, dtype=np.float64)
            y_a = y[:, :self.d1]
            y_b = y[:, self.d1:]
            log_s, t = self._scales_and_shift(Tensor(y_a), Tensor(c))
            with np.errstate(over="ignore"):
                scale = np.exp(-log_s.values)
            if not np.all(np.isfinite(scale)):
                raise DivergenceError(
                    "overflow inverting coupling scales; check the clamp setting"
                )
            x_b = (y_b - t.values) * scale
        return np.concatenate([y_a, x_b], axis=1)


class ConditionalFlow(BaseEstimator, TransformerMixin):
    """Invertible conditional density model trained by maximum likelihood.

    fit(X, y) accepts integer class labels (one-hot encoded internally)
    or a prebuilt 2-d condition matrix; transform/inverse_transform/
    score_samples take the same condition argument. The latent target is
    a standard normal, so score_samples returns

        log N(z; 0, I) + logdet(x -> z).

    Training tracks a held-out split and keeps the parameters of the
    best validation NLL seen; divergence raises after restoring them.
    """

    def __init__(self, n_blocks=8, coupling="gin", width=128, clamp=2.0,
                 lr=5e-4, batch_size=128, steps=2000, val_fraction=0.1,
                 eval_every=50, random_state=0, verbose=False):
        self.n_blocks = n_blocks
        self.coupling = coupling
        self.width = width
        self.clamp = clamp
        self.lr = lr
        self.batch_size = batch_size
        self.steps = steps
        self.val_fraction = val_fraction
        self.eval_every = eval_every
        self.random_state = random_state
        self.verbose = verbose

    # ----- construction ---------------------------------------------------

    def _build(self, dim, cond_dim, perm_seeds=None):
        if self.coupling not in COUPLING_KINDS:
            raise ValueError(f"unknown coupling kind {self.coupling!r}")
        if perm_seeds is None:
            perm_seeds = [1000 * int(self.random_state) + i
                          for i in range(self.n_blocks)]
        init_rng = default_rng(SeedSequence([int(self.random_state), 71]))
        self.dim_ = int(dim)
        self.cond_dim_ = int(cond_dim)
        self.perm_seeds_ = list(perm_seeds)
        self.perms_ = [_permutation_for_seed(s, dim) for s in perm_seeds]
        self.inv_perms_ = [np.argsort(p) for p in self.perms_]
        self.blocks_ = [
            CouplingBlock(init_rng, self.coupling, dim, cond_dim,
                          self.width, self.clamp)
            for _ in range(self.n_blocks)
        ]

    def parameters(self):
        check_is_fitted(self, "blocks_")
        return [p for b in self.blocks_ for p in b.parameters()]

    # ----- conditioning ---------------------------------------------------

    def _fit_condition(self, y, n):
        mode, val = check_condition(y, n)
        if mode == "labels":
            self.condition_mode_ = "labels"
            self.classes_ = np.unique(val)
            self.cond_dim_in_ = len(self.classes_)
        else:
            self.condition_mode_ = "matrix"
            self.classes_ = None
            self.cond_dim_in_ = val.shape[1]
        return self._condition_matrix(y, n)

    def _condition_matrix(self, y, n):
        mode, val = check_condition(y, n)
        if mode != self.condition_mode_:
            raise ValueError(
                f"model was fitted with {self.condition_mode_} conditioning, "
                f"got {mode}"
            )
        if mode == "labels":
            idx = np.searchsorted(self.classes_, val)
            bad = (idx >= len(self.classes_)) | (self.classes_[np.minimum(idx, len(self.classes_) - 1)] != val)
            if np.any(bad):
                raise ValueError(f"unknown labels in condition: {np.unique(val[bad])}")
            C = np.zeros((n, len(self.classes_)))
            C[np.arange(n), idx] = 1.0
            return C
        if val.shape[1] != self.cond_dim_in_:
            raise ValueError(
                f"condition matrix has {val.shape[1]} columns, expected "
                f"{self.cond_dim_in_}"
            )
        return val

    # ----- core passes ----------------------------------------------------

    def _forward_tensors(self, x, c):
        """x, c are Tensors. Returns (z, total logdet[batch])."""
        logdet = None
        for perm, block in zip(self.perms_, self.blocks_):
            x = ad.take_cols(x, perm)
            x, ld = block.forward(x, c)
            logdet = ld if logdet is None else ad.add(logdet, ld)
        return x, logdet

    def _log_likelihood_tensor(self, x, c):
        z, logdet = self._forward_tensors(x, c)
        sq = ad.l2_norm_sq(z, axis=1)
        const = -0.5 * self.dim_ * np.log(2.0 * np.pi)
        logq = ad.add(ad.mul(sq, -0.5), const)
        return ad.add(logq, logdet)

    def forward_with_logdet(self, X, y):
        """Latent codes and per-sample log-determinants, as numpy arrays."""
        check_is_fitted(self, "blocks_")
        X = check_array(X)
        check_feature_count(X, self.dim_, what="flow")
        C = self._condition_matrix(y, X.shape[0])
        with ad.no_grad():
            z, logdet = self._forward_tensors(Tensor(X), Tensor(C))
        return z.values, logdet.values

    def transform(self, X, y):
        return self.forward_with_logdet(X, y)[0]

    def inverse_transform(self, Z, y):
        check_is_fitted(self, "blocks_")
        Z = check_array(Z, name="Z")
        check_feature_count(Z, self.dim_, what="flow")
        C = self._condition_matrix(y, Z.shape[0])
        x = Z
        for inv_perm, block in zip(reversed(self.inv_perms_), reversed(self.blocks_)):
            x = block.inverse(x, C)
            x = x[:, inv_perm]
        return np.ascontiguousarray(x)

    def fit_transform(self, X, y):
        return self.fit(X, y).transform(X, y)

    def score_samples(self, X, y):
        """Per-sample log-likelihood under the standard-normal latent."""
        check_is_fitted(self, "blocks_")
        X = check_array(X)
        check_feature_count(X, self.dim_, what="flow")
        C = self._condition_matrix(y, X.shape[0])
        with ad.no_grad():
            ll = self._log_likelihood_tensor(Tensor(X), Tensor(C))
        return ll.values

    def score(self, X, y):
        return float(np.mean(self.score_samples(X, y)))

    def mean_nll(self, X, y):
        return -self.score(X, y)

    # ----- training -------------------------------------------------------

    def fit(self, X, y):
        X = check_array(X)
        n = X.shape[0]
        C = self._fit_condition(y, n)
        self._build(X.shape[1], C.shape[1])

        rng = default_rng(SeedSequence([int(self.random_state), 72]))
        n_val = int(round(self.val_fraction * n))
        n_val = min(max(n_val, 1), n - 1) if n > 1 else 0
        shuffle = rng.permutation(n)
        val_idx, train_idx = shuffle[:n_val], shuffle[n_val:]
        X_train, C_train = X[train_idx], C[train_idx]
        X_val, C_val = X[val_idx], C[val_idx]
        n_train = len(train_idx)
        batch = min(int(self.batch_size), n_train)

        params = self.parameters()
        opt = nn.Adam(params, lr=self.lr)
        best = (np.inf, [p.values.copy() for p in params])
        self.loss_curve_ = []
        self.val_curve_ = []

        def val_nll():
            if len(X_val) == 0:
                return np.nan
            with ad.no_grad():
                ll = self._log_likelihood_tensor(Tensor(X_val), Tensor(C_val))
            return float(-np.mean(ll.values))

        order = rng.permutation(n_train)
        pos = 0
        for step in range(1, int(self.steps) + 1):
            if pos + batch > n_train:
                order = rng.permutation(n_train)
                pos = 0
            idx = order[pos:pos + batch]
            pos += batch

            opt.zero_grad()
            try:
                ll = self._log_likelihood_tensor(Tensor(X_train[idx]), Tensor(C_train[idx]))
            except DivergenceError:
                self._restore(params, best[1])
                raise
            loss = ad.neg(ad.tmean(ll))
            train_nll = loss.item()
            if not np.isfinite(train_nll):
                self._restore(params, best[1])
                raise DivergenceError(
                    "training NLL became non-finite; best parameters restored, "
                    "try reducing the learning rate"
                )
            ad.backward(loss)
            opt.step()
            self.loss_curve_.append((step, train_nll))

            if step % int(self.eval_every) == 0 or step == int(self.steps):
                v = val_nll()
                self.val_curve_.append((step, v))
                if np.isfinite(v) and v < best[0]:
                    best = (v, [p.values.copy() for p in params])
                if self.verbose:
                    print(f"step {step}: train nll {train_nll:.4f}, val nll {v:.4f}")

        if np.isfinite(best[0]):
            self._restore(params, best[1])
            self.val_nll_ = best[0]
        else:
            self.val_nll_ = val_nll()
        self.n_features_in_ = self.dim_

        diag = self.latent_diagnostics(X_val, self._condition_arg(y, val_idx)) \
            if len(X_val) >= 8 else None
        self.diagnostics_ = diag
        self.diagnostics_pass_ = bool(diag["passed"]) if diag else True
        return self

    def _condition_arg(self, y, idx):
        arr = np.asarray(y)
        return arr[idx]

    @staticmethod
    def _restore(params, snapshot):
        for p, v in zip(params, snapshot):
            np.copyto(p.values, v)

    # ----- diagnostics ----------------------------------------------------

    def latent_diagnostics(self, X, y):
        """Normality report of the latent codes for the given data."""
        Z = self.transform(X, y)
        return latent_diagnostics(Z)


def latent_diagnostics(Z):
    """Per-dimension normality summary of latent samples.

    Passing requires, for every dimension, |skewness| below 0.5, |excess
    kurtosis| below 1.0 and variance inside [0.5, 2.0]. Mean and the
    largest off-diagonal correlation are reported but not gated; they
    are useful context when a model fails.
    """
    from scipy import stats

    Z = check_array(Z, name="Z")
    mean = Z.mean(axis=0)
    var = Z.var(axis=0)
    skew = stats.skew(Z, axis=0)
    kurt = stats.kurtosis(Z, axis=0)  # excess kurtosis
    if Z.shape[1] > 1 and len(Z) > 1:
        corr = np.corrcoef(Z, rowvar=False)
        off = corr[~np.eye(Z.shape[1], dtype=bool)]
        max_offdiag = float(np.max(np.abs(off))) if off.size else 0.0
    else:
        max_offdiag = 0.0
    lo, hi = DIAG_VARIANCE_RANGE
    per_dim_ok = (
        (np.abs(skew) < DIAG_MAX_ABS_SKEW)
        & (np.abs(kurt) < DIAG_MAX_ABS_EXCESS_KURTOSIS)
        & (var > lo) & (var < hi)
    )
    return {
        "mean": mean,
        "variance": var,
        "skewness": skew,
        "excess_kurtosis": kurt,
        "max_offdiag_correlation": max_offdiag,
        "per_dim_pass": per_dim_ok,
        "n_failing_dims": int(np.sum(~per_dim_ok)),
        "passed": bool(np.all(per_dim_ok)),
    }
