"""Differentially private SGD baseline and its privacy accounting.

The update is the textbook one: clip each example's full gradient to L2
norm C, sum, add N(0, sigma^2 C^2 I), divide by the lot size, step with
plain SGD. Per-sample gradients come from per-example backward passes;
correctness over speed at this scale.

The accountant composes the analytic Gaussian-mechanism bound per step
with subsampling amplification and advanced composition. It is
deliberately CONSERVATIVE: it over-reports epsilon relative to a
moments accountant, so noise calibrated through it is larger than
strictly necessary.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np
from numpy.random import SeedSequence, default_rng

from . import autodiff as ad
from . import nn
from .autodiff import Tensor
from .classifier import MlpClassifier
from .exceptions import DivergenceError

VACUOUS_EPSILON = 50.0


@dataclass(frozen=True)
class DpSgdConfig:
    clip_norm: float
    noise_multiplier: float
    lot_size: int
    learning_rate: float
    steps: int
    delta: float

    def __post_init__(self):
        if not (self.clip_norm > 0):
            raise ValueError(f"clip_norm must be positive, got {self.clip_norm}")
        if self.noise_multiplier < 0:
            raise ValueError(
                f"noise_multiplier must be >= 0, got {self.noise_multiplier}"
            )
        if self.lot_size < 1 or self.steps < 1:
            raise ValueError("lot_size and steps must be positive")
        if not (self.learning_rate > 0):
            raise ValueError("learning_rate must be positive")
        if not (0 < self.delta < 1):
            raise ValueError(f"delta must be in (0, 1), got {self.delta}")


def per_sample_clip(grad, clip_norm):
    """Scale one gradient to L2 norm at most clip_norm: g * min(1, C/|g|)."""
    if not (clip_norm > 0):
        raise ValueError(f"clip_norm must be positive, got {clip_norm}")
    grad = np.asarray(grad, dtype=np.float64)
    norm = float(np.sqrt(np.sum(grad * grad)))
    if norm <= clip_norm or norm == 0.0:
        return grad.copy()
    return grad * (clip_norm / norm)


def clip_gradient_list(grads, clip_norm):
    """Clip a per-example gradient split across parameter arrays, using
    the global L2 norm over all of them."""
    sq = sum(float(np.sum(g * g)) for g in grads)
    norm = math.sqrt(sq)
    if norm <= clip_norm or norm == 0.0:
        return [g.copy() for g in grads]
    factor = clip_norm / norm
    return [g * factor for g in grads]


# ---------------------------------------------------------------------------
# accounting

@dataclass(frozen=True)
class AccountantResult:
    epsilon: float
    delta: float
    vacuous: bool
    note: str


def _gaussian_epsilon(sigma, delta):
    """Single-release Gaussian mechanism: eps = sqrt(2 ln(1.25/delta))/sigma."""
    return math.sqrt(2.0 * math.log(1.25 / delta)) / sigma


def simple_accountant(noise_multiplier, lot_size, n_samples, steps, delta):
    """Conservative (epsilon, delta) estimate for `steps` subsampled
    Gaussian releases.

    Splits delta between a per-step budget and the advanced-composition
    slack, amplifies per-step epsilon by the sampling rate, and takes
    the smaller of basic and advanced composition. The one exact case,
    a single full-batch step, reproduces the classical calibration
    sigma = sqrt(2 ln(1.25/delta)) / epsilon.
    """
    if noise_multiplier <= 0:
        return AccountantResult(math.inf, delta, True,
                                "no noise, no guarantee")
    if lot_size < 1 or n_samples < 1 or steps < 1:
        raise ValueError("lot_size, n_samples and steps must be positive")
    if lot_size > n_samples:
        raise ValueError(f"lot_size {lot_size} exceeds dataset size {n_samples}")
    if not (0 < delta < 1):
        raise ValueError(f"delta must be in (0, 1), got {delta}")

    q = lot_size / n_samples
    k = int(steps)

    if k == 1 and lot_size == n_samples:
        eps = _gaussian_epsilon(noise_multiplier, delta)
        return AccountantResult(eps, delta, eps > VACUOUS_EPSILON,
                                "single full-batch Gaussian release")

    delta_slack = delta / 2.0
    delta_step = delta / (2.0 * k * q)
    eps_step = _gaussian_epsilon(noise_multiplier, min(delta_step, delta_slack))
    eps_sub = math.log1p(q * math.expm1(eps_step))

    eps_basic = k * eps_sub
    eps_adv = (eps_sub * math.sqrt(2.0 * k * math.log(1.0 / delta_slack))
               + k * eps_sub * math.expm1(eps_sub))
    eps = min(eps_basic, eps_adv)
    return AccountantResult(
        eps, delta, eps > VACUOUS_EPSILON,
        "conservative bound: analytic Gaussian step + subsampling + "
        "min(basic, advanced) composition",
    )


def calibrate_noise_multiplier(target_epsilon, lot_size, n_samples, steps,
                               delta, tolerance=0.01):
    """Smallest noise multiplier (up to tolerance) whose accounted epsilon
    stays at or below the target. Bisection; the returned sigma always
    satisfies the bound."""
    if not (target_epsilon > 0):
        raise ValueError(f"target_epsilon must be positive, got {target_epsilon}")

    def eps(sigma):
        return simple_accountant(sigma, lot_size, n_samples, steps, delta).epsilon

    lo, hi = 1e-3, 1.0
    while eps(hi) > target_epsilon:
        hi *= 2.0
        if hi > 1e7:
            raise ValueError("cannot reach the target epsilon with sane noise")
    while hi - lo > tolerance * hi:
        mid = 0.5 * (lo + hi)
        if eps(mid) > target_epsilon:
            lo = mid
        else:
            hi = mid
    return hi


# ---------------------------------------------------------------------------
# trainer

class DpSgdClassifier(MlpClassifier):
    """MlpClassifier trained with per-sample clipping and Gaussian noise.

    batch_size doubles as the lot size. The optimizer is plain SGD (the
    DP update is defined for SGD); noise_multiplier=0 with an infinite
    clip_norm short-circuits to the ordinary batched trainer, making the
    degenerate case exactly (bitwise) the non-private run. After fit,
    epsilon_ and accountant_ hold the conservative privacy estimate.
    """

    def __init__(self, hidden_layers=2, width=128, activation="relu",
                 lr=5e-4, batch_size=512, steps=2000, eval_every=100,
                 random_state=0, verbose=False, clip_norm=1.0,
                 noise_multiplier=1.0, delta=1e-5):
        super().__init__(hidden_layers=hidden_layers, width=width,
                         activation=activation, optimizer="sgd", lr=lr,
                         batch_size=batch_size, steps=steps,
                         eval_every=eval_every, random_state=random_state,
                         verbose=verbose)
        self.clip_norm = clip_norm
        self.noise_multiplier = noise_multiplier
        self.delta = delta

    def fit(self, X, y):
        if not np.isfinite(self.clip_norm):
            if self.noise_multiplier != 0:
                raise ValueError(
                    "an infinite clip_norm makes the noise scale infinite; "
                    "set noise_multiplier=0 for the degenerate case"
                )
            # no clipping, no noise: identical code path to the plain trainer
            super().fit(X, y)
            self.accountant_ = AccountantResult(math.inf, float(self.delta),
                                                True, "not private")
            self.epsilon_ = math.inf
            return self

        cfg = DpSgdConfig(
            clip_norm=float(self.clip_norm),
            noise_multiplier=float(self.noise_multiplier),
            lot_size=min(int(self.batch_size), len(np.asarray(y))),
            learning_rate=float(self.lr),
            steps=int(self.steps),
            delta=float(self.delta),
        )

        X, y_idx = self._prepare_fit(X, y)
        n = X.shape[0]
        n_classes = len(self.classes_)
        if self.delta >= 1.0 / n:
            warnings.warn(
                f"delta {self.delta} is not below 1/N = {1.0 / n:.3g}; the "
                "guarantee is weak"
            )
        rng = default_rng(SeedSequence([int(self.random_state), 42]))
        noise_rng = default_rng(SeedSequence([int(self.random_state), 43]))
        lot = min(cfg.lot_size, n)
        batches = self._batches(n, rng, lot)

        self.loss_curve_ = []
        best = (np.inf, [p.values.copy() for p in self.params_])
        for step in range(1, int(self.steps) + 1):
            idx = next(batches)
            grad_sum = [np.zeros_like(p.values) for p in self.params_]
            loss_sum = 0.0
            skip = False
            for i in idx:
                nn.zero_grads(self.params_)
                logits = self.net_(Tensor(X[i:i + 1]))
                loss = nn.cross_entropy(logits, y_idx[i:i + 1], n_classes)
                value = loss.item()
                if not np.isfinite(value):
                    warnings.warn(f"non-finite per-sample loss at step {step}; "
                                  "step skipped")
                    skip = True
                    break
                ad.backward(loss)
                grads = [np.zeros_like(p.values) if p.grad is None else p.grad
                         for p in self.params_]
                clipped = clip_gradient_list(grads, cfg.clip_norm)
                for total, g in zip(grad_sum, clipped):
                    total += g
                loss_sum += value
            if skip:
                continue

            noise_scale = cfg.noise_multiplier * cfg.clip_norm
            for p, total in zip(self.params_, grad_sum):
                noise = noise_rng.normal(0.0, noise_scale, size=total.shape) \
                    if noise_scale > 0 else 0.0
                p.values -= self.lr * (total + noise) / lot
            value = loss_sum / lot
            self.loss_curve_.append((step, value))
            if step % int(self.eval_every) == 0 or step == int(self.steps):
                if value < best[0]:
                    best = (value, [p.values.copy() for p in self.params_])
                if self.verbose:
                    print(f"step {step}: loss {value:.4f}")
            if not all(np.all(np.isfinite(p.values)) for p in self.params_):
                self._restore(best[1])
                raise DivergenceError("dp-sgd parameters became non-finite")

        self.accountant_ = simple_accountant(
            cfg.noise_multiplier, lot, n, cfg.steps, cfg.delta
        )
        self.epsilon_ = self.accountant_.epsilon
        return self
