"""DP-SGD trainer and accountant tests.

The accountant is checked against an independently coded version of the
same bound and against the one case with a closed form, a single
full-batch release.
"""

import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from cadp.classifier import MlpClassifier
from cadp.dpsgd import (DpSgdClassifier, DpSgdConfig, calibrate_noise_multiplier,
                        clip_gradient_list, per_sample_clip, simple_accountant)


@pytest.fixture(scope="module")
def separable():
    rng = np.random.default_rng(0)
    n = 512
    X = rng.normal(size=(n, 2))
    X[: n // 2, 0] -= 4.0
    X[n // 2:, 0] += 4.0
    y = np.repeat([0, 1], n // 2)
    order = rng.permutation(n)
    return X[order], y[order]


# ---------------------------------------------------------------------------
# clipping

def test_clip_under_threshold_is_identity_copy():
    g = np.array([0.3, -0.4])
    out = per_sample_clip(g, 1.0)
    np.testing.assert_array_equal(out, g)
    out[0] = 99.0
    assert g[0] == 0.3


def test_clip_over_threshold_scales_to_norm():
    out = per_sample_clip(np.array([3.0, 4.0]), 1.0)
    np.testing.assert_allclose(out, [0.6, 0.8], rtol=0, atol=1e-15)
    assert np.linalg.norm(out) == pytest.approx(1.0, abs=1e-12)


def test_clip_zero_gradient_unchanged():
    out = per_sample_clip(np.zeros(5), 0.5)
    np.testing.assert_array_equal(out, np.zeros(5))


def test_clip_requires_positive_norm_bound():
    with pytest.raises(ValueError, match="clip_norm"):
        per_sample_clip(np.ones(3), 0.0)
    with pytest.raises(ValueError, match="clip_norm"):
        per_sample_clip(np.ones(3), -1.0)


@given(g=hnp.arrays(np.float64, st.integers(1, 20),
                    elements=st.floats(-1e6, 1e6)),
       c=st.floats(1e-3, 1e3))
def test_clip_property_norm_and_direction(g, c):
    out = per_sample_clip(g, c)
    norm = np.linalg.norm(g)
    assert np.linalg.norm(out) <= c * (1 + 1e-12) + 1e-300
    if norm > 0:
        # clipping only rescales, never rotates
        np.testing.assert_allclose(out * norm, g * np.linalg.norm(out),
                                   rtol=1e-9, atol=1e-9)


def test_clip_gradient_list_uses_global_norm():
    a = np.array([3.0, 0.0])
    b = np.array([[0.0, 4.0]])
    clipped = clip_gradient_list([a, b], 1.0)
    # global norm 5, so both shrink by the same factor 1/5
    np.testing.assert_allclose(clipped[0], [0.6, 0.0], atol=1e-15)
    np.testing.assert_allclose(clipped[1], [[0.0, 0.8]], atol=1e-15)
    flat = np.concatenate([c.ravel() for c in clipped])
    same = per_sample_clip(np.concatenate([a.ravel(), b.ravel()]), 1.0)
    np.testing.assert_allclose(flat, same, atol=1e-15)


def test_clip_gradient_list_under_bound_copies():
    a = np.array([0.1, 0.1])
    out = clip_gradient_list([a], 5.0)
    np.testing.assert_array_equal(out[0], a)
    out[0][0] = 7.0
    assert a[0] == 0.1


# ---------------------------------------------------------------------------
# trainer

def test_degenerate_case_bitwise_equals_plain_sgd(separable):
    X, y = separable
    kw = dict(hidden_layers=1, width=16, lr=0.1, batch_size=128, steps=40,
              random_state=3)
    plain = MlpClassifier(optimizer="sgd", **kw).fit(X, y)
    dp = DpSgdClassifier(clip_norm=np.inf, noise_multiplier=0.0, **kw).fit(X, y)
    for pp, pd in zip(plain.params_, dp.params_):
        assert np.array_equal(pp.values, pd.values)
    assert dp.epsilon_ == math.inf
    assert dp.accountant_.vacuous
    assert dp.accountant_.note == "not private"


def test_noiseless_unclipped_matches_batch_gradient(separable):
    # sigma=0 and a bound no gradient reaches: the summed per-sample
    # update is the batch gradient up to summation order
    X, y = separable
    kw = dict(hidden_layers=1, width=8, lr=0.1, batch_size=64, steps=10,
              random_state=1)
    plain = MlpClassifier(optimizer="sgd", **kw).fit(X, y)
    dp = DpSgdClassifier(clip_norm=1e6, noise_multiplier=0.0, **kw).fit(X, y)
    for pp, pd in zip(plain.params_, dp.params_):
        np.testing.assert_allclose(pd.values, pp.values, rtol=1e-9, atol=1e-11)


def test_infinite_clip_with_noise_rejected(separable):
    X, y = separable
    with pytest.raises(ValueError, match="infinite"):
        DpSgdClassifier(clip_norm=np.inf, noise_multiplier=1.0,
                        steps=5).fit(X, y)


def test_injected_noise_std_is_sigma_times_clip():
    # single-class data makes every per-sample gradient exactly zero, so
    # one step moves each weight by -lr * noise / lot and the noise
    # becomes directly observable
    sigma, clip, lr, lot = 1.3, 0.7, 0.01, 4
    width = 25000
    X = np.random.default_rng(0).normal(size=(10, 2))
    y = np.zeros(10, dtype=int)
    clf = DpSgdClassifier(hidden_layers=1, width=width, lr=lr, batch_size=lot,
                          steps=1, noise_multiplier=sigma, clip_norm=clip,
                          delta=1e-5, random_state=0)
    clf._build(2, 1)
    before = [p.values.copy() for p in clf.params_]
    with pytest.warns(UserWarning, match="single class"):
        clf.fit(X, y)
    deltas = np.concatenate([
        (p.values - b).ravel() for p, b in zip(clf.params_, before)
    ])
    draws = deltas * lot / lr
    assert draws.size >= 10**5
    assert abs(np.mean(draws)) < 0.02
    assert abs(np.std(draws) - sigma * clip) < 0.01 * sigma * clip


def test_fit_reports_conservative_epsilon(separable):
    X, y = separable
    clf = DpSgdClassifier(hidden_layers=1, width=8, lr=0.05, batch_size=64,
                          steps=8, noise_multiplier=2.0, clip_norm=1.0,
                          delta=1e-5, random_state=0).fit(X, y)
    expected = simple_accountant(2.0, 64, len(X), 8, 1e-5)
    assert clf.epsilon_ == expected.epsilon
    assert clf.accountant_ == expected


def test_moderate_noise_still_learns(separable):
    X, y = separable
    clf = DpSgdClassifier(hidden_layers=1, width=16, lr=0.2, batch_size=128,
                          steps=60, noise_multiplier=1.0, clip_norm=1.0,
                          delta=1e-5, random_state=0).fit(X, y)
    assert clf.score(X, y) >= 0.9


def test_large_delta_warns(separable):
    X, y = separable
    with pytest.warns(UserWarning, match="1/N"):
        DpSgdClassifier(hidden_layers=1, width=8, lr=0.05, batch_size=64,
                        steps=2, noise_multiplier=1.0, clip_norm=1.0,
                        delta=0.5, random_state=0).fit(X, y)


def test_overflowing_sample_skips_step():
    X = np.full((12, 2), 1.7e308)
    y = np.tile([0, 1], 6)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        with pytest.warns(UserWarning, match="skipped"):
            clf = DpSgdClassifier(hidden_layers=1, width=16, lr=0.1,
                                  batch_size=4, steps=3, noise_multiplier=1.0,
                                  clip_norm=1.0, delta=1e-5,
                                  random_state=0).fit(X, y)
    assert clf.loss_curve_ == []
    assert all(np.all(np.isfinite(p.values)) for p in clf.params_)


def test_config_validation():
    ok = dict(clip_norm=1.0, noise_multiplier=1.0, lot_size=10,
              learning_rate=0.1, steps=5, delta=1e-5)
    DpSgdConfig(**ok)
    for field, bad in [("clip_norm", 0.0), ("noise_multiplier", -1.0),
                       ("lot_size", 0), ("steps", 0), ("learning_rate", 0.0),
                       ("delta", 1.0)]:
        with pytest.raises(ValueError):
            DpSgdConfig(**{**ok, field: bad})


# ---------------------------------------------------------------------------
# accounting

def test_single_full_batch_release_is_classical():
    sigma, delta = 2.0, 1e-5
    got = simple_accountant(sigma, 1000, 1000, 1, delta)
    assert got.epsilon == pytest.approx(
        math.sqrt(2.0 * math.log(1.25 / delta)) / sigma, rel=1e-12)
    assert not got.vacuous


def test_epsilon_decreases_with_noise():
    eps = [simple_accountant(s, 100, 10000, 500, 1e-5).epsilon
           for s in (0.5, 1.0, 2.0, 4.0)]
    assert all(a > b for a, b in zip(eps, eps[1:]))


def test_epsilon_grows_with_steps():
    eps = [simple_accountant(1.0, 100, 10000, k, 1e-5).epsilon
           for k in (10, 100, 1000)]
    assert all(a < b for a, b in zip(eps, eps[1:]))


def test_zero_noise_is_vacuous():
    got = simple_accountant(0.0, 100, 1000, 10, 1e-5)
    assert got.epsilon == math.inf
    assert got.vacuous


def test_tiny_noise_flagged_vacuous():
    got = simple_accountant(0.05, 1000, 1000, 100, 1e-5)
    assert got.epsilon > 50.0
    assert got.vacuous


def test_accountant_input_validation():
    with pytest.raises(ValueError, match="exceeds"):
        simple_accountant(1.0, 2000, 1000, 10, 1e-5)
    with pytest.raises(ValueError, match="delta"):
        simple_accountant(1.0, 100, 1000, 10, 0.0)
    with pytest.raises(ValueError):
        simple_accountant(1.0, 0, 1000, 10, 1e-5)


def test_accountant_against_independent_coding():
    # same bound, written out separately: analytic Gaussian per step at a
    # split delta, log1p/expm1 subsampling, min of basic and advanced
    def oracle(sigma, lot, n, steps, delta):
        q = lot / n
        d_slack = 0.5 * delta
        d_step = min(delta / (2.0 * steps * q), d_slack)
        e_step = np.sqrt(2.0 * np.log(1.25 / d_step)) / sigma
        e_sub = np.log1p(q * np.expm1(e_step))
        basic = steps * e_sub
        adv = (e_sub * np.sqrt(2.0 * steps * np.log(1.0 / d_slack))
               + steps * e_sub * np.expm1(e_sub))
        return float(min(basic, adv))

    for sigma, lot, n, steps in [(1.0, 100, 10000, 100),
                                 (2.5, 256, 50000, 2000),
                                 (8.0, 64, 1000, 30)]:
        mine = simple_accountant(sigma, lot, n, steps, 1e-5).epsilon
        ref = oracle(sigma, lot, n, steps, 1e-5)
        assert mine == pytest.approx(ref, rel=0.1)


def test_calibration_round_trip():
    target, delta = 2.0, 1e-5
    lot, n, steps = 128, 5000, 300
    sigma = calibrate_noise_multiplier(target, lot, n, steps, delta)
    assert simple_accountant(sigma, lot, n, steps, delta).epsilon <= target
    # minimal up to the bisection tolerance
    assert simple_accountant(sigma * 0.97, lot, n, steps,
                             delta).epsilon > target


def test_calibration_single_release_matches_closed_form():
    target, delta = 1.0, 1e-5
    sigma = calibrate_noise_multiplier(target, 1000, 1000, 1, delta,
                                       tolerance=1e-4)
    classic = math.sqrt(2.0 * math.log(1.25 / delta)) / target
    assert sigma >= classic
    assert sigma <= classic * 1.001


def test_calibration_rejects_bad_target():
    with pytest.raises(ValueError, match="target_epsilon"):
        calibrate_noise_multiplier(0.0, 100, 1000, 10, 1e-5)
