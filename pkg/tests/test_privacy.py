import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp
from scipy import stats

from cadp.data import make_synthetic, ConditionSpec, datasets_equal
from cadp.exceptions import ConfigError, MechanismError
from cadp.flow import ConditionalFlow
from cadp.privacy import (CLIP_ONLY, CLIP_RESCALE_ALWAYS, CadpPrivatizer,
                          LaplaceSampler, PrivacyParams,
                          ScalarLaplaceMechanism, cadp_privatize, clip_l1,
                          empirical_dp_ratio, laplace_inverse_cdf,
                          privatize_dataset, resolve_sensitivity)


@pytest.fixture(scope="module")
def toy_flow():
    ds = make_synthetic("two-gaussians", n=800, seed=0)
    flow = ConditionalFlow(n_blocks=4, width=32, steps=250, batch_size=256,
                           lr=1e-3, eval_every=50, random_state=0)
    flow.fit(ds.features, ds.labels)
    return flow, ds


def test_privacy_params_validation():
    with pytest.raises(ConfigError):
        PrivacyParams(0.0, 1.0, CLIP_RESCALE_ALWAYS, False)
    with pytest.raises(ConfigError):
        PrivacyParams(1.0, -1.0, CLIP_RESCALE_ALWAYS, False)
    with pytest.raises(ConfigError):
        PrivacyParams(1.0, 1.0, "sometimes", False)


def test_noise_scale_and_strict_epsilon():
    p = PrivacyParams(2.0, 0.5, CLIP_RESCALE_ALWAYS, False)
    assert p.noise_scale == 0.25
    assert p.effective_epsilon == 2.0
    strict = PrivacyParams(2.0, 0.5, CLIP_RESCALE_ALWAYS, True)
    assert strict.effective_epsilon == 4.0


def test_resolve_sensitivity_rules():
    assert resolve_sensitivity("half-epsilon-capped-4", 1.0) == 0.5
    assert resolve_sensitivity("half-epsilon-capped-4", 20.0) == 4.0
    assert resolve_sensitivity("fixed:1.5", 3.0) == 1.5
    assert resolve_sensitivity("2.5", 1.0) == 2.5
    with pytest.raises(ConfigError):
        resolve_sensitivity("quarter-epsilon", 1.0)


def test_clip_l1_rescales_above_target():
    for mode in (CLIP_RESCALE_ALWAYS, CLIP_ONLY):
        out = clip_l1(np.array([3.0, -1.0]), 1.0, mode)
        np.testing.assert_allclose(out, [0.75, -0.25], rtol=0, atol=1e-15)


def test_clip_l1_below_target_depends_on_mode():
    z = np.array([0.5, 0.0])
    np.testing.assert_allclose(clip_l1(z, 1.0, CLIP_RESCALE_ALWAYS),
                               [1.0, 0.0], rtol=0, atol=1e-15)
    np.testing.assert_array_equal(clip_l1(z, 1.0, CLIP_ONLY), z)


def test_clip_l1_zero_norm():
    z = np.zeros(3)
    with pytest.raises(MechanismError):
        clip_l1(z, 1.0, CLIP_RESCALE_ALWAYS)
    np.testing.assert_array_equal(clip_l1(z, 1.0, CLIP_ONLY), z)


def test_clip_l1_norm_property_on_batch():
    rng = np.random.default_rng(0)
    Z = rng.normal(size=(1000, 6))
    out = clip_l1(Z, 2.0, CLIP_RESCALE_ALWAYS)
    norms = np.abs(out).sum(axis=1)
    assert np.all(np.abs(norms - 2.0) <= 1e-9)
    only = clip_l1(Z, 2.0, CLIP_ONLY)
    assert np.all(np.abs(only).sum(axis=1) <= 2.0 + 1e-9)
    small = Z[np.abs(Z).sum(axis=1) <= 2.0]
    np.testing.assert_array_equal(clip_l1(small, 2.0, CLIP_ONLY), small)


@given(hnp.arrays(np.float64, st.integers(1, 8),
                  elements=st.floats(-5, 5, allow_nan=False)),
       st.floats(0.1, 10))
def test_clip_l1_properties(z, s):
    if np.abs(z).sum() == 0.0:
        return
    out = clip_l1(z, s, CLIP_RESCALE_ALWAYS)
    assert np.abs(out).sum() == pytest.approx(s, rel=0, abs=1e-9)
    # direction preserved
    assert np.all(np.sign(out) == np.sign(z))


def test_laplace_inverse_cdf_median_and_symmetry():
    assert laplace_inverse_cdf(0.5, 2.0) == 0.0
    assert laplace_inverse_cdf(0.25, 1.0) == -laplace_inverse_cdf(0.75, 1.0)
    assert laplace_inverse_cdf(0.9, 1.0) == pytest.approx(
        -np.log(2 * (1 - 0.9)), abs=1e-12)


def test_laplace_sampler_moments():
    sampler = LaplaceSampler(scale=0.5, seed=0)
    draws = sampler.sample(10**6)
    assert abs(draws.mean()) < 0.005
    assert abs(draws.var() - 0.5) < 0.01


def test_laplace_sampler_ks_against_analytic_cdf():
    draws = LaplaceSampler(scale=1.0, seed=3).sample(10**5)
    result = stats.kstest(draws, stats.laplace(scale=1.0).cdf)
    assert result.pvalue > 0.01


def test_laplace_sampler_deterministic_and_keyed():
    a = LaplaceSampler(scale=1.0, seed=7).sample(100)
    b = LaplaceSampler(scale=1.0, seed=7).sample(100)
    assert np.array_equal(a, b)
    c = LaplaceSampler(scale=1.0, seed=8).sample(100)
    assert not np.array_equal(a, c)
    # substreams are independent of the parent stream position
    s1 = LaplaceSampler(scale=1.0, seed=7).substream(4).sample(10)
    s2 = LaplaceSampler(scale=1.0, seed=7).substream(4).sample(10)
    assert np.array_equal(s1, s2)


def test_epsilon_one_sensitivity_one_noise_scale():
    p = PrivacyParams(1.0, 1.0, CLIP_RESCALE_ALWAYS, False)
    assert p.noise_scale == 1.0


def test_cadp_privatize_noise_free_clip_only_is_round_trip(toy_flow):
    flow, ds = toy_flow
    params = PrivacyParams(1.0, 1e6, CLIP_ONLY, False)
    with pytest.warns(UserWarning, match="noise"):
        out = cadp_privatize(flow, ds.features[:50], ds.labels[:50], params,
                             debug_disable_noise=True)
    assert np.max(np.abs(out - ds.features[:50])) < 1e-6


def test_cadp_privatize_shapes_and_single_sample(toy_flow):
    flow, ds = toy_flow
    params = PrivacyParams(1.0, 0.5, CLIP_RESCALE_ALWAYS, False)
    batch = cadp_privatize(flow, ds.features[:10], ds.labels[:10], params,
                           seed=0)
    assert batch.shape == (10, 2)
    single = cadp_privatize(flow, ds.features[0], ds.labels[:1], params,
                            seed=0)
    assert single.shape == (2,)
    # same noise substream; tiny drift allowed because single-row and
    # batched matmuls may use different blas kernels
    np.testing.assert_allclose(single, batch[0], rtol=0, atol=1e-12)


def test_privatize_dataset_preserves_schema_and_labels(toy_flow):
    flow, ds = toy_flow
    params = PrivacyParams(1.0, 0.5, CLIP_RESCALE_ALWAYS, False)
    out = privatize_dataset(flow, ds, params, seed=1)
    assert out.n_samples == ds.n_samples
    assert out.feature_names == ds.feature_names
    assert out.feature_kinds == ds.feature_kinds
    np.testing.assert_array_equal(out.labels, ds.labels)
    assert not np.array_equal(out.features, ds.features)


def test_privatize_dataset_deterministic_per_seed(toy_flow):
    flow, ds = toy_flow
    params = PrivacyParams(1.0, 0.5, CLIP_RESCALE_ALWAYS, False)
    a = privatize_dataset(flow, ds, params, seed=5)
    b = privatize_dataset(flow, ds, params, seed=5)
    assert datasets_equal(a, b)
    c = privatize_dataset(flow, ds, params, seed=6)
    differing = np.any(a.features != c.features, axis=1).mean()
    assert differing >= 0.99


def test_privatize_order_independent_substreams(toy_flow):
    # noise depends on the absolute sample index, not the batch split
    flow, ds = toy_flow
    params = PrivacyParams(1.0, 0.5, CLIP_RESCALE_ALWAYS, False)
    whole = cadp_privatize(flow, ds.features[:20], ds.labels[:20], params,
                           seed=9)
    first = cadp_privatize(flow, ds.features[:12], ds.labels[:12], params,
                           seed=9)
    rest = cadp_privatize(flow, ds.features[12:20], ds.labels[12:20], params,
                          seed=9, index_offset=12)
    np.testing.assert_array_equal(whole, np.vstack([first, rest]))


def test_non_gin_strict_accounting_warns():
    ds = make_synthetic("two-gaussians", n=300, seed=1)
    flow = ConditionalFlow(n_blocks=2, coupling="glow", width=16, steps=40,
                           batch_size=128, eval_every=20, random_state=0)
    flow.fit(ds.features, ds.labels)
    params = PrivacyParams(1.0, 0.5, CLIP_RESCALE_ALWAYS, True)
    with pytest.warns(UserWarning, match="volume"):
        cadp_privatize(flow, ds.features[:5], ds.labels[:5], params, seed=0)


def test_privatizer_estimator_wrapper():
    ds = make_synthetic("two-gaussians", n=400, seed=2)
    base = ConditionalFlow(n_blocks=2, width=16, steps=60, batch_size=128,
                           eval_every=20, random_state=0)
    priv = CadpPrivatizer(flow=base, epsilon=1.0, sensitivity=0.5,
                          random_state=3)
    priv.fit(ds.features, ds.labels)
    # the wrapped flow is cloned, not mutated
    assert not hasattr(base, "blocks_")
    assert hasattr(priv.flow_, "blocks_")
    a = priv.transform(ds.features[:30], ds.labels[:30])
    b = priv.transform(ds.features[:30], ds.labels[:30])
    assert a.shape == (30, 2)
    np.testing.assert_array_equal(a, b)


def test_scalar_laplace_mechanism_sampling():
    mech = ScalarLaplaceMechanism(1.0, 1.0)
    rng = np.random.default_rng(0)
    out = mech.sample(3.0, 10**5, rng)
    assert abs(out.mean() - 3.0) < 0.02
    with pytest.raises(ConfigError):
        ScalarLaplaceMechanism(-1.0, 1.0)


def test_empirical_dp_ratio_identical_inputs_near_zero():
    mech = ScalarLaplaceMechanism(1.0, 1.0)
    r = empirical_dp_ratio(mech, 0.3, 0.3, 1.0, trials=10**6, seed=0)
    assert r < 0.05


def test_empirical_dp_ratio_orders_with_epsilon():
    observed = []
    for eps in (0.2, 1.0, 10.0):
        mech = ScalarLaplaceMechanism(eps, 1.0)
        observed.append(empirical_dp_ratio(mech, 0.0, 1.0, eps,
                                           trials=2 * 10**5, seed=1))
    assert observed[0] < observed[1] < observed[2]


def test_empirical_dp_ratio_input_validation():
    mech = ScalarLaplaceMechanism(1.0, 1.0)
    with pytest.raises(ConfigError):
        empirical_dp_ratio(mech, 0.0, 1.0, 0.0, trials=10**5)
    with pytest.raises(ValueError):
        empirical_dp_ratio(mech, 0.0, 1.0, 1.0, trials=10**4)
    with pytest.raises(ValueError, match="adjacent"):
        empirical_dp_ratio(mech, 0.0, 3.0, 1.0, trials=10**5)
