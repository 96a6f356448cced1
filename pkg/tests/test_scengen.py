import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from memg.gradcheck import check_gan_losses
from memg.scengen import (
    GanConfig,
    PairedSeries,
    ScenarioSet,
    coverage_index,
    discriminator_loss,
    envelope_index,
    estimate_error_std,
    generate,
    generator_loss,
    monte_carlo_baseline,
    synthetic_family,
    train_gan,
)

unit = st.floats(0.0, 1.0)


# ---------------------------------------------------------------- losses


def test_loss_examples():
    assert discriminator_loss([1.0, 1.0], [0.0, 0.0]) == 0.0
    assert discriminator_loss([0.9], [0.2]) == pytest.approx(0.025, abs=1e-12)
    assert discriminator_loss([0.0, 0.0], [1.0, 1.0]) == 1.0
    assert generator_loss([1.0, 1.0]) == 0.0
    assert generator_loss([0.2]) == pytest.approx(0.32, abs=1e-12)
    assert generator_loss([0.0]) == 0.5


@given(arrays(float, 5, elements=st.floats(-10, 10)), arrays(float, 5, elements=st.floats(-10, 10)))
def test_losses_non_negative(real, fake):
    assert discriminator_loss(real, fake) >= 0.0
    assert generator_loss(fake) >= 0.0


@pytest.mark.parametrize("seed", range(10))
def test_gan_gradients(seed):
    assert all(r.max_rel_error < 1e-4 for r in check_gan_losses(np.random.default_rng(seed)))


def test_gan_config_validation():
    with pytest.raises(ValueError):
        GanConfig(noise_dim=0)
    with pytest.raises(ValueError):
        GanConfig(label_target=0.5)
    with pytest.raises(ValueError):
        GanConfig(skip="multiplicative")
    with pytest.raises(ValueError):
        GanConfig(noise="cauchy")


# ---------------------------------------------------------------- data types


def test_paired_series_validation():
    with pytest.raises(ValueError):
        PairedSeries(np.zeros(24), np.zeros(23))
    with pytest.raises(ValueError):
        PairedSeries(np.full(24, 1.2), np.zeros(24))
    with pytest.raises(ValueError):
        PairedSeries(np.zeros(24), np.zeros(24), kind="hydro")


def test_scenario_set_validation():
    with pytest.raises(ValueError):
        ScenarioSet(np.zeros(24), np.zeros((0, 24)))
    with pytest.raises(ValueError):
        ScenarioSet(np.zeros(24), np.zeros((3, 12)))


def test_synthetic_family_shape_and_range():
    data = synthetic_family(30, np.random.default_rng(0), "pv")
    assert len(data) == 30 and all(s.kind == "pv" and s.forecast.size == 24 for s in data)
    assert all(0 <= s.actual.min() and s.actual.max() <= 1 for s in data)


# ---------------------------------------------------------------- training and generation


def small_cfg(**kw):
    base = dict(noise_dim=4, hidden=(16,), batch_size=8, epochs=30)
    base.update(kw)
    return GanConfig(**base)


def test_train_zero_epochs():
    res = train_gan(synthetic_family(4, np.random.default_rng(0)), small_cfg(epochs=0), seed=1)
    assert res.d_losses == [] and res.g_losses == []
    assert res.metadata()["epochs"] == 0


def test_train_deterministic_and_finite():
    data = synthetic_family(10, np.random.default_rng(0))
    a = train_gan(data, small_cfg(), seed=5)
    b = train_gan(data, small_cfg(), seed=5)
    assert a.d_losses == b.d_losses and a.g_losses == b.g_losses
    assert len(a.d_losses) == 30 and np.all(np.isfinite(a.d_losses))


def test_train_rejects_bad_data():
    with pytest.raises(ValueError):
        train_gan([], small_cfg(), seed=0)
    mixed = [PairedSeries(np.zeros(24), np.zeros(24)), PairedSeries(np.zeros(12), np.zeros(12))]
    with pytest.raises(ValueError):
        train_gan(mixed, small_cfg(), seed=0)


@pytest.mark.parametrize("skip", ["additive", "logit", "none"])
def test_generate_contract(skip):
    data = synthetic_family(6, np.random.default_rng(1))
    res = train_gan(data, small_cfg(skip=skip, epochs=5), seed=2)
    f = data[0].forecast
    one = generate(res.generator, f, 1, seed=3)
    assert np.array_equal(one.scenarios, generate(res.generator, f, 1, seed=3).scenarios)
    many = generate(res.generator, f, 50, seed=4)
    assert many.scenarios.shape == (50, 24)
    assert many.scenarios.min() >= 0.0 and many.scenarios.max() <= 1.0
    with pytest.raises(ValueError):
        generate(res.generator, f, 0, seed=3)
    with pytest.raises(ValueError):
        generate(res.generator, f[:12], 5, seed=3)


# ---------------------------------------------------------------- Monte Carlo


def test_monte_carlo_zero_std_reproduces_forecast():
    f = np.linspace(0.1, 0.9, 24)
    s = monte_carlo_baseline(f, np.zeros(24), 20, seed=0)
    assert np.array_equal(s.scenarios, np.tile(f, (20, 1)))


def test_monte_carlo_sample_std():
    f = np.full(24, 0.5)
    std = np.linspace(0.01, 0.1, 24)
    s = monte_carlo_baseline(f, std, 10_000, seed=1)
    np.testing.assert_allclose(s.scenarios.std(axis=0, ddof=1), std, rtol=0.05)


@given(seed=st.integers(0, 2**32 - 1), scale=st.floats(0.0, 3.0))
def test_monte_carlo_clipped(seed, scale):
    s = monte_carlo_baseline(np.linspace(0, 1, 24), np.full(24, scale), 30, seed)
    assert s.scenarios.min() >= 0.0 and s.scenarios.max() <= 1.0


def test_error_std_estimate():
    data = synthetic_family(50, np.random.default_rng(2))
    std = estimate_error_std(data)
    assert std.shape == (24,) and np.all(std > 0)
    assert np.array_equal(estimate_error_std(data[:1]), np.zeros(24))


# ---------------------------------------------------------------- indices


def test_index_examples():
    m = np.array([[0.4, 0.95], [0.8, 1.0]])
    assert coverage_index(m, [0.5, 0.9]) == 0.5
    assert envelope_index(m) == pytest.approx(0.225, abs=1e-15)
    assert coverage_index(m, m[1]) == 1.0
    assert coverage_index(m[:1], [0.1, 0.2]) == 0.0
    assert envelope_index(m[:1]) == 0.0
    inside = np.vstack([m, [0.6, 0.97]])
    assert envelope_index(inside) == envelope_index(m)


def brute_force(m, actual):
    T = len(actual)
    hits = 0
    width = 0.0
    for t in range(T):
        col = [row[t] for row in m]
        lo, hi = min(col), max(col)
        hits += 1 if lo <= actual[t] <= hi else 0
        width += hi - lo
    return hits / T, width / T


def test_indices_match_brute_force_on_1000_instances():
    rng = np.random.default_rng(3)
    for _ in range(1000):
        n, T = int(rng.integers(1, 6)), int(rng.integers(1, 8))
        # coarse grid values make ties with the envelope edges common
        m = rng.integers(0, 5, (n, T)) / 4.0
        actual = rng.integers(0, 5, T) / 4.0
        cov, env = brute_force(m.tolist(), actual.tolist())
        assert coverage_index(m, actual) == cov
        assert envelope_index(m) == pytest.approx(env, abs=1e-15)


small_sets = st.integers(1, 6).flatmap(
    lambda T: st.tuples(
        arrays(float, st.tuples(st.integers(1, 6), st.just(T)), elements=unit),
        arrays(float, st.tuples(st.integers(1, 4), st.just(T)), elements=unit),
        arrays(float, T, elements=unit),
    )
)


@given(small_sets)
def test_indices_monotone_under_inclusion(case):
    base, extra, actual = case
    bigger = np.vstack([base, extra])
    assert coverage_index(bigger, actual) >= coverage_index(base, actual)
    assert envelope_index(bigger) >= envelope_index(base)


@given(small_sets, st.randoms(use_true_random=False))
def test_indices_permutation_invariant(case, rnd):
    base, _, actual = case
    order = list(range(base.shape[0]))
    rnd.shuffle(order)
    assert coverage_index(base[order], actual) == coverage_index(base, actual)
    assert envelope_index(base[order]) == envelope_index(base)


@given(arrays(float, 24, elements=unit))
def test_oracle_generator_corner(actual):
    assert coverage_index(actual[None, :], actual) == 1.0
    assert envelope_index(np.tile(actual, (5, 1))) == 0.0


def test_index_length_mismatch():
    with pytest.raises(ValueError):
        coverage_index(np.zeros((2, 3)), np.zeros(4))
