import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, stats

from obic.entropy import (
    ALPHABET_MAX,
    ALPHABET_MIN,
    PROB_FLOOR,
    ConditionalModel,
    DivergenceError,
    FactorizedModel,
    QuantizedLatents,
    build_cdf_tables,
    conditional_likelihood,
    estimate_rate,
    factorized_likelihood,
    gaussian_likelihood_tensor,
    gaussian_pmf,
    logistic_pmf,
    quantize,
)
from obic.tensor import Tensor


def test_rounding_convention():
    q = quantize(np.array([1.4, -1.5, 0.0, 1.5, -0.4, 2.5]), "round")
    assert q.values.tolist() == [1, -2, 0, 2, 0, 3]


def test_round_clips_to_the_alphabet_and_counts():
    q = quantize(np.array([150.0, -140.0, 3.0]), "round")
    assert q.values.tolist() == [ALPHABET_MAX, ALPHABET_MIN, 3]
    assert q.clip_count == 2


def test_runaway_latents_are_reported():
    with pytest.raises(DivergenceError):
        quantize(np.array([1e4]), "round")


def test_noise_offsets_lie_in_half_open_unit_interval(rng):
    x = rng.normal(size=50_000)
    y = quantize(x, "noise", rng).data
    assert (y - x).min() >= -0.5 and (y - x).max() < 0.5


def test_quantized_latents_reject_nonzero_inactive_positions():
    with pytest.raises(ValueError):
        QuantizedLatents(np.ones((1, 2, 2), np.int64), mask=np.array([[1, 0], [1, 1]]))


def test_factorized_zero_bin_closed_form():
    model = FactorizedModel(1)
    p = factorized_likelihood(np.zeros((1, 1, 1), np.int64), model)
    expected = 2.0 / (1.0 + np.exp(-0.5)) - 1.0
    assert p[0, 0, 0] == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(0.2449, abs=1e-4)


@given(st.integers(1, 127))
def test_factorized_is_even_about_a_zero_mean(k):
    pmf = logistic_pmf(np.zeros(1), np.ones(1))[0]
    assert pmf[k - ALPHABET_MIN] == pytest.approx(pmf[-k - ALPHABET_MIN], rel=1e-12)


@given(st.floats(-20, 20), st.floats(0.05, 8.0))
def test_logistic_mass_is_nearly_complete(loc, scale):
    total = logistic_pmf(np.array([loc]), np.array([scale])).sum()
    # the floor can only add mass to far-tail bins
    assert total >= 0.999
    assert total <= 1.0 + 256 * PROB_FLOOR


def test_gaussian_zero_bin_closed_form():
    p = gaussian_pmf(np.zeros(1), np.ones(1))[0, -ALPHABET_MIN]
    ref, _ = integrate.quad(stats.norm.pdf, -0.5, 0.5)
    assert p == pytest.approx(ref, abs=1e-12)
    assert p == pytest.approx(0.3829, abs=1e-4)


def test_peaked_gaussian_puts_everything_in_one_bin():
    pmf = gaussian_pmf(np.array([3.0]), np.array([1e-6]))[0]
    assert pmf[3 - ALPHABET_MIN] == pytest.approx(1.0, abs=1e-12)


def test_rate_examples():
    assert estimate_rate(np.full(17, 0.5)) == pytest.approx(17.0)
    assert estimate_rate(np.ones(5)) == 0.0
    assert estimate_rate([0.25, 0.5]) == pytest.approx(3.0)
    with pytest.raises(ValueError):
        estimate_rate([0.0])


def test_uniform_four_symbol_table():
    assert build_cdf_tables(np.full((1, 4), 0.25))[0].tolist() == [0, 16384, 32768, 49152, 65536]


@given(st.floats(-130, 130), st.floats(0.01, 50))
def test_tables_are_strictly_increasing(loc, scale):
    cdf = build_cdf_tables(logistic_pmf(np.array([loc]), np.array([scale])))[0]
    assert cdf[0] == 0 and cdf[-1] == 65536
    assert np.all(np.diff(cdf) > 0)


def test_table_building_is_deterministic(rng):
    pmf = gaussian_pmf(rng.normal(size=64), np.exp(rng.normal(size=64)))
    assert np.array_equal(build_cdf_tables(pmf), build_cdf_tables(pmf.copy()))


def test_degenerate_tables_are_rejected():
    with pytest.raises(ValueError):
        build_cdf_tables(np.zeros((1, 4)))
    with pytest.raises(ValueError):
        build_cdf_tables(np.array([[0.5, np.nan]]))


def test_likelihood_tensor_matches_numpy_pmf(rng):
    model = FactorizedModel(3, np.float64)
    model.loc.data[:] = [0.3, -1.0, 2.0]
    model.log_scale.data[:] = [0.0, 0.5, -0.3]
    z = rng.integers(-5, 6, size=(1, 3, 2, 2))
    got = model.likelihood_tensor(Tensor(z.astype(np.float64))).data[0]
    np.testing.assert_allclose(got, factorized_likelihood(z[0], model), rtol=1e-12)


def test_gaussian_likelihood_tensor_matches_pmf(rng):
    mu, sigma = rng.normal(size=(1, 2, 3, 3)), np.exp(rng.normal(size=(1, 2, 3, 3)))
    y = rng.integers(-3, 4, size=mu.shape)
    got = gaussian_likelihood_tensor(Tensor(y.astype(float)), Tensor(mu), Tensor(sigma)).data
    pmf = gaussian_pmf(mu.ravel(), sigma.ravel())
    np.testing.assert_allclose(got.ravel(), pmf[np.arange(y.size), y.ravel() - ALPHABET_MIN], rtol=1e-10)


def _model(c=4, seed=0):
    return ConditionalModel(c, np.random.default_rng(seed), np.float64)


def test_context_coder_agrees_with_the_training_path(rng):
    c = 4
    model = _model(c)
    ctx = rng.normal(size=(2 * c, 5, 6))
    y = rng.integers(-3, 4, size=(c, 5, 6))
    mu_t, sigma_t = model.params_tensor(Tensor(ctx[None]), Tensor(y[None].astype(float)), True)
    pos = np.argwhere(np.ones((5, 6)))
    mu, sigma = model.coder(True).params(ctx, y, pos)
    np.testing.assert_allclose(mu, mu_t.data[0].reshape(c, -1).T, rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(sigma, sigma_t.data[0].reshape(c, -1).T, rtol=1e-9, atol=1e-12)


def test_context_only_sees_earlier_positions(rng):
    c = 3
    coder = _model(c).coder(True)
    ctx = rng.normal(size=(2 * c, 6, 6))
    y = rng.integers(-3, 4, size=(c, 6, 6))
    p = (3, 2)
    before = coder.params(ctx, y, [p])
    later = y.copy()
    later[:, 3, 2:] = 99
    later[:, 4:, :] = -99
    after = coder.params(ctx, later, [p])
    assert all(np.array_equal(a, b) for a, b in zip(before, after))


def test_zeroed_context_reduces_to_hyper_only(rng):
    c = 3
    model = _model(c)
    model.context.weight.data[:] = 0
    model.context.bias.data[:] = 0
    ctx = rng.normal(size=(2 * c, 4, 4))
    y = rng.integers(-3, 4, size=(c, 4, 4))
    pos = np.argwhere(np.ones((4, 4)))
    a = model.coder(True).params(ctx, y, pos)
    b = model.coder(False).params(ctx, y, pos)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])


def test_conditional_likelihood_skips_inactive_positions(rng):
    c = 2
    model = _model(c)
    mask = np.array([[1, 0, 1], [0, 0, 1]], np.uint8)
    values = rng.integers(-2, 3, size=(c, 2, 3)) * mask
    q = QuantizedLatents(values, mask=mask)
    p = conditional_likelihood(q, rng.normal(size=(2 * c, 2, 3)), model)
    assert p.shape == (3 * c,)
    assert np.all((p > 0) & (p <= 1))


def test_masked_rate_weight_zeroes_gradients_outside_the_mask(rng):
    from obic.entropy import rate_bits_tensor

    p = Tensor(rng.uniform(0.1, 0.9, size=(1, 1, 2, 2)), requires_grad=True)
    w = np.array([[[[1.0, 0.0], [0.0, 1.0]]]])
    rate_bits_tensor(p, w).backward()
    assert p.grad[0, 0, 0, 1] == 0 and p.grad[0, 0, 1, 0] == 0
    assert p.grad[0, 0, 0, 0] < 0


def test_sigma_is_floored_and_capped():
    model = _model(2)
    big = Tensor(np.full((1, 4, 2, 2), 50.0))
    zeros = Tensor(np.zeros((1, 2, 2, 2)))
    model.fusion.layers[-1].weight.data[:] = 0
    model.fusion.layers[-1].bias.data[:] = 1e3
    _, sigma = model.params_tensor(big, zeros, False)
    assert np.all(sigma.data == np.exp(8.0))
    model.fusion.layers[-1].bias.data[:] = -1e3
    _, sigma = model.params_tensor(big, zeros, False)
    assert np.all(sigma.data >= 1e-6)
