import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lrco.errors import DegenerateFeatureError
from lrco.numerics import (
    SeededRng, finite_diff_grad, l2_normalize, log_sum_exp, relative_grad_error,
    sample_beta, softmax_t,
)

finite_vectors = st.lists(
    st.floats(min_value=-30, max_value=30, allow_nan=False), min_size=1, max_size=12
).map(np.array)


# --- softmax_t ---------------------------------------------------------------

def test_softmax_symmetry_two():
    np.testing.assert_allclose(softmax_t(np.array([0.0, 0.0]), 1.0), [0.5, 0.5])


def test_softmax_constant_vector_uniform():
    out = softmax_t(np.array([3.7, 3.7, 3.7, 3.7]), 0.25)
    np.testing.assert_allclose(out, [0.25, 0.25, 0.25, 0.25], atol=1e-15)


def test_softmax_two_logit_value():
    # e/(e+1) evaluated independently
    out = softmax_t(np.array([1.0, 0.0]), 1.0)
    np.testing.assert_allclose(out, [0.7310585786300049, 0.2689414213699951], atol=1e-15)


def test_softmax_rejects_bad_temperature_and_empty():
    with pytest.raises(ValueError):
        softmax_t(np.array([1.0]), 0.0)
    with pytest.raises(ValueError):
        softmax_t(np.array([1.0]), -2.0)
    with pytest.raises(ValueError):
        softmax_t(np.array([]), 1.0)


@given(finite_vectors, st.floats(min_value=0.5, max_value=10))
@settings(max_examples=60, deadline=None)
def test_softmax_sums_to_one_and_shift_invariant(v, temp):
    out = softmax_t(v, temp)
    assert abs(out.sum() - 1.0) < 1e-12
    assert np.all(out > 0)
    shifted = softmax_t(v + 11.25, temp)
    np.testing.assert_allclose(out, shifted, atol=1e-12)


def test_softmax_positive_on_cosine_envelope():
    # the classifier feeds cosine similarities in [-1, 1] at T down to 0.05;
    # entries must stay strictly positive there
    sims = np.array([1.0, -1.0, 0.37, -0.99])
    out = softmax_t(sims, 0.05)
    assert np.all(out > 0)
    assert abs(out.sum() - 1.0) < 1e-12


@given(finite_vectors, st.floats(min_value=0.05, max_value=10))
@settings(max_examples=60, deadline=None)
def test_softmax_temperature_equals_prescaled(v, temp):
    # softmax_t(v, T) must equal softmax_t(v/T, 1) bit-exactly
    a = softmax_t(v, temp)
    b = softmax_t(v / temp, 1.0)
    assert np.array_equal(a, b)


def test_softmax_huge_logits_no_overflow():
    out = softmax_t(np.array([1000.0, 1000.0, -1000.0]), 1.0)
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out[:2], [0.5, 0.5], atol=1e-12)


# --- l2_normalize -------------------------------------------------------------

def test_l2_normalize_345():
    np.testing.assert_allclose(l2_normalize(np.array([3.0, 4.0])), [0.6, 0.8], atol=1e-15)


def test_l2_normalize_unit_is_identity():
    v = np.array([1.0, 0.0, 0.0])
    np.testing.assert_allclose(l2_normalize(v), v, atol=1e-15)
    np.testing.assert_allclose(l2_normalize(np.array([2.0, 0.0, 0.0])), v, atol=1e-15)


def test_l2_normalize_rejects_near_zero():
    with pytest.raises(DegenerateFeatureError):
        l2_normalize(np.zeros(3))
    with pytest.raises(DegenerateFeatureError):
        l2_normalize(np.array([1e-13, 0.0]))


@given(finite_vectors.filter(lambda v: np.linalg.norm(v) > 1e-6))
@settings(max_examples=60, deadline=None)
def test_l2_normalize_idempotent_and_parallel(v):
    once = l2_normalize(v)
    assert abs(np.linalg.norm(once) - 1.0) < 1e-12
    np.testing.assert_allclose(l2_normalize(once), once, atol=1e-12)
    # parallel: cross terms vanish -> cosine with original is 1
    cos = float(once @ v / np.linalg.norm(v))
    assert abs(cos - 1.0) < 1e-10


# --- log_sum_exp --------------------------------------------------------------

def test_log_sum_exp_values():
    assert abs(log_sum_exp(np.array([0.0, 0.0])) - 0.6931471805599453) < 1e-12
    assert abs(log_sum_exp(np.array([1000.0, 1000.0])) - (1000 + 0.6931471805599453)) < 1e-12
    assert abs(log_sum_exp(np.array([1.0, 2.0, 3.0])) - 3.40760596444438) < 1e-12


def test_log_sum_exp_empty_rejected():
    with pytest.raises(ValueError):
        log_sum_exp(np.array([]))


@given(finite_vectors)
@settings(max_examples=60, deadline=None)
def test_log_sum_exp_matches_direct_at_low_magnitude(v):
    direct = np.log(np.sum(np.exp(v)))
    assert abs(log_sum_exp(v) - direct) < 1e-10


# --- SeededRng ----------------------------------------------------------------

def test_rng_same_seed_same_stream():
    a = SeededRng(7).normal(size=100)
    b = SeededRng(7).normal(size=100)
    assert np.array_equal(np.asarray(a), np.asarray(b))


def test_rng_substreams_are_independent_of_call_order():
    root = SeededRng(3)
    s1 = root.substream("augment").uniform(size=5)
    s2 = root.substream("shuffle").uniform(size=5)
    # building the substreams in the other order must not change either draw
    root2 = SeededRng(3)
    t2 = root2.substream("shuffle").uniform(size=5)
    t1 = root2.substream("augment").uniform(size=5)
    assert np.array_equal(np.asarray(s1), np.asarray(t1))
    assert np.array_equal(np.asarray(s2), np.asarray(t2))


def test_rng_distinct_labels_distinct_streams():
    root = SeededRng(0)
    a = root.substream("a").uniform(size=8)
    b = root.substream("b").uniform(size=8)
    assert not np.array_equal(np.asarray(a), np.asarray(b))


def test_rng_nested_substreams_reproducible():
    a = SeededRng(11).substream("x").substream("y").normal(size=4)
    b = SeededRng(11).substream("x").substream("y").normal(size=4)
    assert np.array_equal(np.asarray(a), np.asarray(b))


def test_rng_state_roundtrip():
    rng = SeededRng(5)
    rng.uniform(size=10)
    saved = rng.state
    after = rng.uniform(size=10)
    rng2 = SeededRng(5)
    rng2.state = saved
    replay = rng2.uniform(size=10)
    assert np.array_equal(np.asarray(after), np.asarray(replay))


# --- sample_beta ---------------------------------------------------------------

def test_sample_beta_alpha_one_is_uniform():
    rng = SeededRng(123)
    draws = np.array([sample_beta(1.0, rng) for _ in range(100_000)])
    assert np.all((draws > 0) & (draws < 1))
    assert abs(draws.mean() - 0.5) < 0.005
    assert abs(draws.var() - 1.0 / 12.0) < 0.003


def test_sample_beta_symmetric_mean_half_alpha():
    rng = SeededRng(9)
    draws = np.array([sample_beta(0.5, rng) for _ in range(100_000)])
    assert abs(draws.mean() - 0.5) < 0.005


def test_sample_beta_reproducible():
    a = [sample_beta(0.7, SeededRng(42).substream("mix")) for _ in range(1)]
    b = [sample_beta(0.7, SeededRng(42).substream("mix")) for _ in range(1)]
    assert a == b


def test_sample_beta_rejects_bad_alpha():
    with pytest.raises(ValueError):
        sample_beta(0.0, SeededRng(0))
    with pytest.raises(ValueError):
        sample_beta(-1.0, SeededRng(0))


# --- finite differences ----------------------------------------------------------

def test_finite_diff_quadratic():
    grad = finite_diff_grad(lambda p: float(p @ p), np.array([1.0, 2.0]), h=1e-5)
    np.testing.assert_allclose(grad, [2.0, 4.0], atol=1e-6)


def test_finite_diff_constant_zero():
    grad = finite_diff_grad(lambda p: 3.25, np.array([0.3, -0.7, 1.1]))
    np.testing.assert_allclose(grad, np.zeros(3), atol=1e-12)


def test_finite_diff_softmax_cross_entropy():
    # analytic softmax-CE gradient: p - onehot(y)
    logits = np.array([0.2, -1.3, 0.8])
    y = 2

    def loss(z):
        p = softmax_t(z, 1.0)
        return float(-np.log(p[y]))

    numeric = finite_diff_grad(loss, logits, h=1e-5)
    p = softmax_t(logits, 1.0)
    analytic = p.copy()
    analytic[y] -= 1.0
    assert relative_grad_error(analytic, numeric) < 1e-6


def test_relative_grad_error_zero_pair():
    assert relative_grad_error(np.zeros(4), np.zeros(4)) == 0.0
