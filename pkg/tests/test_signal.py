import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vfl import tensor as T
from vfl.nn import gradcheck
from vfl.signal import (SketchPlan, circular_convolve, circular_correlate, convolve, count_sketch,
                        direct_circular_convolve, fft, fft_real, ifft, ifft_real, naive_dft,
                        product_plan, sketch)
from vfl.tensor import Tensor

powers = st.sampled_from([1, 2, 4, 8, 16, 32, 64])


# --------------------------------------------------------------------- FFT
def test_delta_transforms_to_ones():
    assert np.allclose(fft([1, 0, 0, 0]), [1, 1, 1, 1])


def test_round_trip_n64():
    x = np.random.default_rng(0).standard_normal(64) + 1j * np.random.default_rng(1).standard_normal(64)
    assert np.max(np.abs(ifft(fft(x)) - x)) < 1e-12


def test_matches_naive_dft_n16():
    x = np.random.default_rng(2).standard_normal(16)
    assert np.max(np.abs(fft(x) - naive_dft(x))) < 1e-9


def test_non_power_of_two_rejected():
    with pytest.raises(ValueError):
        fft(np.ones(12))
    with pytest.raises(ValueError):
        fft(np.ones(0))


def test_batched_transform_acts_on_last_axis():
    x = np.random.default_rng(3).standard_normal((3, 2, 8))
    out = fft(x)
    for idx in np.ndindex(3, 2):
        assert np.allclose(out[idx], naive_dft(x[idx]), atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(powers, st.integers(0, 2 ** 31))
def test_parseval(n, seed):
    x = np.random.default_rng(seed).standard_normal(n)
    assert np.sum(np.abs(fft(x)) ** 2) == pytest.approx(n * np.sum(x * x), abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 5), powers, st.integers(0, 2 ** 31))
def test_real_packing_matches_complex_transform(rows, n, seed):
    x = np.random.default_rng(seed).standard_normal((rows, n))
    assert np.allclose(fft_real(x), fft(x), atol=1e-10)
    assert np.allclose(ifft_real(fft(x)), x, atol=1e-12)


# -------------------------------------------------------------- convolution
def test_convolution_identity_and_hand_sum():
    a = np.array([0.3, -1.0, 2.0, 0.5])
    assert np.allclose(circular_convolve(a, [1, 0, 0, 0]), a)
    assert np.allclose(circular_convolve([1, 1], [1, 1]), [2, 2])


def test_random_n32_matches_direct_sum():
    rng = np.random.default_rng(4)
    a, b = rng.standard_normal(32), rng.standard_normal(32)
    assert np.max(np.abs(circular_convolve(a, b) - direct_circular_convolve(a, b))) < 1e-9


def test_length_mismatch_rejected():
    with pytest.raises(ValueError):
        circular_convolve(np.ones(4), np.ones(8))


@settings(max_examples=25, deadline=None)
@given(powers, st.integers(0, 2 ** 31))
def test_correlation_is_adjoint_of_convolution(n, seed):
    rng = np.random.default_rng(seed)
    a, b, g = rng.standard_normal((3, n))
    assert np.dot(g, circular_convolve(a, b)) == pytest.approx(
        np.dot(circular_correlate(g, b), a), abs=1e-9)


# ------------------------------------------------------------- count sketch
def test_single_bucket():
    plan = SketchPlan(1, 4, np.array([2]), np.array([-1.0]))
    assert np.array_equal(count_sketch([3.0], plan), [0, 0, -3, 0])


def test_sketch_of_zero_is_zero():
    plan = SketchPlan.random(10, 8, 0)
    assert not np.any(count_sketch(np.zeros(10), plan))


def test_plan_validation():
    with pytest.raises(ValueError):
        SketchPlan.random(4, 6, 0)
    with pytest.raises(ValueError):
        SketchPlan(2, 4, np.array([0, 4]), np.array([1.0, 1.0]))
    with pytest.raises(ValueError):
        SketchPlan(2, 4, np.array([0, 1]), np.array([1.0, 0.5]))
    with pytest.raises(ValueError):
        count_sketch(np.ones(3), SketchPlan.random(4, 4, 0))


def test_plan_is_determined_by_seed():
    assert SketchPlan.random(9, 16, 5) == SketchPlan.random(9, 16, 5)
    assert SketchPlan.random(9, 16, 5) != SketchPlan.random(9, 16, 6)


def test_sketch_matches_dense_matrix():
    plan = SketchPlan.random(7, 8, 3)
    x = np.random.default_rng(0).standard_normal((2, 7))
    assert np.allclose(count_sketch(x, plan), x @ plan.matrix(), atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 20), st.sampled_from([2, 4, 8, 16]), st.integers(0, 2 ** 31),
       st.floats(-3, 3), st.floats(-3, 3))
def test_sketch_is_linear(d, d_s, seed, alpha, beta):
    rng = np.random.default_rng(seed)
    plan = SketchPlan.random(d, d_s, seed)
    x, y = rng.standard_normal((2, d))
    lhs = count_sketch(alpha * x + beta * y, plan)
    rhs = alpha * count_sketch(x, plan) + beta * count_sketch(y, plan)
    assert np.max(np.abs(lhs - rhs)) < 1e-12


def test_inner_product_unbiased_over_plans():
    rng = np.random.default_rng(11)
    x, y = rng.standard_normal((2, 16))
    samples = np.array([count_sketch(x, p) @ count_sketch(y, p)
                        for p in (SketchPlan.random(16, 64, s) for s in range(500))])
    stderr = samples.std(ddof=1) / np.sqrt(len(samples))
    assert abs(samples.mean() - x @ y) < 3 * stderr


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 32), st.integers(1, 32), st.sampled_from([4, 16, 64]),
       st.integers(0, 2 ** 31))
def test_sketch_theorem(dx, dy, d_s, seed):
    rng = np.random.default_rng(seed)
    p1, p2 = SketchPlan.random(dx, d_s, seed), SketchPlan.random(dy, d_s, seed + 1)
    x, y = rng.standard_normal(dx), rng.standard_normal(dy)
    lhs = count_sketch(np.outer(x, y).reshape(-1), product_plan(p1, p2))
    rhs = circular_convolve(count_sketch(x, p1), count_sketch(y, p2))
    assert np.max(np.abs(lhs - rhs)) < 1e-9


# ----------------------------------------------------------- tracked wrappers
def test_tracked_sketch_and_convolve_gradients():
    rng = np.random.default_rng(8)
    p1, p2 = SketchPlan.random(5, 8, 1), SketchPlan.random(3, 8, 2)
    x, y = Tensor(rng.standard_normal((2, 5)), requires_grad=True), \
        Tensor(rng.standard_normal(3), requires_grad=True)
    w = rng.standard_normal((2, 8))
    err = gradcheck(lambda: T.tsum(convolve(sketch(x, p1), sketch(y, p2)) * Tensor(w)), [x, y])
    assert err < 1e-6


def test_tracked_convolve_value_matches_plain():
    rng = np.random.default_rng(9)
    a, b = rng.standard_normal((3, 16)), rng.standard_normal((3, 16))
    assert np.allclose(convolve(Tensor(a), Tensor(b)).data, circular_convolve(a, b), atol=1e-12)
