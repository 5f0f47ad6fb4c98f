"""Gradient correctness and graph mechanics of the autodiff core."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blindeq import autodiff as ad
from blindeq.errors import ConfigError, NumericalError
from helpers import max_gradient_error, primitive_cases, rel_err


def test_primitive_gradients_match_finite_differences():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        for name, params, build in primitive_cases(rng):
            err = max_gradient_error(build, params)
            assert err < 1e-5, f"{name} (seed {seed}): rel err {err:.3e}"


def test_conv1d_full_hand_oracle():
    # [DERIVED] by hand: valid conv of [1,0,0,2] with [1,1] is [1,0,2];
    # stride 2 keeps indices 0 and 2
    out = ad.conv1d_full(ad.constant([1.0, 0.0, 0.0, 2.0]),
                         ad.constant([1.0, 1.0]), stride=2)
    assert np.array_equal(out.value, [1.0, 2.0])


def test_conv1d_full_matches_numpy():
    rng = np.random.default_rng(3)
    for _ in range(50):
        n = int(rng.integers(4, 12))
        k = int(rng.integers(1, n + 1))
        pad = int(rng.integers(0, 3))
        stride = int(rng.integers(1, 4))
        if k > n + 2 * pad:
            continue
        s = rng.standard_normal(n)
        w = rng.standard_normal(k)
        ref = np.convolve(np.pad(s, pad), w, mode="valid")[::stride]
        out = ad.conv1d_full(ad.constant(s), ad.constant(w), stride, pad)
        assert rel_err(out.value, ref) < 1e-14


def test_zero_insert_pattern():
    out = ad.zero_insert(ad.constant([1.0, 2.0]), 3)
    assert np.array_equal(out.value, [1, 0, 0, 2, 0, 0])


def test_softmax_rows_on_simplex():
    rng = np.random.default_rng(0)
    out = ad.softmax_rows(ad.constant(rng.standard_normal((7, 4))))
    assert np.allclose(out.value.sum(axis=1), 1.0)
    assert np.all(out.value > 0)


def test_reused_node_accumulates():
    # diamond graph: f = a^2 + a^2 so df/da = 4a
    a = ad.leaf([1.5, -2.0])
    sq = ad.square(a)
    ad.backward(ad.ssum(ad.add(sq, sq)))
    assert np.allclose(a.grad, 4.0 * a.value)


def test_backward_accumulates_across_calls():
    a = ad.leaf([2.0])
    ad.backward(ad.ssum(ad.square(a)))
    ad.backward(ad.ssum(ad.square(a)))
    assert np.allclose(a.grad, 2.0 * 2.0 * a.value)
    a.zero_grad()
    assert np.allclose(a.grad, 0.0)


def test_constant_gets_no_gradient():
    a = ad.constant([1.0, 2.0])
    b = ad.leaf([3.0, 4.0])
    out = ad.ssum(ad.multiply(a, b))
    ad.backward(out)
    assert a.grad is None
    assert np.allclose(b.grad, a.value)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_multiply_gradient_property(seed):
    # d(sum(a*b))/da = b for any operands
    rng = np.random.default_rng(seed)
    a = ad.leaf(rng.standard_normal(5))
    b = ad.leaf(rng.standard_normal(5))
    ad.backward(ad.ssum(ad.multiply(a, b)))
    assert np.allclose(a.grad, b.value)
    assert np.allclose(b.grad, a.value)


def test_error_paths():
    with pytest.raises(NumericalError):
        ad.natural_log(ad.constant([1.0, -1.0]))
    with pytest.raises(ConfigError):
        ad.backward(ad.leaf([1.0, 2.0]))  # non-scalar root
    with pytest.raises(ConfigError):
        ad.conv1d_full(ad.constant([1.0, 2.0]), ad.constant([1.0]), stride=0)
    with pytest.raises(ConfigError):
        ad.conv1d_full(ad.constant([1.0]), ad.constant([1.0, 2.0, 3.0]))
    with pytest.raises(ConfigError):
        ad.add(ad.constant([1.0, 2.0]), ad.constant([1.0, 2.0, 3.0]))
