import numpy as np
import pytest
from hypothesis import given, strategies as st

from ppoa.quantizer import QuantSpec, dequantize, quantize


def test_spec_examples():
    assert quantize(0.0, QuantSpec()) == 0
    assert quantize(1.0, QuantSpec(16, 1.0)) == 32767
    # 0.5 * 7 = 3.5 rounds away from zero
    assert quantize(0.5, QuantSpec(4, 1.0)) == 4
    assert quantize(-0.5, QuantSpec(4, 1.0)) == -4
    assert dequantize(0, QuantSpec()) == 0.0
    assert dequantize(4, QuantSpec(4, 1.0)) == pytest.approx(4 / 7, abs=1e-12)
    assert dequantize(32767 + 32767, QuantSpec(16, 1.0)) == 2.0


def test_levels_and_validation():
    assert QuantSpec(2).levels == 1
    assert QuantSpec(16).levels == 32767
    for bad in (dict(h=1), dict(h=64), dict(kappa=0.0), dict(kappa=-1.0), dict(kappa=float("inf"))):
        with pytest.raises(ValueError):
            QuantSpec(**bad)


def test_clipping_and_count():
    spec = QuantSpec(8, 0.5)
    q, n = quantize(np.array([-3.0, -0.5, 0.1, 0.7]), spec, return_clipped=True)
    assert q.tolist() == [-127, -127, 25, 127]
    assert n == 2


def test_non_finite_rejected():
    with pytest.raises(ValueError):
        quantize(np.array([0.1, np.nan]), QuantSpec())
    with pytest.raises(ValueError):
        quantize(float("inf"), QuantSpec())


def test_half_way_ties_against_decimal_oracle():
    # exact ties k + 0.5 on the scaled grid, built so the product is exact
    spec = QuantSpec(6, 31.0)  # L = 31, kappa = 31 => x = |p|
    p = np.arange(-30, 31) + 0.5
    expected = np.sign(p) * (np.floor(np.abs(p)) + 1)
    assert np.array_equal(quantize(p, spec), expected.astype(np.int64))


def test_round_trip_bound_million_draws():
    spec = QuantSpec(16, 1.0)
    rng = np.random.default_rng(1)
    p = rng.uniform(-1, 1, 10**6)
    err = np.abs(dequantize(quantize(p, spec), spec) - p)
    assert err.max() <= spec.kappa / (2 * spec.levels) * (1 + 1e-9)


@given(st.floats(-10, 10, allow_nan=False), st.integers(2, 24), st.floats(0.01, 5))
def test_oddness(p, h, kappa):
    spec = QuantSpec(h, kappa)
    assert quantize(-p, spec) == -quantize(p, spec)
    q = quantize(p, spec)
    assert dequantize(-q, spec) == -dequantize(q, spec)


@given(st.floats(-2, 2, allow_nan=False), st.floats(-2, 2, allow_nan=False))
def test_monotone(a, b):
    spec = QuantSpec(10, 1.5)
    lo, hi = min(a, b), max(a, b)
    assert quantize(lo, spec) <= quantize(hi, spec)


@given(st.integers(-2**40, 2**40), st.integers(-2**40, 2**40))
def test_dequantize_linear(a, b):
    spec = QuantSpec(16, 1.0)
    lhs = dequantize(a + b, spec)
    rhs = dequantize(a, spec) + dequantize(b, spec)
    assert lhs == pytest.approx(rhs, rel=4e-16, abs=1e-300)


def test_scalar_returns_python_types():
    assert isinstance(quantize(0.3, QuantSpec()), int)
    assert isinstance(dequantize(3, QuantSpec()), float)
