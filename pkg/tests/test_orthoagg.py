import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ppoa.orthoagg import (GroupScheme, IntegrityError, fuse_groups, make_two_group_scheme,
                           make_v_group_scheme, map_down, map_up, recover_count, recover_group_stats)
from ppoa.quantizer import QuantSpec, dequantize


def test_two_group_examples():
    s = make_two_group_scheme(1, 0)
    assert s.vectors.tolist() == [[1, 0], [0, 1]] and s.mu == 1
    s = make_two_group_scheme(1, 2)
    assert s.vectors.tolist() == [[1, 2], [-2, 1]] and s.mu == 5
    assert int(s.vector(0) @ s.vector(1)) == 0
    assert make_two_group_scheme(3, 4).mu == 25


def test_generator_validation():
    with pytest.raises(ValueError):
        make_two_group_scheme(0, 0)
    with pytest.raises(ValueError):
        make_two_group_scheme(17, 1)
    with pytest.raises(ValueError):
        GroupScheme(np.array([[1, 1], [1, 2]]), 2)


def test_v_group_examples():
    s = make_v_group_scheme(3, 2)
    assert s.vectors.tolist() == [[2, 0, 0], [0, 2, 0], [0, 0, 2]] and s.mu == 4
    a, b = make_v_group_scheme(2, 1), make_two_group_scheme(1, 0)
    assert np.array_equal(a.vectors, b.vectors) and a.mu == b.mu
    assert make_v_group_scheme(2, p=1, q=2).mu == 5
    for v in (2, 3, 5):
        s = make_v_group_scheme(v, 3)
        assert np.array_equal(s.vectors @ s.vectors.T, s.mu * np.eye(v))


def test_scheme_serialises():
    s = make_two_group_scheme(2, 5)
    back = GroupScheme.from_dict(s.to_dict())
    assert np.array_equal(back.vectors, s.vectors) and back.mu == s.mu


def test_map_up_examples():
    assert map_up([1, 2], [3]).tolist() == [3, 6]
    assert map_up([-2, 1], [5, 6]).tolist() == [-10, 5, -12, 6]
    assert not map_up([3, 4], np.zeros(7, dtype=np.int64)).any()
    with pytest.raises(TypeError):
        map_up([1, 2], [0.5])
    with pytest.raises(OverflowError):
        map_up([16, 0], [2**60])


def test_map_down_worked_instance():
    # group 0 members (1,2), (3,4); group 1 member (5,6); p=1, q=2
    s = make_two_group_scheme(1, 2)
    W = map_up(s.vector(0), [1, 2]) + map_up(s.vector(0), [3, 4]) + map_up(s.vector(1), [5, 6])
    assert W.tolist() == [-6, 13, -6, 18]
    assert map_down(s.vector(0), W).tolist() == [20, 30]
    assert map_down(s.vector(1), W).tolist() == [25, 30]
    W_num = 2 * s.vector(0) + s.vector(1)
    assert W_num.tolist() == [0, 5]
    assert recover_count(s.vector(0), W_num, s.mu) == 2
    assert recover_count(s.vector(1), W_num, s.mu) == 1
    spec = QuantSpec(16, 1.0)
    cnt, avg = recover_group_stats(s.vector(0), W_num, W, s.mu, spec)
    assert cnt == 2
    assert np.array_equal(avg, dequantize(np.array([20, 30]), spec) / (5 * 2))


def test_map_down_length_check():
    with pytest.raises(ValueError):
        map_down([1, 2], [1, 2, 3])


def test_map_down_large_values_fall_back_to_exact():
    nu = np.array([16, 16, 16])
    w = np.full(3, 2**62, dtype=np.int64)
    assert map_down(nu, w).tolist() == [3 * 16 * 2**62]


def test_integrity_errors():
    s = make_two_group_scheme(1, 2)
    with pytest.raises(IntegrityError, match="integrity"):
        recover_count(s.vector(0), np.array([1, 1]), s.mu)
    with pytest.raises(IntegrityError, match="empty or corrupted"):
        recover_count(s.vector(0), s.vector(1), s.mu)


def test_single_user_on_grid_recovers_exactly():
    spec = QuantSpec(16, 1.0)
    s = make_two_group_scheme(3, 4)
    theta = np.array([7, -3, 0, 32767])
    W = map_up(s.vector(1), theta)
    cnt, avg = recover_group_stats(s.vector(1), s.vector(1), W, s.mu, spec)
    assert cnt == 1
    assert np.array_equal(avg, dequantize(theta, spec))


@settings(max_examples=60, deadline=None)
@given(st.sampled_from([2, 3, 5]), st.integers(1, 50), st.integers(0, 2**32))
def test_recovery_identity(v, d, seed):
    rng = np.random.default_rng(seed)
    s = make_v_group_scheme(v, int(rng.integers(1, 17))) if v > 2 else \
        make_two_group_scheme(int(rng.integers(1, 17)), int(rng.integers(1, 17)))
    sizes = rng.integers(1, 21, size=v)
    W = np.zeros(v * d, dtype=np.int64)
    W_num = np.zeros(v, dtype=np.int64)
    sums = np.zeros((v, d), dtype=np.int64)
    for g in range(v):
        for _ in range(sizes[g]):
            x = rng.integers(-1000, 1001, size=d)
            W += map_up(s.vector(g), x)
            W_num += s.vector(g)
            sums[g] += x
    for g in range(v):
        assert np.array_equal(map_down(s.vector(g), W), s.mu * sums[g])
        assert recover_count(s.vector(g), W_num, s.mu) == sizes[g]


@given(st.lists(st.integers(-10**4, 10**4), min_size=1, max_size=20), st.integers(-9, 9), st.integers(-9, 9))
def test_map_up_linear_and_annihilating(xs, a, b):
    s = make_two_group_scheme(2, 5)
    x = np.array(xs)
    y = x[::-1].copy()
    nu = s.vector(0)
    assert np.array_equal(map_up(nu, a * x + b * y), a * map_up(nu, x) + b * map_up(nu, y))
    assert not map_down(s.vector(1), map_up(nu, x)).any()
    assert np.array_equal(map_down(nu, map_up(nu, x)), s.mu * x)


def test_fuse_examples():
    own, other = np.array([1.0, 3.0]), np.array([3.0, 1.0])
    assert np.array_equal(fuse_groups(own, other, 0), own)
    assert np.array_equal(fuse_groups(own, other, 0.5), [2.0, 2.0])
    assert np.allclose(fuse_groups(own, other, 0.25), [1.5, 2.5])
    with pytest.raises(ValueError):
        fuse_groups(own, other, 1.0)


@given(st.floats(0.01, 0.99), st.lists(st.floats(-5, 5), min_size=3, max_size=3),
       st.lists(st.floats(-5, 5), min_size=3, max_size=3))
def test_fuse_symmetry(gamma, a, b):
    a, b = np.array(a), np.array(b)
    assert np.allclose(fuse_groups(a, b, gamma), fuse_groups(b, a, 1 - gamma), atol=1e-12)
