import math

import numpy as np
import pytest

from dpmask.tensorops import SeededRng, clamp01, l2_norm, linf_distance, sign, tensor


def test_l2_norm_triangle():
    assert l2_norm(tensor([3.0, 4.0])) == pytest.approx(5.0)


def test_l2_norm_zero():
    assert l2_norm(np.zeros(17)) == 0.0


def test_l2_norm_empty_errors():
    with pytest.raises(ValueError):
        l2_norm(np.zeros(0))


def test_l2_norm_matches_scalar_loop():
    vals = np.random.default_rng(3).normal(size=100)
    expected = math.sqrt(sum(float(v) ** 2 for v in vals))
    assert l2_norm(vals) == pytest.approx(expected, rel=1e-12)


def test_l2_norm_scaling_property():
    gen = np.random.default_rng(5)
    for _ in range(20):
        t = gen.normal(size=17)
        c = float(gen.normal())
        assert l2_norm(c * t) == pytest.approx(abs(c) * l2_norm(t), rel=1e-12)


def test_linf_distance_identical():
    t = np.arange(6.0).reshape(2, 3)
    assert linf_distance(t, t) == 0.0


def test_linf_distance_example():
    assert linf_distance(np.array([0.0, 0.0]), np.array([0.3, -0.1])) == pytest.approx(0.3)


def test_linf_distance_shape_mismatch():
    with pytest.raises(ValueError):
        linf_distance(np.zeros(3), np.zeros(4))


def test_linf_distance_matches_scalar_loop_and_symmetry():
    gen = np.random.default_rng(9)
    for _ in range(20):
        a, b = gen.normal(size=(2, 40))
        expected = max(abs(float(x) - float(y)) for x, y in zip(a, b))
        assert linf_distance(a, b) == pytest.approx(expected, rel=1e-12)
        assert linf_distance(a, b) == linf_distance(b, a)
        assert linf_distance(a, b) >= 0
    a = gen.normal(size=8)
    assert linf_distance(a, a.copy()) == 0.0


def test_sign_examples():
    np.testing.assert_array_equal(sign(np.array([-2.5, 0.0, 7.0])), [-1.0, 0.0, 1.0])
    np.testing.assert_array_equal(sign(-np.ones(5)), -np.ones(5))


def test_sign_matches_scalar():
    vals = np.random.default_rng(11).normal(size=50)
    expected = [(-1.0 if v < 0 else (1.0 if v > 0 else 0.0)) for v in vals]
    np.testing.assert_array_equal(sign(vals), expected)


def test_clamp01_examples():
    np.testing.assert_allclose(clamp01(np.array([-0.2, 0.5, 1.7])), [0.0, 0.5, 1.0])
    inside = np.array([0.0, 0.25, 1.0])
    np.testing.assert_array_equal(clamp01(inside), inside)


def test_clamp01_matches_scalar():
    vals = np.random.default_rng(13).normal(size=60)
    expected = [min(max(float(v), 0.0), 1.0) for v in vals]
    np.testing.assert_allclose(clamp01(vals), expected)


class TestSeededRng:
    def test_gaussian_zero_stddev(self):
        out = SeededRng(1).gaussian((5,), mean=2.5, stddev=0.0)
        np.testing.assert_array_equal(out, np.full(5, 2.5))

    def test_gaussian_negative_stddev_errors(self):
        with pytest.raises(ValueError):
            SeededRng(1).gaussian((3,), 0.0, -1.0)

    def test_gaussian_moments(self):
        out = SeededRng(42).gaussian((100_000,), mean=0.0, stddev=2.0)
        assert abs(out.mean()) < 0.05
        assert abs(out.var() - 4.0) < 0.2

    def test_gaussian_deterministic(self):
        a = SeededRng(7).gaussian((100,), 0.0, 1.0)
        b = SeededRng(7).gaussian((100,), 0.0, 1.0)
        np.testing.assert_array_equal(a, b)

    def test_uniform_degenerate(self):
        np.testing.assert_array_equal(SeededRng(1).uniform((4,), 0.5, 0.5), np.full(4, 0.5))

    def test_uniform_reversed_bounds_errors(self):
        with pytest.raises(ValueError):
            SeededRng(1).uniform((3,), 1.0, 0.0)

    def test_uniform_mean(self):
        out = SeededRng(3).uniform((100_000,), 0.0, 1.0)
        assert abs(out.mean() - 0.5) < 0.01
        assert out.min() >= 0.0 and out.max() < 1.0

    def test_uniform_deterministic(self):
        np.testing.assert_array_equal(
            SeededRng(9).uniform((50,), -1, 1), SeededRng(9).uniform((50,), -1, 1)
        )

    def test_different_seeds_differ(self):
        a = SeededRng(1).uniform((1000,))
        b = SeededRng(2).uniform((1000,))
        assert not np.array_equal(a, b)

    def test_forked_streams_independent_and_deterministic(self):
        parent = SeededRng(5)
        child_a = parent.fork(0).gaussian((1000,))
        child_b = parent.fork(1).gaussian((1000,))
        assert not np.array_equal(child_a, child_b)
        np.testing.assert_array_equal(child_a, SeededRng(5).fork(0).gaussian((1000,)))
