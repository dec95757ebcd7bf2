import numpy as np
import pytest

from stfbnn.rng import Prng


def test_same_seed_same_stream():
    a = Prng(42).gaussian((64,))
    b = Prng(42).gaussian((64,))
    np.testing.assert_array_equal(a, b)


def test_different_seeds_differ():
    a = Prng(1).raw(32)
    b = Prng(2).raw(32)
    assert np.any(a != b)


def test_sequential_draws_advance():
    prng = Prng(5)
    a = prng.uniform((16,))
    b = prng.uniform((16,))
    assert np.any(a != b)


def test_raw_is_uint64():
    out = Prng(0).raw(8)
    assert out.dtype == np.uint64


@pytest.mark.parametrize("seed", range(5))
def test_uniform_range(seed):
    u = Prng(seed).uniform((4096,))
    assert u.min() >= 0.0
    assert u.max() < 1.0


@pytest.mark.parametrize("seed", range(3))
def test_gaussian_moments(seed):
    g = Prng(seed).gaussian((200000,))
    assert abs(g.mean()) < 0.01
    assert abs(g.std() - 1.0) < 0.01


def test_gaussian_mean_std_args():
    g = Prng(9).gaussian((100000,), mean=3.0, std=0.5)
    assert abs(g.mean() - 3.0) < 0.02
    assert abs(g.std() - 0.5) < 0.02


@pytest.mark.parametrize("seed", range(4))
def test_integers_bounds(seed):
    v = Prng(seed).integers(2000, -3, 7)
    assert v.min() >= -3
    assert v.max() < 7
    # every value in a modest range should appear at this sample size
    assert set(np.unique(v)) == set(range(-3, 7))


def test_permutation_is_permutation():
    p = Prng(11).permutation(257)
    assert sorted(p.tolist()) == list(range(257))


def test_permutation_shuffles():
    p = Prng(11).permutation(257)
    assert p.tolist() != list(range(257))


def test_spawn_streams_are_stable():
    a = Prng(4).spawn(17).uniform((32,))
    b = Prng(4).spawn(17).uniform((32,))
    np.testing.assert_array_equal(a, b)


def test_spawn_streams_are_independent():
    root = Prng(4)
    a = root.spawn(1).uniform((32,))
    b = root.spawn(2).uniform((32,))
    assert np.any(a != b)


def test_spawn_does_not_consume_parent_state():
    one = Prng(8)
    one.spawn(3)
    direct = Prng(8)
    np.testing.assert_array_equal(one.uniform((16,)), direct.uniform((16,)))


def test_gaussian_shape_tuple():
    assert Prng(0).gaussian((3, 5)).shape == (3, 5)
    assert Prng(0).uniform((2, 2, 2)).shape == (2, 2, 2)
