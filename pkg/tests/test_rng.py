import numpy as np

from bladeinv.rng import INIT, LIKELIHOOD, Streams, as_generator, as_streams


def test_same_key_same_numbers():
    a = Streams(7).generator(LIKELIHOOD, 3).standard_normal(5)
    b = Streams(7).child(LIKELIHOOD).generator(3).standard_normal(5)
    np.testing.assert_array_equal(a, b)


def test_keys_are_independent_of_consumption_order():
    s = Streams(1)
    first = s.generator(INIT).standard_normal(3)
    s.generator(LIKELIHOOD, 0).standard_normal(1000)
    np.testing.assert_array_equal(first, s.generator(INIT).standard_normal(3))


def test_distinct_keys_and_seeds_differ():
    s = Streams(1)
    assert not np.array_equal(s.generator(0).random(4), s.generator(1).random(4))
    assert not np.array_equal(Streams(1).generator(0).random(4), Streams(2).generator(0).random(4))


def test_coercions():
    assert as_streams(5).seed == 5
    s = Streams(3)
    assert as_streams(s) is s
    g = np.random.default_rng(0)
    assert as_generator(g) is g
    np.testing.assert_array_equal(as_generator(Streams(3)).random(2), Streams(3).generator().random(2))
