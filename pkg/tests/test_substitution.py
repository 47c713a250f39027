import numpy as np
import pytest

from subtiling import (ConfigError, LengthCapError, accordion_decompose,
                       apply, fixed_point_seeds, fixture_path, in_language,
                       iterate, load_substitution, orbit_generate,
                       population_vector, power, substitution_matrix,
                       word_from_str, word_to_str)
from subtiling.substitution import parse_substitution

from conftest import rng

CANTOR_M = np.array([[3, 1], [0, 2]])


# ---- parsing ----

def test_load_cantor(cantor):
    assert cantor.letters == ("0", "1")
    assert cantor.dim == 1
    assert word_to_str(cantor, cantor.image(0)) == "000"
    assert word_to_str(cantor, cantor.image(1)) == "101"


def test_parse_rejects_empty_image():
    with pytest.raises(ConfigError):
        parse_substitution('{"alphabet": ["a"], "dim": 1, "rules": {"a": ""}}')


def test_parse_rejects_unknown_letter_in_rule():
    with pytest.raises(ConfigError):
        parse_substitution('{"alphabet": ["a"], "dim": 1, "rules": {"a": "ab"}}')


def test_word_roundtrip(cantor):
    w = word_from_str(cantor, "101000101")
    assert word_to_str(cantor, w) == "101000101"


# ---- apply / iterate ----

def test_apply_concatenates(cantor):
    out = apply(cantor, word_from_str(cantor, "10"))
    assert word_to_str(cantor, out) == "101000"


def test_apply_empty(cantor):
    assert len(apply(cantor, word_from_str(cantor, ""))) == 0


def test_iterate_square(cantor):
    assert word_to_str(cantor, iterate(cantor, 1, 2)) == "101000101"


def test_iterate_identity(cantor):
    assert word_to_str(cantor, iterate(cantor, 0, 0)) == "0"


def test_iterate_counts(cantor):
    w = iterate(cantor, 1, 10)
    assert len(w) == 3 ** 10
    assert int((w == 1).sum()) == 2 ** 10


def test_iterate_cap_reports_predicted_length(cantor):
    with pytest.raises(LengthCapError, match=str(3 ** 20)):
        iterate(cantor, 0, 20)


# ---- population vectors and the matrix ----

def test_population_vector(cantor):
    ell = population_vector(cantor, word_from_str(cantor, "101000101"))
    assert ell.tolist() == [5, 4]
    assert population_vector(cantor, word_from_str(cantor, "")).tolist() == [0, 0]


def test_population_transport(cantor):
    M = substitution_matrix(cantor)
    g = rng(61)
    for _ in range(1000):
        w = g.integers(0, 2, size=g.integers(1, 40)).astype(np.uint8)
        lhs = population_vector(cantor, apply(cantor, w))
        assert np.array_equal(lhs, M @ population_vector(cantor, w))


def test_substitution_matrices(subs):
    assert np.array_equal(substitution_matrix(subs["cantor"]), CANTOR_M)
    assert np.array_equal(substitution_matrix(subs["carpet"]),
                          [[9, 1], [0, 8]])
    assert np.array_equal(substitution_matrix(subs["sigma2"]),
                          [[9, 1], [0, 8]])


def test_matrix_power_homomorphism(subs):
    for sub in subs.values():
        M = substitution_matrix(sub)
        for k in range(1, 6):
            assert np.array_equal(substitution_matrix(power(sub, k)),
                                  np.linalg.matrix_power(M, k))


# ---- language membership ----

def test_in_language_no_double_one(cantor):
    ok, witness = in_language(cantor, word_from_str(cantor, "11"), max_depth=8)
    assert not ok and witness is None


def test_in_language_short_witness(cantor):
    ok, witness = in_language(cantor, word_from_str(cantor, "10"))
    assert ok and witness == (1, 1)


def test_in_language_000101(cantor):
    ok, witness = in_language(cantor, word_from_str(cantor, "000101"))
    assert ok and witness == (1, 2)


def test_in_language_monotone_and_subword_closed(cantor):
    w = word_from_str(cantor, "000101")
    ok2, _ = in_language(cantor, w, max_depth=2)
    ok8, _ = in_language(cantor, w, max_depth=8)
    assert ok2 and ok8
    for i in range(len(w)):
        for j in range(i + 1, len(w) + 1):
            ok, _ = in_language(cantor, w[i:j], max_depth=2)
            assert ok


# ---- seeds and orbits ----

def test_fixed_point_seeds_cantor(cantor):
    seeds = fixed_point_seeds(cantor)
    assert (0, 1) in seeds
    assert (1, 1) not in seeds


def test_fixed_point_seeds_1001(cantor1001):
    seeds = fixed_point_seeds(cantor1001)
    for pair in [(0, 1), (1, 0), (0, 0)]:
        assert pair in seeds


def test_orbit_right_block(cantor):
    x = orbit_generate(cantor, (0, 1), 2)
    assert word_to_str(cantor, x.right) == "101000101"
    assert x[0] == 1 and x[-1] == 0


def test_orbit_nesting(cantor):
    prev = orbit_generate(cantor, (0, 1), 0)
    for n in range(1, 11):
        cur = orbit_generate(cantor, (0, 1), n)
        assert np.array_equal(cur.right[: len(prev.right)], prev.right)
        assert np.array_equal(cur.left[-len(prev.left):], prev.left)
        assert int((cur.right == 1).sum()) == 2 ** n
        prev = cur


def test_two_sided_slice(cantor):
    x = orbit_generate(cantor, (0, 1), 2)
    assert word_to_str(cantor, x.slice(-2, 3)) == "00101"
    with pytest.raises(ValueError):
        x.slice(1, 4)


# ---- accordion decomposition ----

def test_accordion_supertile(cantor):
    w = iterate(cantor, 1, 2)
    form = accordion_decompose(cantor, w)
    assert form.m == 2
    assert word_to_str(cantor, form.u[2]) == "1"
    assert all(len(p) == 0 for p in form.u[:2] + form.v)
    assert np.array_equal(form.reconstruct(cantor), w)


def test_accordion_tiny_window(cantor):
    w = word_from_str(cantor, "01")
    form = accordion_decompose(cantor, w)
    assert form.m <= 1
    assert np.array_equal(form.reconstruct(cantor), w)


def test_accordion_random_windows(cantor):
    big = iterate(cantor, 1, 12)
    g = rng(7)
    for _ in range(1000):
        n = int(g.integers(1, 400))
        i = int(g.integers(0, len(big) - n))
        w = big[i:i + n]
        form = accordion_decompose(cantor, w)
        assert np.array_equal(form.reconstruct(cantor), w)
        cap = cantor.max_rule_len
        assert all(len(p) <= cap for p in form.pieces())
