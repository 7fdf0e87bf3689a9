import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from enhance.errors import DegenerateInput, InvalidValue, ShapeMismatch
from enhance.rankcore import (
    argsort,
    count_inversions,
    kendall_tau,
    kendall_tau_sampled,
    tied_ranks,
)
from oracles import inversions_bruteforce, tau_a_bruteforce, tau_b_bruteforce, tied_ranks_bruteforce

small_ints = st.lists(st.integers(-5, 5), min_size=0, max_size=60)


@pytest.mark.parametrize(
    "values, expected",
    [([30, 10, 20], [1, 2, 0]), ([1, 2, 3], [0, 1, 2]), ([2, 1, 1], [1, 2, 0]), ([], [])],
)
def test_argsort_examples(values, expected):
    assert argsort(values).tolist() == expected


@pytest.mark.parametrize(
    "values, expected",
    [
        ([10, 20, 30], [1, 2, 3]),
        ([3, 1, 1, 2], [4, 1.5, 1.5, 3]),
        ([5, 5, 5, 5], [2.5, 2.5, 2.5, 2.5]),
    ],
)
def test_tied_ranks_examples(values, expected):
    assert tied_ranks(values).tolist() == expected


@pytest.mark.parametrize("bad", [[1.0, math.nan], [math.inf, 0.0], [-math.inf]])
def test_non_finite_rejected(bad):
    with pytest.raises(InvalidValue):
        argsort(bad)
    with pytest.raises(InvalidValue):
        tied_ranks(bad)


@given(small_ints)
def test_tied_ranks_match_bruteforce(values):
    r = tied_ranks(values)
    assert r.tolist() == tied_ranks_bruteforce(values)
    n = len(values)
    assert r.sum() == n * (n + 1) / 2
    if n:
        assert r.min() >= 1 and r.max() <= n
        assert np.all((2 * r) == np.round(2 * r))


@given(st.lists(st.integers(-1000, 1000), max_size=50))
def test_tied_ranks_invariant_under_increasing_map(values):
    v = np.asarray(values, dtype=np.float64)
    g = v**3 + np.cbrt(v)  # strictly increasing, no collisions on this range
    assert np.array_equal(tied_ranks(g), tied_ranks(v))


@given(small_ints)
def test_argsort_stable_and_sorted(values):
    order = argsort(values)
    v = np.asarray(values)
    assert np.all(np.diff(v[order]) >= 0)
    for k in range(len(order) - 1):
        if v[order[k]] == v[order[k + 1]]:
            assert order[k] < order[k + 1]
    assert np.array_equal(order, argsort(values))


@settings(deadline=None)
@given(st.lists(st.integers(-20, 20), max_size=80))
def test_count_inversions(values):
    assert count_inversions(np.asarray(values)) == inversions_bruteforce(values)


def test_kendall_examples():
    assert kendall_tau([1, 2, 3], [1, 2, 3]) == 1.0
    assert kendall_tau([1, 2, 3], [3, 2, 1]) == -1.0
    assert kendall_tau([1, 1, 2], [1, 2, 2]) == pytest.approx(0.5, abs=1e-15)


def test_kendall_errors():
    with pytest.raises(ShapeMismatch):
        kendall_tau([1, 2, 3], [1, 2])
    with pytest.raises(DegenerateInput):
        kendall_tau([1, 1, 1], [1, 2, 3])
    with pytest.raises(DegenerateInput):
        kendall_tau([1, 2, 3], [4, 4, 4])
    with pytest.raises(DegenerateInput):
        kendall_tau([1], [2])
    with pytest.raises(InvalidValue):
        kendall_tau([1, math.nan], [1, 2])


pairs = st.integers(2, 120).flatmap(
    lambda n: st.tuples(
        st.lists(st.integers(0, 6), min_size=n, max_size=n),
        st.lists(st.integers(0, 6), min_size=n, max_size=n),
    )
)


@settings(max_examples=200)
@given(pairs)
def test_kendall_matches_bruteforce(ab):
    a, b = ab
    if len(set(a)) < 2 or len(set(b)) < 2:
        return
    tau = kendall_tau(a, b)
    assert abs(tau - tau_b_bruteforce(a, b)) <= 1e-12
    assert tau == kendall_tau(b, a)
    assert -1 <= tau <= 1


@given(st.lists(st.integers(0, 9), min_size=2, max_size=60))
def test_kendall_self_is_one(a):
    if len(set(a)) < 2:
        return
    assert kendall_tau(a, a) == pytest.approx(1.0, abs=1e-15)


def test_sampled_identical_vectors():
    a = np.arange(500, dtype=float)
    np.random.default_rng(0).shuffle(a)
    est, se = kendall_tau_sampled(a, a, 1000, seed=123)
    assert est == 1.0 and se == 0.0


def test_sampled_reversed():
    a = np.arange(1, 1001, dtype=float)
    est, se = kendall_tau_sampled(a, a[::-1], 500, seed=7)
    assert est == -1.0 and se == 0.0


def test_sampled_within_three_standard_errors():
    rng = np.random.default_rng(42)
    a = rng.integers(0, 30, size=200).astype(float)
    b = a + rng.normal(0, 8, size=200)
    exact = tau_a_bruteforce(a.tolist(), b.tolist())
    est, se = kendall_tau_sampled(a, b, 100_000, seed=42)
    assert se > 0
    assert abs(est - exact) <= 3 * se


def test_sampled_deterministic_and_seed_sensitive():
    rng = np.random.default_rng(1)
    a, b = rng.random(300), rng.random(300)
    assert kendall_tau_sampled(a, b, 2000, 5) == kendall_tau_sampled(a, b, 2000, 5)
    assert kendall_tau_sampled(a, b, 2000, 5) != kendall_tau_sampled(a, b, 2000, 6)
    # negative seeds are folded into the unsigned 64-bit range
    assert kendall_tau_sampled(a, b, 10, -1) == kendall_tau_sampled(a, b, 10, 2**64 - 1)


def test_sampled_errors():
    with pytest.raises(ValueError):
        kendall_tau_sampled([1, 2], [1, 2], 0, 1)
    with pytest.raises(DegenerateInput):
        kendall_tau_sampled([3, 3], [1, 2], 10, 1)


def test_kendall_large_input_fast():
    rng = np.random.default_rng(3)
    a = rng.integers(0, 256, size=1 << 20).astype(float)
    b = a + rng.normal(0, 20, size=a.size)
    tau = kendall_tau(a, b)
    assert 0.5 < tau < 1.0
