import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from gibbslab import reference
from gibbslab.lattice import CubeShape, Pattern, cube, nested_order
from gibbslab.patterns import (PatternError, ResolutionError, TimeRecord, clopper_pearson, count_occurrences,
                               estimate_un, exact_f, good_fraction, is_good, match_map_bitpacked,
                               match_map_naive, matching_time, max_overlap, nested_matching_time,
                               occurrence_time, pth_occurrence_times, return_time, waiting_time)
from gibbslab.seeding import rng_for

from conftest import random_spins

small_windows = arrays(np.int8, st.tuples(st.integers(2, 12), st.integers(2, 12)),
                       elements=st.sampled_from([-1, 1]))


def naive_count(block, W_rows, W_cols, sigma):
    b0, b1 = block.shape
    c = 0
    for i in range(W_rows[0], W_rows[1] - b0 + 2):
        for j in range(W_cols[0], W_cols[1] - b1 + 2):
            ok = True
            for a in range(b0):
                for b in range(b1):
                    if sigma[i + a, j + b] != block[a, b]:
                        ok = False
            c += ok
    return c


def naive_time(block, sigma, rank=1, cap=None):
    """Scan cubes C_k in order and count placements inside each one."""
    cap = min(sigma.shape) - 1 if cap is None else cap
    for k in range(cap + 1):
        if naive_count(block, (0, k), (0, k), sigma) >= rank:
            return (k + 1) ** 2, False
    return (cap + 1) ** 2, True


def test_count_examples(rng):
    single = Pattern.from_array([[1]])
    assert count_occurrences(single, cube(4), np.ones((5, 5))) == 25
    s = random_spins(rng, (6, 6))
    A = Pattern.from_array(s[:3, :3])
    assert count_occurrences(A, cube(2), s) >= 1
    for _ in range(50):
        s = random_spins(rng, (6, 6))
        block = random_spins(rng, (2, 2))
        assert count_occurrences(Pattern.from_array(block), cube(5), s) == naive_count(block, (0, 5), (0, 5), s)


def test_count_window_outside():
    with pytest.raises(PatternError):
        count_occurrences(Pattern.from_array([[1]]), cube(6), np.ones((5, 5)))


def test_scanner_equivalence_ten_thousand(rng):
    for _ in range(10_000):
        rows, cols = rng.integers(1, 12, size=2)
        s = random_spins(rng, (rows + 3, cols + 70 * int(rng.integers(0, 2))))
        br, bc = rng.integers(1, 4, size=2)
        block = random_spins(rng, (br, bc))
        if rng.random() < 0.5:
            block = s[:br, :bc].copy() if br <= s.shape[0] and bc <= s.shape[1] else block
        A = Pattern.from_array(block)
        assert np.array_equal(match_map_bitpacked(A, s), match_map_naive(A, s))


def test_wide_pattern_spans_words(rng):
    s = random_spins(rng, (4, 200))
    A = Pattern.from_array(s[1:3, 30:130])
    m = match_map_bitpacked(A, s)
    assert m[1, 30]
    assert np.array_equal(m, match_map_naive(A, s))


def test_occurrence_examples(rng):
    s = random_spins(rng, (10, 10))
    A = Pattern.from_array(s[:3, :3])
    rec = occurrence_time(A, s)
    assert rec.value == 9 and not rec.censored
    absent = occurrence_time(Pattern.from_array(-np.ones((2, 2))), np.ones((8, 8)))
    assert absent.censored and absent.value == absent.window_cap == 64


def test_occurrence_matches_naive_rescan():
    for seed in range(5):
        s = random_spins(rng_for(seed, "fixture"), (64, 64))
        block = random_spins(rng_for(seed, "block"), (4, 4))
        # plant one copy so the record is usually uncensored
        s[40:44, 23:27] = block
        rec = occurrence_time(Pattern.from_array(block), s)
        assert (rec.value, rec.censored) == naive_time(block, s)


@given(small_windows, st.integers(1, 2))
def test_uncensored_occurrence_at_least_pattern_volume(s, n):
    block = np.ones((n + 1, n + 1), dtype=np.int8)
    rec = occurrence_time(Pattern.from_array(block), s)
    if not rec.censored:
        assert rec.value >= (n + 1) ** 2
    else:
        assert rec.value == rec.window_cap


def test_return_examples():
    rec = return_time(Pattern.from_array(np.ones((2, 2))), np.ones((6, 6)))
    assert rec.value == 9
    with pytest.raises(PatternError):
        return_time(Pattern.from_array(-np.ones((2, 2))), np.ones((6, 6)))


def test_return_censored_for_unique_good_pattern(rng):
    block = np.array([[1, -1, -1], [-1, -1, 1], [1, 1, 1]])
    s = np.ones((12, 12), dtype=np.int8)
    s[:3, :3] = block
    assert is_good(Pattern.from_array(block)).is_good
    assert return_time(Pattern.from_array(block), s).censored


def test_return_of_good_patterns_is_far(rng):
    for _ in range(300):
        n = int(rng.integers(2, 5))
        s = random_spins(rng, (20, 20))
        A = Pattern.from_array(s[:n + 1, :n + 1])
        if not is_good(A).is_good:
            continue
        rec = return_time(A, s)
        if not rec.censored:
            assert rec.value >= (n / 2 + 1) ** 2


def test_waiting_examples(rng):
    s = random_spins(rng, (12, 12))
    assert waiting_time(s, s, 3).value == 16
    assert waiting_time(-np.ones((12, 12)), np.ones((12, 12)), 2).censored


def test_matching_examples(rng):
    s = random_spins(rng, (12, 12))
    assert matching_time(s, s, 2).value == 9
    assert matching_time(s, -s, 2).censored


def test_waiting_zero_beta_matches_coin_oracle():
    n, side, reps = 1, 40, 3000
    ours = []
    for r in range(reps):
        rng = rng_for(11, "wait-test", r)
        eta = reference.coins(rng, (n + 1, n + 1))
        sigma = reference.coins(rng, (side, side))
        rec = waiting_time(eta, sigma, n)
        ours.append(np.inf if rec.censored else rec.value)
    ref = reference.waiting_sample(n, side, reps, seed=12)
    assert reference.ks_discrete(ours, ref) < 1.63 * math.sqrt(2 / reps)


def test_matching_zero_beta_ks():
    n, side, reps = 1, 24, 10_000
    ours = []
    for r in range(reps):
        rng = rng_for(21, "match-test", r)
        a, b = reference.coins(rng, (side, side)), reference.coins(rng, (side, side))
        rec = matching_time(a, b, n)
        ours.append(np.inf if rec.censored else rec.value)
    ref = reference.matching_sample(n, side, 4 * reps, seed=22)
    assert reference.ks_discrete(ours, ref) <= 0.02


def test_overlap_examples(rng):
    s = random_spins(rng, (8, 8))
    assert max_overlap(s, s, 36).value == 36
    assert max_overlap(s, -s, 36).value == 0


def test_overlap_matches_exhaustive(rng):
    for _ in range(60):
        s = random_spins(rng, (6, 6))
        t = np.where(rng.random((6, 6)) < 0.8, s, -s)
        agree = s == t
        assert max_overlap(s, t, 36).value == reference.overlap_value(agree, 36)


def test_duality_overlap_and_nested_matching(rng):
    for _ in range(1000):
        n = int(rng.integers(2, 26))
        s = random_spins(rng, (5, 5))
        t = np.where(rng.random((5, 5)) < 0.75, s, -s)
        m = max_overlap(s, t, n).value
        k = int(rng.integers(1, n + 1))
        tau = nested_matching_time(s, t, k, n_max=25)
        assert (m >= k) == (tau is not None and tau <= n)


def test_goodness_examples():
    rep = is_good(Pattern.from_array(np.ones((5, 5))))
    assert not rep.is_good and rep.witness == (1, 0)
    for bits in itertools.product((1, -1), repeat=9):
        assert is_good(Pattern.from_array(np.array(bits).reshape(3, 3))).is_good
    with pytest.raises(PatternError):
        is_good(Pattern.from_array(np.ones((2, 3))))


def brute_good(arr):
    n = arr.shape[0] - 1
    for x in itertools.product(range(-n, n + 1), repeat=2):
        if x == (0, 0) or max(abs(x[0]), abs(x[1])) >= n / 2:
            continue
        compatible = True
        for i in range(n + 1):
            for j in range(n + 1):
                a, b = i + x[0], j + x[1]
                if 0 <= a <= n and 0 <= b <= n and arr[a, b] != arr[i, j]:
                    compatible = False
        if compatible:
            return False
    return True


def test_goodness_exhaustive_on_four_by_four():
    for code in range(2 ** 16):
        arr = np.array([1 if (code >> i) & 1 else -1 for i in range(16)]).reshape(4, 4)
        rep = is_good(Pattern.from_array(arr))
        if code % 97 == 0 or not rep.is_good:
            assert rep.is_good == brute_good(arr)
        if not rep.is_good:
            x = rep.witness
            assert 0 < max(abs(x[0]), abs(x[1])) < 3 / 2


def test_checkerboard_with_defect():
    arr = np.indices((5, 5)).sum(axis=0) % 2 * 2 - 1
    arr[2, 2] *= -1
    assert is_good(Pattern.from_array(arr)).is_good == brute_good(arr)
    assert not is_good(Pattern.from_array(np.indices((5, 5)).sum(axis=0) % 2 * 2 - 1)).is_good


def test_good_fraction_examples():
    assert good_fraction(2, 1.0, 10).fraction == 1.0
    est = good_fraction(4, 0.0, 2000, seed=3)
    rng = rng_for(4, "iid-good")
    hits = sum(is_good(Pattern.from_array(reference.coins(rng, (5, 5)))).is_good for _ in range(20000))
    lo, hi = est.ci
    assert lo - 0.01 <= hits / 20000 <= hi + 0.01


def test_pth_examples(rng):
    recs, inc = pth_occurrence_times(Pattern.from_array([[1]]), np.ones((6, 6)), 10)
    expected = [min((k + 1) ** 2 for k in range(6) if (k + 1) ** 2 >= p) for p in range(1, 11)]
    assert [r.value for r in recs] == expected
    assert inc[0] == expected[0]
    assert all(i >= 0 for i in inc if i is not None)
    for _ in range(100):
        s = random_spins(rng, (10, 10))
        A = Pattern.from_array(random_spins(rng, (2, 2)))
        first = pth_occurrence_times(A, s, 1)[0][0]
        occ = occurrence_time(A, s)
        assert (first.value, first.censored) == (occ.value, occ.censored)


def test_pth_consistent_with_counts(rng):
    for _ in range(30):
        s = random_spins(rng, (9, 9))
        A = Pattern.from_array(random_spins(rng, (2, 2)))
        recs, _ = pth_occurrence_times(A, s, 6)
        values = [r.value for r in recs]
        assert values == sorted(values)
        for k in range(1, 9):
            N = count_occurrences(A, cube(k), s)
            for p, r in enumerate(recs, start=1):
                assert (not r.censored and r.value <= (k + 1) ** 2) == (N >= p)


def test_count_and_return_threshold(rng):
    for _ in range(100):
        s = random_spins(rng, (10, 10))
        A = Pattern.from_array(s[:2, :2])
        rec = return_time(A, s)
        for k in range(1, 10):
            crossed = not rec.censored and rec.value <= (k + 1) ** 2
            assert crossed == (count_occurrences(A, cube(k), s) >= 2)


def test_un_at_zero_beta():
    est = estimate_un(1000, 0.0, method="exact", k_max=40)
    n = np.arange(1, 1001)
    assert np.array_equal(est.u, np.floor(np.log2(n)).astype(int))
    assert est.u[0] == 0
    assert np.all(np.diff(est.u) >= 0)
    assert np.all(est.checks >= 1)


def test_exact_f_zero_beta():
    assert np.allclose(exact_f(10, 0.0), 2.0 ** -np.arange(11))


def test_un_resolution_error():
    with pytest.raises(ResolutionError):
        estimate_un(1000, 1.0, samples=100)
    with pytest.raises(ResolutionError):
        estimate_un(10 ** 6, 0.0, method="exact", k_max=10)


def test_un_mc_matches_exact_small_k():
    # at beta = 1 the agreement probability stays near one for k <= 12, so the
    # comparison is on f(k) itself; u_n for n <= 1000 lies beyond k = 12
    samples = 4000
    mc = estimate_un(1, 1.0, samples=samples, seed=5, k_max=12, burn_in=150)
    ex = exact_f(12, 1.0)
    se = np.sqrt(ex * (1 - ex) / samples)
    assert np.all(np.abs(mc.f - ex) <= 4 * se + 1e-12)
    with pytest.raises(ResolutionError):
        estimate_un(1000, 1.0, method="exact", k_max=12)


def test_clopper_pearson_edges():
    assert clopper_pearson(0, 10)[0] == 0.0
    assert clopper_pearson(10, 10)[1] == 1.0
    lo, hi = clopper_pearson(5, 10)
    assert lo < 0.5 < hi


def test_time_record_json_round_trip():
    r = TimeRecord("pth", 49, False, 100, 0.01, 3, 7, p=2)
    assert TimeRecord.from_json(r.to_json()) == r
    with pytest.raises(PatternError):
        TimeRecord("nonsense", 1, False, 1)
