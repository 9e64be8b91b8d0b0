import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from gibbslab.lattice import cube
from gibbslab.percolation import (CouplingSample, PercolationError, cluster_reach, connection_counts,
                                  decay_fit_from_counts, decay_table, disagreement_path_exists,
                                  exact_marginal_gap, fit_decay, verify_disa_inequality)
from gibbslab.seeding import rng_for

from conftest import random_spins

masks = arrays(bool, (5, 5))


def dfs_path(mask, W):
    """Depth-first search for a disagreeing path from W to the volume edge."""
    rows, cols = mask.shape
    stack = [s for s in W if mask[s]]
    seen = set(stack)
    while stack:
        r, c = stack.pop()
        if r in (0, rows - 1) or c in (0, cols - 1):
            return True
        for nr, nc in ((r + 1, c), (r - 1, c), (r, c + 1), (r, c - 1)):
            if 0 <= nr < rows and 0 <= nc < cols and mask[nr, nc] and (nr, nc) not in seen:
                seen.add((nr, nc))
                stack.append((nr, nc))
    return False


def test_path_examples(rng):
    s = random_spins(rng, (6, 6))
    W = {(2, 2)}
    assert not disagreement_path_exists(CouplingSample(s, s), W)
    assert disagreement_path_exists(CouplingSample(s, -s), W)
    island = np.zeros((5, 5), dtype=bool)
    island[1:4, 1:4] = True
    assert not disagreement_path_exists(island, {(2, 2)})
    island[3, 4] = True
    assert disagreement_path_exists(island, {(2, 2)})


def test_mask_definition(rng):
    a, b = random_spins(rng, (7, 7)), random_spins(rng, (7, 7))
    assert np.array_equal(CouplingSample(a, b).mask, a != b)
    with pytest.raises(PercolationError):
        CouplingSample(a, b[:3])


@given(masks, st.integers(0, 4), st.integers(0, 4))
def test_path_matches_exhaustive_search(mask, r, c):
    assert disagreement_path_exists(mask, {(r, c)}) == dfs_path(mask, [(r, c)])


@given(masks, arrays(bool, (5, 5)))
def test_path_monotone_in_mask(mask, extra):
    W = {(2, 2)}
    if disagreement_path_exists(mask, W):
        assert disagreement_path_exists(mask | extra, W)


def test_w_outside_volume():
    with pytest.raises(PercolationError):
        disagreement_path_exists(np.ones((4, 4), bool), {(4, 1)})
    with pytest.raises(PercolationError):
        disagreement_path_exists(np.ones((4, 4), bool), cube(2, offset=(2, 2)))


def test_inequality_trivial_cases():
    assert exact_marginal_gap((3, 3), {(1, 1)}, 0.8, "plus", "plus") == 0.0
    assert exact_marginal_gap((3, 3), {(1, 1)}, 0.0, "plus", "minus") < 1e-15
    rep = verify_disa_inequality((3, 3), {(1, 1)}, 0.8, "plus", "plus", replicas=10)
    assert rep.extras["lhs"] == 0.0 and rep.passed


def test_inequality_four_by_four():
    rep = verify_disa_inequality((4, 4), {(1, 1)}, 1.0, replicas=4000, seed=2)
    assert rep.passed
    assert rep.extras["lhs"] <= rep.extras["rhs_upper"]
    assert "boundary of W" in rep.extras["note"]


def test_inequality_enumeration_cap():
    with pytest.raises(PercolationError):
        verify_disa_inequality((5, 5), {(2, 2)}, 1.0, replicas=10)


def brute_reach(mask):
    from scipy import ndimage
    lab, _ = ndimage.label(mask)
    out = np.full(mask.shape, -1)
    for (r, c) in zip(*np.nonzero(mask)):
        pts = np.argwhere(lab == lab[r, c])
        out[r, c] = int(np.max(np.maximum(np.abs(pts[:, 0] - r), np.abs(pts[:, 1] - c))))
    return out


@given(arrays(bool, (8, 9)))
def test_cluster_reach_matches_brute_force(mask):
    assert np.array_equal(cluster_reach(mask, 1), brute_reach(mask))


def test_zero_beta_matches_site_percolation():
    fit = fit_decay(0.0, 64, distances=(0, 2, 3), replicas=30, seed=1)
    # independent estimate: iid masks, DFS reach from sampled interior sites
    hits = np.zeros(3)
    trials = 0
    for r in range(300):
        m = rng_for(9, "perc-oracle", r).random((21, 21)) < 0.5
        lab_reach = brute_reach(m)[10, 10]
        hits += lab_reach >= np.array([0, 2, 3])
        trials += 1
    ref = hits / trials
    se = np.sqrt(ref * (1 - ref) / trials)
    assert np.all(np.abs(fit.p_hat - ref) <= 3.5 * se + 1e-3)
    assert abs(fit.p_hat[0] - 0.5) < 0.01


def test_decay_probabilities_nonincreasing_and_bounded():
    fit = fit_decay(0.8, 96, distances=(0, 1, 2, 3, 4), replicas=4, seed=3)
    assert np.all(np.diff(fit.p_hat) <= 0)
    assert np.all((fit.ci_hi > 0) & (fit.ci_hi <= 1))
    assert fit.csv().splitlines()[0] == "beta,distance,p_hat,ci_lo,ci_hi"


def test_zero_counts_use_one_sided_bound():
    fit = decay_fit_from_counts(1.0, [2, 3, 4], [10, 2, 0], 1000)
    assert fit.bounded_only.tolist() == [False, False, True]
    assert fit.ci_hi[2] == pytest.approx(1 - 0.05 ** (1 / 1000))
    assert math.isfinite(fit.slope) and fit.slope > 0


def test_decay_table_flags():
    a = decay_fit_from_counts(0.6, [2, 3, 4], [1000, 300, 90], 10_000)
    b = decay_fit_from_counts(0.8, [2, 3, 4], [100, 10, 1], 10_000)
    rows = decay_table([b, a])
    assert rows[0]["beta"] == 0.6
    assert rows[1]["increase_over_previous"] > 0


def test_connection_counts_window_check():
    with pytest.raises(PercolationError):
        connection_counts([np.ones((5, 5), bool)], [3])
