import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from gibbslab.gibbs import (EnumerationCapError, GibbsError, GibbsSpec, NotCoalesced, SamplerHandle,
                            codes_to_spins, conditional_sample, exact_distribution,
                            heat_bath_flip_probability, heat_bath_kernel, phase_window, resume_cftp, sample,
                            spins_to_code, total_variation, uniform_bound_delta)
from gibbslab.lattice import Pattern


def naive_table(beta, rows, cols, boundary):
    """Boltzmann table by direct summation over the padded lattice."""
    bval = {"plus": 1, "minus": -1, "free": 0}[boundary]
    out = {}
    for bits in itertools.product((1, -1), repeat=rows * cols):
        s = np.array(bits).reshape(rows, cols)
        p = np.full((rows + 2, cols + 2), bval)
        p[1:-1, 1:-1] = s
        p[0, 0] = p[0, -1] = p[-1, 0] = p[-1, -1] = 0
        e = (p[:-1, 1:-1] * p[1:, 1:-1]).sum() + (p[1:-1, :-1] * p[1:-1, 1:]).sum()
        out[bits] = math.exp(beta * e)
    z = sum(out.values())
    return {k: v / z for k, v in out.items()}


def test_uniform_at_zero_coupling():
    d = exact_distribution(GibbsSpec((2, 2), 0.0, "free"))
    assert np.allclose(d.probs, 1 / 16, atol=1e-15)


def test_ground_state_dominates():
    d = exact_distribution(GibbsSpec((2, 2), 10.0, "plus"))
    assert d.prob(np.ones((2, 2))) > 0.999


@pytest.mark.parametrize("boundary", ["plus", "minus", "free"])
def test_three_by_three_table_matches_naive_sum(boundary):
    d = exact_distribution(GibbsSpec((3, 3), 0.5, boundary))
    assert d.probs.size == 512
    assert abs(d.probs.sum() - 1) < 1e-12
    ref = naive_table(0.5, 3, 3, boundary)
    for bits, p in ref.items():
        assert abs(d.prob(np.array(bits).reshape(3, 3)) - p) < 1e-13


def test_enumeration_cap():
    with pytest.raises(EnumerationCapError):
        exact_distribution(GibbsSpec((5, 6), 0.5))


def test_spec_validation():
    with pytest.raises(GibbsError):
        GibbsSpec((3, 3), -0.1)
    with pytest.raises(GibbsError):
        GibbsSpec((0, 3), 0.1)
    with pytest.raises(GibbsError):
        GibbsSpec((3, 3), 0.1, "sideways")


def test_code_round_trip(rng):
    codes = rng.integers(0, 2 ** 12, size=50)
    spins = codes_to_spins(codes, (3, 4))
    assert [spins_to_code(s) for s in spins] == list(codes)


def test_cftp_is_exact_on_small_box():
    spec = GibbsSpec((3, 3), 0.4, "plus")
    configs = sample(SamplerHandle(spec, "cftp", seed=3), 20000)
    tv = total_variation(exact_distribution(spec), configs)
    # expected TV for 20000 draws over 512 cells is about 0.03 at most
    assert tv < 0.05


def test_sampling_is_reproducible():
    spec = GibbsSpec((4, 4), 0.7, "plus")
    for method in ("cftp", "heatbath", "enumerate"):
        a = sample(SamplerHandle(spec, method, seed=9, replica=2), 30)
        b = sample(SamplerHandle(spec, method, seed=9, replica=2), 30)
        c = sample(SamplerHandle(spec, method, seed=9, replica=3), 30)
        assert a == b
        assert a != c


def test_zero_beta_marginals_are_fair():
    spec = GibbsSpec((5, 5), 0.0, "plus")
    n = 4000
    configs = sample(SamplerHandle(spec, "cftp", seed=1), n)
    m = np.mean([(c.spins > 0) for c in configs], axis=0)
    assert np.all(np.abs(m - 0.5) <= 3 * math.sqrt(0.25 / n) + 1e-3)


def test_low_temperature_magnetization():
    mags = [phase_window(1.0, (64, 64), 5, r, burn_in=300).mean() for r in range(5)]
    assert np.mean(mags) > 0.99


def test_freeze_everything():
    spec = GibbsSpec((3, 3), 0.8, "plus")
    arr = np.array([[1, -1, 1], [-1, -1, 1], [1, 1, -1]])
    out = conditional_sample(SamplerHandle(spec, "cftp", seed=0), Pattern.from_array(arr), 5)
    assert all(np.array_equal(c.spins, arr) for c in out)


def test_conditional_sample_matches_enumeration():
    spec = GibbsSpec((4, 4), 0.5, "plus")
    frozen = Pattern.from_array(np.ones((2, 2), dtype=np.int8))
    n = 60000
    out = conditional_sample(SamplerHandle(spec, "cftp", seed=4), frozen, n)
    assert all(np.all(c.spins[:2, :2] == 1) for c in out)
    probs = exact_distribution(spec, frozen).probs
    codes = np.array([spins_to_code(c.spins) for c in out])
    obs = np.bincount(codes, minlength=probs.size)
    exp = probs * n
    # merge cells with small expectation into one bin
    small = exp < 5
    o = np.append(obs[~small & (probs > 0)], obs[small].sum())
    e = np.append(exp[~small & (probs > 0)], exp[small].sum())
    p = stats.chisquare(o, e).pvalue
    assert p > 0.01


def test_conditional_zero_beta_complement_uniform():
    spec = GibbsSpec((3, 3), 0.0, "plus")
    frozen = Pattern.from_array(np.array([[-1]]), offset=(1, 1))
    out = conditional_sample(SamplerHandle(spec, "heatbath", seed=2, sweeps=1, burn_in=1), frozen, 4000)
    m = np.mean([c.spins > 0 for c in out], axis=0)
    m[1, 1] = 0.5
    assert np.all(np.abs(m - 0.5) < 0.05)


def test_conditional_outside_volume():
    spec = GibbsSpec((3, 3), 0.5)
    with pytest.raises(GibbsError):
        conditional_sample(SamplerHandle(spec, "cftp"), Pattern.from_array(np.ones((2, 2)), (2, 2)), 1)


def test_flip_probability_examples():
    spec = GibbsSpec((3, 3), 1.0)
    assert heat_bath_flip_probability(spec, (1, 1), [1, -1, 1, -1]) == 0.5
    assert heat_bath_flip_probability(GibbsSpec((3, 3), 0.0), (1, 1), [1, 1, 1, 1]) == 0.5
    p = heat_bath_flip_probability(spec, (1, 1), [1, 1, 1, 1])
    assert abs(p - math.exp(4) / (math.exp(4) + math.exp(-4))) < 1e-15


@given(st.lists(st.sampled_from([-1, 1]), min_size=4, max_size=4), st.integers(0, 3),
       st.floats(0, 3))
def test_flip_probability_monotone(nb, i, beta):
    spec = GibbsSpec((3, 3), beta)
    lo = list(nb)
    lo[i] = -1
    hi = list(nb)
    hi[i] = 1
    assert heat_bath_flip_probability(spec, (1, 1), lo) <= heat_bath_flip_probability(spec, (1, 1), hi)


@pytest.mark.parametrize("boundary", ["plus", "minus", "free"])
def test_detailed_balance(boundary):
    spec = GibbsSpec((2, 3), 0.7, boundary)
    P = heat_bath_kernel(spec)
    pi = exact_distribution(spec).probs
    flow = pi[:, None] * P
    assert np.max(np.abs(flow - flow.T)) < 1e-12
    assert np.allclose(P.sum(axis=1), 1)


def test_monotone_sandwich_checked():
    spec = GibbsSpec((6, 6), 0.6)
    out = sample(SamplerHandle(spec, "cftp", seed=8, check_order=True), 20)
    assert len(out) == 20


def test_non_coalescence_is_resumable():
    spec = GibbsSpec((8, 8), 0.6, "plus")
    handle = SamplerHandle(spec, "cftp", seed=0, max_epochs=1)
    with pytest.raises(NotCoalesced) as err:
        sample(handle, 3)
    assert err.value.samples == []
    more = resume_cftp(err.value.state, extra_epochs=12)
    assert len(more) == 3


def test_uniform_bound_delta_positive():
    d = exact_distribution(GibbsSpec((3, 3), 0.5, "plus"))
    delta = uniform_bound_delta(d)
    assert delta > 0
    assert d.probs.max() <= math.exp(-delta * 9) + 1e-15


def test_fkg_boundary_monotonicity():
    for beta in (0.2, 0.5, 1.0):
        plus = exact_distribution(GibbsSpec((3, 3), beta, "plus")).site_marginals()
        minus = exact_distribution(GibbsSpec((3, 3), beta, "minus")).site_marginals()
        assert np.all(plus >= minus)
