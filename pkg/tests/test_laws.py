import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gibbslab import reference
from gibbslab.gibbs import GibbsSpec, exact_distribution
from gibbslab.laws import (CENSOR_LIMIT, KS_COEFF, LawError, LawReport, collision_probability,
                           estimate_lambda, exponential_law_test, gumbel_bracket, gumbel_bracket_from,
                           gumbel_report, increment_independence, increment_joint, increment_report,
                           lambda_from_survival, occurrence_run, pattern_probability, poisson_chi2,
                           poisson_counts, poisson_reports, poisson_window_index, rate_from_records,
                           rate_from_time_records, reports_csv, survival, verdict_for)
from gibbslab.lattice import Pattern
from gibbslab.patterns import ResolutionError, TimeRecord, estimate_un
from gibbslab.seeding import rng_for

records_strategy = st.lists(st.tuples(st.integers(1, 400), st.booleans()), min_size=1, max_size=60)


def exp_records(n, p_a, seed=0, cap=10 ** 9):
    rng = rng_for(seed, "synthetic")
    vals = rng.exponential(1 / p_a, size=n)
    return [TimeRecord("occurrence", int(math.ceil(v)), False, cap) for v in vals]


def test_lambda_formula_inversion():
    p, t = 0.01, 50.0
    assert abs(lambda_from_survival(math.exp(-t * p), t, p) - 1) < 1e-12


def test_lambda_from_injected_exponential_survival():
    p = 0.001
    recs = exp_records(20000, p, seed=1)
    est = rate_from_time_records(recs, p)
    assert est.t_used * est.p_a <= 0.5 + 1e-12
    assert est.ci[0] <= 1.0 <= est.ci[1]
    assert abs(est.lambda_hat - 1) < 0.05


def test_lambda_zero_beta_matches_coin_oracle():
    A = Pattern.from_array(np.array([[1, -1], [-1, -1]]))
    p = pattern_probability(A, 0.0)
    assert p == 1 / 16
    t = 1 / (4 * p)
    recs = occurrence_run(A, 0.0, 3000, 12, seed=2)
    ours = rate_from_time_records(recs, p, t)
    ref = reference.occurrence_sample(A.as_array(), 12, 20000, seed=3)
    s_ref = float(np.mean(ref > t))
    lam_ref = -math.log(s_ref) / (t * p)
    assert ours.ci[0] <= lam_ref <= ours.ci[1]
    # closed form: T > 4 iff the 2x2 corner block differs
    assert abs(lam_ref - (-math.log(15 / 16) / 0.25)) < 0.03


def test_lambda_errors():
    with pytest.raises(LawError):
        rate_from_records([10, 10], [True, True], [10, 10], 0.01)
    with pytest.raises(LawError):
        rate_from_records([10], [False], [100], 0.01, p_a_ci=(-0.001, 0.02))
    with pytest.raises(LawError):
        rate_from_records([10], [False], [100], 0.01, t=80)


@given(records_strategy, st.floats(1, 400), st.floats(1, 400))
def test_survival_monotone(recs, t1, t2):
    v = [r[0] for r in recs]
    c = [r[1] for r in recs]
    caps = [max(v)] * len(v)
    a1, k1 = survival(v, c, caps, min(t1, t2))
    a2, k2 = survival(v, c, caps, max(t1, t2))
    if k1 == k2 and k1 > 0:
        assert a2 / k2 <= a1 / k1


@given(records_strategy, st.randoms(use_true_random=False))
def test_lambda_permutation_invariant(recs, rnd):
    v = [r[0] for r in recs]
    c = [r[1] for r in recs]
    caps = [400] * len(v)
    p = 1 / 800
    try:
        a = rate_from_records(v, c, caps, p, t=200)
    except LawError:
        return
    idx = list(range(len(v)))
    rnd.shuffle(idx)
    b = rate_from_records([v[i] for i in idx], [c[i] for i in idx], caps, p, t=200)
    assert a.lambda_hat == b.lambda_hat and a.ci == b.ci


def test_exponential_null_passes():
    p = 0.002
    recs = exp_records(3000, p, seed=4)
    rate = rate_from_time_records(recs, p)
    rep = exponential_law_test(recs, rate)
    assert rep.threshold == pytest.approx(KS_COEFF / math.sqrt(3000))
    assert rep.passed
    # the rescaled mean agrees with the law when the KS test passes
    assert abs(rep.extras["rescaled_mean"] - 1) <= 3 * rep.extras["rescaled_mean_se"] + 0.05


def test_exponential_degenerate_fails():
    recs = [TimeRecord("occurrence", 100, False, 10 ** 6) for _ in range(600)]
    rate = rate_from_records([50] * 300 + [150] * 300, [False] * 600, [10 ** 6] * 600, 0.005)
    rep = exponential_law_test(recs, rate)
    assert rep.statistic > 0.3 and rep.verdict == "fail"


def test_exponential_errors():
    recs = exp_records(100, 0.01)
    rate = rate_from_time_records(recs, 0.01)
    with pytest.raises(LawError):
        exponential_law_test(recs, rate)
    rate.lambda_hat = math.inf
    with pytest.raises(LawError):
        exponential_law_test(exp_records(600, 0.01), rate)


@given(st.floats(0, 5), st.floats(0, 5), st.floats(0, 0.2))
def test_verdict_rule(stat, thr, cens):
    v = verdict_for(stat, thr, cens)
    if cens > CENSOR_LIMIT:
        assert v == "inconclusive"
    else:
        assert v == ("pass" if stat <= thr else "fail")


def test_report_json_fields():
    rep = LawReport("x", 0.1, 0.2, "pass", 10, 1, 1.0, 3, 0.0, {"a": np.float64(np.nan)})
    d = json.loads(rep.to_json())
    assert set(LawReport.FIELDS) <= set(d)
    assert reports_csv([rep]).splitlines()[0].split(",") == list(LawReport.FIELDS)


def test_pattern_probability_against_enumeration():
    A = Pattern.from_array(np.array([[-1, 1], [1, 1]]))
    p = pattern_probability(A, 0.7, margin=1)
    d = exact_distribution(GibbsSpec((4, 4), 0.7, "plus"))
    marg = d.marginal([(1, 1), (1, 2), (2, 1), (2, 2)])
    assert abs(p - marg[(-1, 1, 1, 1)]) < 1e-12
    coll = collision_probability(1, 0.7, margin=1)
    assert abs(coll - sum(v * v for v in marg.values())) < 1e-12


def test_poisson_zero_window():
    A = Pattern.from_array(np.array([[-1, 1], [1, 1]]))
    reps = poisson_counts(A, 0.0, 1.0, 50)
    assert reps[0].extras["mean"] == 0


def test_poisson_single_site_binomial():
    A = Pattern.from_array([[1]])
    reps = poisson_counts(A, 4.0, 0.0, 3000, seed=5, require_good=False)
    k = poisson_window_index(4.0, 0.5)
    vol = (k + 1) ** 2
    ex = reps[0].extras
    assert abs(ex["mean"] - vol / 2) < 0.1
    assert abs(ex["dispersion"] - 0.5) < 0.06


def test_poisson_window_cap():
    A = Pattern.from_array(np.array([[-1, -1], [-1, -1]]))
    with pytest.raises(LawError, match="largest feasible t"):
        poisson_counts(A, 3.0, 1.0, 10, max_side=64)


def test_poisson_reports_on_poisson_draws():
    counts = rng_for(6, "poisson").poisson(3.0, size=2000)
    disp, chi = poisson_reports(counts, 3.0)
    assert disp.passed and chi.passed
    stat, p, dof = poisson_chi2(counts, 3.0)
    assert dof > 3 and p > 0.01


def test_increments_null_and_zero():
    rng = rng_for(7, "incr")
    p = 0.001
    n = 5000
    first = rng.exponential(1 / p, n)
    second = first + rng.exponential(1 / p, n)
    est, used = increment_joint(first, second, np.zeros(n, bool), np.full(n, 1e12), 1.0, 1.0, p)
    rep = increment_report(est, used, 1.0, 1.0, 1.0)
    assert rep.statistic <= 2 * rep.extras["binomial_se"]
    A = Pattern.from_array(np.array([[-1, 1], [1, 1]]))
    zero = increment_independence(A, 0.0, 1.0, 1.0, 20)
    assert zero.extras["estimate"] == 0.0


def test_gumbel_zero_beta_bracket_holds():
    rep = gumbel_bracket(1000, 0.0, 1500, seed=3)
    assert rep.extras["nu"] == pytest.approx(math.log(2))
    assert rep.extras["nu_prime"] == pytest.approx(math.log(2))
    assert rep.passed


def test_gumbel_identical_pairs_fail():
    n = 1000
    un = estimate_un(n, 0.0, method="exact", k_max=40)
    br = gumbel_bracket_from(un.f, int(un.u[-1]), n, 1.0)
    rep = gumbel_report(np.full(500, n), br)
    assert rep.verdict == "fail"


def test_gumbel_unresolved_un():
    with pytest.raises(ResolutionError):
        gumbel_bracket(10_000, 1.0, 10)


def test_estimate_lambda_pipeline_small():
    A = Pattern.from_array(np.array([[-1, 1], [1, 1]]))
    est = estimate_lambda(A, 1.0, replicas=60, seed=1)
    assert est.lambda_hat > 0
    assert est.t_used * est.p_a <= 0.5 + 1e-12
