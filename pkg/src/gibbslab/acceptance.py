"""Acceptance criteria as runnable checks.

Each ``criterion_*`` function runs one criterion at its stated size and
tolerance and returns a :class:`CriterionResult`. They are shared by the
``suite acceptance`` subcommand and the test-suite.
"""
from __future__ import annotations

import itertools
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import gibbs, laws, patterns, percolation, reference, thermo
from .lattice import CubeShape, Pattern
from .laws import LawError
from .patterns import ResolutionError

BETA_LOW_T = 1.0
SINGLE_MINUS = np.array([[-1, 1], [1, 1]], dtype=np.int8)


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    summary: str
    details: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.number:2d} {self.title}: {self.summary}"

    def to_json(self) -> str:
        return json.dumps(laws._jsonable({"criterion": self.number, "title": self.title,
                                          "passed": self.passed, "summary": self.summary,
                                          "details": self.details}), sort_keys=True)


def _timed(fn):
    def wrapper(*a, **kw):
        t0 = time.perf_counter()
        res = fn(*a, **kw)
        res.seconds = time.perf_counter() - t0
        return res
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def single_minus() -> Pattern:
    return Pattern.from_array(SINGLE_MINUS)


# ---------------------------------------------------------------------------

@_timed
def criterion_1(seed: int = 1, samples: int = 100_000) -> CriterionResult:
    """CFTP against enumeration on 3x3 plus boundary."""
    det, ok = {}, True
    for beta in (0.4, 1.0):
        spec = gibbs.GibbsSpec((3, 3), beta, "plus")
        dist = gibbs.exact_distribution(spec)
        t0 = time.perf_counter()
        draws = gibbs.sample(gibbs.SamplerHandle(spec, "cftp", seed, 0, labels=("acceptance", 1)), samples)
        tv = gibbs.total_variation(dist, draws)
        dt = time.perf_counter() - t0
        det[f"beta={beta}"] = {"tv": tv, "seconds": dt}
        ok &= tv <= 0.01 and dt <= 120
    s = ", ".join(f"{k} TV={v['tv']:.4f} ({v['seconds']:.1f}s)" for k, v in det.items())
    return CriterionResult(1, "sampler exactness", ok, s + " (limit 0.01, 120s)", det)


@_timed
def criterion_2(seed: int = 2, replicas: int = 10_000, ref_reps: int = 50_000) -> CriterionResult:
    """beta = 0 reduction to iid coins."""
    det = {}
    # occurrence of a 2x2 checkerboard
    chk = np.array([[1, -1], [-1, 1]], dtype=np.int8)
    side = 24
    recs = laws.occurrence_run(Pattern.from_array(chk), 0.0, replicas, side, seed, burn_in=1, labels=("c2",))
    occ = np.array([math.inf if r.censored else r.value for r in recs])
    det["occurrence_ks"] = reference.ks_discrete(occ, reference.occurrence_sample(chk, side, ref_reps, seed + 100))
    # one-site occurrence against the closed form
    one = laws.occurrence_run(Pattern.from_array(np.array([[1]])), 0.0, replicas, 4, seed, burn_in=1,
                              labels=("c2-site",))
    det["single_site_ks"] = reference.ks_discrete([r.value for r in one],
                                                  cdf=reference.single_site_occurrence_cdf)
    # matching of C_1
    mrec = laws.matching_run(1, 0.0, replicas, side, seed, burn_in=1, labels=("c2",))
    mat = np.array([math.inf if r.censored else r.value for r in mrec])
    det["matching_ks"] = reference.ks_discrete(mat, reference.matching_sample(1, side, ref_reps, seed + 200))
    # maximal overlap on G_100
    ov = laws.overlap_run(100, 0.0, replicas, seed, ("c2",))
    det["overlap_ks"] = reference.ks_discrete(ov, reference.overlap_sample(100, ref_reps, seed + 300))
    # u_n
    un = patterns.estimate_un(1000, 0.0, method="exact", k_max=40)
    expect = np.array([math.floor(math.log2(n)) for n in range(1, 1001)])
    det["u_n_mismatches"] = int(np.count_nonzero(un.u != expect))
    ks_keys = ("occurrence_ks", "single_site_ks", "matching_ks", "overlap_ks")
    ok = all(det[k] <= 0.02 for k in ks_keys) and det["u_n_mismatches"] == 0
    s = ", ".join(f"{k}={det[k]:.4f}" for k in ks_keys) + f", u_n mismatches={det['u_n_mismatches']}"
    return CriterionResult(2, "beta=0 reduction", ok, s + " (KS limit 0.02)", det)


@_timed
def criterion_3(seed: int = 3, replicas: int = 2000) -> CriterionResult:
    """Exponential laws for occurrence, return and matching times."""
    A = single_minus()
    p_a = laws.pattern_probability(A, BETA_LOW_T)
    side = laws.cap_side_for(8 / p_a)
    det, ok = {}, True
    for kind in ("occurrence", "return"):
        recs = laws.occurrence_run(A, BETA_LOW_T, replicas, side, seed, kind=kind, labels=("c3",))
        # top up so that ``replicas`` uncensored records are available
        r = replicas
        while sum(not x.censored for x in recs) < replicas:
            recs.append(laws.occurrence_replica(A, BETA_LOW_T, side, seed, r, kind, labels=("c3",)))
            r += 1
        rate = laws.rate_from_time_records(recs, p_a, pattern=kind, seed=seed)
        rep = laws.exponential_law_test(recs, rate, law=f"exponential_{kind}", n=1, beta=BETA_LOW_T, seed=seed)
        det[kind] = {"ks": rep.statistic, "lambda_hat": rate.lambda_hat, "uncensored": rep.sample_size,
                     "censored_fraction": rep.censored_fraction, **rep.extras}
        ok &= rep.statistic <= 0.05 and rep.sample_size >= replicas and rep.verdict == "pass"
    coll = laws.collision_probability(1, BETA_LOW_T)
    mrec = laws.matching_run(1, BETA_LOW_T, replicas, 32, seed, labels=("c3",))
    try:
        rate = laws.rate_from_time_records(mrec, coll, pattern="matching", seed=seed)
        rep = laws.exponential_law_test(mrec, rate, law="exponential_matching", n=1, beta=BETA_LOW_T)
        det["matching"] = {"ks": rep.statistic, "lambda_hat": rate.lambda_hat}
        ok &= rep.statistic <= 0.05
    except LawError as e:
        vals = np.array([r.value for r in mrec])
        det["matching"] = {"error": str(e), "collision_probability": coll,
                           "fraction_equal_to_4": float(np.mean(vals == 4))}
        ok = False
    parts = [f"{k} KS={det[k]['ks']:.4f}" if "ks" in det[k] else f"{k}: {det[k]['error']}"
             for k in ("occurrence", "return", "matching")]
    return CriterionResult(3, "exponential laws", ok, "; ".join(parts) + " (limit 0.05)", det)


@_timed
def criterion_4(seed: int = 4, replicas: int = 150, side: int = 1024) -> CriterionResult:
    """lambda_hat over all sixteen 2x2 patterns at beta = 1."""
    pats = [Pattern.from_array(np.array(v, dtype=np.int8).reshape(2, 2))
            for v in itertools.product((1, -1), repeat=4)]
    probs = [laws.pattern_probability(p, BETA_LOW_T) for p in pats]
    # one batch of windows serves every pattern
    hits = [[] for _ in pats]
    for r in range(replicas):
        w = gibbs.phase_window(BETA_LOW_T, (side, side), seed, r, burn_in=100, labels=("c4",))
        for i, p in enumerate(pats):
            hits[i].append(patterns.occurrence_time(p, w, seed=seed, replica=r))
    rows = {}
    for p, pa, recs in zip(pats, probs, hits):
        t = min(0.5 / pa, float(side ** 2))
        rate = laws.rate_from_time_records(recs, pa, t, pattern=laws.pattern_id(p), seed=seed)
        rows[rate.pattern_id] = {"lambda_hat": rate.lambda_hat, "ci": rate.ci, "p_a": pa, "t": t,
                                 "survival": rate.survival}
    lams = np.array([v["lambda_hat"] for v in rows.values()])
    lo_ci = np.array([v["ci"][0] for v in rows.values()])
    hi_ci = np.array([v["ci"][1] for v in rows.values()])
    positive = bool(np.all(lo_ci > 0) and np.all(np.isfinite(hi_ci)))
    ratio = float(lams.max() / lams.min()) if lams.min() > 0 else math.inf
    ok = positive and ratio < 20
    bad = [k for k, v in rows.items() if not (v["ci"][0] > 0 and math.isfinite(v["ci"][1]))]
    s = f"min={lams.min():.3f} max={lams.max():.3f} ratio={ratio:.3g} (limit 20)"
    if bad:
        s += f"; CI touching 0 or inf for {', '.join(bad)}"
    return CriterionResult(4, "parameter bounds", ok, s, {"patterns": rows, "ratio": ratio})


@_timed
def criterion_5(seed: int = 5, replicas: int = 1000, t: float = 3.0) -> CriterionResult:
    A = single_minus()
    rate = laws.estimate_lambda(A, BETA_LOW_T, replicas=2000, seed=seed)
    disp, chi = laws.poisson_counts(A, t, BETA_LOW_T, replicas, seed, rate=rate)
    d = disp.extras["dispersion"]
    ok = 0.85 <= d <= 1.15 and chi.extras["p_value"] >= 0.01
    s = (f"dispersion={d:.3f} (limit [0.85, 1.15]), mean={disp.extras['mean']:.3f}, "
         f"chi2 p={chi.extras['p_value']:.3g} (reject below 0.01), lambda_hat={rate.lambda_hat:.3f}")
    return CriterionResult(5, "Poisson law", ok, s, {"dispersion": disp.extras, "chi2": chi.extras})


@_timed
def criterion_6(seed: int = 6, replicas: int = 2000) -> CriterionResult:
    A = single_minus()
    rate = laws.estimate_lambda(A, BETA_LOW_T, replicas=2000, seed=seed)
    rep = laws.increment_independence(A, 1.0, 1.0, BETA_LOW_T, replicas, seed, rate=rate)
    s = (f"deviation={rep.statistic:.4f} (limit 0.05), estimate={rep.extras['estimate']:.4f}, "
         f"target={rep.extras['target']:.4f}")
    return CriterionResult(6, "increments", rep.statistic <= 0.05, s, rep.extras)


@_timed
def criterion_7(seed: int = 7, pairs: int = 2000, n: int = 10_000) -> CriterionResult:
    try:
        rep = laws.gumbel_bracket(n, BETA_LOW_T, pairs, seed, un_samples=pairs)
    except ResolutionError as e:
        # show where u_n sits: per-site agreement of two plus-phase copies
        agree = []
        for r in range(50):
            a = gibbs.phase_window(BETA_LOW_T, (64, 64), seed, r, labels=("c7", 0))
            b = gibbs.phase_window(BETA_LOW_T, (64, 64), seed, r, labels=("c7", 1))
            agree.append(np.mean(a == b))
        q = float(np.mean(agree))
        u_guess = math.log(1 / n) / math.log(q)
        return CriterionResult(7, "Gumbel bracket", False,
                               f"u_n unresolved: {e}; per-site agreement {q:.5f} puts u_n near {u_guess:.0f} > n",
                               {"error": str(e), "agreement": q, "u_estimate": u_guess})
    return CriterionResult(7, "Gumbel bracket", rep.passed,
                           f"max violation beyond 3 SE = {rep.statistic:.4f}", rep.extras)


@_timed
def criterion_8(seed: int = 8, samples: int = 1000) -> CriterionResult:
    ests = {n: patterns.good_fraction(n, BETA_LOW_T, samples, seed, burn_in=100) for n in (4, 6, 8)}
    fr = [ests[n].fraction for n in (4, 6, 8)]
    mono = all(ests[b].ci[1] >= ests[a].ci[0] for a, b in ((4, 6), (6, 8)))
    ok = mono and ests[8].fraction > 0.9
    s = ", ".join(f"n={n}: {ests[n].fraction:.3f} [{ests[n].ci[0]:.3f},{ests[n].ci[1]:.3f}]" for n in ests)
    return CriterionResult(8, "good-pattern mass", ok, s + " (need > 0.9 at n=8)",
                           {n: {"fraction": e.fraction, "ci": e.ci} for n, e in ests.items()})


@_timed
def criterion_9() -> CriterionResult:
    tm = thermo.pressure(-1.0, 1.0, "transfer", 14)
    ons = thermo.onsager_pressure(1.0)
    p0 = thermo.pressure(1.0, 0.0, "transfer", 14)
    sym = max(abs(thermo.pressure(q, 0.7, "enumeration", 4) - thermo.pressure(-q, 0.7, "enumeration", 4))
              for q in (0.5, 1.0, 2.0))
    ok = abs(tm - ons) < 5e-5 and abs(p0 - math.log(2)) <= 1e-12 and sym <= 1e-12
    s = f"|TM-Onsager|={abs(tm - ons):.2e}, |P(0)-log2|={abs(p0 - math.log(2)):.1e}, max|P(q)-P(-q)|={sym:.1e}"
    return CriterionResult(9, "pressure oracle", ok, s, {"transfer": tm, "onsager": ons})


@_timed
def criterion_10(beta: float = BETA_LOW_T) -> CriterionResult:
    q = np.linspace(-1, 2, 41)
    w = np.array([thermo.rate_function(x, beta) for x in q])
    w0 = abs(thermo.rate_function(0.0, beta))
    left = thermo.rate_function(-1 - 1e-15, beta)
    right = thermo.rate_function(-1.0, beta)
    second = w[2:] - 2 * w[1:-1] + w[:-2]
    ok = w0 <= 1e-12 and abs(left - right) <= 1e-12 and bool(np.all(second >= -1e-12))
    s = f"|W(0)|={w0:.1e}, jump at -1={abs(left - right):.1e}, min second difference={second.min():.2e}"
    return CriterionResult(10, "rate function", ok, s, {"q": q, "W": w})


@_timed
def criterion_11(seed: int = 11, replicas: int = 300, n: int = 6) -> CriterionResult:
    oracle = thermo.entropy_oracle(BETA_LOW_T).value
    rep = thermo.entropy_via_return([n], BETA_LOW_T, replicas, seed, eps=4.0, target=oracle)[0]
    dev = abs(rep.value - oracle)
    ok = dev <= 0.1 and rep.extras["uncensored"] >= 200 and rep.extras["bracket_fraction"] >= 0.95
    s = (f"mean log R/|C_n|={rep.value:.4f} vs s={oracle:.4f} (|diff|={dev:.4f}, limit 0.1), "
         f"uncensored={rep.extras['uncensored']}, bracket fraction={rep.extras['bracket_fraction']:.3f} (need 0.95)")
    return CriterionResult(11, "entropy via return times", ok, s, rep.row())


@_timed
def criterion_12(seed: int = 12, replicas: int = 300, n: int = 6) -> CriterionResult:
    same = thermo.entropy_via_waiting("same", BETA_LOW_T, [n], replicas, seed)[0]
    minus = thermo.entropy_via_waiting("minus", BETA_LOW_T, [n], replicas, seed)[0]
    conclusive = same.extras["status"] == "ok" and minus.extras["status"] == "ok"
    diff = abs(same.value - minus.value)
    ok = conclusive and diff <= 0.05
    s = (f"SameP={same.value:.4f} (censored {same.extras['censored_fraction']:.2f}), "
         f"MinusPhase={minus.value:.4f} (censored {minus.extras['censored_fraction']:.2f})")
    s += f", |diff|={diff:.4f} (limit 0.05)" if conclusive else ", inconclusive: censoring above 50%"
    return CriterionResult(12, "waiting-time exponent", ok, s, {"same": same.row(), "minus": minus.row()})


@_timed
def criterion_13(seed: int = 13, replicas: int = 300) -> CriterionResult:
    det, ok = {}, True
    for beta, n in ((0.0, 3), (BETA_LOW_T, 5)):
        rep = thermo.matching_exponent(beta, [n], replicas, seed)[0]
        dev = abs(rep.value - rep.target)
        det[f"beta={beta},n={n}"] = {**rep.row(), "deviation": dev}
        ok &= dev <= 0.1 and rep.extras["status"] == "ok"
    s = "; ".join(f"{k}: {v['value']:.4f} vs {v['target']:.4f} ({v['target_method']})" for k, v in det.items())
    return CriterionResult(13, "matching exponent", ok, s + " (limit 0.1)", det)


@_timed
def criterion_14(seed: int = 14, replicas: int = 100_000) -> CriterionResult:
    rep = percolation.verify_disa_inequality((4, 4), {(1, 1)}, BETA_LOW_T, "plus", "minus", replicas, seed)
    e = rep.extras
    s = f"lhs={e['lhs']:.5f} <= |dW| x upper CI={e['rhs_upper']:.5f} (point {e['rhs_point']:.5f})"
    return CriterionResult(14, "disagreement inequality", rep.passed, s, e)


@_timed
def criterion_15(seed: int = 15, replicas: int = 40, side: int = 256) -> CriterionResult:
    fits = [percolation.fit_decay(b, side, (2, 3, 4, 5, 6), replicas, seed) for b in (0.6, 0.8, 1.0, 1.2)]
    table = percolation.decay_table(fits)
    ok = True
    for f in fits:
        ok &= math.isfinite(f.slope) and f.slope > 0 and math.isfinite(f.r_squared) and f.r_squared >= 0.9
    for row in table[1:]:
        inc = row.get("increase_over_previous", math.nan)
        comb = row.get("combined_se", math.nan)
        ok &= math.isfinite(inc) and math.isfinite(comb) and inc > comb
    s = "; ".join(f"beta={f.beta}: c={f.slope:.3g}+-{f.slope_se:.2g} R2={f.r_squared:.3g} "
                  f"hits={list(map(int, f.hits))}" for f in fits)
    return CriterionResult(15, "decay rates", ok, s, {"table": table, "fits": [json.loads(f.summary_json()) for f in fits]})


@_timed
def criterion_16(workdir=None) -> CriterionResult:
    """Rerun a reduced suite twice from the command line and compare record payloads."""
    import tempfile
    from pathlib import Path
    from . import cli
    root = Path(tempfile.mkdtemp(prefix="gibbslab-det-")) if workdir is None else Path(workdir)
    digests = []
    for rep in (0, 1):
        out = root / f"run{rep}"
        for argv in determinism_commands():
            code = cli.main(argv + ["--out", str(out), "--quiet"])
            if code != 0:
                return CriterionResult(16, "determinism", False, f"command failed: {' '.join(argv)}")
        digests.append(cli.payload_digests(out))
    same = digests[0] == digests[1] and len(digests[0]) > 0
    diff = sorted(k for k in set(digests[0]) | set(digests[1]) if digests[0].get(k) != digests[1].get(k))
    s = f"{len(digests[0])} payload files compared, {len(diff)} differ"
    return CriterionResult(16, "determinism", same, s, {"differing": diff})


def determinism_commands() -> list[list[str]]:
    return [
        ["sample", "--beta", "0.6", "--extent", "4x4", "--method", "cftp", "--replicas", "20", "--seed", "16"],
        ["occurrence", "--beta", "1.0", "--n", "1", "--pattern", "single-minus", "--replicas", "60",
         "--cap", "64", "--seed", "16"],
        ["return", "--beta", "1.0", "--n", "1", "--pattern", "single-minus", "--replicas", "30",
         "--cap", "48", "--seed", "16"],
        ["waiting", "--beta", "0.6", "--n", "2", "--q", "same", "--replicas", "30", "--cap", "48", "--seed", "16"],
        ["matching", "--beta", "0.6", "--n", "1", "--replicas", "30", "--cap", "32", "--seed", "16"],
        ["overlap", "--beta", "0.0", "--n", "100", "--replicas", "50", "--seed", "16"],
        ["poisson", "--beta", "1.0", "--pattern", "single-minus", "--t", "1", "--replicas", "30", "--seed", "16"],
        ["entropy", "--beta", "0.6", "--n", "2", "--replicas", "20", "--cap", "64", "--seed", "16"],
        ["pressure", "--beta", "0.5", "--q=-1,0,1", "--width", "8"],
        ["ldp", "--beta", "0.5", "--q=-2,-1,0,1", "--width", "8"],
        ["disagreement", "--beta", "0.8", "--side", "48", "--replicas", "4", "--distances", "2,3", "--seed", "16"],
    ]


CRITERIA = {i: globals()[f"criterion_{i}"] for i in range(1, 17)}


def run_all(numbers=None, echo=print) -> list[CriterionResult]:
    out = []
    for i in numbers or sorted(CRITERIA):
        try:
            res = CRITERIA[i]()
        except Exception as e:  # a crashing criterion is reported, not hidden
            res = CriterionResult(i, CRITERIA[i].__name__, False, f"error: {type(e).__name__}: {e}")
        out.append(res)
        if echo:
            echo(res.line())
    return out


def table(results) -> str:
    lines = [f"{'#':>2}  {'result':6}  {'seconds':>8}  criterion"]
    for r in results:
        lines.append(f"{r.number:>2}  {'PASS' if r.passed else 'FAIL':6}  {r.seconds:8.1f}  {r.title}")
    return "\n".join(lines)
