"""Estimators and tests for the occurrence-time laws.

Everything that consumes records is a pure reduction over arrays of values,
censoring flags and caps, so batches can be merged in any order. The
``*_run`` helpers produce those arrays from plus-phase windows.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from . import transfer
from .gibbs import phase_window
from .lattice import CubeShape, Pattern
from .patterns import (ResolutionError, TimeRecord, UnEstimate, count_occurrences, estimate_un,
                       is_good, matching_time, max_overlap, occurrence_time, pth_occurrence_times,
                       return_time)
from .seeding import rng_for

KS_COEFF = 1.63
MIN_KS_RECORDS = 500
CENSOR_LIMIT = 0.10


class LawError(ValueError):
    pass


# ---------------------------------------------------------------------------
# report types

@dataclass
class RateEstimate:
    pattern_id: str
    lambda_hat: float
    ci: tuple
    t_used: float
    p_a: float
    p_a_source: str
    p_a_ci: tuple
    sample_count: int
    censored_fraction: float
    survival: float = float("nan")

    def to_dict(self):
        return asdict(self)


@dataclass
class LawReport:
    law: str
    statistic: float
    threshold: float
    verdict: str
    sample_size: int
    n: int | None = None
    beta: float | None = None
    seed: int | None = None
    censored_fraction: float = 0.0
    extras: dict = field(default_factory=dict)

    FIELDS = ("law", "statistic", "threshold", "verdict", "n", "beta", "seed", "sample_size",
              "censored_fraction")

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def to_json(self) -> str:
        d = {k: getattr(self, k) for k in self.FIELDS}
        d["extras"] = _jsonable(self.extras)
        return json.dumps(_jsonable(d), sort_keys=True)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    return x


def verdict_for(statistic: float, threshold: float, censored_fraction: float = 0.0) -> str:
    if censored_fraction > CENSOR_LIMIT:
        return "inconclusive"
    return "pass" if statistic <= threshold else "fail"


def reports_csv(reports) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LawReport.FIELDS)
    for r in reports:
        w.writerow([_jsonable(getattr(r, k)) for k in LawReport.FIELDS])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# pattern probabilities

def pattern_id(pattern: Pattern) -> str:
    arr = pattern.as_array()
    return "x".join(map(str, arr.shape)) + ":" + "".join("+" if v > 0 else "-" for v in arr.ravel())


def pattern_probability(pattern: Pattern, beta: float, margin: int = 5) -> float:
    """P(A) under the plus phase.

    Exact for beta = 0; otherwise the marginal of a plus-boundary box that
    surrounds the pattern's bounding box by ``margin`` sites, computed with
    the row transfer matrix.
    """
    if beta == 0:
        return 2.0 ** -pattern.size
    sites = pattern.sites - pattern.lower() + margin
    h, w = (np.asarray(pattern.box_shape()) + 2 * margin).tolist()
    if w > transfer.MAX_WIDTH and h <= transfer.MAX_WIDTH:
        sites, (h, w) = sites[:, ::-1], (w, h)
    return float(transfer.box_pattern_probabilities(beta, h, w, 1.0, sites, pattern.values[None])[0])


def collision_probability(n: int, beta: float, margin: int = 4) -> float:
    """sum_A P(sigma_{C_n} = A)^2 from a plus box around C_n (exact)."""
    if beta == 0:
        return 2.0 ** -((n + 1) ** 2)
    side = n + 1 + 2 * margin
    if n + 1 <= 3:
        import itertools
        sites = np.array([(margin + i, margin + j) for i in range(n + 1) for j in range(n + 1)])
        pats = np.array(list(itertools.product((1, -1), repeat=len(sites))), dtype=np.int8)
        p = transfer.box_pattern_probabilities(beta, side, side, 1.0, sites, pats)
        return float((p ** 2).sum())
    # C_n is the whole box: sum P^2 = Z(2K)/Z(K)^2
    return transfer.box_collision_sum(beta, n + 1, n + 1, 1.0)


# ---------------------------------------------------------------------------
# lambda

def survival(values, censored, caps, t: float) -> tuple[int, int]:
    """(number known to exceed t, number whose relation to t is known)."""
    values = np.asarray(values, dtype=np.float64)
    censored = np.asarray(censored, dtype=bool)
    caps = np.asarray(caps, dtype=np.float64)
    known = ~censored | (caps >= t)
    above = (censored & (caps >= t)) | (~censored & (values > t))
    return int(np.count_nonzero(above & known)), int(np.count_nonzero(known))


def lambda_from_survival(s: float, t: float, p_a: float) -> float:
    if s <= 0:
        return math.inf
    return -math.log(s) / (t * p_a)


def rate_from_records(values, censored, caps, p_a: float, t: float | None = None,
                      pattern: str = "", p_a_source: str = "exact", p_a_ci=None,
                      n_boot: int = 1000, seed: int = 0, level: float = 0.95) -> RateEstimate:
    """lambda_hat = -log S(t) / (t P(A)) with a bootstrap percentile CI."""
    p_ci = tuple(p_a_ci) if p_a_ci is not None else (p_a, p_a)
    if not (p_a > 0 and math.isfinite(p_a)) or p_ci[0] <= 0:
        raise LawError(f"P(A) interval {p_ci} does not exclude zero")
    t = 0.5 / p_a if t is None else float(t)
    if t * p_a > 0.5 + 1e-12:
        raise LawError(f"t P(A) = {t * p_a:.3g} is outside the regime t P(A) <= 1/2")
    above, known = survival(values, censored, caps, t)
    if known == 0:
        raise LawError("every replica is censored below t")
    s = above / known
    lam = lambda_from_survival(s, t, p_a)
    rng = rng_for(seed, "bootstrap", pattern)
    boot = rng.binomial(known, s, size=n_boot) / known
    with np.errstate(divide="ignore"):
        lam_b = np.where(boot > 0, -np.log(np.where(boot > 0, boot, 1.0)) / (t * p_a), np.inf)
    a = (1 - level) / 2
    # order statistics, so infinite draws never get interpolated into nan
    ci = (float(np.quantile(lam_b, a, method="lower")), float(np.quantile(lam_b, 1 - a, method="higher")))
    # censored below t: the record cannot say whether T > t
    cens = 1.0 - known / len(values)
    return RateEstimate(pattern, lam, ci, t, p_a, p_a_source, p_ci, len(values), cens, s)


def _record_arrays(records):
    v = np.array([r.value for r in records], dtype=np.float64)
    c = np.array([r.censored for r in records], dtype=bool)
    caps = np.array([r.window_cap for r in records], dtype=np.float64)
    return v, c, caps


def rate_from_time_records(records, p_a: float, t=None, **kw) -> RateEstimate:
    v, c, caps = _record_arrays(records)
    return rate_from_records(v, c, caps, p_a, t, **kw)


def cap_side_for(volume: float, factor: float = 1.0, max_side: int = 1024) -> int:
    """Smallest window side whose cube volume is at least ``factor * volume``."""
    return int(min(max_side, max(2, math.ceil(math.sqrt(factor * volume)))))


def occurrence_replica(pattern: Pattern, beta: float, side: int, seed: int, r: int,
                       kind: str = "occurrence", burn_in: int = 100, margin: int = 8,
                       normalizer: float = float("nan"), labels: tuple = ()) -> TimeRecord:
    """One occurrence (or return) record on a ``side x side`` plus-phase window.

    For ``kind="return"`` the window is sampled conditionally on showing the
    pattern at the origin corner.
    """
    frozen = Pattern(pattern.sites - pattern.lower(), pattern.values) if kind == "return" else None
    w = phase_window(beta, (side, side), seed, r, margin=margin, burn_in=burn_in,
                     frozen=frozen, labels=(kind,) + tuple(labels))
    if kind == "return":
        return return_time(frozen, w, normalizer=normalizer, seed=seed, replica=r)
    return occurrence_time(pattern, w, normalizer=normalizer, seed=seed, replica=r)


def occurrence_run(pattern: Pattern, beta: float, replicas: int, side: int, seed: int = 0,
                   kind: str = "occurrence", burn_in: int = 100, margin: int = 8,
                   normalizer: float = float("nan"), labels: tuple = ()) -> list[TimeRecord]:
    return [occurrence_replica(pattern, beta, side, seed, r, kind, burn_in, margin, normalizer, labels)
            for r in range(replicas)]


def matching_replica(n: int, beta: float, side: int, seed: int, r: int, burn_in: int = 100,
                     margin: int = 8, normalizer: float = float("nan"), labels: tuple = ()) -> TimeRecord:
    a = phase_window(beta, (side, side), seed, r, margin=margin, burn_in=burn_in,
                     labels=("match", 0) + tuple(labels))
    b = phase_window(beta, (side, side), seed, r, margin=margin, burn_in=burn_in,
                     labels=("match", 1) + tuple(labels))
    return matching_time(a, b, n, normalizer=normalizer, seed=seed, replica=r)


def matching_run(n: int, beta: float, replicas: int, side: int, seed: int = 0, burn_in: int = 100,
                 margin: int = 8, normalizer: float = float("nan"), labels: tuple = ()):
    return [matching_replica(n, beta, side, seed, r, burn_in, margin, normalizer, labels)
            for r in range(replicas)]


def estimate_lambda(pattern: Pattern, beta: float, t: float | None = None, replicas: int = 500,
                    seed: int = 0, burn_in: int = 100, max_side: int = 1024) -> RateEstimate:
    """Estimate of lambda_A at the default t from fresh occurrence-time replicas."""
    p_a = pattern_probability(pattern, beta)
    t = min(0.5 / p_a if t is None else t, float(max_side ** 2))
    side = cap_side_for(t, max_side=max_side)
    recs = occurrence_run(pattern, beta, replicas, side, seed, burn_in=burn_in,
                          labels=("lambda", pattern_id(pattern)))
    src = "exact" if beta == 0 else "exact_box"
    return rate_from_time_records(recs, p_a, t, pattern=pattern_id(pattern), p_a_source=src, seed=seed)


# ---------------------------------------------------------------------------
# exponential law

def exponential_law_test(records, rate: RateEstimate, law: str = "exponential",
                         min_records: int = MIN_KS_RECORDS, n=None, beta=None, seed=None) -> LawReport:
    """KS distance of lambda_hat P(A) T to Exp(1) over uncensored records."""
    v, c, _ = _record_arrays(records)
    scale = rate.lambda_hat * rate.p_a
    if not math.isfinite(scale) or scale <= 0:
        raise LawError(f"non-finite or zero rescaling factor {scale}")
    x = v[~c] * scale
    if len(x) < min_records:
        raise LawError(f"{len(x)} uncensored records, need at least {min_records}")
    ks = float(stats.kstest(x, "expon").statistic)
    thr = KS_COEFF / math.sqrt(len(x))
    cens = float(c.mean()) if len(c) else 0.0
    extras = {"rescaled_mean": float(x.mean()), "rescaled_mean_se": float(x.std(ddof=1) / math.sqrt(len(x))),
              "lambda_hat": rate.lambda_hat, "p_a": rate.p_a}
    return LawReport(law, ks, thr, verdict_for(ks, thr, cens), len(x), n, beta, seed, cens, extras)


# ---------------------------------------------------------------------------
# Poisson counts

def poisson_window_index(t: float, p_a: float, lam: float = 1.0, d: int = 2) -> int:
    """Largest cube index k with |C_k| <= t / (lam P(A)); -1 when even C_0 is too big."""
    vol = t / (lam * p_a)
    k = math.floor(vol ** (1.0 / d) + 1e-12) - 1
    while (k + 2) ** d <= vol:
        k += 1
    while k >= 0 and (k + 1) ** d > vol:
        k -= 1
    return k


def poisson_chi2(counts, t: float, min_expected: float = 5.0):
    """Pearson chi-square of counts against Poisson(t), bins merged to expected >= 5."""
    counts = np.asarray(counts, dtype=np.int64)
    N = len(counts)
    if t == 0:
        return 0.0, 1.0, 0
    kmax = int(max(counts.max(), stats.poisson.ppf(1 - 1e-9, t)))
    pmf = stats.poisson.pmf(np.arange(kmax + 1), t)
    pmf[-1] += stats.poisson.sf(kmax, t)
    obs = np.bincount(np.minimum(counts, kmax), minlength=kmax + 1).astype(np.float64)
    exp = pmf * N
    # merge from both tails until every bin is large enough
    bins_o, bins_e = [], []
    acc_o = acc_e = 0.0
    for o, e in zip(obs, exp):
        acc_o += o
        acc_e += e
        if acc_e >= min_expected:
            bins_o.append(acc_o)
            bins_e.append(acc_e)
            acc_o = acc_e = 0.0
    if acc_e > 0 and bins_e:
        bins_o[-1] += acc_o
        bins_e[-1] += acc_e
    bins_o, bins_e = np.array(bins_o), np.array(bins_e)
    if len(bins_e) < 2:
        return 0.0, 1.0, 0
    chi2 = float(((bins_o - bins_e) ** 2 / bins_e).sum())
    dof = len(bins_e) - 1
    return chi2, float(stats.chi2.sf(chi2, dof)), dof


def poisson_reports(counts, t: float, n=None, beta=None, seed=None, extras=None) -> list[LawReport]:
    """Dispersion-index and chi-square reports for Poisson(t) counts."""
    counts = np.asarray(counts, dtype=np.int64)
    N = len(counts)
    mean = float(counts.mean())
    var = float(counts.var(ddof=1)) if N > 1 else 0.0
    disp = var / mean if mean > 0 else float("nan")
    stat = abs(disp - 1) if math.isfinite(disp) else math.inf
    ex = {"mean": mean, "variance": var, "dispersion": disp, "t": t, **(extras or {})}
    chi2, pval, dof = poisson_chi2(counts, t)
    crit = float(stats.chi2.isf(0.01, dof)) if dof > 0 else math.inf
    return [LawReport("poisson_dispersion", stat, 0.15, verdict_for(stat, 0.15), N, n, beta, seed, 0.0, ex),
            LawReport("poisson_chi2", chi2, crit, verdict_for(chi2, crit), N, n, beta, seed, 0.0,
                      {**ex, "p_value": pval, "dof": dof})]


def poisson_counts(pattern: Pattern, t: float, beta: float, replicas: int, seed: int = 0,
                   rate: RateEstimate | None = None, max_side: int = 1024, burn_in: int = 100,
                   require_good: bool = True) -> list[LawReport]:
    """Counts of a good pattern in C(t / (lambda_hat P(A))) across replicas.

    Dividing the window by lambda_hat is the time change that makes the
    limiting count process a mean-one Poisson process.
    """
    if require_good and pattern.cube_index() is not None and not is_good(pattern).is_good:
        raise LawError("poisson_counts needs a good pattern")
    p_a = rate.p_a if rate is not None else pattern_probability(pattern, beta)
    lam = rate.lambda_hat if rate is not None else 1.0
    k = poisson_window_index(t, p_a, lam, pattern.d)
    if t == 0 or k < 0:
        counts = np.zeros(replicas, dtype=np.int64)
        return poisson_reports(counts, t, pattern.cube_index(), beta, seed, {"window_index": k})
    if k + 1 > max_side:
        feasible = (max_side ** pattern.d) * lam * p_a
        raise LawError(f"window C_{k} exceeds the cap {max_side}; largest feasible t is {feasible:.4g}")
    counts = np.empty(replicas, dtype=np.int64)
    W = CubeShape(k, (0,) * pattern.d)
    for r in range(replicas):
        w = phase_window(beta, (k + 1, k + 1), seed, r, burn_in=burn_in, labels=("poisson", pattern_id(pattern)))
        counts[r] = count_occurrences(pattern, W, w)
    return poisson_reports(counts, t, pattern.cube_index(), beta, seed,
                           {"window_index": k, "lambda_hat": lam, "p_a": p_a})


# ---------------------------------------------------------------------------
# increments

def increment_joint(first, second, second_censored, caps, t: float, s: float, p_a: float):
    """Estimate P(T1 <= t/P(A), T2 - T1 >= s/P(A)) from per-replica records.

    ``first`` must be uncensored whenever it is <= t/P(A); a censored second
    time counts as a success only if the window already covers T1 + s/P(A).
    Returns (estimate, usable sample size).
    """
    first = np.asarray(first, dtype=np.float64)
    second = np.asarray(second, dtype=np.float64)
    sc = np.asarray(second_censored, dtype=bool)
    caps = np.asarray(caps, dtype=np.float64)
    t_vol, s_vol = t / p_a, s / p_a
    hit1 = first <= t_vol
    gap_ok = np.where(sc, caps - first >= s_vol, second - first >= s_vol)
    unknown = hit1 & sc & (caps - first < s_vol)
    usable = ~unknown
    joint = hit1 & gap_ok & usable
    n = int(usable.sum())
    return (float(joint.sum() / n) if n else float("nan")), n


def increment_target(lam: float, t: float, s: float) -> float:
    return (1 - math.exp(-lam * t)) * math.exp(-lam * s)


def increment_report(est: float, n_used: int, lam: float, t: float, s: float,
                     threshold: float = 0.05, n=None, beta=None, seed=None, censored_fraction=0.0) -> LawReport:
    target = increment_target(lam, t, s)
    dev = abs(est - target)
    se = math.sqrt(max(target * (1 - target), 1e-300) / max(n_used, 1))
    return LawReport("increments", dev, threshold, verdict_for(dev, threshold, censored_fraction), n_used,
                     n, beta, seed, censored_fraction,
                     {"estimate": est, "target": target, "binomial_se": se, "t": t, "s": s, "lambda_hat": lam})


def increment_independence(pattern: Pattern, t: float, s: float, beta: float, replicas: int,
                           seed: int = 0, rate: RateEstimate | None = None, max_side: int = 1024,
                           burn_in: int = 100) -> LawReport:
    p_a = rate.p_a if rate is not None else pattern_probability(pattern, beta)
    lam = rate.lambda_hat if rate is not None else 1.0
    if t == 0:
        return increment_report(0.0, replicas, lam, t, s, n=pattern.cube_index(), beta=beta, seed=seed)
    side = cap_side_for((t + s) / p_a, 1.2, max_side) + 1
    firsts, seconds, sc, caps = [], [], [], []
    for r in range(replicas):
        w = phase_window(beta, (side, side), seed, r, burn_in=burn_in, labels=("increments", pattern_id(pattern)))
        recs, _ = pth_occurrence_times(pattern, w, 2)
        firsts.append(recs[0].value if not recs[0].censored else math.inf)
        seconds.append(recs[1].value)
        sc.append(recs[1].censored)
        caps.append(recs[1].window_cap)
    est, n_used = increment_joint(firsts, seconds, sc, caps, t, s, p_a)
    return increment_report(est, n_used, lam, t, s, n=pattern.cube_index(), beta=beta, seed=seed,
                            censored_fraction=0.0 if n_used == replicas else 1 - n_used / replicas)


# ---------------------------------------------------------------------------
# Gumbel bracket

@dataclass
class GumbelBracket:
    u: int
    scale: float           # lambda n f(u+1), smallest per-level lambda
    scale_prime: float     # same with the largest per-level lambda
    nu: float              # -log of the smallest tail ratio
    nu_prime: float        # -log of the largest tail ratio
    xs: np.ndarray

    def bounds(self):
        curves = [np.exp(-a * np.exp(-v * self.xs)) for a in (self.scale, self.scale_prime)
                  for v in (self.nu, self.nu_prime)]
        return np.min(curves, axis=0), np.max(curves, axis=0)


def tail_ratios(f: np.ndarray, u: int, lo: int = -3, hi: int = 6) -> np.ndarray:
    ks = np.arange(max(u + lo, 0), u + hi + 1)
    ks = ks[(ks + 1 < len(f))]
    num, den = f[ks + 1], f[ks]
    ok = (den > 0) & (num > 0)
    return num[ok] / den[ok]


def gumbel_bracket_from(f: np.ndarray, u: int, n: int, lam, xs=None) -> GumbelBracket:
    """Double-exponential bracket for P(M_n - u_n <= x).

    Uses P(M_n <= u + x) ~ exp(-lam n f(u + x + 1)) and bounds the product
    of consecutive f ratios between its extreme values over the tail window.
    ``lam`` is a scalar or a (low, high) pair.
    """
    xs = np.arange(-3, 7) if xs is None else np.asarray(xs)
    lam_lo, lam_hi = (lam, lam) if np.isscalar(lam) else lam
    r = tail_ratios(f, u)
    if r.size == 0:
        raise ResolutionError("no resolved f ratios near u_n")
    if u + 1 >= len(f) or f[u + 1] <= 0:
        raise ResolutionError("f(u_n + 1) is not resolved")
    return GumbelBracket(u, lam_lo * n * f[u + 1], lam_hi * n * f[u + 1],
                         float(-np.log(r.min())), float(-np.log(r.max())), xs)


def calibrate_lambda(overlaps, u: int, n: int, f: np.ndarray, xs=range(-3, 7), min_count: int = 20):
    """Per-level lambda_x = -log F(x) / (n f(u + x + 1)) from a calibration batch.

    Only levels with at least ``min_count`` pairs on each side of the
    threshold are used. Returns (min, max, per-level dict).
    """
    m = np.asarray(overlaps)
    N = len(m)
    per = {}
    for x in xs:
        k = u + x + 1
        c = int(np.count_nonzero(m <= u + x))
        if k < 0 or k >= len(f) or f[k] <= 0 or c < min_count or N - c < min_count:
            continue
        per[int(x)] = -math.log(c / N) / (n * f[k])
    if not per:
        raise ResolutionError("calibration batch does not resolve the CDF near u_n")
    return min(per.values()), max(per.values()), per


def gumbel_report(overlaps, bracket: GumbelBracket, n=None, beta=None, seed=None, extras=None) -> LawReport:
    m = np.asarray(overlaps) - bracket.u
    N = len(m)
    emp = np.array([(m <= x).mean() for x in bracket.xs])
    lo, hi = bracket.bounds()
    near = np.clip(emp, lo, hi)
    se = np.sqrt(np.maximum(emp * (1 - emp), near * (1 - near)) / N)
    viol = np.maximum.reduce([np.zeros_like(emp), lo - 3 * se - emp, emp - hi - 3 * se])
    stat = float(viol.max())
    ex = {"x": bracket.xs, "empirical": emp, "lower": lo, "upper": hi, "se": se, "u_n": bracket.u,
          "nu": bracket.nu, "nu_prime": bracket.nu_prime, "scale": bracket.scale,
          "scale_prime": bracket.scale_prime, **(extras or {})}
    return LawReport("gumbel_bracket", stat, 0.0, verdict_for(stat, 0.0), N, n, beta, seed, 0.0, ex)


def overlap_replica(n: int, beta: float, seed: int, r: int, labels: tuple = (), burn_in: int = 100,
                    iid: bool | None = None) -> int:
    """Maximal overlap M_n of one independent pair (iid coins at beta = 0)."""
    side = math.isqrt(n - 1) + 1
    iid = beta == 0 if iid is None else iid
    if iid:
        rng = rng_for(seed, "overlap", r, *labels)
        a = np.where(rng.random((side, side)) < 0.5, 1, -1).astype(np.int8)
        b = np.where(rng.random((side, side)) < 0.5, 1, -1).astype(np.int8)
    else:
        a = phase_window(beta, (side, side), seed, r, burn_in=burn_in, labels=("overlap", 0) + tuple(labels))
        b = phase_window(beta, (side, side), seed, r, burn_in=burn_in, labels=("overlap", 1) + tuple(labels))
    return max_overlap(a, b, n).value


def overlap_run(n: int, beta: float, pairs: int, seed: int = 0, labels: tuple = (), burn_in: int = 100,
                iid: bool | None = None):
    return np.array([overlap_replica(n, beta, seed, r, labels, burn_in, iid) for r in range(pairs)],
                    dtype=np.int64)


def gumbel_bracket(n: int, beta: float, pairs: int, seed: int = 0, un: UnEstimate | None = None,
                   un_samples: int = 0, calibration_pairs: int | None = None, burn_in: int = 100) -> LawReport:
    """Empirical CDF of M_n - u_n against the f-ratio bracket.

    u_n and f come from :func:`estimate_un` (exact at beta = 0); lambda is
    calibrated on an independent batch of pairs.
    """
    if un is None:
        method = "exact" if beta == 0 else "mc"
        k_max = max(int(math.log2(n)) + 12, 32) if beta == 0 else n
        un = estimate_un(n, beta, samples=un_samples, seed=seed, method=method, k_max=k_max)
    u = int(un.u[n - 1])
    calibration_pairs = pairs if calibration_pairs is None else calibration_pairs
    cal = overlap_run(n, beta, calibration_pairs, seed, ("calibration",), burn_in)
    lam_lo, lam_hi, per = calibrate_lambda(cal, u, n, un.f)
    br = gumbel_bracket_from(un.f, u, n, (lam_lo, lam_hi))
    m = overlap_run(n, beta, pairs, seed, ("test",), burn_in)
    return gumbel_report(m, br, n, beta, seed, {"lambda_range": (lam_lo, lam_hi), "lambda_levels": per})
