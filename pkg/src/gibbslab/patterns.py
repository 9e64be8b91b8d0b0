"""Pattern occurrences and the time functionals built on them.

Every scan reduces to a *match map*: a boolean array over placements ``p``
(the lower corner of the translated support) telling whether the
configuration shows the pattern there. Against the cube sequence
``V_k = C_k`` a placement fits inside ``C_k`` exactly when
``max_i (p_i + b_i - 1) <= k`` with ``b`` the support's bounding box, so
occurrence, return and p-th occurrence times are order statistics of that
per-placement index.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .lattice import (CubeShape, LatticeError, NestedShapes, Pattern, ShapeSequence, SpinConfig,
                      as_site_set, nested_order, pack_rows, sup_norm)

KINDS = ("occurrence", "return", "waiting", "matching", "overlap", "pth")


class PatternError(ValueError):
    pass


class ResolutionError(RuntimeError):
    pass


def _spins(x) -> np.ndarray:
    return x.spins if isinstance(x, SpinConfig) else np.asarray(x, dtype=np.int8)


# ---------------------------------------------------------------------------
# scanners

def _window_codes(words: np.ndarray, ncols: int, width: int, start: int, count: int) -> np.ndarray:
    """Bits ``[c, c + width)`` of every row for ``c = start .. start + count - 1``."""
    padded = np.concatenate([words, np.zeros(words.shape[:-1] + (1,), dtype=np.uint64)], axis=-1)
    c = np.arange(start, start + count, dtype=np.int64)
    wi = c >> 6
    s = (c & 63).astype(np.uint64)
    lo = padded[..., wi] >> s
    hi = np.where(s == 0, np.uint64(0), padded[..., wi + 1] << ((np.uint64(64) - s) % np.uint64(64)))
    val = lo | hi
    if width < 64:
        val = val & np.uint64((1 << width) - 1)
    return val


def match_map_bitpacked(pattern: Pattern, spins) -> np.ndarray:
    """Placements where ``spins`` shows ``pattern``; rows compared as masked words."""
    spins = _spins(spins)
    d = spins.ndim
    if pattern.d != d:
        raise PatternError("pattern and window dimensions differ")
    box = pattern.box_shape()
    E = spins.shape
    out_shape = tuple(e - b + 1 for e, b in zip(E, box))
    if min(out_shape) <= 0:
        return np.zeros(tuple(max(0, s) for s in out_shape), dtype=bool)
    words = pack_rows(spins)
    rel = pattern.sites - pattern.lower()
    width = box[-1]
    result = np.ones(out_shape, dtype=bool)
    rows = {}
    for site, v in zip(rel, pattern.values):
        rows.setdefault(tuple(int(c) for c in site[:-1]), []).append((int(site[-1]), int(v)))
    for chunk in range(0, width, 64):
        cw = min(64, width - chunk)
        codes = _window_codes(words, E[-1], cw, chunk, out_shape[-1])
        for lead, cells in rows.items():
            code = mask = 0
            for col, v in cells:
                if chunk <= col < chunk + cw:
                    mask |= 1 << (col - chunk)
                    if v > 0:
                        code |= 1 << (col - chunk)
            if mask == 0:
                continue
            sl = tuple(slice(o, o + n) for o, n in zip(lead, out_shape[:-1]))
            block = codes[sl]
            result &= (block & np.uint64(mask)) == np.uint64(code)
    return result


def match_map_naive(pattern: Pattern, spins) -> np.ndarray:
    """Reference scanner: compare every placement site by site."""
    spins = _spins(spins)
    box = pattern.box_shape()
    E = spins.shape
    out_shape = tuple(e - b + 1 for e, b in zip(E, box))
    if min(out_shape) <= 0:
        return np.zeros(tuple(max(0, s) for s in out_shape), dtype=bool)
    rel = pattern.sites - pattern.lower()
    views = sliding_window_view(spins, box)
    sel = views[(Ellipsis,) + tuple(rel.T)]
    return np.all(sel == pattern.values, axis=-1)


def match_map(pattern: Pattern, spins, method: str = "bitpacked") -> np.ndarray:
    if method == "bitpacked":
        return match_map_bitpacked(pattern, spins)
    if method == "naive":
        return match_map_naive(pattern, spins)
    raise PatternError(f"unknown scanner {method!r}")


def agreement(sigma, eta) -> np.ndarray:
    """+1 where the two windows agree, -1 elsewhere."""
    a, b = _spins(sigma), _spins(eta)
    if a.shape != b.shape:
        raise PatternError("windows must have the same extent")
    return np.where(a == b, 1, -1).astype(np.int8)


def full_pattern(n: int, d: int = 2, value: int = 1) -> Pattern:
    return Pattern.from_array(np.full((n + 1,) * d, value, dtype=np.int8))


# ---------------------------------------------------------------------------
# counting

def _region_mask(W, shape) -> np.ndarray:
    mask = np.zeros(shape, dtype=bool)
    if isinstance(W, CubeShape):
        if any(o < 0 or o + W.n >= s for o, s in zip(W.offset, shape)):
            raise PatternError("region exceeds the window")
        mask[W.slices()] = True
        return mask
    sites = np.array(sorted(as_site_set(W)))
    if sites.min() < 0 or np.any(sites >= np.array(shape)):
        raise PatternError("region exceeds the window")
    mask[tuple(sites.T)] = True
    return mask


def count_occurrences(pattern: Pattern, W, sigma, method: str = "bitpacked") -> int:
    """Number of shifts ``x`` with ``V + x`` inside ``W`` and ``sigma`` equal to
    the shifted pattern there."""
    spins = _spins(sigma)
    region = _region_mask(W, spins.shape)
    hits = match_map(pattern, spins, method)
    if hits.size == 0:
        return 0
    rel = pattern.sites - pattern.lower()
    inside = np.ones(hits.shape, dtype=bool)
    views = sliding_window_view(region, pattern.box_shape())
    inside &= np.all(views[(Ellipsis,) + tuple(rel.T)], axis=-1)
    return int(np.count_nonzero(hits & inside))


# ---------------------------------------------------------------------------
# time records

@dataclass
class TimeRecord:
    """One measured time. ``value`` is a volume |V_k| (sites for overlaps)."""

    kind: str
    value: int
    censored: bool
    window_cap: int
    normalizer: float = float("nan")
    seed: int | None = None
    replica: int | None = None
    p: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise PatternError(f"unknown record kind {self.kind!r}")

    def to_json(self) -> str:
        d = {"kind": self.kind, "value": int(self.value), "censored": bool(self.censored),
             "normalizer": _json_float(self.normalizer), "seed": self.seed,
             "replica": self.replica, "window_cap": int(self.window_cap)}
        if self.p is not None:
            d["p"] = self.p
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "TimeRecord":
        d = json.loads(line)
        norm = d.get("normalizer")
        return cls(d["kind"], d["value"], d["censored"], d["window_cap"],
                   float("nan") if norm is None else norm, d.get("seed"), d.get("replica"),
                   d.get("p"))


def _json_float(x):
    return None if x is None or (isinstance(x, float) and math.isnan(x)) else float(x)


def _fit_index(pattern_box, shape) -> np.ndarray:
    """Smallest cube index k with the placement inside ``C_k``, per placement."""
    grids = np.indices(shape)
    return np.max([g + b - 1 for g, b in zip(grids, pattern_box)], axis=0)


def _check_cap(seq: ShapeSequence, cap: int, extent):
    if seq.is_cubes():
        if any(cap + 1 > e for e in extent):
            raise PatternError(f"V_{cap} does not fit in the window {tuple(extent)}")
    else:
        sites = np.array(sorted(seq.shape(cap)))
        if sites.min() < 0 or np.any(sites >= np.array(extent)):
            raise PatternError(f"V_{cap} does not fit in the window {tuple(extent)}")


def _hit_indices(pattern: Pattern, spins, seq: ShapeSequence, cap: int, hits=None) -> np.ndarray:
    """Sorted sequence indices ``k <= cap`` at which each occurrence first fits."""
    _check_cap(seq, cap, spins.shape)
    if hits is None:
        hits = match_map(pattern, spins)
    if seq.is_cubes():
        ks = _fit_index(pattern.box_shape(), hits.shape)[hits]
        return np.sort(ks[ks <= cap])
    rel = pattern.sites - pattern.lower()
    out = []
    for p in np.argwhere(hits):
        placed = {tuple(int(c) for c in s) for s in rel + p}
        for k in range(cap + 1):
            if placed <= seq.shape(k):
                out.append(k)
                break
    return np.sort(np.array(out, dtype=np.int64))


def _record(kind, seq, ks, rank, cap, normalizer, p=None, seed=None, replica=None):
    if len(ks) >= rank:
        return TimeRecord(kind, seq.volume(int(ks[rank - 1])), False, seq.volume(cap),
                          normalizer, seed, replica, p)
    return TimeRecord(kind, seq.volume(cap), True, seq.volume(cap), normalizer, seed, replica, p)


def occurrence_time(pattern: Pattern, sigma, seq: ShapeSequence | None = None, cap: int | None = None,
                    normalizer: float = float("nan"), kind: str = "occurrence", **tags) -> TimeRecord:
    """Volume of the first ``V_k`` (k <= cap) in which the pattern appears."""
    spins = _spins(sigma)
    seq = seq or ShapeSequence(spins.ndim)
    cap = min(spins.shape) - 1 if cap is None else cap
    ks = _hit_indices(pattern, spins, seq, cap)
    return _record(kind, seq, ks, 1, cap, normalizer, **tags)


def return_time(pattern: Pattern, sigma, seq: ShapeSequence | None = None, cap: int | None = None,
                normalizer: float = float("nan"), **tags) -> TimeRecord:
    """Volume of the first ``V_k`` holding a second occurrence of the pattern
    that ``sigma`` shows on its support."""
    spins = _spins(sigma)
    idx = tuple(pattern.sites.T)
    if np.any(pattern.sites < 0) or np.any(pattern.sites >= np.array(spins.shape)) \
            or not np.array_equal(spins[idx], pattern.values):
        raise PatternError("configuration does not show the pattern on its support")
    seq = seq or ShapeSequence(spins.ndim)
    cap = min(spins.shape) - 1 if cap is None else cap
    ks = _hit_indices(pattern, spins, seq, cap)
    return _record("return", seq, ks, 2, cap, normalizer, **tags)


def waiting_time(eta, sigma, n: int, seq: ShapeSequence | None = None, cap: int | None = None,
                 normalizer: float = float("nan"), **tags) -> TimeRecord:
    """Occurrence time in ``sigma`` of the pattern ``eta`` shows on ``C_n``."""
    e = _spins(eta)
    pattern = Pattern.from_config(e, CubeShape(n, (0,) * e.ndim))
    return occurrence_time(pattern, sigma, seq, cap, normalizer, kind="waiting", **tags)


def matching_time(sigma, eta, n: int, seq: ShapeSequence | None = None, cap: int | None = None,
                  normalizer: float = float("nan"), **tags) -> TimeRecord:
    """Volume of the first ``V_k`` containing a translate of ``C_n`` on which
    the two windows agree."""
    agree = agreement(sigma, eta)
    pattern = full_pattern(n, agree.ndim)
    return occurrence_time(pattern, agree, seq, cap, normalizer, kind="matching", **tags)


def pth_occurrence_times(pattern: Pattern, sigma, p_max: int, seq: ShapeSequence | None = None,
                         cap: int | None = None, normalizer: float = float("nan"), **tags):
    """Records ``T^1 .. T^p_max`` and their increments ``T^p - T^(p-1)``.

    Increments are None from the first censored level on.
    """
    spins = _spins(sigma)
    seq = seq or ShapeSequence(spins.ndim)
    cap = min(spins.shape) - 1 if cap is None else cap
    ks = _hit_indices(pattern, spins, seq, cap)
    records = [_record("pth", seq, ks, p, cap, normalizer, p=p, **tags) for p in range(1, p_max + 1)]
    increments = []
    prev = 0
    for rec in records:
        increments.append(None if rec.censored else rec.value - prev)
        if not rec.censored:
            prev = rec.value
    return records, increments


# ---------------------------------------------------------------------------
# nested shapes and overlaps

def _nested_offsets(n: int, d: int, shapes: NestedShapes | None):
    order = shapes.order(n) if shapes is not None else nested_order(n, d)
    return np.asarray(order, dtype=np.int64)


def max_overlap(eta, sigma, n: int, shapes: NestedShapes | None = None) -> TimeRecord:
    """Largest ``k`` such that a translate ``G_k + x`` inside ``G_n`` carries
    identical spins in both windows (0 if no site agrees)."""
    agree = _spins(agreement(eta, sigma)) > 0
    d = agree.ndim
    order = _nested_offsets(n, d, shapes)
    hi = order.max(axis=0) + 1
    if np.any(order.min(axis=0) < 0) or np.any(hi > np.array(agree.shape)):
        raise PatternError("G_n does not fit in the windows")
    inside = np.zeros(tuple(hi), dtype=bool)
    inside[tuple(order.T)] = True
    good = inside & agree[tuple(slice(0, h) for h in hi)]
    # alive[x] : G_k + x lies in G_n and agrees; x ranges over the bounding box
    alive = good.copy()
    best = 0
    for k in range(1, n + 1):
        g = order[k - 1]
        if k > 1:
            shifted = np.zeros_like(alive)
            src = tuple(slice(int(c), None) for c in g)
            dst = tuple(slice(0, h - int(c)) for h, c in zip(hi, g))
            shifted[dst] = good[src]
            alive &= shifted
        if not alive.any():
            break
        best = k
    return TimeRecord("overlap", best, False, n)


def nested_matching_time(eta, sigma, k: int, shapes: NestedShapes | None = None,
                         n_max: int | None = None) -> int | None:
    """First ``m`` such that some ``G_k + x`` inside ``G_m`` agrees (None if
    none inside ``G_n_max``)."""
    agree = _spins(agreement(eta, sigma)) > 0
    d = agree.ndim
    n_max = n_max if n_max is not None else int(np.prod(agree.shape))
    order = _nested_offsets(n_max, d, shapes)
    hi = order.max(axis=0) + 1
    rank = np.full(tuple(hi), np.iinfo(np.int64).max, dtype=np.int64)
    rank[tuple(order.T)] = np.arange(1, len(order) + 1)
    gk = order[:k]
    need = np.zeros(tuple(hi), dtype=np.int64)
    ok = np.ones(tuple(hi), dtype=bool)
    sub = agree[tuple(slice(0, h) for h in hi)]
    for g in gk:
        src = tuple(slice(int(c), None) for c in g)
        dst = tuple(slice(0, h - int(c)) for h, c in zip(hi, g))
        r = np.full(tuple(hi), np.iinfo(np.int64).max, dtype=np.int64)
        r[dst] = rank[src]
        a = np.zeros(tuple(hi), dtype=bool)
        a[dst] = sub[src]
        need = np.maximum(need, r)
        ok &= a
    cand = need[ok]
    cand = cand[cand <= n_max]
    return int(cand.min()) if cand.size else None


# ---------------------------------------------------------------------------
# good patterns

@dataclass
class GoodnessReport:
    pattern: Pattern
    is_good: bool
    witness: tuple | None = None


def short_shifts(n: int, d: int = 2):
    """Nonzero shifts with sup norm strictly below n/2, witness search order."""
    r = math.ceil(n / 2) - 1
    xs = [x for x in itertools.product(range(-r, r + 1), repeat=d) if any(x)]
    return sorted(xs, key=lambda x: (sup_norm(x), sum(1 for c in x if c), tuple(-c for c in x)))


def shift_compatible(arr: np.ndarray, x) -> bool:
    """True if the box pattern agrees with its ``x`` shift on the overlap."""
    a_sl, b_sl = [], []
    for c, s in zip(x, arr.shape):
        if c >= 0:
            a_sl.append(slice(c, s))
            b_sl.append(slice(0, s - c))
        else:
            a_sl.append(slice(0, s + c))
            b_sl.append(slice(-c, s))
    return bool(np.array_equal(arr[tuple(a_sl)], arr[tuple(b_sl)]))


def is_good(pattern: Pattern) -> GoodnessReport:
    """Good iff no nonzero shift with ``|x| < n/2`` is compatible with the pattern."""
    n = pattern.cube_index()
    if n is None:
        raise PatternError("goodness is defined for cube-supported patterns")
    arr = pattern.as_array()
    for x in short_shifts(n, pattern.d):
        if shift_compatible(arr, x):
            return GoodnessReport(pattern, False, x)
    return GoodnessReport(pattern, True, None)


# ---------------------------------------------------------------------------
# u_n

@dataclass
class UnEstimate:
    u: np.ndarray          # u[n-1] = u_n
    f: np.ndarray          # f[k] = P x P(agree on G_k), f[0] = 1
    delta: float
    method: str
    checks: np.ndarray = field(default=None)  # n * f(u_n)


def un_from_f(f: np.ndarray, n_max: int) -> np.ndarray:
    """u_n = max{k >= 0 : f(k) >= 1/n} for n = 1..n_max with f(0) = 1."""
    f = np.asarray(f, dtype=np.float64)
    out = np.empty(n_max, dtype=np.int64)
    for n in range(1, n_max + 1):
        ok = np.nonzero(f >= 1.0 / n)[0]
        out[n - 1] = ok.max()
    return out


def agreement_lengths(eta, sigma, k_max: int, shapes: NestedShapes | None = None) -> int:
    """Largest ``k <= k_max`` with the windows agreeing on ``G_k`` at the origin."""
    agree = _spins(agreement(eta, sigma)) > 0
    order = _nested_offsets(k_max, agree.ndim, shapes)
    vals = agree[tuple(order.T)]
    bad = np.nonzero(~vals)[0]
    return int(bad[0]) if bad.size else k_max


# ---------------------------------------------------------------------------
# sampled estimates

def clopper_pearson(k: int, n: int, level: float = 0.95) -> tuple[float, float]:
    from scipy.stats import beta as beta_dist
    a = 1 - level
    lo = 0.0 if k == 0 else float(beta_dist.ppf(a / 2, k, n - k + 1))
    hi = 1.0 if k == n else float(beta_dist.ppf(1 - a / 2, k + 1, n - k))
    return lo, hi


@dataclass
class FractionEstimate:
    n: int
    beta: float
    fraction: float
    ci: tuple
    samples: int


def good_fraction(n: int, beta: float, samples: int, seed: int = 0, margin: int = 8,
                  burn_in: int = 200) -> FractionEstimate:
    """Monte Carlo estimate of the probability that ``sigma_{C_n}`` is good."""
    from .gibbs import phase_window
    if not short_shifts(n, 2):
        return FractionEstimate(n, beta, 1.0, (1.0, 1.0), samples)
    good = 0
    for r in range(samples):
        w = phase_window(beta, (n + 1, n + 1), seed, r, margin=margin, burn_in=burn_in,
                         labels=("good", n))
        good += is_good(Pattern.from_array(w)).is_good
    return FractionEstimate(n, beta, good / samples, clopper_pearson(good, samples), samples)


def exact_f(k_max: int, beta: float, margin: int = 3, shapes: NestedShapes | None = None) -> np.ndarray:
    """f(k) = sum_A P(sigma_{G_k} = A)^2 for k = 0..k_max.

    beta = 0 gives 2^-k; otherwise P is the marginal of a plus-boundary box
    that surrounds ``G_k_max`` by ``margin`` sites, computed exactly with the
    row transfer matrix (k_max <= 12).
    """
    if beta == 0:
        return 2.0 ** -np.arange(k_max + 1)
    if k_max > 12:
        raise ResolutionError("exact f(k) limited to k <= 12")
    from .transfer import box_pattern_probabilities
    order = _nested_offsets(max(k_max, 1), 2, shapes)
    hi = order.max(axis=0) + 1
    rows, cols = int(hi[0]) + 2 * margin, int(hi[1]) + 2 * margin
    f = [1.0]
    for k in range(1, k_max + 1):
        sites = order[:k] + margin
        pats = np.array(list(itertools.product((1, -1), repeat=k)), dtype=np.int8)
        p = box_pattern_probabilities(beta, rows, cols, 1.0, sites, pats)
        f.append(float((p ** 2).sum()))
    return np.array(f)


def estimate_un(n_max: int, beta: float, samples: int = 0, seed: int = 0, method: str = "mc",
                k_max: int = 256, margin: int = 8, burn_in: int = 200, min_hits: int = 5) -> UnEstimate:
    """Normalizing sequence u_1..u_n_max of the maximal-overlap law.

    ``method="mc"`` estimates f(k) from ``samples`` independent pairs of
    plus-phase windows covering ``G_k_max``; ``method="exact"`` uses
    :func:`exact_f`.
    """
    if method == "exact":
        f = exact_f(k_max, beta)
    elif method == "mc":
        if samples * (1.0 / n_max) < min_hits:
            raise ResolutionError(f"{samples} pairs cannot resolve f(k) at level 1/{n_max}")
        from .gibbs import phase_window
        side = math.isqrt(k_max - 1) + 1
        lengths = np.empty(samples, dtype=np.int64)
        for r in range(samples):
            a = phase_window(beta, (side, side), seed, r, margin=margin, burn_in=burn_in, labels=("un", 0))
            b = phase_window(beta, (side, side), seed, r, margin=margin, burn_in=burn_in, labels=("un", 1))
            lengths[r] = agreement_lengths(a, b, k_max)
        f = np.array([(lengths >= k).mean() for k in range(k_max + 1)])
    else:
        raise PatternError(f"unknown method {method!r}")
    if f[-1] >= 1.0 / n_max:
        raise ResolutionError(f"f({k_max}) = {f[-1]:.3g} still above 1/{n_max}; raise k_max")
    u = un_from_f(f, n_max)
    pos = f[1:] > 0
    ratios = f[1:][pos] / f[:-1][pos]
    delta = float(ratios.min()) if ratios.size else float("nan")
    checks = np.arange(1, n_max + 1) * f[u]
    return UnEstimate(u, f, delta, method, checks)
