"""Disagreement percolation between independent boundary-conditioned fields."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage, stats

from .gibbs import GibbsSpec, SamplerHandle, exact_distribution, phase_window, sample
from .lattice import CubeShape, SpinConfig, as_site_set, inner_boundary
from .laws import LawReport, _jsonable, verdict_for
from .patterns import clopper_pearson

FOUR_NEIGHBORS = ndimage.generate_binary_structure(2, 1)


class PercolationError(ValueError):
    pass


@dataclass
class CouplingSample:
    sigma1: np.ndarray
    sigma2: np.ndarray
    mask: np.ndarray = field(init=False)

    def __post_init__(self):
        a = self.sigma1.spins if isinstance(self.sigma1, SpinConfig) else np.asarray(self.sigma1)
        b = self.sigma2.spins if isinstance(self.sigma2, SpinConfig) else np.asarray(self.sigma2)
        if a.shape != b.shape:
            raise PercolationError("the two fields live on different volumes")
        self.sigma1, self.sigma2 = a, b
        self.mask = a != b


def _as_mask(sample_or_mask) -> np.ndarray:
    if isinstance(sample_or_mask, CouplingSample):
        return sample_or_mask.mask
    return np.asarray(sample_or_mask, dtype=bool)


def _w_mask(W, shape) -> np.ndarray:
    m = np.zeros(shape, dtype=bool)
    if isinstance(W, CubeShape):
        lo = np.asarray(W.offset)
        if np.any(lo < 0) or np.any(lo + W.side > np.asarray(shape)):
            raise PercolationError("W is not inside the volume")
        m[W.slices()] = True
        return m
    sites = np.array(sorted(as_site_set(W)), dtype=np.int64).reshape(-1, 2)
    if sites.size == 0:
        raise PercolationError("W is empty")
    if sites.min() < 0 or np.any(sites >= np.asarray(shape)):
        raise PercolationError("W is not inside the volume")
    m[tuple(sites.T)] = True
    return m


def volume_boundary_mask(shape) -> np.ndarray:
    """Sites of the volume with a nearest neighbor outside it."""
    m = np.zeros(shape, dtype=bool)
    m[0, :] = m[-1, :] = m[:, 0] = m[:, -1] = True
    return m


def disagreement_path_exists(sample, W) -> bool:
    """True iff a nearest-neighbor path of disagreeing sites joins W to the
    inner boundary of the volume."""
    mask = _as_mask(sample)
    wm = _w_mask(W, mask.shape)
    labels, _ = ndimage.label(mask, structure=FOUR_NEIGHBORS)
    from_w = np.unique(labels[wm & mask])
    at_edge = np.unique(labels[volume_boundary_mask(mask.shape) & mask])
    return bool(np.intersect1d(from_w, at_edge).size)


# ---------------------------------------------------------------------------
# the inequality on a small volume

def exact_marginal_gap(V_extent, W, beta: float, eta: str = "plus", xi: str = "minus") -> float:
    """max over sigma_W of |P^eta_V(sigma_W) - P^xi_V(sigma_W)|, by enumeration."""
    sites = sorted(as_site_set(W)) if not isinstance(W, CubeShape) else sorted(W.sites())
    d1 = exact_distribution(GibbsSpec(V_extent, beta, eta)).marginal(sites)
    d2 = exact_distribution(GibbsSpec(V_extent, beta, xi)).marginal(sites)
    keys = set(d1) | set(d2)
    return float(max(abs(d1.get(k, 0.0) - d2.get(k, 0.0)) for k in keys))


def verify_disa_inequality(V_extent, W, beta: float, eta: str = "plus", xi: str = "minus",
                           replicas: int = 100_000, seed: int = 0, level: float = 0.95) -> LawReport:
    """Exact left side against |dW| times the coupled connection probability.

    The right side uses exact CFTP draws of both fields; the verdict compares
    the left side with the upper end of the Clopper-Pearson interval.
    """
    V_extent = tuple(V_extent)
    if V_extent[0] * V_extent[1] > 16:
        raise PercolationError("the exact left side is limited to |V| <= 16")
    lhs = exact_marginal_gap(V_extent, W, beta, eta, xi)
    w_sites = W.sites() if isinstance(W, CubeShape) else as_site_set(W)
    dw = len(inner_boundary(w_sites))
    if eta == xi:
        hits = 0
    else:
        h1 = SamplerHandle(GibbsSpec(V_extent, beta, eta), "cftp", seed, 0, labels=("disagreement", eta))
        h2 = SamplerHandle(GibbsSpec(V_extent, beta, xi), "cftp", seed, 1, labels=("disagreement", xi))
        s1 = np.array([c.spins for c in sample(h1, replicas)])
        s2 = np.array([c.spins for c in sample(h2, replicas)])
        hits = sum(disagreement_path_exists(m, W) for m in (s1 != s2))
    p_hat = hits / replicas
    lo, hi = clopper_pearson(hits, replicas, level)
    stat = max(0.0, lhs - dw * hi)
    extras = {"lhs": lhs, "boundary_of_W": dw, "p_hat": p_hat, "ci": (lo, hi), "rhs_point": dw * p_hat,
              "rhs_upper": dw * hi,
              "note": "event is a path from W; the decay bound is stated for a path from the boundary of W"}
    return LawReport("disagreement_inequality", stat, 0.0, verdict_for(stat, 0.0), replicas,
                     None, beta, seed, 0.0, extras)


# ---------------------------------------------------------------------------
# decay of connection probabilities

def cluster_reach(mask: np.ndarray, w: int = 1) -> np.ndarray:
    """Sup-norm reach beyond each w x w block of the disagreement clusters touching it.

    Entry ``[i, j]`` refers to the block with corner ``(i, j)``; -1 means no
    site of the block disagrees. The largest sup distance from a box to the
    sites of a cluster is set by the cluster's bounding box.
    """
    labels, count = ndimage.label(mask, structure=FOUR_NEIGHBORS)
    rows, cols = mask.shape
    r0 = np.full(count + 1, 0)
    r1 = np.full(count + 1, -1)
    c0 = np.full(count + 1, 0)
    c1 = np.full(count + 1, -1)
    for idx, sl in enumerate(ndimage.find_objects(labels), start=1):
        r0[idx], r1[idx] = sl[0].start, sl[0].stop - 1
        c0[idx], c1[idx] = sl[1].start, sl[1].stop - 1
    br, bc = rows - w + 1, cols - w + 1
    gi, gj = np.indices((br, bc))
    reach = np.full((br, bc), -1, dtype=np.int64)
    for a in range(w):
        for b in range(w):
            lab = labels[a:a + br, b:b + bc]
            ext = np.maximum.reduce([gi - r0[lab], r1[lab] - (gi + w - 1),
                                     gj - c0[lab], c1[lab] - (gj + w - 1)])
            reach = np.where(lab > 0, np.maximum(reach, ext), reach)
    return reach


@dataclass
class DecayFit:
    beta: float
    distances: np.ndarray
    p_hat: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    hits: np.ndarray
    trials: np.ndarray
    neg_log_p: np.ndarray
    slope: float
    slope_se: float
    intercept: float
    r_squared: float
    bounded_only: np.ndarray

    def rows(self):
        return [(self.beta, int(d), float(p), float(lo), float(hi))
                for d, p, lo, hi in zip(self.distances, self.p_hat, self.ci_lo, self.ci_hi)]

    def csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("beta", "distance", "p_hat", "ci_lo", "ci_hi"))
        for r in self.rows():
            w.writerow([repr(x) if isinstance(x, float) else x for x in r])
        return buf.getvalue()

    def summary_json(self) -> str:
        return json.dumps(_jsonable({"beta": self.beta, "slope": self.slope, "slope_se": self.slope_se,
                                     "intercept": self.intercept, "r_squared": self.r_squared,
                                     "fitted_distances": self.distances[~self.bounded_only],
                                     "bounded_only": self.distances[self.bounded_only]}), sort_keys=True)


def fit_line(x, y):
    """Least squares y = a + c x; returns (c, se(c), a, R^2)."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    if len(x) < 2:
        return math.nan, math.nan, math.nan, math.nan
    res = stats.linregress(x, y)
    se = res.stderr if len(x) > 2 else math.nan
    return float(res.slope), float(se), float(res.intercept), float(res.rvalue ** 2)


def connection_counts(masks, distances, w: int = 1):
    """Counts of blocks whose disagreement clusters reach each distance.

    Only blocks at least ``max(distances)`` away from the window edge are
    used, so reaching distance ``d`` inside the window is the same event as
    in the surrounding volume.
    """
    distances = np.asarray(distances)
    dmax = int(distances.max())
    hits = np.zeros(len(distances), dtype=np.int64)
    trials = 0
    for m in masks:
        reach = cluster_reach(m, w)
        core = reach[dmax:reach.shape[0] - dmax, dmax:reach.shape[1] - dmax]
        if core.size == 0:
            raise PercolationError("window too small for the distance grid")
        trials += core.size
        hits += (core[..., None] >= distances).reshape(-1, len(distances)).sum(axis=0)
    return hits, trials


def decay_fit_from_counts(beta, distances, hits, trials, level: float = 0.95) -> DecayFit:
    distances = np.asarray(distances)
    hits = np.asarray(hits)
    trials = np.broadcast_to(np.asarray(trials), hits.shape)
    p = hits / trials
    cis = np.array([clopper_pearson(int(h), int(n), level) for h, n in zip(hits, trials)])
    bounded = hits == 0
    # one-sided upper bound stands in for zero counts; the fit uses observed distances
    upper = np.array([1 - (1 - level) ** (1 / n) if h == 0 else hi
                      for h, n, hi in zip(hits, trials, cis[:, 1])])
    with np.errstate(divide="ignore"):
        nlp = np.where(bounded, -np.log(upper), -np.log(np.where(bounded, 1.0, p)))
    sel = ~bounded & (distances > 0)
    slope, se, icpt, r2 = fit_line(distances[sel], nlp[sel])
    return DecayFit(beta, distances, p, cis[:, 0], np.where(bounded, upper, cis[:, 1]), hits,
                    np.asarray(trials), nlp, slope, se, icpt, r2, bounded)


def fit_decay(beta: float, side: int, distances=(2, 3, 4, 5), replicas: int = 20, seed: int = 0,
              w: int = 1, burn_in: int = 100, iid: bool | None = None) -> DecayFit:
    """Connection probability of two independent plus-phase copies versus distance.

    Each replica is a pair of ``side x side`` windows; every interior w x w
    block serves as W.
    """
    iid = beta == 0 if iid is None else iid

    def masks():
        for r in range(replicas):
            if iid:
                from .seeding import rng_for
                rng = rng_for(seed, "decay-iid", r)
                yield rng.random((side, side)) < 0.5
            else:
                a = phase_window(beta, (side, side), seed, r, burn_in=burn_in, labels=("decay", beta, 0))
                b = phase_window(beta, (side, side), seed, r, burn_in=burn_in, labels=("decay", beta, 1))
                yield a != b

    hits, trials = connection_counts(masks(), distances, w)
    return decay_fit_from_counts(beta, distances, hits, trials)


def decay_table(fits) -> list[dict]:
    """Slopes across a beta grid with a monotonicity flag per consecutive pair."""
    out = []
    fits = sorted(fits, key=lambda f: f.beta)
    for i, f in enumerate(fits):
        row = {"beta": f.beta, "slope": f.slope, "slope_se": f.slope_se, "r_squared": f.r_squared}
        if i:
            prev = fits[i - 1]
            comb = math.hypot(f.slope_se, prev.slope_se)
            row["increase_over_previous"] = f.slope - prev.slope
            row["combined_se"] = comb
        out.append(row)
    return out
