"""Independent iid-coin references for the beta = 0 checks.

These deliberately avoid the bit-packed scanner: block identities come from
integer hashes built by summing shifted bit planes, and overlaps are
recomputed from scratch for every k.
"""
from __future__ import annotations

import math

import numpy as np

from .lattice import nested_order
from .seeding import rng_for


def coins(rng, shape, p: float = 0.5) -> np.ndarray:
    return np.where(rng.random(shape) < p, 1, -1).astype(np.int8)


def block_codes(spins: np.ndarray, b: int) -> np.ndarray:
    """Integer code of every b x b block (bit i*b+j set when spin is plus)."""
    bits = (np.asarray(spins) > 0).astype(np.int64)
    H, W = bits.shape
    out = np.zeros((H - b + 1, W - b + 1), dtype=np.int64)
    for i in range(b):
        for j in range(b):
            out += bits[i:i + H - b + 1, j:j + W - b + 1] << (i * b + j)
    return out


def first_times(spins: np.ndarray, block: np.ndarray, rank: int = 1):
    """Volume of the cube C_k holding the ``rank``-th occurrence of ``block``
    (None if fewer occurrences fit in the window)."""
    b = block.shape[0]
    code = int(block_codes(block, b)[0, 0])
    hits = np.argwhere(block_codes(spins, b) == code)
    if len(hits) < rank:
        return None
    k = np.sort(hits.max(axis=1) + b - 1)
    cap = min(spins.shape) - 1
    k = k[k <= cap]
    if len(k) < rank:
        return None
    return int((k[rank - 1] + 1) ** 2)


def occurrence_sample(block: np.ndarray, side: int, reps: int, seed: int = 0) -> np.ndarray:
    out = np.empty(reps, dtype=np.float64)
    for r in range(reps):
        t = first_times(coins(rng_for(seed, "ref-occ", r), (side, side)), block)
        out[r] = np.inf if t is None else t
    return out


def matching_sample(n: int, side: int, reps: int, seed: int = 0) -> np.ndarray:
    block = np.ones((n + 1, n + 1), dtype=np.int8)
    out = np.empty(reps, dtype=np.float64)
    for r in range(reps):
        rng = rng_for(seed, "ref-match", r)
        agree = np.where(coins(rng, (side, side)) == coins(rng, (side, side)), 1, -1)
        t = first_times(agree, block)
        out[r] = np.inf if t is None else t
    return out


def return_sample(n: int, side: int, reps: int, seed: int = 0) -> np.ndarray:
    out = np.empty(reps, dtype=np.float64)
    for r in range(reps):
        w = coins(rng_for(seed, "ref-return", r), (side, side))
        t = first_times(w, w[:n + 1, :n + 1], rank=2)
        out[r] = np.inf if t is None else t
    return out


def waiting_sample(n: int, side: int, reps: int, seed: int = 0) -> np.ndarray:
    out = np.empty(reps, dtype=np.float64)
    for r in range(reps):
        rng = rng_for(seed, "ref-wait", r)
        eta = coins(rng, (n + 1, n + 1))
        t = first_times(coins(rng, (side, side)), eta)
        out[r] = np.inf if t is None else t
    return out


def overlap_value(agree: np.ndarray, n: int) -> int:
    """Largest k with some translate of G_k inside G_n fully agreeing."""
    order = nested_order(n, 2)
    in_gn = {tuple(int(c) for c in s) for s in order}
    best = 0
    for k in range(1, n + 1):
        g = order[:k]
        found = False
        for x in in_gn:
            ok = True
            for s in g:
                y = (x[0] + int(s[0]) - int(g[0][0]), x[1] + int(s[1]) - int(g[0][1]))
                if y not in in_gn or not agree[y]:
                    ok = False
                    break
            if ok:
                found = True
                break
        if not found:
            break
        best = k
    return best


def overlap_sample(n: int, reps: int, seed: int = 0) -> np.ndarray:
    side = math.isqrt(n - 1) + 1
    out = np.empty(reps, dtype=np.int64)
    for r in range(reps):
        rng = rng_for(seed, "ref-overlap", r)
        agree = coins(rng, (side, side)) == coins(rng, (side, side))
        out[r] = overlap_value(agree, n)
    return out


def single_site_occurrence_cdf(volumes) -> np.ndarray:
    """P(T <= |C_k|) for the one-site pattern at beta = 0: 1 - 2^-|C_k|."""
    v = np.asarray(volumes, dtype=np.float64)
    return 1 - 2.0 ** -v


def ks_discrete(sample, reference=None, cdf=None) -> float:
    """Sup distance between the ECDF of ``sample`` and a reference ECDF or CDF.

    Both sides are right-continuous step functions on the pooled support,
    so checking the support points is enough. Infinite values (censored) sit
    above every finite point.
    """
    x = np.sort(np.asarray(sample, dtype=np.float64))
    pts = np.unique(x[np.isfinite(x)])
    if reference is not None:
        y = np.sort(np.asarray(reference, dtype=np.float64))
        pts = np.union1d(pts, np.unique(y[np.isfinite(y)]))
        G = np.searchsorted(y, pts, side="right") / len(y)
    else:
        G = cdf(pts)
    F = np.searchsorted(x, pts, side="right") / len(x)
    return float(np.max(np.abs(F - G))) if len(pts) else 0.0
