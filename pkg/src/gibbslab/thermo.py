"""Pressure, rate function and entropy: closed forms and time-based estimators.

``pressure(q, beta)`` follows the sign of the defining sum,
``lim |V|^-1 log sum exp(-q beta sum_<xy> s_x s_y)``. On the bipartite square
lattice the gauge flip of one sublattice makes it even in ``q``, so it
equals the ferromagnetic pressure at coupling ``|q| beta``.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from scipy.special import ellipk, logsumexp

from . import transfer
from .gibbs import phase_window
from .lattice import Pattern
from .patterns import matching_time, return_time, waiting_time
from .seeding import rng_for

LOG2 = math.log(2.0)
ENUMERATION_SIDE_CAP = 5
TRANSFER_WIDTH_CAP = 16
METHODS = ("transfer", "enumeration", "onsager")


class ThermoError(ValueError):
    pass


# ---------------------------------------------------------------------------
# closed forms (square lattice, unit coupling)

def onsager_pressure(beta: float) -> float:
    """log Z per site of the infinite square-lattice ferromagnet."""
    beta = abs(beta)
    if beta == 0:
        return LOG2
    c, s = math.cosh(2 * beta), math.sinh(2 * beta)
    kappa = 2 * s / c ** 2

    def integrand(theta):
        return math.log((1 + math.sqrt(max(0.0, 1 - (kappa * math.sin(theta)) ** 2))) / 2)

    val, _ = integrate.quad(integrand, 0, math.pi / 2, epsabs=1e-14, epsrel=1e-13, limit=400)
    return math.log(2 * c) + val / math.pi


def onsager_energy(beta: float) -> float:
    """Mean energy per site, ``<-sum s_x s_y> / N``."""
    if beta == 0:
        return 0.0
    t = math.tanh(2 * beta)
    kappa = 2 * math.sinh(2 * beta) / math.cosh(2 * beta) ** 2
    return -(1 / t) * (1 + (2 / math.pi) * (2 * t * t - 1) * ellipk(kappa ** 2))


def onsager_entropy(beta: float) -> float:
    return onsager_pressure(beta) + beta * onsager_energy(beta)


def onsager_magnetization(beta: float) -> float:
    x = math.sinh(2 * beta) ** -4 if beta > 0 else math.inf
    return (1 - x) ** 0.125 if x < 1 else 0.0


# ---------------------------------------------------------------------------
# pressure

def enumeration_log_partition(K: float, side: int, chunk: int = 1 << 18) -> float:
    """log sum over a free side x side box of exp(K sum_<xy> s_x s_y), brute force."""
    n = side * side
    logs = []
    for start in range(0, 1 << n, chunk):
        codes = np.arange(start, min(1 << n, start + chunk), dtype=np.int64)
        s = np.where((codes[:, None] >> np.arange(n)) & 1, 1, -1).reshape(-1, side, side)
        e = (s[:, 1:, :] * s[:, :-1, :]).sum(axis=(1, 2)) + (s[:, :, 1:] * s[:, :, :-1]).sum(axis=(1, 2))
        logs.append(logsumexp(K * e))
    return float(logsumexp(logs))


def pressure(q: float, beta: float, method: str = "transfer", width: int = 14, tol: float = 1e-10) -> float:
    """P(q beta) in nats per site.

    ``transfer``: (1/width) log of the dominant eigenvalue of the row transfer
    operator of a periodic strip of the given width. ``enumeration``: the
    finite-volume value on a free ``width x width`` box. ``onsager``: the
    closed form.
    """
    K = -q * beta
    if method == "transfer":
        if width > TRANSFER_WIDTH_CAP:
            raise ThermoError(f"strip width {width} exceeds {TRANSFER_WIDTH_CAP}")
        return transfer.strip_log_eigenvalue(K, width, periodic=True, tol=tol) / width
    if method == "enumeration":
        if width > ENUMERATION_SIDE_CAP:
            raise ThermoError(f"box side {width} exceeds {ENUMERATION_SIDE_CAP}")
        return enumeration_log_partition(K, width) / width ** 2
    if method == "onsager":
        return onsager_pressure(K)
    raise ThermoError(f"unknown pressure method {method!r}")


@dataclass
class PressureCurve:
    beta: float
    q: np.ndarray
    values: np.ndarray
    method: str
    size: int

    def __call__(self, q):
        return np.interp(q, self.q, self.values)

    def rows(self):
        return [(float(q), float(v), self.method, self.size) for q, v in zip(self.q, self.values)]


def pressure_curve(beta: float, q_grid, method: str = "transfer", width: int = 14) -> PressureCurve:
    q_grid = np.asarray(q_grid, dtype=np.float64)
    vals = np.array([pressure(q, beta, method, width) for q in q_grid])
    return PressureCurve(beta, q_grid, vals, method, width)


def curve_csv(rows, header=("q_or_beta", "value", "method", "width_or_side")) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(x) if isinstance(x, float) else x for x in r])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# rate function

def rate_function(q: float, beta: float, pressure_fn=None) -> float:
    """Scaled cumulant generating function of log waiting times.

    ``P((1-q) beta) + (q-1) P(beta)`` for ``q >= -1`` and the constant
    ``P(2 beta) - 2 P(beta)`` below. ``pressure_fn(x)`` returns P at coupling
    ``x`` (default: transfer matrix, width 14).
    """
    if pressure_fn is None:
        pressure_fn = _default_pressure
    if q >= -1:
        return pressure_fn((1 - q) * beta) + (q - 1) * pressure_fn(beta)
    return pressure_fn(2 * beta) - 2 * pressure_fn(beta)


_PRESSURE_CACHE: dict = {}


def _default_pressure(x: float) -> float:
    key = round(float(x), 14)
    if key not in _PRESSURE_CACHE:
        _PRESSURE_CACHE[key] = pressure(1.0, -x) if x != 0 else LOG2
    return _PRESSURE_CACHE[key]


def ferro_pressure(beta: float, width: int = 14) -> float:
    """P at coupling ``beta`` (transfer matrix), cached."""
    if width == 14:
        return _default_pressure(beta)
    return pressure(-1.0, beta, "transfer", width)


@dataclass
class RateFunctionCurve:
    beta: float
    q: np.ndarray
    values: np.ndarray

    def rows(self):
        return [(float(q), float(v), "rate", 0) for q, v in zip(self.q, self.values)]


def rate_function_curve(beta: float, q_grid, pressure_fn=None) -> RateFunctionCurve:
    q_grid = np.asarray(q_grid, dtype=np.float64)
    return RateFunctionCurve(beta, q_grid, np.array([rate_function(q, beta, pressure_fn) for q in q_grid]))


def collision_rate(beta: float, pressure_fn=None) -> float:
    """-lim |V|^-1 log sum_A P(A)^2 = 2 P(beta) - P(2 beta) = -rate_function(-1)."""
    return -rate_function(-1.0, beta, pressure_fn)


# ---------------------------------------------------------------------------
# entropy

@dataclass
class EntropyReport:
    method: str
    n: int
    value: float
    ci: tuple = (float("nan"), float("nan"))
    target: float = float("nan")
    extras: dict = field(default_factory=dict)

    def row(self):
        return {"method": self.method, "n": self.n, "value": self.value, "ci_lo": self.ci[0],
                "ci_hi": self.ci[1], "target": self.target, **self.extras}


def entropy_oracle(beta: float, h: float = 1e-4, width: int = 14, rel_tol: float = 1e-3) -> EntropyReport:
    """s = P(beta) - beta P'(beta) from the transfer-matrix pressure.

    P' is a central difference with one Richardson step; the difference
    between the plain and extrapolated slopes is the stability diagnostic.
    """
    def P(b):
        return ferro_pressure(b, width)

    d1 = (P(beta + h) - P(beta - h)) / (2 * h)
    d2 = (P(beta + h / 2) - P(beta - h / 2)) / h
    slope = (4 * d2 - d1) / 3
    if abs(d1 - slope) > rel_tol * max(1.0, abs(slope)):
        raise ThermoError(f"derivative unstable at beta={beta}: {d1} vs {slope}")
    s = P(beta) - beta * slope
    if s < -1e-7 or s > LOG2 + 1e-7:
        raise ThermoError(f"entropy {s} outside [0, log 2]")
    s = min(max(s, 0.0), LOG2)
    return EntropyReport("pressure_oracle", 0, s, (s, s), s, {"beta": beta, "slope": slope})


def binary_entropy(p: float) -> float:
    if p in (0.0, 1.0):
        return 0.0
    return -(p * math.log(p) + (1 - p) * math.log(1 - p))


def bernoulli_waiting_target(p: float, beta: float) -> dict:
    """s(Q), s(Q|P) and their sum for iid Q with P(+) = p.

    Variational formula: s(Q|P) = P(beta) - beta E_Q[sum of the two bonds per
    site] - s(Q), and E_Q[s_x s_y] = (2p - 1)^2 for iid spins.
    """
    m = 2 * p - 1
    sq = binary_entropy(p)
    rel = ferro_pressure(beta) - 2 * beta * m * m - sq if beta > 0 else LOG2 - sq
    return {"s_Q": sq, "s_Q_given_P": rel, "target": sq + rel}


def box_collision_exponent(n: int, beta: float) -> float:
    """-(1/|C_n|) log sum_A P(A)^2 for the plus-boundary box C_n (exact)."""
    side = n + 1
    return -math.log(transfer.box_collision_sum(beta, side, side, 1.0)) / side ** 2


def matching_target(n: int, beta: float, exact_up_to: int = 4) -> tuple[float, str]:
    """Collision-entropy target for log M / |C_n|.

    Exact box collision sums for n <= ``exact_up_to``; otherwise the
    infinite-volume rate 2 P(beta) - P(2 beta).
    """
    if n <= exact_up_to:
        return box_collision_exponent(n, beta), "box_enumeration"
    return collision_rate(beta), "pressure"


# ---------------------------------------------------------------------------
# time-based estimators

def _box_log_z(beta: float, side: int) -> float:
    key = ("z", round(beta, 14), side)
    if key not in _PRESSURE_CACHE:
        _PRESSURE_CACHE[key] = transfer.box_log_partition(beta, side, side, 1.0)
    return _PRESSURE_CACHE[key]


def cube_pattern_probability(arr: np.ndarray, beta: float, margin: int = 4) -> float:
    """P(sigma_{C_n} = arr) in the plus phase, from a plus box with ``margin``."""
    arr = np.asarray(arr)
    if beta == 0:
        return 2.0 ** -arr.size
    side = arr.shape[0] + 2 * margin
    if side > transfer.MAX_WIDTH:
        margin = (transfer.MAX_WIDTH - arr.shape[0]) // 2
        side = arr.shape[0] + 2 * margin
    if margin < 0:
        raise ThermoError("pattern too large for the exact marginal")
    sites = np.argwhere(np.ones(arr.shape, dtype=bool)) + margin
    logp = transfer.box_log_partition(beta, side, side, 1.0, pins=(sites, arr.reshape(1, -1)))
    return float(np.exp(logp[0] - _box_log_z(beta, side)))


def _summarize(method, n, values, censored, target, extras):
    """Average log-time per site over uncensored replicas.

    ``values`` hold log T / |C_n|; the same mean with the 1/n^2 scaling is
    kept in the extras.
    """
    values = np.asarray(values, dtype=np.float64)
    censored = np.asarray(censored, dtype=bool)
    cf = float(censored.mean()) if len(censored) else 1.0
    x = values[~censored]
    if len(x) == 0:
        est, ci = math.nan, (math.nan, math.nan)
    else:
        est = float(x.mean())
        se = float(x.std(ddof=1) / math.sqrt(len(x))) if len(x) > 1 else math.nan
        ci = (est - 1.96 * se, est + 1.96 * se)
    status = "inconclusive" if cf > 0.5 else "ok"
    per_n2 = est * (n + 1) ** 2 / n ** 2 if n > 0 else math.nan
    return EntropyReport(method, n, est, ci, target,
                         {"censored_fraction": cf, "uncensored": int(len(x)), "status": status,
                          "mean_over_n_squared": per_n2, **extras})


def default_side(n: int, beta: float, side: int | None = None) -> int:
    """Window side: 256 for beta > 0; at beta = 0 large enough that iid
    times of order 2^|C_n| are rarely censored (at most 2048)."""
    if side is not None:
        return side
    if beta > 0:
        return 256
    return int(min(2048, max(n + 2, math.ceil(math.sqrt(16 * 2.0 ** ((n + 1) ** 2))))))


def _window(beta, side, seed, r, labels, burn_in, boundary="plus"):
    if beta == 0:
        rng = rng_for(seed, "iid-window", r, *labels)
        return np.where(rng.random((side, side)) < 0.5, 1, -1).astype(np.int8)
    return phase_window(beta, (side, side), seed, r, burn_in=burn_in, boundary=boundary, labels=labels)


def return_replica(n: int, beta: float, side: int, seed: int, r: int, burn_in: int = 100):
    """Return-time record of the pattern one window shows on C_n, with
    log(R P(sigma_{C_n})) (None when censored)."""
    w = _window(beta, side, seed, r, ("return-entropy", n), burn_in)
    block = w[:n + 1, :n + 1]
    rec = return_time(Pattern.from_array(block), w, seed=seed, replica=r)
    lrp = None if rec.censored else math.log(rec.value) + math.log(cube_pattern_probability(block, beta))
    return rec, lrp


def return_summary(n: int, records, log_rp, target: float, eps: float = 4.0, beta=None) -> EntropyReport:
    vals = [math.log(rec.value) / (n + 1) ** 2 for rec in records]
    cens = [rec.censored for rec in records]
    inside = [-eps * math.log(n) <= x <= math.log(eps * math.log(n)) for x in log_rp if x is not None]
    frac = float(np.mean(inside)) if inside else math.nan
    return _summarize("return_time", n, vals, cens, target, {"bracket_fraction": frac, "eps": eps, "beta": beta})


def entropy_via_return(n_list, beta: float, replicas: int, seed: int = 0, eps: float = 4.0,
                       side: int | None = None, burn_in: int = 100, target: float | None = None) -> list[EntropyReport]:
    """Mean of log R / |C_n| over replicas, plus the strong-approximation bracket.

    R is the return time of the pattern each window shows on C_n; the
    bracket counts replicas with log(R P(sigma_{C_n})) in
    [-eps log n, log(eps log n)].
    """
    target = entropy_oracle(beta).value if target is None else target
    out = []
    for n in n_list:
        side_n = default_side(n, beta, side)
        pairs = [return_replica(n, beta, side_n, seed, r, burn_in) for r in range(replicas)]
        out.append(return_summary(n, [p[0] for p in pairs], [p[1] for p in pairs], target, eps, beta))
    return out


def waiting_target(q_spec, beta: float) -> float:
    if q_spec in ("same", "minus"):
        return entropy_oracle(beta).value
    kind, p = q_spec
    if kind != "bernoulli":
        raise ThermoError(f"unknown Q {q_spec!r}")
    return bernoulli_waiting_target(p, beta)["target"]


def parse_q_spec(text: str):
    text = text.strip().lower()
    if text in ("same", "samep", "plus"):
        return "same"
    if text in ("minus", "minusphase"):
        return "minus"
    if text.startswith("bernoulli"):
        p = float(text.split(":", 1)[1]) if ":" in text else 0.5
        if not 0 < p < 1:
            raise ThermoError("Bernoulli parameter must lie in (0, 1)")
        return ("bernoulli", p)
    raise ThermoError(f"unknown Q {text!r}")


def q_label(q_spec) -> str:
    return q_spec if isinstance(q_spec, str) else f"bernoulli:{q_spec[1]}"


def waiting_replica(q_spec, n: int, beta: float, side: int, seed: int, r: int, burn_in: int = 100):
    """Waiting time in a plus-phase window for the C_n pattern of eta ~ Q."""
    sigma = _window(beta, side, seed, r, ("waiting-sigma", n), burn_in)
    if q_spec == "same":
        eta = _window(beta, n + 1, seed, r, ("waiting-eta", n), burn_in)
    elif q_spec == "minus":
        if beta == 0:
            eta = _window(beta, n + 1, seed, r, ("waiting-eta-minus", n), burn_in)
        else:
            eta = phase_window(beta, (n + 1, n + 1), seed, r, burn_in=burn_in, boundary="minus",
                               labels=("waiting-eta-minus", n))
    else:
        rng = rng_for(seed, "waiting-eta-bernoulli", q_spec[1], n, r)
        eta = np.where(rng.random((n + 1, n + 1)) < q_spec[1], 1, -1).astype(np.int8)
    return waiting_time(eta, sigma, n, seed=seed, replica=r)


def time_summary(method: str, n: int, records, target: float, extras=None) -> EntropyReport:
    vals = [math.log(rec.value) / (n + 1) ** 2 for rec in records]
    return _summarize(method, n, vals, [rec.censored for rec in records], target, extras or {})


def entropy_via_waiting(q_spec, beta: float, n_list, replicas: int, seed: int = 0, side: int | None = None,
                        burn_in: int = 100) -> list[EntropyReport]:
    """Mean of log W / |C_n| with eta ~ Q and sigma ~ plus phase, independent."""
    q_spec = parse_q_spec(q_spec) if isinstance(q_spec, str) else q_spec
    target = waiting_target(q_spec, beta)
    out = []
    for n in n_list:
        side_n = default_side(n, beta, side)
        recs = [waiting_replica(q_spec, n, beta, side_n, seed, r, burn_in) for r in range(replicas)]
        out.append(time_summary("waiting_time", n, recs, target, {"q": q_label(q_spec), "beta": beta}))
    return out


def matching_replica(n: int, beta: float, side: int, seed: int, r: int, burn_in: int = 100):
    a = _window(beta, side, seed, r, ("matching-a", n), burn_in)
    b = _window(beta, side, seed, r, ("matching-b", n), burn_in)
    return matching_time(a, b, n, seed=seed, replica=r)


def matching_exponent(beta: float, n_list, replicas: int, seed: int = 0, side: int | None = None,
                      burn_in: int = 100) -> list[EntropyReport]:
    """Mean of log M / |C_n| for independent plus-phase pairs, with the
    collision-entropy target."""
    out = []
    for n in n_list:
        target, how = matching_target(n, beta)
        side_n = default_side(n, beta, side)
        recs = [matching_replica(n, beta, side_n, seed, r, burn_in) for r in range(replicas)]
        out.append(time_summary("matching", n, recs, target, {"target_method": how, "beta": beta}))
    return out


def entropy_rows(reports) -> list[dict]:
    return [r.row() for r in reports]
