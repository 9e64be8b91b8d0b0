"""Finite-volume Ising measures: exact enumeration, heat bath and perfect sampling.

A :class:`GibbsSpec` describes a rectangular d=2 volume with a boundary
condition. Under the ``ferro`` convention a configuration has weight

    exp(beta * sum_<xy> s_x s_y + beta * sum_{x in dV, y outside} s_x eta_y)

and under ``literal`` both sums enter with a minus sign. Samplers work on a
padded int8 array whose outer layer carries the boundary spins.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import _kernels
from .lattice import LatticeError, Pattern, SpinConfig, outer_layer_mask
from .seeding import derive_seed, rng_for

log = logging.getLogger(__name__)

ENUMERATION_CAP = 25
CONVENTIONS = ("ferro", "literal")
METHODS = ("enumerate", "heatbath", "cftp")


class GibbsError(ValueError):
    pass


class EnumerationCapError(GibbsError):
    pass


class NotCoalesced(RuntimeError):
    """CFTP hit its epoch cap; ``state`` can be passed to :func:`resume_cftp`."""

    def __init__(self, message, samples, state):
        super().__init__(message)
        self.samples = samples
        self.state = state


@dataclass(frozen=True, eq=False)
class GibbsSpec:
    extent: tuple
    beta: float
    boundary: str = "plus"
    convention: str = "ferro"
    outer: np.ndarray | None = None

    def __post_init__(self):
        extent = tuple(int(e) for e in self.extent)
        object.__setattr__(self, "extent", extent)
        if len(extent) != 2 or min(extent) < 1:
            raise GibbsError("samplers support nonempty d=2 rectangles only")
        if not self.beta >= 0:
            raise GibbsError("beta must be >= 0")
        if self.convention not in CONVENTIONS:
            raise GibbsError(f"unknown convention {self.convention!r}")
        if self.boundary == "explicit":
            if self.outer is None or self.outer.shape != (extent[0] + 2, extent[1] + 2):
                raise GibbsError("explicit boundary needs an outer layer padding the volume")
        elif self.boundary not in ("plus", "minus", "free"):
            raise GibbsError(f"unknown boundary {self.boundary!r}")

    @property
    def coupling(self) -> float:
        return 1.0 if self.convention == "ferro" else -1.0

    @property
    def nsites(self) -> int:
        return self.extent[0] * self.extent[1]

    def padded_boundary(self) -> np.ndarray:
        rows, cols = self.extent
        pad = np.zeros((rows + 2, cols + 2), dtype=np.int8)
        if self.boundary == "plus":
            pad[:] = 1
        elif self.boundary == "minus":
            pad[:] = -1
        elif self.boundary == "explicit":
            ring = outer_layer_mask(self.extent)
            pad[ring] = np.asarray(self.outer, dtype=np.int8)[ring]
        pad[1:-1, 1:-1] = 0
        return pad

    def config(self, spins) -> SpinConfig:
        if self.boundary == "explicit":
            return SpinConfig(spins, "explicit", self.outer)
        return SpinConfig(spins, self.boundary)


def log_weights(spec: GibbsSpec, spins: np.ndarray) -> np.ndarray:
    """Log Boltzmann weights of a batch of configurations, shape (B, rows, cols)."""
    s = np.asarray(spins, dtype=np.int64)
    e = (s[:, 1:, :] * s[:, :-1, :]).sum(axis=(1, 2)) + (s[:, :, 1:] * s[:, :, :-1]).sum(axis=(1, 2))
    pad = spec.padded_boundary().astype(np.int64)
    field_ = pad[:-2, 1:-1] + pad[2:, 1:-1] + pad[1:-1, :-2] + pad[1:-1, 2:]
    e = e + (s * field_[None]).sum(axis=(1, 2))
    return spec.beta * spec.coupling * e.astype(np.float64)


def codes_to_spins(codes, extent) -> np.ndarray:
    """Configuration code -> spins; bit i is the row-major site i, set = plus."""
    n = extent[0] * extent[1]
    codes = np.asarray(codes, dtype=np.int64)
    bits = (codes[:, None] >> np.arange(n)) & 1
    return np.where(bits == 1, 1, -1).astype(np.int8).reshape((-1,) + tuple(extent))


def spins_to_code(spins) -> int:
    flat = np.asarray(spins).reshape(-1)
    return int(((flat > 0).astype(np.int64) << np.arange(flat.size)).sum())


@dataclass(frozen=True)
class ExactDistribution:
    """Probabilities of every configuration, indexed by configuration code."""

    spec: GibbsSpec
    probs: np.ndarray
    log_z: float

    def spins(self, code) -> np.ndarray:
        return codes_to_spins([code], self.spec.extent)[0]

    def prob(self, spins) -> float:
        return float(self.probs[spins_to_code(spins)])

    def site_marginals(self) -> np.ndarray:
        """P(spin = +1) per site."""
        n = self.spec.nsites
        codes = np.arange(self.probs.size)
        out = np.array([self.probs[(codes >> i) & 1 == 1].sum() for i in range(n)])
        return out.reshape(self.spec.extent)

    def marginal(self, sites) -> dict:
        """Distribution of the spins on ``sites`` as {tuple of values: prob}."""
        sites = [tuple(s) for s in sites]
        cols = self.spec.extent[1]
        idx = [r * cols + c for r, c in sites]
        codes = np.arange(self.probs.size)
        key = np.zeros(self.probs.size, dtype=np.int64)
        for j, i in enumerate(idx):
            key |= ((codes >> i) & 1) << j
        sums = np.bincount(key, weights=self.probs, minlength=2 ** len(idx))
        out = {}
        for k, p in enumerate(sums):
            vals = tuple(1 if (k >> j) & 1 else -1 for j in range(len(idx)))
            out[vals] = float(p)
        return out


def exact_distribution(spec: GibbsSpec, frozen: Pattern | None = None,
                       chunk: int = 1 << 18) -> ExactDistribution:
    """Enumerate all configurations of the volume (at most 2^25).

    With ``frozen`` the result is the conditional law given the frozen
    spins; configurations violating them get probability 0.
    """
    n = spec.nsites
    if n > ENUMERATION_CAP:
        raise EnumerationCapError(f"volume has {n} sites, enumeration cap is {ENUMERATION_CAP}")
    total = 1 << n
    logw = np.empty(total)
    for start in range(0, total, chunk):
        codes = np.arange(start, min(total, start + chunk))
        logw[start:start + codes.size] = log_weights(spec, codes_to_spins(codes, spec.extent))
    if frozen is not None:
        _check_inside(frozen, spec.extent)
        cols = spec.extent[1]
        codes = np.arange(total)
        ok = np.ones(total, dtype=bool)
        for (r, c), v in zip(frozen.sites, frozen.values):
            ok &= ((codes >> (r * cols + c)) & 1) == (1 if v > 0 else 0)
        logw[~ok] = -np.inf
    log_z = float(logsumexp(logw))
    return ExactDistribution(spec, np.exp(logw - log_z), log_z)


def heat_bath_flip_probability(spec: GibbsSpec, site, neighbor_spins, boundary_spins=()) -> float:
    """Probability that the heat-bath update sets ``site`` to +1."""
    rows, cols = spec.extent
    if not (0 <= site[0] < rows and 0 <= site[1] < cols):
        raise GibbsError("site outside the volume")
    h = float(sum(neighbor_spins) + sum(boundary_spins))
    x = spec.beta * spec.coupling * h
    return float(np.exp(x) / (np.exp(x) + np.exp(-x)))


def heat_bath_kernel(spec: GibbsSpec) -> np.ndarray:
    """Random-scan single-site heat-bath transition matrix (enumerable volumes)."""
    n = spec.nsites
    if n > 12:
        raise EnumerationCapError("dense kernel limited to 12 sites")
    total = 1 << n
    spins = codes_to_spins(np.arange(total), spec.extent)
    pad = spec.padded_boundary()
    rows, cols = spec.extent
    P = np.zeros((total, total))
    for code in range(total):
        s = spins[code]
        padded = pad.copy()
        padded[1:-1, 1:-1] = s
        for i in range(n):
            r, c = divmod(i, cols)
            h = padded[r, c + 1] + padded[r + 2, c + 1] + padded[r + 1, c] + padded[r + 1, c + 2]
            x = spec.beta * spec.coupling * h
            p_plus = np.exp(x) / (np.exp(x) + np.exp(-x))
            up, down = code | (1 << i), code & ~(1 << i)
            P[code, up] += p_plus / n
            P[code, down] += (1 - p_plus) / n
    return P


# ---------------------------------------------------------------------------
# samplers

@dataclass(frozen=True)
class SamplerHandle:
    """What to sample and how.

    ``sweeps`` is the spacing between recorded heat-bath states, ``burn_in``
    the number of sweeps discarded first. ``max_epochs`` bounds the CFTP
    doubling (the look-back reaches ``2**max_epochs`` sweeps).
    """

    spec: GibbsSpec
    method: str = "heatbath"
    seed: int = 0
    replica: int = 0
    sweeps: int = 1
    burn_in: int = 200
    max_epochs: int = 20
    check_order: bool = False
    labels: tuple = field(default=())

    def __post_init__(self):
        if self.method not in METHODS:
            raise GibbsError(f"unknown method {self.method!r}")

    def rng(self) -> np.random.Generator:
        return rng_for(self.seed, "replica", self.replica, *self.labels)

    @property
    def stream_seed(self) -> int:
        return derive_seed(self.seed, "replica", self.replica, *self.labels)


def _check_inside(pattern: Pattern, extent):
    if pattern.d != 2:
        raise GibbsError("frozen pattern must be two dimensional")
    lo, hi = pattern.sites.min(axis=0), pattern.sites.max(axis=0)
    if lo.min() < 0 or hi[0] >= extent[0] or hi[1] >= extent[1]:
        raise GibbsError("frozen pattern support lies outside the volume")


def _frozen_arrays(spec, frozen):
    mask = np.zeros(spec.extent, dtype=np.bool_)
    values = np.zeros(spec.extent, dtype=np.int8)
    if frozen is not None:
        _check_inside(frozen, spec.extent)
        idx = tuple(frozen.sites.T)
        mask[idx] = True
        values[idx] = frozen.values
    return mask, values


def _table(spec):
    return _kernels.plus_probability_table(spec.beta, spec.coupling)


def run_heat_bath(spec: GibbsSpec, rng: np.random.Generator, n_sweeps: int,
                  start=None, frozen: Pattern | None = None, chunk: int = 64) -> np.ndarray:
    """Run ``n_sweeps`` raster heat-bath sweeps and return the final spins.

    The chain starts all-plus unless ``start`` is given; frozen sites keep the
    pattern values throughout.
    """
    mask, values = _frozen_arrays(spec, frozen)
    pad = spec.padded_boundary()
    pad[1:-1, 1:-1] = 1 if start is None else np.asarray(start, dtype=np.int8)
    pad[1:-1, 1:-1][mask] = values[mask]
    table = _table(spec)
    done = 0
    while done < n_sweeps:
        k = min(chunk, n_sweeps - done)
        u = rng.random((k,) + spec.extent, dtype=np.float32)
        _kernels.heat_bath_sweeps(pad, mask, table, u)
        done += k
    return pad[1:-1, 1:-1].copy()


def _cftp_one(spec, rng, mask, values, max_epochs, check_order, blocks=None, epoch=0):
    """Monotone CFTP with doubling look-back.

    ``blocks[j]`` holds the uniforms of the sweeps in
    [-2^(j+1), -2^j) (block 0 covers the final sweep). Returns
    (spins, None) on coalescence or (None, resume state) at the cap.
    """
    table = _table(spec)
    if blocks is None:
        blocks = []
    base = spec.padded_boundary()
    while epoch < max_epochs:
        size = 1 if epoch == 0 else 2 ** (epoch - 1)
        while len(blocks) <= epoch:
            blocks.append(rng.random((size,) + spec.extent, dtype=np.float32))
        top = base.copy()
        bottom = base.copy()
        top[1:-1, 1:-1] = 1
        bottom[1:-1, 1:-1] = -1
        top[1:-1, 1:-1][mask] = values[mask]
        bottom[1:-1, 1:-1][mask] = values[mask]
        for j in range(epoch, -1, -1):
            ok = _kernels.coupled_sweeps(top, bottom, mask, table, blocks[j], check_order)
            if check_order and not ok:
                raise AssertionError("monotone coupling violated the sitewise order")
        if _kernels.chains_equal(top, bottom):
            return top[1:-1, 1:-1].copy(), None
        epoch += 1
    return None, {"blocks": blocks, "epoch": epoch}


def _cftp_batch(handle, count, frozen, rng=None, samples=None, pending=None):
    spec = handle.spec
    if spec.convention != "ferro":
        raise GibbsError("CFTP needs the monotone ferromagnetic convention")
    mask, values = _frozen_arrays(spec, frozen)
    rng = handle.rng() if rng is None else rng
    samples = [] if samples is None else samples
    while len(samples) < count:
        if pending is not None:
            spins, state = _cftp_one(spec, rng, mask, values, handle.max_epochs,
                                     handle.check_order, pending["blocks"], pending["epoch"])
            pending = None
        else:
            spins, state = _cftp_one(spec, rng, mask, values, handle.max_epochs,
                                     handle.check_order)
        if spins is None:
            resume = {"handle": handle, "count": count, "frozen": frozen, "rng": rng,
                      "samples": samples, "pending": state}
            raise NotCoalesced(f"no coalescence within {2 ** (handle.max_epochs - 1)} sweeps; "
                               "extend the epoch cap and resume", list(samples), resume)
        samples.append(spins)
    return samples


def resume_cftp(state: dict, extra_epochs: int = 4) -> list[SpinConfig]:
    """Continue a CFTP run interrupted by :class:`NotCoalesced` with a larger cap."""
    handle = state["handle"]
    bigger = SamplerHandle(handle.spec, handle.method, handle.seed, handle.replica, handle.sweeps,
                           handle.burn_in, handle.max_epochs + extra_epochs, handle.check_order,
                           handle.labels)
    spins = _cftp_batch(bigger, state["count"], state["frozen"], state["rng"],
                        state["samples"], state["pending"])
    return [handle.spec.config(s) for s in spins]


def _sample_arrays(handle: SamplerHandle, count: int, frozen: Pattern | None) -> list[np.ndarray]:
    spec = handle.spec
    if handle.method == "enumerate":
        dist = exact_distribution(spec, frozen)
        codes = handle.rng().choice(dist.probs.size, size=count, p=dist.probs)
        return list(codes_to_spins(codes, spec.extent))
    if handle.method == "cftp":
        return _cftp_batch(handle, count, frozen)
    rng = handle.rng()
    out = []
    state = run_heat_bath(spec, rng, handle.burn_in, frozen=frozen)
    for _ in range(count):
        state = run_heat_bath(spec, rng, handle.sweeps, start=state, frozen=frozen)
        out.append(state)
    return out


def sample(handle: SamplerHandle, count: int) -> list[SpinConfig]:
    """Draw ``count`` configurations.

    Heat-bath draws are successive states of one chain spaced ``sweeps``
    apart after ``burn_in``; CFTP and enumeration draws are independent and
    exact.
    """
    return [handle.spec.config(s) for s in _sample_arrays(handle, count, None)]


def conditional_sample(handle: SamplerHandle, frozen: Pattern, count: int) -> list[SpinConfig]:
    """Draws from the measure conditioned on the spins of ``frozen``."""
    _check_inside(frozen, handle.spec.extent)
    return [handle.spec.config(s) for s in _sample_arrays(handle, count, frozen)]


def total_variation(dist: ExactDistribution, configs) -> float:
    """TV distance between the empirical law of ``configs`` and ``dist``."""
    codes = np.array([spins_to_code(c.spins if isinstance(c, SpinConfig) else c) for c in configs])
    emp = np.bincount(codes, minlength=dist.probs.size) / len(codes)
    return 0.5 * float(np.abs(emp - dist.probs).sum())


def uniform_bound_delta(dist: ExactDistribution) -> float:
    """Largest delta with max_A P(sigma_V = A) <= exp(-delta |V|)."""
    return float(-np.log(dist.probs.max()) / dist.spec.nsites)


# ---------------------------------------------------------------------------
# plus-phase windows

def phase_window(beta: float, extent, seed: int, replica: int, *, margin: int = 8,
                 burn_in: int = 200, boundary: str = "plus", frozen: Pattern | None = None,
                 labels: tuple = ()) -> np.ndarray:
    """Heat-bath sample of a window deep inside a larger plus-boundary box.

    The chain runs on the window enlarged by ``margin`` sites per side and
    the inner ``extent`` block is returned; ``frozen`` is given in window
    coordinates.
    """
    rows, cols = extent
    spec = GibbsSpec((rows + 2 * margin, cols + 2 * margin), beta, boundary)
    if frozen is not None:
        frozen = Pattern(frozen.sites + margin, frozen.values)
    rng = rng_for(seed, "window", replica, *labels)
    spins = run_heat_bath(spec, rng, burn_in, start=None if boundary != "minus" else
                          -np.ones(spec.extent, dtype=np.int8), frozen=frozen)
    return spins[margin:margin + rows, margin:margin + cols]
