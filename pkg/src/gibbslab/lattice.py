"""Spin windows, cube and nested shapes, shifts and boundaries.

Sites are integer d-tuples. A window of extent ``(e1, ..., ed)`` covers the
sites ``[0, e1) x ... x [0, ed)`` stored row-major in a numpy array, so array
index and site coordinate coincide.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

BOUNDARY_TAGS = ("plus", "minus", "free", "explicit")


class LatticeError(ValueError):
    pass


# ---------------------------------------------------------------------------
# bit packing

def pack_rows(spins: np.ndarray) -> np.ndarray:
    """Pack a +/-1 array into little-endian uint64 words along the last axis.

    Bit ``j`` of word ``w`` holds column ``64 * w + j``; a set bit is a plus
    spin. Rows are zero padded to a whole number of words.
    """
    spins = np.asarray(spins)
    ncols = spins.shape[-1]
    nwords = max(1, -(-ncols // 64))
    bits = np.zeros(spins.shape[:-1] + (nwords * 64,), dtype=np.uint8)
    bits[..., :ncols] = spins > 0
    packed = np.packbits(bits, axis=-1, bitorder="little")
    return np.ascontiguousarray(packed).view("<u8").reshape(spins.shape[:-1] + (nwords,))


def unpack_rows(words: np.ndarray, ncols: int) -> np.ndarray:
    words = np.ascontiguousarray(words, dtype="<u8")
    as_bytes = words.view(np.uint8).reshape(words.shape[:-1] + (words.shape[-1] * 8,))
    bits = np.unpackbits(as_bytes, axis=-1, bitorder="little")[..., :ncols]
    return np.where(bits == 1, 1, -1).astype(np.int8)


# ---------------------------------------------------------------------------
# spin configurations

@dataclass(frozen=True, eq=False)
class SpinConfig:
    """Immutable window of +/-1 spins with a boundary condition.

    ``boundary`` is one of ``plus``, ``minus``, ``free`` or ``explicit``. For
    ``explicit`` the array ``outer`` has shape ``extent + 2`` in every axis and
    carries the spins of the outer layer; its interior is ignored.
    """

    spins: np.ndarray
    boundary: str = "plus"
    outer: np.ndarray | None = None

    def __post_init__(self):
        spins = np.array(self.spins, dtype=np.int8, copy=True)
        if spins.ndim < 1 or spins.size == 0:
            raise LatticeError("spin window must be nonempty")
        if not np.all((spins == 1) | (spins == -1)):
            raise LatticeError("spins must be +1 or -1 at every site")
        if self.boundary not in BOUNDARY_TAGS:
            raise LatticeError(f"unknown boundary {self.boundary!r}")
        spins.setflags(write=False)
        object.__setattr__(self, "spins", spins)
        if self.boundary == "explicit":
            if self.outer is None:
                raise LatticeError("explicit boundary needs the outer layer")
            outer = np.array(self.outer, dtype=np.int8, copy=True)
            if outer.shape != tuple(e + 2 for e in spins.shape):
                raise LatticeError("outer layer must pad the window by one site per side")
            ring = outer_layer_mask(spins.shape)
            if not np.all((outer[ring] == 1) | (outer[ring] == -1)):
                raise LatticeError("explicit boundary must assign a spin to every outer site")
            outer[~ring] = 0
            outer.setflags(write=False)
            object.__setattr__(self, "outer", outer)
        elif self.outer is not None:
            raise LatticeError("outer layer only allowed with explicit boundary")

    @property
    def extent(self) -> tuple[int, ...]:
        return self.spins.shape

    @property
    def d(self) -> int:
        return self.spins.ndim

    def __getitem__(self, site) -> int:
        return int(self.spins[tuple(site)])

    def __eq__(self, other):
        if not isinstance(other, SpinConfig):
            return NotImplemented
        if self.boundary != other.boundary or not np.array_equal(self.spins, other.spins):
            return False
        if self.outer is None:
            return other.outer is None
        return np.array_equal(self.outer, other.outer)

    def __hash__(self):
        return hash((self.boundary, self.spins.shape, self.spins.tobytes()))

    def padded(self) -> np.ndarray:
        """Window surrounded by its boundary layer (0 marks a free boundary)."""
        pad = np.zeros(tuple(e + 2 for e in self.extent), dtype=np.int8)
        if self.boundary == "plus":
            pad[:] = 1
        elif self.boundary == "minus":
            pad[:] = -1
        elif self.boundary == "explicit":
            pad[:] = self.outer
        pad[(slice(1, -1),) * self.d] = self.spins
        return pad

    def packed(self) -> np.ndarray:
        return pack_rows(self.spins)

    @classmethod
    def from_packed(cls, words, extent, boundary="plus", outer=None) -> "SpinConfig":
        spins = unpack_rows(words, extent[-1]).reshape(tuple(extent))
        return cls(spins, boundary, outer)

    def sites(self) -> list[tuple[tuple[int, ...], int]]:
        return [(tuple(int(i) for i in idx), int(v)) for idx, v in np.ndenumerate(self.spins)]

    @classmethod
    def from_sites(cls, extent, site_values: Iterable, boundary="plus", outer=None) -> "SpinConfig":
        spins = np.zeros(tuple(extent), dtype=np.int8)
        for site, value in site_values:
            spins[tuple(site)] = value
        return cls(spins, boundary, outer)

    def window(self, origin, extent) -> "SpinConfig":
        """Sub-window with the surrounding spins as explicit boundary."""
        origin = tuple(origin)
        extent = tuple(extent)
        if any(o < 0 or o + e > E for o, e, E in zip(origin, extent, self.extent)):
            raise LatticeError("sub-window exceeds the window")
        pad = self.padded()
        sl = tuple(slice(o, o + e + 2) for o, e in zip(origin, extent))
        outer = pad[sl].copy()
        if self.boundary == "free" and np.any(outer[outer_layer_mask(extent)] == 0):
            # the sub-window touches a free edge; its outer layer is undefined there
            inner = self.spins[tuple(slice(o, o + e) for o, e in zip(origin, extent))]
            return SpinConfig(inner, "free")
        inner = outer[(slice(1, -1),) * len(extent)].copy()
        return SpinConfig(inner, "explicit", outer)


def outer_layer_mask(extent) -> np.ndarray:
    mask = np.ones(tuple(e + 2 for e in extent), dtype=bool)
    mask[(slice(1, -1),) * len(extent)] = False
    return mask


# ---------------------------------------------------------------------------
# spin window file format

def format_window(config: SpinConfig, kind: str = "ising-spin") -> str:
    """Text form: header line then one ``+``/``-`` line per row.

    Windows of dimension > 2 list rows with the leading axes in row-major
    order. An explicit boundary is written as its padded outer window after a
    ``outer`` separator line.
    """
    ext = "x".join(str(e) for e in config.extent)
    lines = [f"{kind} v1 d={config.d} extent={ext} boundary={config.boundary}"]
    rows = config.spins.reshape(-1, config.extent[-1])
    lines += ["".join("+" if s > 0 else "-" for s in row) for row in rows]
    if config.boundary == "explicit":
        lines.append("outer")
        orows = config.outer.reshape(-1, config.outer.shape[-1])
        lines += ["".join({1: "+", -1: "-", 0: "."}[int(s)] for s in row) for row in orows]
    return "\n".join(lines) + "\n"


def parse_window(text: str, kind: str = "ising-spin") -> SpinConfig:
    lines = [ln.rstrip("\r") for ln in text.splitlines()]
    if not lines:
        raise LatticeError("empty window file")
    head = lines[0].split()
    if len(head) != 5 or head[0] != kind or head[1] != "v1":
        raise LatticeError(f"bad header {lines[0]!r}")
    fields = dict(tok.split("=", 1) for tok in head[2:])
    d = int(fields["d"])
    extent = tuple(int(e) for e in fields["extent"].split("x"))
    boundary = fields["boundary"]
    if len(extent) != d:
        raise LatticeError("extent does not match d")
    nrows = int(np.prod(extent[:-1])) if d > 1 else 1
    body = lines[1:1 + nrows]
    if len(body) != nrows or any(len(r) != extent[-1] for r in body):
        raise LatticeError("row count or width does not match extent")
    table = {"+": 1, "-": -1}
    try:
        spins = np.array([[table[c] for c in row] for row in body], dtype=np.int8).reshape(extent)
    except KeyError as exc:
        raise LatticeError(f"bad spin character {exc}") from None
    outer = None
    if boundary == "explicit":
        rest = lines[1 + nrows:]
        if not rest or rest[0] != "outer":
            raise LatticeError("explicit boundary needs an outer section")
        oext = tuple(e + 2 for e in extent)
        orows = rest[1:1 + int(np.prod(oext[:-1]))]
        outer = np.array([[{"+": 1, "-": -1, ".": 0}[c] for c in row] for row in orows],
                         dtype=np.int8).reshape(oext)
    return SpinConfig(spins, boundary, outer)


# ---------------------------------------------------------------------------
# shapes

def as_site_set(sites) -> frozenset:
    return frozenset(tuple(int(c) for c in s) for s in sites)


def neighbors(site):
    for axis in range(len(site)):
        for step in (-1, 1):
            nb = list(site)
            nb[axis] += step
            yield tuple(nb)


def inner_boundary(shape) -> frozenset:
    """Sites of ``shape`` with at least one nearest neighbor outside it."""
    sites = as_site_set(shape)
    if not sites:
        raise LatticeError("inner boundary of an empty shape")
    return frozenset(s for s in sites if any(nb not in sites for nb in neighbors(s)))


def sup_norm(x) -> int:
    return max(abs(int(c)) for c in x) if len(x) else 0


def set_distance(a, b) -> int:
    """Sup-norm distance between two finite site sets."""
    a = np.array(sorted(as_site_set(a)))
    b = np.array(sorted(as_site_set(b)))
    return int(np.abs(a[:, None, :] - b[None, :, :]).max(axis=2).min())


@dataclass(frozen=True)
class CubeShape:
    """The cube ``C(x, n) = [0, n]^d + x``."""

    n: int
    offset: tuple[int, ...] = (0, 0)

    def __post_init__(self):
        if self.n < 0:
            raise LatticeError("cube index must be >= 0")
        object.__setattr__(self, "offset", tuple(int(c) for c in self.offset))

    @property
    def d(self) -> int:
        return len(self.offset)

    @property
    def side(self) -> int:
        return self.n + 1

    @property
    def volume(self) -> int:
        return (self.n + 1) ** self.d

    def sites(self) -> frozenset:
        ranges = [range(o, o + self.n + 1) for o in self.offset]
        return frozenset(itertools.product(*ranges))

    def slices(self) -> tuple[slice, ...]:
        return tuple(slice(o, o + self.n + 1) for o in self.offset)

    def boundary_size(self) -> int:
        if self.n == 0:
            return 1
        return (self.n + 1) ** self.d - (self.n - 1) ** self.d

    def shifted(self, x) -> "CubeShape":
        return CubeShape(self.n, tuple(o + int(c) for o, c in zip(self.offset, x)))


def cube(n: int, d: int = 2, offset=None) -> CubeShape:
    return CubeShape(n, tuple(offset) if offset is not None else (0,) * d)


def cube_volume(k: int, d: int = 2) -> int:
    return (k + 1) ** d


@dataclass(frozen=True)
class ShapeSequence:
    """Increasing shapes ``k -> V_k``; cubes ``C_k`` anchored at the origin by default."""

    d: int = 2
    generator: Callable[[int], frozenset] | None = None

    def shape(self, k: int) -> frozenset:
        if self.generator is None:
            return cube(k, self.d).sites()
        return as_site_set(self.generator(k))

    def volume(self, k: int) -> int:
        if self.generator is None:
            return cube_volume(k, self.d)
        return len(self.shape(k))

    def is_cubes(self) -> bool:
        return self.generator is None

    def check_nested(self, k_max: int) -> bool:
        return all(self.shape(k) <= self.shape(k + 1) for k in range(k_max))

    def boundary_ratios(self, k_max: int) -> list[float]:
        return [len(inner_boundary(self.shape(k))) / len(self.shape(k)) for k in range(k_max + 1)]

    def symmetric_difference_ok(self, k_max: int, x_max: int = 2, c: float = 1.0) -> bool:
        """|(V_k + x) delta V_k| >= c k for all 1 <= |x| <= x_max, k <= k_max."""
        shifts = [x for x in itertools.product(range(-x_max, x_max + 1), repeat=self.d)
                  if sup_norm(x) >= 1]
        for k in range(1, k_max + 1):
            base = self.shape(k)
            for x in shifts:
                moved = frozenset(tuple(a + b for a, b in zip(s, x)) for s in base)
                if len(moved ^ base) < c * k:
                    return False
        return True


# ---------------------------------------------------------------------------
# nested shapes G_k

def shell_fill_order(d: int = 2, max_side: int = 64) -> np.ndarray:
    """Site order whose first ``k`` entries form ``G_k``.

    In d=2 shell ``s`` (growing the ``s x s`` square to ``(s+1) x (s+1)``)
    adds the column ``(s, 0) ... (s, s)`` and then the row
    ``(s-1, s) ... (0, s)``, so ``G_1 = {(0,0)}``, ``G_2`` adds ``(1,0)``,
    ``G_3`` adds ``(1,1)``, ``G_4`` adds ``(0,1)`` and every ``G_{m^2}`` is the
    cube with ``m`` sites per side. Higher d fills each shell in
    breadth-first order from its first site, which keeps every prefix
    connected.
    """
    order = [(0,) * d]
    for s in range(1, max_side):
        if d == 2:
            order += [(s, j) for j in range(s + 1)]
            order += [(i, s) for i in range(s - 1, -1, -1)]
            continue
        shell = {p for p in itertools.product(range(s + 1), repeat=d) if max(p) == s}
        start = min(shell, key=lambda p: (sum(1 for c in p if c == s), p[::-1]))
        seen = [start]
        seen_set = {start}
        frontier = [start]
        while frontier:
            nxt = []
            for site in frontier:
                for nb in sorted(neighbors(site)):
                    if nb in shell and nb not in seen_set:
                        seen_set.add(nb)
                        seen.append(nb)
                        nxt.append(nb)
            frontier = nxt
        order += seen
    return np.array(order, dtype=np.int64)


_ORDER_CACHE: dict[tuple[int, int], np.ndarray] = {}


def nested_order(count: int, d: int = 2) -> np.ndarray:
    side = 1
    while side ** d < count:
        side += 1
    key = (d, side)
    if key not in _ORDER_CACHE:
        _ORDER_CACHE[key] = shell_fill_order(d, side)
    return _ORDER_CACHE[key][:count]


def nested_shape(k: int, d: int = 2) -> frozenset:
    if k < 1:
        raise LatticeError("nested shape index must be >= 1")
    return as_site_set(nested_order(k, d))


@dataclass(frozen=True)
class NestedShapes:
    """Pluggable rule ``k -> G_k``; defaults to the shell fill."""

    d: int = 2
    order_fn: Callable[[int, int], np.ndarray] = field(default=nested_order)

    def order(self, k: int) -> np.ndarray:
        return self.order_fn(k, self.d)

    def shape(self, k: int) -> frozenset:
        if k < 1:
            raise LatticeError("nested shape index must be >= 1")
        return as_site_set(self.order(k))


def is_connected(sites) -> bool:
    sites = as_site_set(sites)
    if not sites:
        return False
    start = next(iter(sites))
    seen = {start}
    stack = [start]
    while stack:
        for nb in neighbors(stack.pop()):
            if nb in sites and nb not in seen:
                seen.add(nb)
                stack.append(nb)
    return len(seen) == len(sites)


def has_no_holes(sites) -> bool:
    """True if the complement within a padded bounding box is connected."""
    sites = as_site_set(sites)
    arr = np.array(sorted(sites))
    lo = arr.min(axis=0) - 1
    hi = arr.max(axis=0) + 1
    box = set(itertools.product(*[range(a, b + 1) for a, b in zip(lo, hi)]))
    return is_connected(box - sites)


# ---------------------------------------------------------------------------
# patterns and shifts

@dataclass(frozen=True, eq=False)
class Pattern:
    """Spin assignment on a finite support; sites stored in sorted order."""

    sites: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        sites = np.array(self.sites, dtype=np.int64, copy=True)
        values = np.array(self.values, dtype=np.int8, copy=True).reshape(-1)
        if sites.ndim != 2 or len(sites) == 0:
            raise LatticeError("pattern support must be nonempty")
        if len(values) != len(sites):
            raise LatticeError("every support site needs a value")
        if not np.all((values == 1) | (values == -1)):
            raise LatticeError("pattern values must be +1 or -1")
        order = np.lexsort(sites.T[::-1])
        sites, values = sites[order], values[order]
        if len(sites) > 1 and np.any(np.all(sites[1:] == sites[:-1], axis=1)):
            raise LatticeError("duplicate support site")
        sites.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "sites", sites)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_array(cls, arr, offset=None) -> "Pattern":
        arr = np.asarray(arr, dtype=np.int8)
        offset = np.zeros(arr.ndim, dtype=np.int64) if offset is None else np.asarray(offset)
        idx = np.indices(arr.shape).reshape(arr.ndim, -1).T + offset
        return cls(idx, arr.reshape(-1))

    @classmethod
    def from_config(cls, config, support) -> "Pattern":
        spins = config.spins if isinstance(config, SpinConfig) else np.asarray(config)
        if isinstance(support, CubeShape):
            return cls.from_array(spins[support.slices()], support.offset)
        sites = np.array(sorted(as_site_set(support)))
        return cls(sites, spins[tuple(sites.T)])

    @property
    def d(self) -> int:
        return self.sites.shape[1]

    @property
    def size(self) -> int:
        return len(self.sites)

    def support(self) -> frozenset:
        return as_site_set(self.sites)

    def lower(self) -> np.ndarray:
        return self.sites.min(axis=0)

    def box_shape(self) -> tuple[int, ...]:
        return tuple(int(v) for v in self.sites.max(axis=0) - self.lower() + 1)

    def is_box(self) -> bool:
        return int(np.prod(self.box_shape())) == self.size

    def cube_index(self) -> int | None:
        """``n`` if the support is a cube ``C(x, n)``, else None."""
        shape = self.box_shape()
        if self.is_box() and len(set(shape)) == 1:
            return shape[0] - 1
        return None

    def as_array(self) -> np.ndarray:
        if not self.is_box():
            raise LatticeError("pattern support is not a box")
        return self.values.reshape(self.box_shape())

    def value_map(self) -> dict:
        return {tuple(int(c) for c in s): int(v) for s, v in zip(self.sites, self.values)}

    def __eq__(self, other):
        if not isinstance(other, Pattern):
            return NotImplemented
        return (self.sites.shape == other.sites.shape and np.array_equal(self.sites, other.sites)
                and np.array_equal(self.values, other.values))

    def __hash__(self):
        return hash((self.sites.tobytes(), self.values.tobytes()))

    def flipped(self) -> "Pattern":
        return Pattern(self.sites, -self.values)


def shift_pattern(pattern: Pattern, x) -> Pattern:
    """``theta_x A``: support moved by ``x``, values carried along."""
    x = np.asarray(x, dtype=np.int64)
    if x.shape != (pattern.d,):
        raise LatticeError("shift must have one component per dimension")
    return Pattern(pattern.sites + x, pattern.values)


def format_pattern(pattern: Pattern) -> str:
    if not pattern.is_box():
        raise LatticeError("only box-supported patterns have a file form")
    lower = ",".join(str(int(c)) for c in pattern.lower())
    text = format_window(SpinConfig(pattern.as_array(), "free"), kind="ising-pattern")
    head, rest = text.split("\n", 1)
    return f"{head} offset={lower}\n{rest}"


def parse_pattern(text: str) -> Pattern:
    head, rest = text.split("\n", 1)
    toks = head.split()
    offset = None
    if toks and toks[-1].startswith("offset="):
        offset = [int(c) for c in toks[-1][len("offset="):].split(",")]
        head = " ".join(toks[:-1])
    config = parse_window(head + "\n" + rest, kind="ising-pattern")
    return Pattern.from_array(config.spins, offset)
