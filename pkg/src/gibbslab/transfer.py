"""Row transfer matrices for nearest-neighbor Ising boxes and strips.

All weights here are ``exp(K * sum_<xy> s_x s_y + K * b * sum_edge s_x)``
where ``K`` is the (signed) bond strength and ``b`` the boundary spin value
(+1, -1, or 0 for a free edge). A row configuration is an integer whose bit
``j`` is the spin in column ``j`` (set bit = plus).
"""
from __future__ import annotations

import numpy as np
from scipy.special import logsumexp

MAX_WIDTH = 16


class TransferError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    pass


def row_spins(width: int) -> np.ndarray:
    """(2^width, width) table of row spins."""
    s = np.arange(2 ** width)[:, None]
    return np.where((s >> np.arange(width)) & 1, 1, -1).astype(np.int8)


def _apply_vertical(v: np.ndarray, K: float, width: int) -> np.ndarray:
    """Multiply by the tensor product of 2x2 bond kernels exp(K s s')."""
    batch = v.shape[:-1]
    a, b = np.exp(K), np.exp(-K)
    t = v.reshape(batch + (2,) * width)
    nb = len(batch)
    for axis in range(width):
        t = a * t + b * np.flip(t, axis=nb + axis)
    return t.reshape(batch + (2 ** width,))


def _row_log_diag(spins: np.ndarray, K: float, b_side: float, periodic: bool) -> np.ndarray:
    """log of the in-row weight: horizontal bonds and left/right edge field."""
    e = (spins[:, :-1] * spins[:, 1:]).sum(axis=1).astype(np.float64)
    if periodic and spins.shape[1] > 2:
        e = e + spins[:, 0] * spins[:, -1]
    if not periodic:
        e = e + b_side * (spins[:, 0] + spins[:, -1])
    return K * e


def box_log_partition(K: float, rows: int, cols: int, boundary: float = 0.0,
                      pins=None) -> np.ndarray:
    """log Z of a rows x cols box with a uniform boundary spin.

    ``pins`` is an optional list of ``(sites, values)`` where ``sites`` is a
    (m, 2) array of pinned (row, col) positions and ``values`` a (B, m) array of
    +/-1 assignments; the result then has shape (B,) and holds log of the
    restricted sums. Without pins a scalar is returned.
    """
    if cols > MAX_WIDTH:
        raise TransferError(f"box width {cols} exceeds the transfer-matrix cap {MAX_WIDTH}")
    spins = row_spins(cols)
    log_diag = _row_log_diag(spins, K, boundary, periodic=False)
    top_field = K * boundary * spins.sum(axis=1)
    if pins is None:
        psites = np.zeros((0, 2), dtype=np.int64)
        pvals = np.zeros((1, 0), dtype=np.int8)
    else:
        psites, pvals = pins
        psites = np.asarray(psites, dtype=np.int64).reshape(-1, 2)
        pvals = np.asarray(pvals, dtype=np.int8).reshape(-1, len(psites))
    B = pvals.shape[0]

    def row_mask(r):
        sel = psites[:, 0] == r
        if not np.any(sel):
            return None
        cols_r = psites[sel, 1]
        vals_r = pvals[:, sel]
        # (B, 2^cols): does row configuration agree with the pinned values
        return np.all(spins[None, :, cols_r] == vals_r[:, None, :], axis=2)

    logv = np.broadcast_to(log_diag + top_field, (B, 2 ** cols)).copy()
    if rows == 1:
        logv = logv + top_field
    mask = row_mask(0)
    if mask is not None:
        logv = np.where(mask, logv, -np.inf)
    lognorm = logsumexp(logv, axis=1)
    v = np.exp(logv - lognorm[:, None])
    for r in range(1, rows):
        v = _apply_vertical(v, K, cols)
        w = log_diag + (top_field if r == rows - 1 else 0.0)
        v = v * np.exp(w - w.max())[None, :]
        lognorm = lognorm + w.max()
        mask = row_mask(r)
        if mask is not None:
            v = np.where(mask, v, 0.0)
        s = v.sum(axis=1)
        with np.errstate(divide="ignore"):
            lognorm = lognorm + np.log(s)
        v = v / np.where(s > 0, s, 1.0)[:, None]
    out = lognorm
    return out if pins is not None else float(out[0])


def box_pattern_probabilities(K: float, rows: int, cols: int, boundary: float,
                              sites, patterns) -> np.ndarray:
    """Exact probabilities that the box measure shows each pattern on ``sites``."""
    logz = box_log_partition(K, rows, cols, boundary)
    logp = box_log_partition(K, rows, cols, boundary, pins=(sites, patterns))
    return np.exp(logp - logz)


def box_collision_sum(K: float, rows: int, cols: int, boundary: float) -> float:
    """sum over box configurations of P(sigma)^2 = Z(2K) / Z(K)^2."""
    return float(np.exp(box_log_partition(2 * K, rows, cols, boundary)
                        - 2 * box_log_partition(K, rows, cols, boundary)))


def strip_log_eigenvalue(K: float, width: int, periodic: bool = True, tol: float = 1e-10,
                         max_iter: int = 200000) -> float:
    """log of the dominant eigenvalue of the symmetric row transfer operator.

    The operator is D^1/2 V D^1/2 with D the in-row weight and V the
    vertical bond kernel; power iteration starts from the flip-symmetric
    uniform vector and stops when the Rayleigh estimate changes by less than
    ``tol`` relative to its value.
    """
    if width > MAX_WIDTH:
        raise TransferError(f"strip width {width} exceeds the transfer-matrix cap {MAX_WIDTH}")
    spins = row_spins(width)
    half = 0.5 * _row_log_diag(spins, K, 0.0, periodic)
    shift = half.max()
    dh = np.exp(half - shift)
    v = np.full(2 ** width, 2.0 ** (-width / 2))
    prev = None
    for it in range(max_iter):
        w = dh * _apply_vertical((dh * v)[None, :], K, width)[0]
        lam = float(v @ w)
        norm = np.linalg.norm(w)
        v = w / norm
        if prev is not None and abs(lam - prev) <= tol * abs(lam):
            return np.log(lam) + 2 * shift
        prev = lam
    raise ConvergenceError(f"power iteration did not converge in {max_iter} steps")
