"""Compiled inner loops for the d=2 samplers."""
import numpy as np
from numba import njit


def plus_probability_table(beta, coupling):
    """P(spin = +1 | local field h) for h = -4..4, heat-bath rule."""
    h = np.arange(-4, 5, dtype=np.float64)
    return 1.0 / (1.0 + np.exp(-2.0 * beta * coupling * h))


@njit(cache=True)
def heat_bath_sweeps(pad, frozen, table, uniforms):
    """Raster-scan heat-bath sweeps in place.

    ``pad`` holds the window plus its boundary layer, ``frozen`` marks sites
    that are never updated, ``uniforms`` has shape (sweeps, rows, cols).
    """
    nsweeps, rows, cols = uniforms.shape
    for s in range(nsweeps):
        for i in range(rows):
            for j in range(cols):
                if frozen[i, j]:
                    continue
                h = pad[i, j + 1] + pad[i + 2, j + 1] + pad[i + 1, j] + pad[i + 1, j + 2]
                if uniforms[s, i, j] < table[h + 4]:
                    pad[i + 1, j + 1] = 1
                else:
                    pad[i + 1, j + 1] = -1


@njit(cache=True)
def coupled_sweeps(top, bottom, frozen, table, uniforms, check_order):
    """Heat-bath sweeps of two chains driven by the same uniforms.

    Returns False if ``check_order`` is set and the sitewise order
    top >= bottom was ever violated.
    """
    nsweeps, rows, cols = uniforms.shape
    ok = True
    for s in range(nsweeps):
        for i in range(rows):
            for j in range(cols):
                if frozen[i, j]:
                    continue
                u = uniforms[s, i, j]
                h = top[i, j + 1] + top[i + 2, j + 1] + top[i + 1, j] + top[i + 1, j + 2]
                top[i + 1, j + 1] = 1 if u < table[h + 4] else -1
                h = (bottom[i, j + 1] + bottom[i + 2, j + 1] + bottom[i + 1, j]
                     + bottom[i + 1, j + 2])
                bottom[i + 1, j + 1] = 1 if u < table[h + 4] else -1
        if check_order:
            for i in range(rows):
                for j in range(cols):
                    if top[i + 1, j + 1] < bottom[i + 1, j + 1]:
                        ok = False
    return ok


@njit(cache=True)
def chains_equal(top, bottom):
    rows, cols = top.shape
    for i in range(rows):
        for j in range(cols):
            if top[i, j] != bottom[i, j]:
                return False
    return True
