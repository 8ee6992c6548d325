"""Compiled inner loops of the lattice walk.

Positions are integer lattice coordinates (units of ``eps``). Every kernel
walks particles in fixed batches and writes per-batch sums, so a reduction
over batches in index order gives the same floating point result whatever
the number of threads.
"""

from __future__ import annotations

import numpy as np
from numba import config, njit, prange

from stickylab.lattice.rng import uniform

# the bundled TBB is too old for numba; avoid the warning it triggers
if config.THREADING_LAYER == "default":
    config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

MOVE, STAY, EXIT_UP, EXIT_DOWN = 0, 1, 2, 3


@njit(inline="always")
def walk_step(j, draw, stay, up_threshold):
    """One transition from site *j* given a uniform *draw*.

    Off 0 the walk moves up when ``draw < 1/2``. At 0 it stays when
    ``draw < stay`` and exits up when ``draw < up_threshold``, where
    ``up_threshold = stay + (1 - stay) * u``.
    """
    if j != 0:
        if draw < 0.5:
            return j + 1, MOVE
        return j - 1, MOVE
    if draw < stay:
        return 0, STAY
    if draw < up_threshold:
        return 1, EXIT_UP
    return -1, EXIT_DOWN


@njit(inline="always")
def _table(tab, j):
    c = tab.size // 2
    if j < -c or j > c:
        return tab[0] if j < 0 else tab[tab.size - 1]
    return tab[j + c]


# {{{ single walker


@njit(parallel=True, cache=True)
def advance(state, cum, keys, bounds, k0, k1, stay, up_thr, rho, alpha, eps, fpp):
    """Advance all particles from step *k0* to *k1*.

    ``state`` columns: position, up exits, down exits, stays, steps above 0.
    ``cum`` columns: martingale compensator, sojourn balance.
    Per-step arrays are indexed by the absolute step number. Returns the
    per-batch counts at sites 0, 1 and -1 after the last step.
    """
    nb = bounds.size - 1
    counts = np.zeros((nb, 3), dtype=np.int64)
    half_eps2 = 0.5 * eps * eps
    eps2 = eps * eps
    two_eps = 2.0 * eps
    for b in prange(nb):
        for i in range(bounds[b], bounds[b + 1]):
            key = keys[i]
            j = state[i, 0]
            n_up = state[i, 1]
            n_down = state[i, 2]
            n_stay = state[i, 3]
            n_pos = state[i, 4]
            comp = cum[i, 0]
            soj = cum[i, 1]
            for k in range(k0, k1):
                if j > 0:
                    n_pos += 1
                if j != 0:
                    comp += half_eps2 * _table(fpp, j)
                j, ev = walk_step(j, uniform(key, k), stay[k], up_thr[k])
                if ev == STAY:
                    n_stay += 1
                    soj += eps2
                elif ev == EXIT_UP:
                    n_up += 1
                    soj -= rho[k] * two_eps
                    comp += alpha[k] * two_eps
                elif ev == EXIT_DOWN:
                    n_down += 1
            state[i, 0] = j
            state[i, 1] = n_up
            state[i, 2] = n_down
            state[i, 3] = n_stay
            state[i, 4] = n_pos
            cum[i, 0] = comp
            cum[i, 1] = soj
            if j == 0:
                counts[b, 0] += 1
            elif j == 1:
                counts[b, 1] += 1
            elif j == -1:
                counts[b, 2] += 1
    return counts


@njit(cache=True)
def advance_interacting(
    state, cum, keys, bounds, k0, k1, alpha, up, rho_tab, eps, fpp, level, stay, up_thr, rho
):
    """Advance step by step, each step driven by the current atom estimate.

    The estimate after a step is ``level / (2N)`` with
    ``level = 2 #{0} - #{+-1}`` clipped to ``[0, 2N]``; ``rho_tab[level]``
    holds ``rho`` at that value. The coefficients used are written to
    *stay*, *up_thr* and *rho*. Returns the final level.
    """
    top = 2 * state.shape[0]
    for k in range(k0, k1):
        r = rho_tab[level]
        q = r / (r + (1.0 - alpha[k]) * eps)
        stay[k] = q
        up_thr[k] = q + (1.0 - q) * up[k]
        rho[k] = r
        c = advance(state, cum, keys, bounds, k, k + 1, stay, up_thr, rho, alpha, eps, fpp)
        total = 0
        for b in range(c.shape[0]):
            total += 2 * c[b, 0] - c[b, 1] - c[b, 2]
        level = min(max(total, 0), top)
    return level


@njit(parallel=True, cache=True)
def record(state, cum, bounds, j0, K, f, hist, imom, fmom):
    """Per-batch summaries of the current state.

    ``hist[b, :]`` counts sites ``-K..K``. ``imom[b, :]`` holds sums of
    n_up, n_down, n_up^2, n_down^2, n_up*n_down, n_stay, n_pos, n_pos^2.
    ``fmom[b, :]`` holds sums and sums of squares of the martingale
    statistic ``f(X) - f(x) - compensator`` and of the sojourn balance.
    """
    nb = bounds.size - 1
    f0 = _table(f, j0)
    for b in prange(nb):
        for c in range(2 * K + 1):
            hist[b, c] = 0
        for c in range(imom.shape[1]):
            imom[b, c] = 0
        for c in range(fmom.shape[1]):
            fmom[b, c] = 0.0
        for i in range(bounds[b], bounds[b + 1]):
            j = state[i, 0]
            if -K <= j <= K:
                hist[b, j + K] += 1
            u = np.int64(state[i, 1])
            d = np.int64(state[i, 2])
            imom[b, 0] += u
            imom[b, 1] += d
            imom[b, 2] += u * u
            imom[b, 3] += d * d
            imom[b, 4] += u * d
            imom[b, 5] += state[i, 3]
            imom[b, 6] += state[i, 4]
            imom[b, 7] += state[i, 4] * state[i, 4]
            m = _table(f, j) - f0 - cum[i, 0]
            s = cum[i, 1]
            fmom[b, 0] += m
            fmom[b, 1] += m * m
            fmom[b, 2] += s
            fmom[b, 3] += s * s


@njit(parallel=True, cache=True)
def walk_paths(start, keys, stay, up_thr, out, events):
    """Full paths: ``out[i, k]`` is the site after ``k`` steps.

    ``events[i]`` counts stays, up exits and down exits as they happen.
    """
    n, width = out.shape
    for i in prange(n):
        j = start
        out[i, 0] = j
        key = keys[i]
        for c in range(3):
            events[i, c] = 0
        for k in range(width - 1):
            j, ev = walk_step(j, uniform(key, k), stay[k], up_thr[k])
            out[i, k + 1] = j
            if ev != MOVE:
                events[i, ev - 1] += 1


# }}}


# {{{ coupled pair


@njit(inline="always")
def _tanaka_increment(a, b):
    """``2 * [(b)^+ - (a)^+ - 1_{a>0} (b - a)]`` in lattice units."""
    pa = a if a > 0 else 0
    pb = b if b > 0 else 0
    drift = (b - a) if a > 0 else 0
    return 2 * (pb - pa - drift)


@njit(parallel=True, cache=True)
def advance_pair(state, bal, keys, bounds, k0, k1, stay_a, thr_a, rho_a, stay_b, thr_b, rho_b, eps):
    """Advance coupled pairs driven by the same draws.

    ``state`` columns: X1, X2, running max |X1 - X2|, local time of X1 - X2,
    of max(X1, X2) and of min(X1, X2) at 0 (all in lattice units, from the
    discrete Tanaka formula), up exits of X1, up exits of X2, and the local
    time of X1 - X2 at the previous record. ``bal`` is the sojourn balance of
    the maximum: held time at 0 minus ``rho_a dL(X1) 1{X2<0} + rho_b dL(X2) 1{X1<=0}``.
    """
    nb = bounds.size - 1
    eps2 = eps * eps
    two_eps = 2.0 * eps
    for b in prange(nb):
        for i in range(bounds[b], bounds[b + 1]):
            key = keys[i]
            x1 = state[i, 0]
            x2 = state[i, 1]
            sup = state[i, 2]
            ld = state[i, 3]
            lmax = state[i, 4]
            lmin = state[i, 5]
            u1 = state[i, 6]
            u2 = state[i, 7]
            s = bal[i]
            for k in range(k0, k1):
                draw = uniform(key, k)
                if x1 != 0 and x2 != 0:
                    # same move for both: no local time, distance unchanged
                    d = 1 if draw < 0.5 else -1
                    x1 += d
                    x2 += d
                    continue
                y1, e1 = walk_step(x1, draw, stay_a[k], thr_a[k])
                y2, e2 = walk_step(x2, draw, stay_b[k], thr_b[k])
                mx0 = max(x1, x2)
                mx1 = max(y1, y2)
                if mx0 == 0 and mx1 == 0:
                    s += eps2
                if e1 == EXIT_UP:
                    u1 += 1
                    if x2 < 0:
                        s -= rho_a[k] * two_eps
                if e2 == EXIT_UP:
                    u2 += 1
                    if x1 <= 0:
                        s -= rho_b[k] * two_eps
                ld += _tanaka_increment(x1 - x2, y1 - y2)
                lmax += _tanaka_increment(mx0, mx1)
                lmin += _tanaka_increment(min(x1, x2), min(y1, y2))
                x1 = y1
                x2 = y2
                dist = abs(x1 - x2)
                if dist > sup:
                    sup = dist
            state[i, 0] = x1
            state[i, 1] = x2
            state[i, 2] = sup
            state[i, 3] = ld
            state[i, 4] = lmax
            state[i, 5] = lmin
            state[i, 6] = u1
            state[i, 7] = u2
            bal[i] = s


@njit(parallel=True, cache=True)
def record_pair(state, bal, bounds, K, hist, imom, fmom):
    """Per-batch summaries of a coupled run.

    ``hist[b, w, :]`` counts sites ``-K..K`` for w = X1, X2, max, min.
    ``imom[b, :]``: sums of sup distance, local time of X1 - X2 and its
    square, squared increment of that local time since the last record,
    local times of max and min, up exits of X1 and X2.
    ``fmom[b, :]``: sum and sum of squares of the sojourn balance.
    The previous-record column of ``state`` is updated.
    """
    nb = bounds.size - 1
    for b in prange(nb):
        for w in range(4):
            for c in range(2 * K + 1):
                hist[b, w, c] = 0
        for c in range(imom.shape[1]):
            imom[b, c] = 0
        fmom[b, 0] = 0.0
        fmom[b, 1] = 0.0
        for i in range(bounds[b], bounds[b + 1]):
            x1 = state[i, 0]
            x2 = state[i, 1]
            sites = (x1, x2, max(x1, x2), min(x1, x2))
            for w in range(4):
                j = sites[w]
                if -K <= j <= K:
                    hist[b, w, j + K] += 1
            ld = state[i, 3]
            inc = ld - state[i, 8]
            state[i, 8] = ld
            imom[b, 0] += state[i, 2]
            imom[b, 1] += ld
            imom[b, 2] += ld * ld
            imom[b, 3] += inc * inc
            imom[b, 4] += state[i, 4]
            imom[b, 5] += state[i, 5]
            imom[b, 6] += state[i, 6]
            imom[b, 7] += state[i, 7]
            fmom[b, 0] += bal[i]
            fmom[b, 1] += bal[i] * bal[i]


@njit(parallel=True, cache=True)
def walk_pair_paths(start, keys, stay_a, thr_a, stay_b, thr_b, out1, out2):
    n, width = out1.shape
    for i in prange(n):
        x1 = start
        x2 = start
        out1[i, 0] = x1
        out2[i, 0] = x2
        key = keys[i]
        for k in range(width - 1):
            draw = uniform(key, k)
            x1, e1 = walk_step(x1, draw, stay_a[k], thr_a[k])
            x2, e2 = walk_step(x2, draw, stay_b[k], thr_b[k])
            out1[i, k + 1] = x1
            out2[i, k + 1] = x2


# }}}
