"""Compiled inner loops for trajectory sampling.

All kernels run time-major over a block of lanes and draw exactly one uniform
per lane per step from the block's path generator, in lane order.  Every
kernel that advances the same model therefore consumes the stream
identically, which is what makes the fused sum kernels agree with the
materialising state kernels.

Map states are 64-bit fixed-point turns ``m`` with ``x = m / 2**64``.  One
step of ``x -> k x mod 1`` is ``m -> k*m + D (mod 2**64)`` with ``D`` uniform
on ``{0, ..., k-1}``: the digit is the carry from the discarded sub-2**-64
tail, which under Lebesgue measure is uniform and independent of ``m``.  This
keeps the joint law of ``floor(2**64 X_j)`` exact at every step, whereas
naive double-precision iteration of ``2x mod 1`` collapses to 0 after ~53
doublings.
"""

import math

import numba as nb
import numpy as np

_TABLE_BITS = 12
_SHIFT = np.uint64(64 - _TABLE_BITS)
_LOW_MASK = np.uint64((1 << 52) - 1)
_TURN = 2.0 * math.pi / 18446744073709551616.0
_COS_TABLE = np.cos(2.0 * np.pi * np.arange(1 << _TABLE_BITS) / (1 << _TABLE_BITS))
_SIN_TABLE = np.sin(2.0 * np.pi * np.arange(1 << _TABLE_BITS) / (1 << _TABLE_BITS))
_U11 = np.uint64(11)
_INV53 = 2.0**-53


@nb.njit(nogil=True, cache=True, inline="always")
def _turn_cos_sin(phase):
    # table lookup on the top 12 bits, Taylor angle addition on the rest;
    # the residual angle is below 2*pi/4096 so the truncation error is < 1e-23
    idx = phase >> _SHIFT
    b = np.float64(phase & _LOW_MASK) * _TURN
    b2 = b * b
    cb = 1.0 - b2 * (0.5 - b2 * (1.0 / 24.0 - b2 / 720.0))
    sb = b * (1.0 - b2 * (1.0 / 6.0 - b2 / 120.0))
    ca = _COS_TABLE[idx]
    sa = _SIN_TABLE[idx]
    return ca * cb - sa * sb, sa * cb + ca * sb


@nb.njit(nogil=True, cache=True)
def turn_cos_sin(phases, cos_out, sin_out):
    for i in range(phases.shape[0]):
        c, s = _turn_cos_sin(phases[i])
        cos_out[i] = c
        sin_out[i] = s


@nb.njit(nogil=True, cache=True)
def map_states(gen, m, slopes, t0, length, out):
    """Write x_j for j in [t0, t0+length) into out[j - t0, lane]; advance m."""
    lanes = m.shape[0]
    period = slopes.shape[0]
    for jj in range(length):
        k = slopes[(t0 + jj) % period]
        kf = np.float64(k)
        for i in range(lanes):
            mi = m[i]
            out[jj, i] = np.float64(mi >> _U11) * _INV53
            m[i] = mi * k + np.uint64(gen.random() * kf)


@nb.njit(nogil=True, cache=True)
def map_trig_sums(gen, m, slopes, t0, length, freqs, coef, ckpt, out, running):
    """Fused map stepping and trigonometric-polynomial partial sums.

    coef has shape (obs_period, harmonics, 2, d): cosine and sine weights.
    ckpt holds sums-after-step counts relative to t0 (1..length), sorted;
    out[lane, q, :] receives the running sum when step ckpt[q] completes.
    """
    lanes = m.shape[0]
    period = slopes.shape[0]
    obs_period = coef.shape[0]
    harmonics = freqs.shape[0]
    dim = coef.shape[3]
    q = 0
    nq = ckpt.shape[0]
    for jj in range(length):
        j = t0 + jj
        k = slopes[j % period]
        kf = np.float64(k)
        p = j % obs_period
        for i in range(lanes):
            mi = m[i]
            for h in range(harmonics):
                c, s = _turn_cos_sin(freqs[h] * mi)
                for a in range(dim):
                    running[i, a] += coef[p, h, 0, a] * c + coef[p, h, 1, a] * s
            m[i] = mi * k + np.uint64(gen.random() * kf)
        while q < nq and ckpt[q] == jj + 1:
            for i in range(lanes):
                for a in range(dim):
                    out[i, q, a] = running[i, a]
            q += 1


@nb.njit(nogil=True, cache=True, inline="always")
def _next_state(cum_row, u):
    nxt = 0
    last = cum_row.shape[0] - 1
    while nxt < last and u >= cum_row[nxt]:
        nxt += 1
    return nxt


@nb.njit(nogil=True, cache=True)
def chain_states(gen, s, cum, t0, length, out):
    lanes = s.shape[0]
    period = cum.shape[0]
    for jj in range(length):
        p = (t0 + jj) % period
        for i in range(lanes):
            si = s[i]
            out[jj, i] = si
            s[i] = _next_state(cum[p, si], gen.random())


@nb.njit(nogil=True, cache=True)
def chain_table_sums(gen, s, cum, t0, length, table, ckpt, out, running):
    """Fused chain stepping with g_j(state) read from table[j % period, state, :]."""
    lanes = s.shape[0]
    period = cum.shape[0]
    obs_period = table.shape[0]
    dim = table.shape[2]
    q = 0
    nq = ckpt.shape[0]
    for jj in range(length):
        j = t0 + jj
        p = j % period
        po = j % obs_period
        for i in range(lanes):
            si = s[i]
            for a in range(dim):
                running[i, a] += table[po, si, a]
            s[i] = _next_state(cum[p, si], gen.random())
        while q < nq and ckpt[q] == jj + 1:
            for i in range(lanes):
                for a in range(dim):
                    out[i, q, a] = running[i, a]
            q += 1


@nb.njit(nogil=True, cache=True)
def cadlag_modulus(values, times, delta):
    """Exact w'_delta of a step path sampled on a grid, by dynamic programming.

    values has shape (G, d); the path equals values[i] on [times[i], times[i+1])
    and the final value holds at times[-1].  Partition points are restricted
    to grid times, which is exact for paths that only jump at grid times.
    Cells are [times[a], times[b]) with times[b] - times[a] > delta; the last
    cell is closed at times[-1].  Oscillation uses the max-coordinate norm.
    """
    g = values.shape[0]
    dim = values.shape[1]
    best = np.full(g, np.inf)
    best[0] = 0.0
    lo = np.empty(dim)
    hi = np.empty(dim)
    result = np.inf
    for a in range(g - 1):
        if best[a] == np.inf:
            continue
        for c in range(dim):
            lo[c] = values[a, c]
            hi[c] = values[a, c]
        osc = 0.0
        # extend the cell [times[a], times[b]) one grid value at a time
        for b in range(a + 1, g):
            if times[b] - times[a] > delta:
                cand = best[a] if best[a] > osc else osc
                if cand < best[b]:
                    best[b] = cand
            for c in range(dim):
                v = values[b, c]
                if v < lo[c]:
                    lo[c] = v
                if v > hi[c]:
                    hi[c] = v
                if hi[c] - lo[c] > osc:
                    osc = hi[c] - lo[c]
        # closing cell [times[a], times[-1]] includes the terminal value
        if times[g - 1] - times[a] > delta:
            cand = best[a] if best[a] > osc else osc
            if cand < result:
                result = cand
    return result


@nb.njit(nogil=True, cache=True)
def cadlag_modulus_batch(paths, times, delta, out):
    for i in range(paths.shape[0]):
        out[i] = cadlag_modulus(paths[i], times, delta)
