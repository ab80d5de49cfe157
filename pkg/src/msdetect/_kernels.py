"""Compiled inner loops.

Every kernel advances one detector over a block of pre-generated columns
and stops early at the first step whose statistic reaches ``b``.  State
lives in caller-owned arrays so that a run can be paused and resumed
between blocks without changing results.

Window kernels support *pruning*: a cheap upper bound on each window's
score sum lets them skip the transcendental work whenever that window
cannot reach ``floor = max(floor_min, running max)``.  With pruning on,
per-step statistics below the floor are reported as ``-inf``; stopping
times and records (new running maxima at or above ``floor_min``) are
unaffected.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

RULE_MAX = 0
RULE_XS = 1
RULE_LR = 2
RULE_S = 3
RULE_MEI = 4
RULE_MEI_EXT = 5

_SWITCH = 30.0

# Full fastmath lets LLVM vectorize the reductions below.  They only feed
# pruning bounds, never reported statistics; inputs are finite
# (non-finite observations are rejected upstream).
_Y_MID = 9.0
_Y_TOP = 25.0


@njit(cache=True, nogil=True)
def mix_excess(c, a):
    """log(1 - c + c*exp(a)) for a >= 0 and 0 < c <= 1, without overflow."""
    if a < _SWITCH:
        return math.log1p(c * math.expm1(a))
    return a + math.log(c) + math.log1p((1.0 - c) / c * math.exp(-a))


@njit(cache=True, nogil=True, fastmath=True)
def _tiered_y_sums(a, b, inv_k, y1, y2, y3):
    """Sums of y = (z+)^2 over the tiers (0,y1], (y1,y2], (y2,y3]; count above y3."""
    s1 = 0.0
    s2 = 0.0
    s3 = 0.0
    n_top = 0.0
    for n in range(a.shape[0]):
        d = a[n] - b[n]
        d = d if d > 0.0 else 0.0
        y = d * d * inv_k
        s1 += y if y <= y1 else 0.0
        s2 += y if (y > y1 and y <= y2) else 0.0
        s3 += y if (y > y2 and y <= y3) else 0.0
        n_top += 1.0 if y > y3 else 0.0
    return s1, s2, s3, n_top


@njit(cache=True, nogil=True, fastmath=True)
def _count_at_least(a, b, w, thr):
    cnt = 0.0
    for n in range(a.shape[0]):
        cnt += 1.0 if (a[n] - b[n]) * w >= thr else 0.0
    return cnt


@njit(cache=True, nogil=True, fastmath=True)
def _lr_fast_sum(a, b, mu0, shift):
    acc = 0.0
    for n in range(a.shape[0]):
        v = mu0 * (a[n] - b[n]) + shift
        acc += v if v > 0.0 else 0.0
    return acc


@njit(cache=True, nogil=True)
def _push(ring, ctr, x):
    L = ring.shape[0]
    n_streams = ring.shape[1]
    t = ctr[1] + 1
    prev = ctr[0]
    pos = t % L
    for n in range(n_streams):
        ring[pos, n] = ring[prev, n] + x[n]
    if pos == 0:
        # rebase so cumulative sums stay O(window) in magnitude
        for r in range(1, L):
            for n in range(n_streams):
                ring[r, n] -= ring[0, n]
        for n in range(n_streams):
            ring[0, n] = 0.0
    ctr[0] = pos
    ctr[1] = t
    return pos, t


@njit(cache=True, nogil=True)
def window_advance(rule, g0, c, scale, mu0, log_p0, ring, ctr, windows, inv_sqrt,
                   block, b, floor_min, prune, run_max, rec_t, rec_v, stats, argk):
    """Advance a window-limited rule over ``block`` (shape m x N).

    Returns ``(steps_done, stopped, n_records)``.
    """
    L = ring.shape[0]
    n_streams = ring.shape[1]
    n_rec = 0
    m = block.shape[0]
    half_mu0_sq = 0.5 * mu0 * mu0
    # chord slopes of the convex score excess f(y), f(0) = 0
    y_lo = 1.0 / scale if scale > 0.0 else 1.0
    slope_lo = slope_mid = slope_top = 0.0
    if rule == RULE_S or rule == RULE_XS:
        slope_lo = mix_excess(c, scale * y_lo) / y_lo
        slope_mid = mix_excess(c, scale * _Y_MID) / _Y_MID
        slope_top = mix_excess(c, scale * _Y_TOP) / _Y_TOP
    for i in range(m):
        pos, t = _push(ring, ctr, block[i])
        a = ring[pos]
        floor = -np.inf
        if prune:
            floor = max(floor_min, run_max[0])
        best = -np.inf
        best_k = -1
        for wi in range(windows.shape[0]):
            k = windows[wi]
            if k > t:
                break
            bb = ring[(t - k) % L]
            w = inv_sqrt[k]
            if rule == RULE_MAX:
                if prune and floor > 0.0:
                    thr = math.sqrt(2.0 * floor) * (1.0 - 1e-12)
                    if _count_at_least(a, bb, w, thr) == 0.0:
                        continue
                zmax = 0.0
                for n in range(n_streams):
                    z = (a[n] - bb[n]) * w
                    if z > zmax:
                        zmax = z
                val = 0.5 * zmax * zmax
            elif rule == RULE_LR:
                shift = log_p0 - k * half_mu0_sq
                if prune:
                    approx = _lr_fast_sum(a, bb, mu0, shift)
                    if approx + 1e-9 * (1.0 + approx) < floor:
                        continue
                val = 0.0
                for n in range(n_streams):
                    v = mu0 * (a[n] - bb[n]) + shift
                    if v > 0.0:
                        val += v
            else:
                if prune:
                    s1, s2, s3, n_top = _tiered_y_sums(a, bb, w * w, y_lo, _Y_MID, _Y_TOP)
                    bound = n_streams * g0 + slope_lo * s1 + slope_mid * s2 + slope_top * s3
                    if n_top > 0.0:
                        for n in range(n_streams):
                            z = (a[n] - bb[n]) * w
                            y = z * z
                            # slack: never miss a stream the fast pass put on top
                            if z > 0.0 and y > _Y_TOP * (1.0 - 1e-9):
                                bound += mix_excess(c, scale * y)
                    bound += 1e-9 * (1.0 + abs(bound))
                    if bound < floor:
                        continue
                val = 0.0
                for n in range(n_streams):
                    z = (a[n] - bb[n]) * w
                    if z > 0.0:
                        val += mix_excess(c, scale * z * z)
                val += n_streams * g0
            if val > best:
                best = val
                best_k = k
        stats[i] = best
        argk[i] = best_k
        if best >= floor_min and best > run_max[0]:
            run_max[0] = best
            rec_t[n_rec] = t
            rec_v[n_rec] = best
            n_rec += 1
        if best >= b:
            return i + 1, True, n_rec
    return m, False, n_rec


@njit(cache=True, nogil=True)
def cusum_advance(rule, g0, c, mu0, R, ctr, block, b, floor_min, run_max,
                  rec_t, rec_v, stats):
    """Advance a CUSUM-sum rule (raw or detectability-transformed)."""
    n_streams = R.shape[0]
    n_rec = 0
    m = block.shape[0]
    drift = 0.5 * mu0 * mu0
    for i in range(m):
        t = ctr[1] + 1
        ctr[1] = t
        x = block[i]
        val = 0.0
        if rule == RULE_MEI:
            for n in range(n_streams):
                r = R[n] + mu0 * x[n] - drift
                r = r if r > 0.0 else 0.0
                R[n] = r
                val += r
        else:
            for n in range(n_streams):
                r = R[n] + mu0 * x[n] - drift
                r = r if r > 0.0 else 0.0
                R[n] = r
                if r > 0.0:
                    val += mix_excess(c, 0.5 * r)
            val += n_streams * g0
        stats[i] = val
        if val >= floor_min and val > run_max[0]:
            run_max[0] = val
            rec_t[n_rec] = t
            rec_v[n_rec] = val
            n_rec += 1
        if val >= b:
            return i + 1, True, n_rec
    return m, False, n_rec


@njit(cache=True, nogil=True)
def cusum_exp_half_sum(r, noise, mu0, t0, burn_in, thin):
    """Run the null CUSUM chain over ``noise``; sum exp(R/2) at sampled steps."""
    drift = 0.5 * mu0 * mu0
    acc = 0.0
    count = 0
    for i in range(noise.shape[0]):
        r = r + mu0 * noise[i] - drift
        if r < 0.0:
            r = 0.0
        t = t0 + i + 1
        if t > burn_in and (t - burn_in) % thin == 0:
            acc += math.exp(0.5 * r)
            count += 1
    return r, acc, count
