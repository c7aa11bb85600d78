"""Numeric inner loops, with numba-compiled and pure-numpy variants.

The numba path is used when numba imports cleanly and ``PBECC_NO_NUMBA`` is
unset (or ``0``).  Both variants of every kernel stay importable under the
``*_numba`` / ``*_numpy`` names so tests and the benchmark can compare them.
"""

import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is an optional accelerator
    numba = None

USE_NUMBA = numba is not None and os.environ.get("PBECC_NO_NUMBA", "0") in ("", "0")


def _njit(fn):
    if numba is None:  # pragma: no cover
        return fn
    return numba.njit(cache=False)(fn)


# ---------------------------------------------------------------------------
# transport-block error probability 1 - (1 - p)^L


def tb_error_prob_numpy(p, bits):
    p = np.asarray(p, dtype=np.float64)
    bits = np.asarray(bits, dtype=np.float64)
    return -np.expm1(bits * np.log1p(-p))


@_njit
def _tb_error_prob_loop(p, bits, out):
    for i in range(out.shape[0]):
        out[i] = -np.expm1(bits[i] * np.log1p(-p[i]))
    return out


def tb_error_prob_numba(p, bits):
    p, bits = np.broadcast_arrays(np.asarray(p, dtype=np.float64),
                                  np.asarray(bits, dtype=np.float64))
    shape = p.shape
    flat_p = np.ascontiguousarray(p).ravel()
    flat_b = np.ascontiguousarray(bits).ravel()
    out = np.empty(flat_p.shape[0])
    return _tb_error_prob_loop(flat_p, flat_b, out).reshape(shape)


# ---------------------------------------------------------------------------
# cross-layer translation: solve c * (2 - (1-p)^c) = (1 - gamma) * cp for c

BISECT_RTOL = 1e-9
_BISECT_MAX_ITER = 200


def bisect_translate_numpy(cp, p, gamma, rtol=BISECT_RTOL):
    cp = np.asarray(cp, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    gamma = np.asarray(gamma, dtype=np.float64)
    cp, p, gamma = np.broadcast_arrays(cp, p, gamma)
    target = (1.0 - gamma) * cp
    log_q = np.log1p(-p)
    lo = np.zeros_like(target)
    hi = target.copy()
    for _ in range(_BISECT_MAX_ITER):
        if not np.any(hi - lo > rtol * hi):
            break
        mid = 0.5 * (lo + hi)
        val = mid * (1.0 + -np.expm1(mid * log_q))
        above = val > target
        hi = np.where(above, mid, hi)
        lo = np.where(above, lo, mid)
    return 0.5 * (lo + hi)


@_njit
def _bisect_loop(cp, p, gamma, rtol, out):
    for i in range(out.shape[0]):
        target = (1.0 - gamma[i]) * cp[i]
        log_q = np.log1p(-p[i])
        lo = 0.0
        hi = target
        for _ in range(200):
            if hi - lo <= rtol * hi:
                break
            mid = 0.5 * (lo + hi)
            val = mid * (1.0 - np.expm1(mid * log_q))
            if val > target:
                hi = mid
            else:
                lo = mid
        out[i] = 0.5 * (lo + hi)
    return out


def bisect_translate_numba(cp, p, gamma, rtol=BISECT_RTOL):
    cp, p, gamma = np.broadcast_arrays(np.asarray(cp, dtype=np.float64),
                                       np.asarray(p, dtype=np.float64),
                                       np.asarray(gamma, dtype=np.float64))
    shape = cp.shape
    out = np.empty(cp.size)
    _bisect_loop(np.ascontiguousarray(cp).ravel(), np.ascontiguousarray(p).ravel(),
                 np.ascontiguousarray(gamma).ravel(), rtol, out)
    return out.reshape(shape)


# ---------------------------------------------------------------------------
# integer equal-share water-filling


def waterfill_numpy(demands, capacity, offset=0):
    demands = np.asarray(demands, dtype=np.int64)
    n = demands.shape[0]
    alloc = np.zeros(n, dtype=np.int64)
    remaining = int(capacity)
    need = demands.copy()
    while remaining > 0:
        active = np.flatnonzero(need > 0)
        if active.size == 0:
            break
        share = remaining // active.size
        if share == 0:
            # fewer PRBs than hungry users: one each, rotated start
            order = np.roll(active, -(offset % active.size))
            give = order[:remaining]
            alloc[give] += 1
            need[give] -= 1
            remaining = 0
            break
        grant = np.minimum(need[active], share)
        alloc[active] += grant
        need[active] -= grant
        remaining -= int(grant.sum())
    return alloc


@_njit
def _waterfill_loop(demands, capacity, offset, alloc):
    n = demands.shape[0]
    need = demands.copy()
    remaining = capacity
    while remaining > 0:
        n_active = 0
        for i in range(n):
            if need[i] > 0:
                n_active += 1
        if n_active == 0:
            break
        share = remaining // n_active
        if share == 0:
            active = np.empty(n_active, dtype=np.int64)
            k = 0
            for i in range(n):
                if need[i] > 0:
                    active[k] = i
                    k += 1
            skip = offset % n_active
            for j in range(remaining):
                i = active[(skip + j) % n_active]
                alloc[i] += 1
                need[i] -= 1
            remaining = 0
            break
        for i in range(n):
            if need[i] > 0:
                g = need[i] if need[i] < share else share
                alloc[i] += g
                need[i] -= g
                remaining -= g
    return alloc


def waterfill_numba(demands, capacity, offset=0):
    demands = np.ascontiguousarray(demands, dtype=np.int64)
    alloc = np.zeros(demands.shape[0], dtype=np.int64)
    return _waterfill_loop(demands, int(capacity), int(offset), alloc)


# ---------------------------------------------------------------------------
# fixed-width time binning of delivered bits


def bin_sum_numpy(times, values, start, width, n_bins):
    times = np.asarray(times, dtype=np.int64)
    values = np.asarray(values, dtype=np.float64)
    idx = (times - start) // width
    keep = (idx >= 0) & (idx < n_bins)
    return np.bincount(idx[keep], weights=values[keep], minlength=n_bins)[:n_bins]


@_njit
def _bin_sum_loop(times, values, start, width, out):
    n_bins = out.shape[0]
    for i in range(times.shape[0]):
        k = (times[i] - start) // width
        if 0 <= k < n_bins:
            out[k] += values[i]
    return out


def bin_sum_numba(times, values, start, width, n_bins):
    out = np.zeros(int(n_bins))
    return _bin_sum_loop(np.ascontiguousarray(times, dtype=np.int64),
                         np.ascontiguousarray(values, dtype=np.float64),
                         int(start), int(width), out)


# ---------------------------------------------------------------------------
# Jain's index


def jain_numpy(x):
    x = np.asarray(x, dtype=np.float64)
    x = x / x.max()  # scale-free; keeps tiny inputs from underflowing
    return float(x.sum() ** 2 / (x.size * np.square(x).sum()))


@_njit
def _jain_loop(x):
    m = 0.0
    for v in x:
        m = max(m, v)
    s = 0.0
    s2 = 0.0
    for v in x:
        s += v / m
        s2 += (v / m) * (v / m)
    return s * s / (x.shape[0] * s2)


def jain_numba(x):
    return float(_jain_loop(np.ascontiguousarray(x, dtype=np.float64)))


if USE_NUMBA:
    tb_error_prob = tb_error_prob_numba
    bisect_translate = bisect_translate_numba
    waterfill = waterfill_numba
    bin_sum = bin_sum_numba
    jain = jain_numba
else:
    tb_error_prob = tb_error_prob_numpy
    bisect_translate = bisect_translate_numpy
    waterfill = waterfill_numpy
    bin_sum = bin_sum_numpy
    jain = jain_numpy

BACKEND = "numba" if USE_NUMBA else "numpy"
