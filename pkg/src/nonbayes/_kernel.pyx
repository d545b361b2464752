# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled trial kernel: the hot K-step belief-update loop.

Mirrors nonbayes._kernel_py.evolve_trial exactly: same counter-hash draws
(bit-identical), same ascending-order summation of aggregation addends (so
permutation equivariance is bit-exact within this backend), same recording
schedule. Floating-point results may differ from the numpy twin in the last
few ulps because the two backends group sums differently.
"""

import numpy as np

from libc.math cimport INFINITY, exp, log, isnan
from libc.stdint cimport int64_t, uint64_t

from ._kernel_py import KernelError, recorded_steps

cdef double _UNIT = 2.0 ** -53
cdef uint64_t _GOLD = 0x9E3779B97F4A7C15U


cdef inline uint64_t _mix(uint64_t z) noexcept nogil:
    z = (z ^ (z >> 30)) * <uint64_t>0xBF58476D1CE4E5B9U
    z = (z ^ (z >> 27)) * <uint64_t>0x94D049BB133111EBU
    return z ^ (z >> 31)


cdef inline double _draw_uniform(uint64_t seed, uint64_t step, uint64_t agent) noexcept nogil:
    cdef uint64_t h = _mix(seed + _GOLD)
    h = _mix(h ^ (step + _GOLD))
    h = _mix(h ^ (agent + _GOLD))
    return <double>(h >> 11) * _UNIT


def evolve_trial(
    const double[:, ::1] log_b0,
    const double[:, :, ::1] weights,
    const double[:, :, ::1] log_lik,
    const double[:, ::1] cdf,
    const int64_t[::1] sizes,
    seed,
    long K,
    long record_every,
    draws=None,
):
    """Compiled twin of nonbayes._kernel_py.evolve_trial (same contract)."""
    cdef Py_ssize_t n = log_b0.shape[0]
    cdef Py_ssize_t m = log_b0.shape[1]
    cdef Py_ssize_t period = weights.shape[0]
    if K < 0:
        raise ValueError(f"K must be nonnegative, got {K}")
    if record_every < 1:
        raise ValueError(f"record_every must be >= 1, got {record_every}")
    cdef uint64_t cseed = <uint64_t>(int(seed) & ((1 << 64) - 1))

    draws_arr = (
        np.empty((K, n), dtype=np.int64)
        if draws is None
        else np.array(draws, dtype=np.int64, order="C", copy=True)
    )
    if draws_arr.shape[0] != K or draws_arr.shape[1] != n:
        raise ValueError(f"draws must have shape ({K}, {n}), got {draws_arr.shape}")
    cdef int64_t[:, ::1] drw = draws_arr
    cdef bint have_draws = draws is not None

    ks = recorded_steps(K, record_every)
    cdef int64_t[::1] ks_v = ks
    rec = np.empty((len(ks), n, m), dtype=np.float64)
    cdef double[:, :, ::1] rec_v = rec

    cur_arr = np.array(log_b0, dtype=np.float64, copy=True)
    new_arr = np.empty((n, m), dtype=np.float64)
    buf_arr = np.empty(n, dtype=np.float64)
    cdef double[:, ::1] cur = cur_arr
    cdef double[:, ::1] new = new_arr
    cdef double[:, ::1] tmp
    cdef double[::1] buf = buf_arr

    cdef Py_ssize_t t, i, j, p, ii, jj, r
    cdef long pa, d, s
    cdef double a, l, acc, mx, z, v, u, key
    cdef Py_ssize_t nan_i = -1, nan_p = -1

    rec_v[0, :, :] = cur
    r = 1
    for t in range(K):
        pa = t % period
        if not have_draws:
            for i in range(n):
                u = _draw_uniform(cseed, <uint64_t>t, <uint64_t>i)
                s = 0
                while s < sizes[i] - 1 and cdf[i, s] <= u:
                    s += 1
                drw[t, i] = s
        for i in range(n):
            d = drw[t, i]
            for p in range(m):
                for j in range(n):
                    a = weights[pa, i, j]
                    l = cur[j, p]
                    if a == 0.0 and l == -INFINITY:
                        buf[j] = 0.0
                    else:
                        buf[j] = a * l
                # ascending insertion sort: label-independent summation order
                for ii in range(1, n):
                    key = buf[ii]
                    jj = ii - 1
                    while jj >= 0 and buf[jj] > key:
                        buf[jj + 1] = buf[jj]
                        jj -= 1
                    buf[jj + 1] = key
                acc = 0.0
                for j in range(n):
                    acc += buf[j]
                new[i, p] = acc + log_lik[i, d, p]
            mx = new[i, 0]
            for p in range(1, m):
                if new[i, p] > mx:
                    mx = new[i, p]
            acc = 0.0
            for p in range(m):
                acc += exp(new[i, p] - mx)
            z = mx + log(acc)
            for p in range(m):
                v = new[i, p] - z
                if isnan(v) and nan_i < 0:
                    nan_i = i
                    nan_p = p
                new[i, p] = v
        if nan_i >= 0:
            raise KernelError(
                f"belief update produced NaN at step {t + 1} for agent {nan_i + 1}, "
                f"hypothesis index {nan_p}"
            )
        tmp = cur
        cur = new
        new = tmp
        if r < ks_v.shape[0] and t + 1 == ks_v[r]:
            rec_v[r, :, :] = cur
            r += 1
    return ks, rec, draws_arr
