"""Compiled event loops.

Both loops are resumable: they return a status code when they run out of
uniforms or arrival-record space, the Python driver refills or grows the
buffers, and the loop is called again with the same state arrays.  Every
event consumes a fixed number of uniforms so the stream layout depends only
on the event sequence.
"""
from __future__ import annotations

import math

import numba
import numpy as np

DONE = 0
NEED_UNIFORMS = 1
NEED_RECORDS = 2

# indices into the int64 counter array
C_EVENTS = 0
C_ARRIVALS = 1
C_UPOS = 2
C_SAMPLE = 3
C_L = 4
C_HEAP = 5
C_VIOLATIONS = 6
N_COUNTERS = 7

UNIFORMS_PER_EVENT = 4

CHARGE_EXP = 0
CHARGE_DET = 1
CHARGE_UNIF = 2


@numba.njit(cache=True, nogil=True)
def _pick_edge(e_cum, x):
    lo, hi = 0, e_cum.size - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if x < e_cum[mid]:
            hi = mid
        else:
            lo = mid + 1
    return lo


@numba.njit(cache=True, nogil=True)
def _route(q, w, i, j, coin):
    if i == j:
        return i
    a = q[i] * w[j]
    b = q[j] * w[i]
    if a < b:
        return i
    if a > b:
        return j
    return i if coin < 0.5 else j


@numba.njit(cache=True, nogil=True)
def _record_samples(until, inclusive, t_samples, counters, q, busy, f_len, s_q, s_busy, s_wait, s_L):
    k = counters[C_SAMPLE]
    n = t_samples.size
    S = q.size
    while k < n and (t_samples[k] < until or (inclusive and t_samples[k] <= until)):
        for j in range(S):
            s_q[k, j] = q[j]
            s_busy[k, j] = busy[j]
            s_wait[k, j] = f_len[j]
        s_L[k] = counters[C_L]
        k += 1
    counters[C_SAMPLE] = k


@numba.njit(cache=True, nogil=True)
def _accumulate(occ, q, dt):
    for j in range(q.size):
        occ[j, q[j]] += dt


@numba.njit(cache=True, nogil=True)
def _check_station(s, q, busy, f_len, B, F):
    # charging = min(q, F), waiting EVs = (q - B)^+
    ok = busy[s] == min(q[s], F[s])
    excess = q[s] - B[s]
    if excess < 0:
        excess = 0
    return ok and f_len[s] == excess


@numba.njit(cache=True, nogil=True)
def _arrive(s, t, e, counters, q, busy, B, F, fifo, f_head, f_len, rec_time, rec_edge, rec_station,
            rec_waited, rec_wait):
    n = counters[C_ARRIVALS]
    rec_time[n] = t
    rec_edge[n] = e
    rec_station[n] = s
    cap = fifo.shape[1]
    if q[s] >= B[s]:
        fifo[s, (f_head[s] + f_len[s]) % cap] = n
        f_len[s] += 1
        rec_waited[n] = 1
        rec_wait[n] = np.nan
        counters[C_L] -= 1
    else:
        rec_waited[n] = 0
        rec_wait[n] = 0.0
    q[s] += 1
    counters[C_ARRIVALS] = n + 1
    started = False
    if busy[s] < F[s]:
        busy[s] += 1
        started = True
    return started


@numba.njit(cache=True, nogil=True)
def _complete(s, t, counters, q, busy, B, F, fifo, f_head, f_len, rec_time, rec_wait):
    busy[s] -= 1
    q[s] -= 1
    cap = fifo.shape[1]
    if q[s] >= B[s]:
        idx = fifo[s, f_head[s]]
        f_head[s] = (f_head[s] + 1) % cap
        f_len[s] -= 1
        if idx >= 0:
            rec_wait[idx] = t - rec_time[idx]
        counters[C_L] += 1
    started = False
    if q[s] > busy[s] and busy[s] < F[s]:
        busy[s] += 1
        started = True
    return started


@numba.njit(cache=True, nogil=True)
def ctmc_loop(lam, mu, B, F, w, e_i, e_j, e_cum, horizon, max_arrivals, max_events,
              q, busy, t_arr, counters, fifo, f_head, f_len,
              rec_time, rec_edge, rec_station, rec_waited, rec_wait,
              t_samples, s_q, s_busy, s_wait, s_L, occ, u):
    S = q.size
    while True:
        if max_events >= 0 and counters[C_EVENTS] >= max_events:
            return DONE
        if max_arrivals >= 0 and counters[C_ARRIVALS] >= max_arrivals:
            return DONE
        pos = counters[C_UPOS]
        if pos + UNIFORMS_PER_EVENT > u.size:
            return NEED_UNIFORMS
        if counters[C_ARRIVALS] >= rec_time.size:
            return NEED_RECORDS
        t = t_arr[0]
        arr_rate = lam * counters[C_L]
        total = arr_rate
        for j in range(S):
            total += mu * busy[j]
        if total <= 0.0:
            # nothing can ever happen again
            _record_samples(horizon, True, t_samples, counters, q, busy, f_len, s_q, s_busy, s_wait, s_L)
            if math.isfinite(horizon):
                _accumulate(occ, q, horizon - t)
                t_arr[0] = horizon
            return DONE
        t_new = t - math.log1p(-u[pos]) / total
        if t_new > horizon:
            _record_samples(horizon, True, t_samples, counters, q, busy, f_len, s_q, s_busy, s_wait, s_L)
            _accumulate(occ, q, horizon - t)
            t_arr[0] = horizon
            return DONE
        _record_samples(t_new, False, t_samples, counters, q, busy, f_len, s_q, s_busy, s_wait, s_L)
        _accumulate(occ, q, t_new - t)
        t = t_new
        t_arr[0] = t
        v = u[pos + 1] * total
        if v < arr_rate:
            e = _pick_edge(e_cum, u[pos + 2])
            s = _route(q, w, e_i[e], e_j[e], u[pos + 3])
            _arrive(s, t, e, counters, q, busy, B, F, fifo, f_head, f_len,
                    rec_time, rec_edge, rec_station, rec_waited, rec_wait)
        else:
            v -= arr_rate
            s = -1
            for j in range(S):
                if busy[j] > 0:
                    s = j
                    v -= mu * busy[j]
                    if v < 0.0:
                        break
            _complete(s, t, counters, q, busy, B, F, fifo, f_head, f_len, rec_time, rec_wait)
        if not _check_station(s, q, busy, f_len, B, F):
            counters[C_VIOLATIONS] += 1
        counters[C_EVENTS] += 1
        counters[C_UPOS] = pos + UNIFORMS_PER_EVENT


@numba.njit(cache=True, nogil=True)
def heap_push(h_time, h_st, counters, t, s):
    k = counters[C_HEAP]
    h_time[k] = t
    h_st[k] = s
    counters[C_HEAP] = k + 1
    while k > 0:
        parent = (k - 1) // 2
        if h_time[parent] <= h_time[k]:
            break
        h_time[parent], h_time[k] = h_time[k], h_time[parent]
        h_st[parent], h_st[k] = h_st[k], h_st[parent]
        k = parent


@numba.njit(cache=True, nogil=True)
def _heap_pop(h_time, h_st, counters):
    n = counters[C_HEAP] - 1
    s = h_st[0]
    h_time[0] = h_time[n]
    h_st[0] = h_st[n]
    counters[C_HEAP] = n
    k = 0
    while True:
        left = 2 * k + 1
        if left >= n:
            break
        c = left
        if left + 1 < n and h_time[left + 1] < h_time[left]:
            c = left + 1
        if h_time[k] <= h_time[c]:
            break
        h_time[c], h_time[k] = h_time[k], h_time[c]
        h_st[c], h_st[k] = h_st[k], h_st[c]
        k = c
    return s


@numba.njit(cache=True, nogil=True)
def charge_duration(kind, a, b, x):
    if kind == CHARGE_EXP:
        return -math.log1p(-x) / a
    if kind == CHARGE_DET:
        return a
    return a + (b - a) * x


@numba.njit(cache=True, nogil=True)
def des_loop(lam, kind, ca, cb, B, F, w, e_i, e_j, e_cum, horizon, max_arrivals, max_events,
             q, busy, t_arr, counters, fifo, f_head, f_len, h_time, h_st,
             rec_time, rec_edge, rec_station, rec_waited, rec_wait,
             t_samples, s_q, s_busy, s_wait, s_L, occ, u):
    while True:
        if max_events >= 0 and counters[C_EVENTS] >= max_events:
            return DONE
        if max_arrivals >= 0 and counters[C_ARRIVALS] >= max_arrivals:
            return DONE
        pos = counters[C_UPOS]
        if pos + UNIFORMS_PER_EVENT > u.size:
            return NEED_UNIFORMS
        if counters[C_ARRIVALS] >= rec_time.size:
            return NEED_RECORDS
        t = t_arr[0]
        n_driving = counters[C_L]
        t_a = math.inf
        if n_driving > 0:
            t_a = t - math.log1p(-u[pos]) / (lam * n_driving)
        t_c = h_time[0] if counters[C_HEAP] > 0 else math.inf
        t_new = t_a if t_a < t_c else t_c
        if t_new > horizon or t_new == math.inf:
            _record_samples(horizon, True, t_samples, counters, q, busy, f_len, s_q, s_busy, s_wait, s_L)
            if math.isfinite(horizon):
                _accumulate(occ, q, horizon - t)
                t_arr[0] = horizon
            return DONE
        _record_samples(t_new, False, t_samples, counters, q, busy, f_len, s_q, s_busy, s_wait, s_L)
        _accumulate(occ, q, t_new - t)
        t = t_new
        t_arr[0] = t
        if t_a < t_c:
            e = _pick_edge(e_cum, u[pos + 1])
            s = _route(q, w, e_i[e], e_j[e], u[pos + 2])
            if _arrive(s, t, e, counters, q, busy, B, F, fifo, f_head, f_len,
                       rec_time, rec_edge, rec_station, rec_waited, rec_wait):
                heap_push(h_time, h_st, counters, t + charge_duration(kind, ca, cb, u[pos + 3]), s)
        else:
            s = _heap_pop(h_time, h_st, counters)
            if _complete(s, t, counters, q, busy, B, F, fifo, f_head, f_len, rec_time, rec_wait):
                heap_push(h_time, h_st, counters, t + charge_duration(kind, ca, cb, u[pos + 3]), s)
        if not _check_station(s, q, busy, f_len, B, F):
            counters[C_VIOLATIONS] += 1
        counters[C_EVENTS] += 1
        counters[C_UPOS] = pos + UNIFORMS_PER_EVENT
