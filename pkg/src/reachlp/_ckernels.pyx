# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops; semantics mirror ``_pykernels`` exactly."""
import numpy as np
cimport numpy as cnp
from libc.stdint cimport uint64_t, int64_t, uint8_t

cnp.import_array()

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL
cdef double INV53 = 1.0 / 9007199254740992.0


cdef inline uint64_t _mix64(uint64_t z) nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline double _uniform(uint64_t key, uint64_t k) nogil:
    return <double>(_mix64(key + (k + 1) * GOLDEN) >> 11) * INV53


cdef inline int64_t _pick(const int64_t[:] ptr, const double[:] cum, int64_t row, double u) nogil:
    cdef int64_t j = ptr[row]
    cdef int64_t hi = ptr[row + 1]
    while j < hi - 1 and u >= cum[j]:
        j += 1
    return j


def mix64(z):
    return np.uint64(_mix64(<uint64_t>int(z)))


def uniform(key, k):
    return _uniform(<uint64_t>int(key), <uint64_t>int(k))


def bellman_sweep(const int64_t[:] indptr, const int64_t[:] indices, const double[:] data,
                  const int64_t[:] state_ptr, const double[:] v, double[:] out):
    cdef Py_ssize_t n_states = state_ptr.shape[0] - 1
    cdef Py_ssize_t x, k, p
    cdef double best, acc
    with nogil:
        for x in range(n_states):
            best = -1e308
            for k in range(state_ptr[x], state_ptr[x + 1]):
                acc = 0.0
                for p in range(indptr[k], indptr[k + 1]):
                    acc = acc + data[p] * v[indices[p]]
                if acc > best:
                    best = acc
            out[x] = best
    return np.asarray(out)


def simulate_batch(uint64_t seed, int64_t first, int64_t n, const double[:] start_cum, int64_t horizon,
                   const int64_t[:] pol_ptr, const int64_t[:] pol_pair, const double[:] pol_cum,
                   const int64_t[:] ker_ptr, const int64_t[:] ker_dest, const double[:] ker_cum,
                   const uint8_t[:] in_b, const uint8_t[:] stop, const uint8_t[:] trap):
    cdef int64_t n_states = in_b.shape[0]
    t_stop_a = np.full(n, -1, dtype=np.int64)
    t_b_a = np.full(n, -1, dtype=np.int64)
    trunc_a = np.zeros(n, dtype=np.uint8)
    cdef int64_t[:] t_stop = t_stop_a
    cdef int64_t[:] t_b = t_b_a
    cdef uint8_t[:] truncated = trunc_a
    cdef int64_t i, t, x, j, pair, visited
    cdef uint64_t key, seedmix = _mix64(seed)
    cdef double u
    with nogil:
        for i in range(n):
            key = _mix64(seedmix + <uint64_t>(first + i))
            u = _uniform(key, 0)
            x = n_states - 1
            for j in range(n_states):
                if u < start_cum[j]:
                    x = j
                    break
            visited = in_b[x]
            if visited:
                t_b[i] = 0
            t = 0
            while True:
                if stop[x]:
                    t_stop[i] = t
                    break
                if trap[x]:
                    break
                if t == horizon:
                    truncated[i] = 1
                    break
                u = _uniform(key, 2 * t + 1)
                pair = pol_pair[_pick(pol_ptr, pol_cum, visited * n_states + x, u)]
                u = _uniform(key, 2 * t + 2)
                x = ker_dest[_pick(ker_ptr, ker_cum, pair, u)]
                if in_b[x] and not visited:
                    visited = 1
                    t_b[i] = t + 1
                t += 1
    return t_stop_a, t_b_a, trunc_a
