# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loop of the lagged diffusion recursion.

The recursion is inherently sequential in time (each step feeds back into
the next), so it cannot be vectorized across steps; this kernel runs the
whole segment in C.  `neuroflow.kernels` falls back to a numpy version of
the same loop when this module is not built.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def simulate_steps(const double[:, ::1] memory,
                   const double[:, ::1] conductivity,
                   const cnp.int64_t[::1] tails,
                   const cnp.int64_t[::1] heads,
                   const double[:, ::1] history,
                   const double[:, ::1] drive,
                   double[:, ::1] out):
    """Run the recursion in place.

    memory:       (K, N) per-lag node memory diagonals
    conductivity: (K, E) per-lag edge weight diagonals
    history:      (K, N) signals before step 0, most recent first
    drive:        (T, N) exogenous input plus pre-drawn noise
    out:          (T, N) output buffer, overwritten
    """
    cdef Py_ssize_t K = memory.shape[0]
    cdef Py_ssize_t N = memory.shape[1]
    cdef Py_ssize_t E = conductivity.shape[1]
    cdef Py_ssize_t T = out.shape[0]
    cdef Py_ssize_t t, k, n, e
    cdef double g, phi
    cdef const double[::1] prev

    for t in range(T):
        for n in range(N):
            out[t, n] = drive[t, n]
        for k in range(K):
            if t - k - 1 >= 0:
                prev = out[t - k - 1]
            else:
                prev = history[k - t]
            for n in range(N):
                out[t, n] += memory[k, n] * prev[n]
            for e in range(E):
                g = prev[heads[e]] - prev[tails[e]]
                phi = conductivity[k, e] * g
                out[t, tails[e]] += phi
                out[t, heads[e]] -= phi
    return np.asarray(out)
