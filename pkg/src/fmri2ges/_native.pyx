# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels; see ``_native_py.py`` for the reference semantics."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sin, fabs, M_PI

cnp.import_array()


cdef inline double _sinc(double x) nogil:
    if fabs(x) < 1e-12:
        return 1.0
    return sin(M_PI * x) / (M_PI * x)


def lanczos_resample(onsets, values, times, double period, int window=3):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] on = np.ascontiguousarray(onsets, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] val = np.ascontiguousarray(values, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] tm = np.ascontiguousarray(times, dtype=np.float64)
    if val.shape[0] != on.shape[0]:
        raise ValueError("values must be (n_onsets, D)")
    cdef Py_ssize_t n = on.shape[0], T = tm.shape[0], D = val.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.zeros((T, D), dtype=np.float64)
    if n == 0 or T == 0:
        return out
    # onsets need not be sorted; visit them in sorted order for the window scan
    cdef cnp.ndarray[cnp.intp_t, ndim=1] order = np.argsort(on, kind="stable")
    cdef cnp.ndarray[cnp.float64_t, ndim=1] so = on[order]
    # likewise for the sample times, so the window start only moves forward
    cdef cnp.ndarray[cnp.intp_t, ndim=1] torder = np.argsort(tm, kind="stable")
    cdef Py_ssize_t ii, i, j, c, lo = 0, jj
    cdef double d, k, mass, reach = window * period
    with nogil:
        for ii in range(T):
            i = torder[ii]
            while lo < n and so[lo] <= tm[i] - reach:
                lo += 1
            mass = 0.0
            j = lo
            while j < n and so[j] < tm[i] + reach:
                d = (tm[i] - so[j]) / period
                if fabs(d) < window:
                    k = _sinc(d) * _sinc(d / window)
                    mass += k
                    jj = order[j]
                    for c in range(D):
                        out[i, c] += k * val[jj, c]
                j += 1
            if mass > 1.0:
                for c in range(D):
                    out[i, c] /= mass
    return out
