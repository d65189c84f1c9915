# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels; see ``_pykernels`` for the reference semantics."""

from libc.math cimport sqrt, fabs
from libc.stdlib cimport malloc, free

from fractions import Fraction

BACKEND = "cython"


cdef class Ewma:
    cdef public double alpha
    cdef public double value
    cdef public long count

    def __init__(self, double alpha):
        if not (0.0 < alpha <= 1.0):
            raise ValueError(f"alpha must be in (0, 1], got {alpha!r}")
        self.alpha = alpha
        self.value = 0.0
        self.count = 0

    cpdef double update(self, double x):
        if self.count == 0:
            self.value = x
        else:
            self.value = self.alpha * x + (1.0 - self.alpha) * self.value
        self.count += 1
        return self.value


cdef class _Ring:
    cdef double *buf
    cdef public int window
    cdef public double eps
    cdef int head
    cdef int size

    def __cinit__(self, int window, double eps=1e-9):
        if window < 1:
            raise ValueError(f"window must be >= 1, got {window!r}")
        self.buf = <double *> malloc(window * sizeof(double))
        if self.buf == NULL:
            raise MemoryError()
        self.window = window
        self.eps = eps
        self.head = 0
        self.size = 0

    def __dealloc__(self):
        if self.buf != NULL:
            free(self.buf)

    cdef inline void push(self, double x):
        self.buf[self.head] = x
        self.head = (self.head + 1) % self.window
        if self.size < self.window:
            self.size += 1

    cdef inline int oldest(self):
        # index of the oldest element; iteration order must match the deque
        if self.size < self.window:
            return 0
        return self.head


cdef class RollingMax(_Ring):

    cpdef double update(self, double x):
        cdef int i, idx
        cdef double peak, v
        self.push(x)
        idx = self.oldest()
        peak = self.buf[idx]
        for i in range(1, self.size):
            idx = (idx + 1) % self.window
            if self.buf[idx] > peak:
                peak = self.buf[idx]
        if peak < self.eps:
            peak = self.eps
        v = x / peak
        if v < 0.0:
            return 0.0
        return v


cdef class RollingZ(_Ring):

    cpdef double update(self, double x):
        cdef int i, idx
        cdef double mean = 0.0, var = 0.0, d
        self.push(x)
        idx = self.oldest()
        for i in range(self.size):
            mean += self.buf[(idx + i) % self.window]
        mean /= self.size
        for i in range(self.size):
            d = self.buf[(idx + i) % self.window] - mean
            var += d * d
        var /= self.size
        return fabs(x - mean) / (sqrt(var) + self.eps)


def ewma_series(xs, double alpha):
    cdef Ewma state = Ewma(alpha)
    return [state.update(x) for x in xs]


def rolling_max_norm_series(xs, int window, double eps=1e-9):
    cdef RollingMax state = RollingMax(window, eps)
    return [state.update(x) for x in xs]


def presquash_sums(const long[:] kind_idx, const double[:] conf,
                   const long[:] offsets, const double[:] weights,
                   const double[:] effects):
    cdef Py_ssize_t n_screens = offsets.shape[0] - 1
    cdef Py_ssize_t s, j
    cdef long k
    cdef double p, w, s_net, s_mem, s_res
    out = [0.0] * (3 * n_screens)
    for s in range(n_screens):
        s_net = 0.0
        s_mem = 0.0
        s_res = 0.0
        for j in range(offsets[s], offsets[s + 1]):
            k = kind_idx[j]
            if k < 0:
                continue
            p = conf[j]
            if p < 0.0:
                p = 0.0
            elif p > 1.0:
                p = 1.0
            w = weights[k]
            s_net += w * p * effects[3 * k]
            s_mem += w * p * effects[3 * k + 1]
            s_res += w * p * effects[3 * k + 2]
        out[3 * s] = s_net
        out[3 * s + 1] = s_mem
        out[3 * s + 2] = s_res
    return out


def bh_count(p_values, double q):
    cdef list ps = sorted([float(p) for p in p_values])
    cdef Py_ssize_t m = len(ps)
    cdef Py_ssize_t i
    cdef double p, bound
    for i in range(m, 0, -1):
        p = ps[i - 1]
        bound = (<double> i / m) * q
        if fabs(p - bound) <= 1e-12 * max(bound, 1e-300):
            if Fraction(p) <= Fraction(i, m) * Fraction(q):
                return i
        elif p <= bound:
            return i
    return 0
