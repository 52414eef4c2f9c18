# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled leapfrog sweeps; see :mod:`lorentz_carleman.leapfrog` for the contract."""

def forward(const double[:, ::1] cl, const double[:, ::1] cd, const double[:, ::1] cu,
            const double[:, ::1] cb, double[:, ::1] Y):
    cdef Py_ssize_t N = Y.shape[0] - 1
    cdef Py_ssize_t J = Y.shape[1] - 1
    cdef Py_ssize_t n, j
    for n in range(1, N):
        for j in range(1, J):
            Y[n + 1, j] = (cl[n, j] * Y[n, j - 1] + cd[n, j] * Y[n, j]
                           + cu[n, j] * Y[n, j + 1] + cb[n, j] * Y[n - 1, j])


def transpose(const double[:, ::1] cl, const double[:, ::1] cd, const double[:, ::1] cu,
              const double[:, ::1] cb, double[:, ::1] L):
    cdef Py_ssize_t N = L.shape[0] - 1
    cdef Py_ssize_t J = L.shape[1] - 1
    cdef Py_ssize_t n, j
    cdef double mu
    for n in range(N - 1, 0, -1):
        for j in range(1, J):
            mu = L[n + 1, j]
            L[n, j - 1] += cl[n, j] * mu
            L[n, j] += cd[n, j] * mu
            L[n, j + 1] += cu[n, j] * mu
            L[n - 1, j] += cb[n, j] * mu
