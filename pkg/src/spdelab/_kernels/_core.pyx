# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled stepping kernels; see fallback.py for the contract.

The loops release the GIL so ensemble members can run on a thread pool.
"""

from libc.math cimport fabs


def step_periodic(double[::1] u, double[:, ::1] alap, double[:, ::1] agrad,
                  double[:, ::1] aself, double[:, ::1] asrc,
                  double inv_h2, double inv_2h, double blowup,
                  double[:, ::1] out):
    cdef Py_ssize_t ns = alap.shape[0]
    cdef Py_ssize_t nx = u.shape[0]
    cdef Py_ssize_t j, i, ip, im
    cdef double lap, grad, v, uc
    cdef int ok
    cdef double *pprev
    cdef double *pnew
    cdef double *pu = &u[0]
    cdef double *pout = &out[0, 0]
    cdef double *wl
    cdef double *wg
    cdef double *ws
    cdef double *wf
    cdef Py_ssize_t bad = -1

    with nogil:
        for j in range(ns):
            pprev = pu if j == 0 else pout + (j - 1) * nx
            pnew = pout + j * nx
            wl = &alap[j, 0]
            wg = &agrad[j, 0]
            ws = &aself[j, 0]
            wf = &asrc[j, 0]
            ok = 1
            for i in range(nx):
                ip = i + 1 if i + 1 < nx else 0
                im = i - 1 if i > 0 else nx - 1
                uc = pprev[i]
                lap = pprev[ip] - 2.0 * uc + pprev[im]
                grad = pprev[ip] - pprev[im]
                v = uc + wl[i] * (lap * inv_h2) + wg[i] * (grad * inv_2h) + ws[i] * uc + wf[i]
                pnew[i] = v
                if not (fabs(v) <= blowup):
                    ok = 0
            if not ok:
                bad = j
                break
        if bad < 0:
            pnew = pout + (ns - 1) * nx
            for i in range(nx):
                pu[i] = pnew[i]
    return bad


def step_dirichlet(double[::1] u, double[:, ::1] alap, double[:, ::1] agrad,
                   double[:, ::1] aself, double[:, ::1] asrc,
                   double[::1] left, double[::1] right,
                   double inv_h2, double inv_2h, double blowup,
                   double[:, ::1] out):
    cdef Py_ssize_t ns = alap.shape[0]
    cdef Py_ssize_t nx = u.shape[0]
    cdef Py_ssize_t j, i
    cdef double lap, grad, v, uc
    cdef int ok
    cdef double *pprev
    cdef double *pnew
    cdef double *pu = &u[0]
    cdef double *pout = &out[0, 0]
    cdef double *wl
    cdef double *wg
    cdef double *ws
    cdef double *wf
    cdef Py_ssize_t bad = -1

    with nogil:
        for j in range(ns):
            pprev = pu if j == 0 else pout + (j - 1) * nx
            pnew = pout + j * nx
            wl = &alap[j, 0]
            wg = &agrad[j, 0]
            ws = &aself[j, 0]
            wf = &asrc[j, 0]
            ok = 1
            for i in range(1, nx - 1):
                uc = pprev[i]
                lap = pprev[i + 1] - 2.0 * uc + pprev[i - 1]
                grad = pprev[i + 1] - pprev[i - 1]
                v = uc + wl[i] * (lap * inv_h2) + wg[i] * (grad * inv_2h) + ws[i] * uc + wf[i]
                pnew[i] = v
                if not (fabs(v) <= blowup):
                    ok = 0
            pnew[0] = left[j]
            pnew[nx - 1] = right[j]
            if not (fabs(pnew[0]) <= blowup and fabs(pnew[nx - 1]) <= blowup):
                ok = 0
            if not ok:
                bad = j
                break
        if bad < 0:
            pnew = pout + (ns - 1) * nx
            for i in range(nx):
                pu[i] = pnew[i]
    return bad
