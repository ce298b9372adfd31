# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled coordinate-sweep kernel; mirrors _kernels_py operation for
operation so both backends produce identical floating-point results."""

import numpy as np

cimport cython


def penalized_sweeps(double[:, ::1] Q, double[::1] b, double[::1] theta,
                     double[::1] lam1, double l2, int max_sweeps, double tol):
    """Cyclic proximal coordinate sweeps on a penalized quadratic model.

    Same contract as esteq._kernels_py.penalized_sweeps.
    """
    cdef int p = theta.shape[0]
    cdef double[::1] r = np.asarray(Q) @ np.asarray(theta) + np.asarray(b)
    cdef list merits = []
    cdef int sweeps = 0
    cdef int k, j
    cdef double qkk, old, zval, mag, new, delta, ad, max_delta

    while sweeps < max_sweeps:
        sweeps += 1
        max_delta = 0.0
        for k in range(p):
            qkk = Q[k, k]
            old = theta[k]
            zval = qkk * old - r[k]
            mag = (zval if zval >= 0.0 else -zval) - lam1[k]
            if mag > 0.0:
                new = (mag if zval > 0.0 else -mag) / (qkk + 2.0 * l2)
            else:
                new = 0.0
            delta = new - old
            if delta != 0.0:
                theta[k] = new
                for j in range(p):
                    r[j] = r[j] + Q[j, k] * delta
                ad = delta if delta >= 0.0 else -delta
                if ad > max_delta:
                    max_delta = ad
        merits.append(_merit(Q, b, theta, lam1, l2))
        if max_delta <= tol:
            break
    return sweeps, np.asarray(merits)


cdef double _merit(double[:, ::1] Q, double[::1] b, double[::1] theta,
                   double[::1] lam1, double l2):
    qn = np.asarray(Q) @ np.asarray(theta)
    th = np.asarray(theta)
    smooth = 0.5 * float(th @ qn) + float(np.asarray(b) @ th)
    pen = float(np.asarray(lam1) @ np.abs(th)) + l2 * float(th @ th)
    return smooth + pen
