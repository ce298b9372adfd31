"""Pure-Python reference implementation of the coordinate-sweep kernel.

The compiled twin in _kernels_cy.pyx performs the same floating-point
operations in the same order; esteq.kernels picks whichever is available.
"""

import numpy as np


def penalized_sweeps(Q, b, theta, lam1, l2, max_sweeps, tol):
    """Cyclic proximal coordinate sweeps on a penalized quadratic model.

    Minimizes 0.5 * x'Qx + b'x + sum_k lam1[k]*|x_k| + l2*|x|^2 starting
    from theta (updated in place).  Q must have strictly positive diagonal.

    Returns (sweeps_used, merits) where merits[s] is the objective value
    after sweep s.
    """
    p = theta.shape[0]
    r = Q @ theta + b
    merits = []
    sweeps = 0
    for _ in range(max_sweeps):
        sweeps += 1
        max_delta = 0.0
        for k in range(p):
            qkk = Q[k, k]
            old = theta[k]
            zval = qkk * old - r[k]
            mag = abs(zval) - lam1[k]
            if mag > 0.0:
                new = (mag if zval > 0.0 else -mag) / (qkk + 2.0 * l2)
            else:
                new = 0.0
            delta = new - old
            if delta != 0.0:
                theta[k] = new
                r += Q[:, k] * delta
                ad = abs(delta)
                if ad > max_delta:
                    max_delta = ad
        merits.append(_merit(Q, b, theta, lam1, l2))
        if max_delta <= tol:
            break
    return sweeps, np.asarray(merits)


def _merit(Q, b, theta, lam1, l2):
    smooth = 0.5 * float(theta @ (Q @ theta)) + float(b @ theta)
    pen = float(lam1 @ np.abs(theta)) + l2 * float(theta @ theta)
    return smooth + pen
