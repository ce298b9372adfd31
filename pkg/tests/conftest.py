import numpy as np

from esteq.penalties import subdifferential


def sample_subgradient(pen, theta, rng):
    """Draw a true subgradient at theta.

    The rectangle is sampled per coordinate; for group-lasso zero groups
    the box sample is projected onto the l2 ball of radius lambda_G (the
    box display over-approximates the actual subdifferential there).
    """
    theta = np.asarray(theta, dtype=float)
    rect = subdifferential(pen, theta)
    g = rect.lo + rng.random(theta.size) * (rect.hi - rect.lo)
    if pen.kind == "group-lasso":
        lam = pen.lam_vector(theta.size)
        for gi, grp in enumerate(pen.groups):
            idx = list(grp)
            if np.all(theta[idx] == 0.0):
                norm = np.linalg.norm(g[idx])
                if norm > lam[gi]:
                    g[idx] *= lam[gi] / norm
    return g
