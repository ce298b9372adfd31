"""Sparsity penalties: values, subdifferential rectangles, thresholding.

Supported kinds: lasso, elastic-net, group-lasso, lq, scad, mcp.  Every
penalty evaluates its exact value, its per-coordinate subdifferential as a
closed interval [lo_k, hi_k], the scalar proximal (thresholding) operator
used by the solver, and its weak-convexity constant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

KINDS = ("lasso", "elastic-net", "group-lasso", "lq", "scad", "mcp")


@dataclass(frozen=True)
class Penalty:
    """Penalty specification.

    lam is a scalar or per-coordinate vector (per-group for group-lasso).
    Shape parameters: a for scad (> 2) and mcp (> 0), q in (0, 1] for lq,
    lam2 >= 0 for the quadratic part of the elastic net.  groups is a list
    of coordinate-index lists covering {0..p-1} (group-lasso only).
    """

    kind: str
    lam: object = 0.0
    a: float = 3.7
    q: float = 1.0
    lam2: float = 0.0
    groups: tuple = ()

    def __post_init__(self):
        kind = self.kind.replace("_", "-")
        object.__setattr__(self, "kind", kind)
        if kind not in KINDS:
            raise ValueError(f"unknown penalty kind {kind!r}")
        lam = np.atleast_1d(np.asarray(self.lam, dtype=float))
        if np.any(lam < 0):
            raise ValueError("lambda must be nonnegative")
        object.__setattr__(self, "lam", lam)
        if kind == "scad" and not self.a > 2:
            raise ValueError("scad requires a > 2")
        if kind == "mcp" and not self.a > 0:
            raise ValueError("mcp requires a > 0")
        if kind == "lq" and not 0 < self.q <= 1:
            raise ValueError("lq requires q in (0, 1]")
        if self.lam2 < 0:
            raise ValueError("lam2 must be nonnegative")
        if kind == "group-lasso":
            if not self.groups:
                raise ValueError("group-lasso requires groups")
            groups = tuple(tuple(int(i) for i in g) for g in self.groups)
            if any(len(g) == 0 for g in groups):
                raise ValueError("empty group")
            object.__setattr__(self, "groups", groups)

    def lam_vector(self, p):
        """Per-coordinate lambda of length p (per-group for group-lasso)."""
        size = len(self.groups) if self.kind == "group-lasso" else p
        if self.lam.size == 1:
            return np.full(size, self.lam[0])
        if self.lam.size != size:
            raise ValueError(f"lambda has length {self.lam.size}, need {size}")
        return self.lam

    def _check_groups(self, p):
        covered = set()
        for g in self.groups:
            if any(i < 0 or i >= p for i in g):
                raise ValueError(f"group index out of range for p={p}")
            covered.update(g)
        if covered != set(range(p)):
            raise ValueError("groups must cover all coordinates")


@dataclass(frozen=True)
class SubdiffRectangle:
    """Per-coordinate closed intervals [lo_k, hi_k] of valid subgradients."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        if np.any(self.lo > self.hi):
            raise ValueError("interval with lo > hi")

    def distance(self, v):
        """Per-coordinate distance of v to the rectangle (0 inside)."""
        v = np.asarray(v, dtype=float)
        return np.maximum.reduce([self.lo - v, v - self.hi,
                                  np.zeros_like(v)])

    def contains(self, v, tol=0.0):
        return bool(np.all(self.distance(v) <= tol))

    def midpoint(self):
        """A valid subgradient: the singleton value, else the interval center
        (0 for unbounded intervals)."""
        mid = np.where(self.lo == self.hi, self.lo, 0.5 * (self.lo + self.hi))
        return np.where(np.isfinite(mid), mid, 0.0)

    @property
    def is_singleton(self):
        return np.array_equal(self.lo, self.hi)


def _scad_value_scalar(x, lam, a):
    x = abs(x)
    if x <= lam:
        return lam * x
    if x <= a * lam:
        return (2 * a * lam * x - x * x - lam * lam) / (2 * (a - 1))
    return (a + 1) * lam * lam / 2


def _scad_deriv_scalar(x, lam, a):
    s = np.sign(x)
    x = abs(x)
    if x <= lam:
        return lam * s
    if x <= a * lam:
        return s * (a * lam - x) / (a - 1)
    return 0.0


def _mcp_value_scalar(x, lam, a):
    x = abs(x)
    if x <= a * lam:
        return lam * x - x * x / (2 * a)
    return a * lam * lam / 2


def _mcp_deriv_scalar(x, lam, a):
    if abs(x) <= a * lam:
        return np.sign(x) * (a * lam - abs(x)) / a
    return 0.0


def penalty_value(pen, theta):
    """Exact penalty value p_lambda(theta)."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    p = theta.size
    lam = pen.lam_vector(p)
    if pen.kind == "lasso":
        return float(np.sum(lam * np.abs(theta)))
    if pen.kind == "elastic-net":
        return float(np.sum(lam * np.abs(theta)) + pen.lam2 * np.sum(theta ** 2))
    if pen.kind == "lq":
        return float(np.sum(lam * np.abs(theta) ** pen.q))
    if pen.kind == "scad":
        return float(sum(_scad_value_scalar(theta[k], lam[k], pen.a)
                         for k in range(p)))
    if pen.kind == "mcp":
        return float(sum(_mcp_value_scalar(theta[k], lam[k], pen.a)
                         for k in range(p)))
    # group-lasso
    pen._check_groups(p)
    return float(sum(lam[i] * np.linalg.norm(theta[list(g)])
                     for i, g in enumerate(pen.groups)))


def subdifferential(pen, theta):
    """Subdifferential rectangle of the penalty at theta.

    Singleton intervals where the penalty is differentiable; at kinks the
    full interval of valid subgradients ([-lam, lam] at zero coordinates for
    lasso-type penalties, all of R for lq with q < 1).
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    p = theta.size
    lam = pen.lam_vector(p)
    lo = np.empty(p)
    hi = np.empty(p)

    if pen.kind == "group-lasso":
        pen._check_groups(p)
        lo[:] = 0.0
        hi[:] = 0.0
        for i, g in enumerate(pen.groups):
            idx = list(g)
            norm = np.linalg.norm(theta[idx])
            if norm > 0:
                grad = lam[i] * theta[idx] / norm
                lo[idx] += grad
                hi[idx] += grad
            else:
                lo[idx] -= lam[i]
                hi[idx] += lam[i]
        return SubdiffRectangle(lo=lo, hi=hi)

    for k in range(p):
        x = theta[k]
        if pen.kind == "lasso":
            if x == 0:
                lo[k], hi[k] = -lam[k], lam[k]
            else:
                lo[k] = hi[k] = lam[k] * np.sign(x)
        elif pen.kind == "elastic-net":
            if x == 0:
                lo[k], hi[k] = -lam[k], lam[k]
            else:
                lo[k] = hi[k] = lam[k] * np.sign(x) + 2 * pen.lam2 * x
        elif pen.kind == "lq":
            if x == 0:
                if pen.q < 1:
                    lo[k], hi[k] = -np.inf, np.inf
                else:
                    lo[k], hi[k] = -lam[k], lam[k]
            else:
                g = lam[k] * pen.q * np.sign(x) * abs(x) ** (pen.q - 1)
                lo[k] = hi[k] = g
        elif pen.kind == "scad":
            if x == 0:
                lo[k], hi[k] = -lam[k], lam[k]
            else:
                lo[k] = hi[k] = _scad_deriv_scalar(x, lam[k], pen.a)
        else:  # mcp
            if x == 0:
                lo[k], hi[k] = -lam[k], lam[k]
            else:
                lo[k] = hi[k] = _mcp_deriv_scalar(x, lam[k], pen.a)
    return SubdiffRectangle(lo=lo, hi=hi)


def _soft(z, t):
    return np.sign(z) * max(abs(z) - t, 0.0)


def scalar_threshold(pen, z, t, k=0, rest_norm=0.0):
    """Proximal operator argmin_x (x - z)^2 / (2t) + p_lambda(x) in 1-d.

    k selects the coordinate (its lambda and, for group-lasso, its group).
    rest_norm is the Euclidean norm of the other coordinates of k's group
    and only matters for group-lasso.
    """
    if t <= 0:
        raise ValueError("step t must be positive")
    if pen.kind == "lq":
        raise ValueError("thresholding unsupported for lq penalties")
    z = float(z)

    if pen.kind == "group-lasso":
        lam_g = _group_lambda(pen, k)
        if rest_norm == 0.0:
            return _soft(z, t * lam_g)
        # smooth strictly convex 1-d problem; stationarity has a unique root
        # between 0 and z
        def grad(x):
            return (x - z) / t + lam_g * x / np.hypot(x, rest_norm)
        if z == 0.0:
            return 0.0
        bracket = sorted((0.0, z))
        return float(brentq(grad, bracket[0], bracket[1],
                            xtol=1e-15, rtol=8.9e-16))

    lam = float(pen.lam[k] if pen.lam.size > 1 else pen.lam[0])
    if pen.kind == "lasso":
        return _soft(z, t * lam)
    if pen.kind == "elastic-net":
        return _soft(z, t * lam) / (1.0 + 2.0 * t * pen.lam2)

    # scad / mcp: enumerate the stationary points of each branch plus the
    # branch boundaries, evaluate the exact objective, keep the minimizer
    a = pen.a
    if pen.kind == "scad":
        value = _scad_value_scalar
        cands = [0.0]
        c1 = _soft(z, t * lam)
        if abs(c1) <= lam:
            cands.append(c1)
        denom = 1.0 - t / (a - 1.0)
        if denom > 0:
            c2 = _soft(z, t * a * lam / (a - 1.0)) / denom
            if lam < abs(c2) <= a * lam:
                cands.append(c2)
        if abs(z) > a * lam:
            cands.append(z)
        s = np.sign(z) if z != 0 else 1.0
        cands.extend([s * lam, s * a * lam])
    else:
        value = _mcp_value_scalar
        cands = [0.0]
        denom = 1.0 - t / a
        if denom > 0:
            c2 = _soft(z, t * lam) / denom
            if 0 < abs(c2) <= a * lam:
                cands.append(c2)
        if abs(z) > a * lam:
            cands.append(z)
        s = np.sign(z) if z != 0 else 1.0
        cands.append(s * a * lam)

    def objective(x):
        return (x - z) ** 2 / (2.0 * t) + value(x, lam, a)

    best = min(cands, key=objective)
    return float(best)


def _group_lambda(pen, k):
    owners = [i for i, g in enumerate(pen.groups) if k in g]
    if len(owners) != 1:
        raise ValueError(
            f"coordinate {k} belongs to {len(owners)} groups; scalar "
            "thresholding needs a unique owner")
    lam = pen.lam_vector(max(max(g) for g in pen.groups) + 1)
    return float(lam[owners[0]])


def weak_convexity_mu(pen):
    """Weak-convexity constant mu: 0 for convex kinds, 1/(a-1) for scad,
    1/a for mcp."""
    if pen.kind in ("lasso", "elastic-net", "group-lasso"):
        return 0.0
    if pen.kind == "scad":
        return 1.0 / (pen.a - 1.0)
    if pen.kind == "mcp":
        return 1.0 / pen.a
    raise ValueError("lq penalties have no finite weak-convexity constant")


def tangent_weights(pen, theta):
    """Per-coordinate weighted-lasso majorant slopes at |theta_k|.

    Used by the solver's local linear approximation of scad/mcp: the
    nonconvex penalty is replaced by sum_k w_k |x_k| with w_k equal to the
    penalty derivative at the current magnitude (lambda_k at zero).
    """
    if pen.kind not in ("scad", "mcp"):
        raise ValueError("tangent weights only defined for scad/mcp")
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    lam = pen.lam_vector(theta.size)
    deriv = _scad_deriv_scalar if pen.kind == "scad" else _mcp_deriv_scalar
    return np.array([lam[k] if theta[k] == 0
                     else abs(deriv(theta[k], lam[k], pen.a))
                     for k in range(theta.size)])


def restrict(pen, support, p):
    """Penalty restricted to the coordinates in support (for the reduced
    problem of the witness construction)."""
    support = list(support)
    if pen.kind == "group-lasso":
        pen._check_groups(p)
        pos = {j: i for i, j in enumerate(support)}
        sset = set(support)
        lam = pen.lam_vector(p)
        groups, lams = [], []
        for i, g in enumerate(pen.groups):
            inside = set(g) & sset
            if not inside:
                continue
            if inside != set(g):
                raise ValueError("group straddles the support boundary")
            groups.append(tuple(pos[j] for j in g))
            lams.append(lam[i])
        return Penalty(kind="group-lasso", lam=np.array(lams),
                       groups=tuple(groups))
    lam = pen.lam_vector(p)[support]
    return Penalty(kind=pen.kind, lam=lam, a=pen.a, q=pen.q, lam2=pen.lam2)


@dataclass(frozen=True)
class FusionMap:
    """Bidiagonal reparametrization beta_1 = theta_1, beta_k = theta_k -
    theta_{k-1} and its inverse."""

    p: int

    def to_beta(self, theta):
        theta = np.asarray(theta, dtype=float)
        return np.concatenate([theta[:1], np.diff(theta)])

    def to_theta(self, beta):
        return np.cumsum(np.asarray(beta, dtype=float))


def fusion_reparametrize(model):
    """Express a model in difference coordinates.

    Returns (model', FusionMap) where model' solves the same equation in
    beta with theta = cumsum(beta); a zero beta_k (k >= 2) means
    theta_k = theta_{k-1}, so lasso on beta fuses adjacent coefficients.
    """
    if model.dim < 2:
        raise ValueError("fusion needs p >= 2")
    fmap = FusionMap(p=model.dim)

    def rev_cumsum(v):
        return np.cumsum(v[::-1])[::-1]

    def phi(row, beta):
        return rev_cumsum(np.asarray(model.phi(row, np.cumsum(beta)),
                                     dtype=float))

    phi_mat = None
    if model.phi_mat is not None:
        def phi_mat(values, beta):
            mat = np.asarray(model.phi_mat(values, np.cumsum(beta)),
                             dtype=float)
            return np.cumsum(mat[:, ::-1], axis=1)[:, ::-1]

    jacobian = None
    if model.jacobian is not None:
        M = np.tril(np.ones((model.dim, model.dim)))

        def jacobian(row, beta):
            J = np.asarray(model.jacobian(row, np.cumsum(beta)), dtype=float)
            return M.T @ J @ M

    envelope = None
    if model.envelope is not None:
        M = np.tril(np.ones((model.dim, model.dim)))

        def envelope(row):
            return M.T @ np.asarray(model.envelope(row), dtype=float) @ M

    from .models import EstimatingModel

    return EstimatingModel(
        dim=model.dim, phi=phi, phi_mat=phi_mat, jacobian=jacobian,
        envelope=envelope, name=f"fused({model.name})"), fmap
