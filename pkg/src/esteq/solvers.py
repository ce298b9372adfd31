"""Root finding for estimating equations and penalized inclusions.

solve_unpenalized: damped Newton with backtracking on the residual norm.
solve_penalized: outer local linear approximation (for scad/mcp) around an
inner proximal-linearized coordinate-sweep solver.
primal_dual_witness: reduced solve on a candidate support plus the dual
feasibility statistic on its complement.
solve_sequential: stage-by-stage solving of triangular stacked models.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .models import (
    EstimatingModel,
    EvaluationError,
    StackedModel,
    evaluate_J_hat,
    evaluate_phi_bar,
)
from .penalties import (
    Penalty,
    penalty_value,
    restrict,
    scalar_threshold,
    subdifferential,
    tangent_weights,
)

ZERO_SNAP = 1e-12
COND_LIMIT = 1e12


class SolverError(RuntimeError):
    pass


@dataclass
class SolveOptions:
    """Tolerances and budgets for the solvers.

    eps_kkt=None resolves to 1e-8 * (1 + ||phi_bar(theta0)||_inf) at the
    start of a solve.
    """

    max_iter: int = 500
    max_sweeps: int = 10000
    eps_kkt: float | None = None
    eps_step: float = 1e-10
    damping_shrink: float = 0.5
    min_damping: float = 1e-12
    armijo: float = 1e-4
    fd_step: float | None = None
    theta0: object = None
    lla_max: int = 10
    divergence_patience: int = 20
    trace: bool = False

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        for name in ("eps_step", "damping_shrink", "min_damping", "armijo"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.eps_kkt is not None and self.eps_kkt <= 0:
            raise ValueError("eps_kkt must be positive")


@dataclass
class SolveResult:
    """Outcome of a solve: estimate, residual, and KKT diagnostics."""

    theta: np.ndarray
    residual: np.ndarray
    inclusion_violation: np.ndarray
    support: tuple
    status: str
    iterations: int
    eps_kkt: float
    trace: list = field(default_factory=list)

    @property
    def kkt_violation(self):
        return float(np.max(self.inclusion_violation))

    @property
    def converged(self):
        return self.status == "converged"

    def to_dict(self):
        return {
            "theta": self.theta.tolist(),
            "residual": self.residual.tolist(),
            "support": [int(k) for k in self.support],
            "status": self.status,
            "iterations": int(self.iterations),
            "kkt_violation": self.kkt_violation,
        }

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), sort_keys=True, **kwargs)


@dataclass
class WitnessResult:
    """Primal-dual witness outcome.

    dual_stat is ||diag(lam_(2))^-1 Phi_n((theta_(1), 0))_(2)||_inf; the
    construction passes when it does not exceed 1 (up to eps_kkt).
    """

    theta_reduced: np.ndarray
    theta: np.ndarray
    dual_stat: float
    passed: bool
    margin: float
    reduced_result: SolveResult

    def to_dict(self):
        return {
            "theta": self.theta.tolist(),
            "dual_stat": self.dual_stat,
            "passed": bool(self.passed),
            "margin": self.margin,
        }


def _resolve_theta0(model, opts):
    if opts is None or opts.theta0 is None:
        theta0 = np.zeros(model.dim)
    else:
        theta0 = np.asarray(opts.theta0, dtype=float).copy()
        if theta0.shape != (model.dim,):
            raise ValueError("theta0 has wrong length")
    return model.project(theta0)


def _resolve_eps(opts, phi0):
    if opts.eps_kkt is not None:
        return opts.eps_kkt
    return 1e-8 * (1.0 + float(np.max(np.abs(phi0))))


def _safe_phi_bar(model, data, theta):
    try:
        return evaluate_phi_bar(model, data, theta)
    except EvaluationError:
        return None


def solve_unpenalized(model, data, opts=None):
    """Solve phi_bar(theta) = 0 by damped Newton with backtracking.

    Falls back to a gradient-flow step on 0.5*||phi_bar||^2 whenever the
    Newton system is singular.  Declares divergence when the residual norm
    fails to decrease for divergence_patience consecutive iterations.
    """
    opts = opts or SolveOptions()
    theta = _resolve_theta0(model, opts)
    phi = evaluate_phi_bar(model, data, theta)
    eps = _resolve_eps(opts, phi)
    trace = []
    bad_streak = 0
    status = "max-iter"
    iterations = 0

    for iterations in range(1, opts.max_iter + 1):
        norm_inf = float(np.max(np.abs(phi)))
        if opts.trace:
            trace.append(float(np.linalg.norm(phi)))
        if norm_inf <= eps:
            status = "converged"
            break

        J = evaluate_J_hat(model, data, theta, fd_step=opts.fd_step)
        step = _newton_direction(J, phi)
        merit = 0.5 * float(phi @ phi)

        s = 1.0
        best = None
        while s >= opts.min_damping:
            cand = model.project(theta + s * step)
            phi_new = _safe_phi_bar(model, data, cand)
            if phi_new is not None:
                m_new = 0.5 * float(phi_new @ phi_new)
                if best is None or m_new < best[0]:
                    best = (m_new, cand, phi_new, s)
                if m_new <= merit * (1.0 - opts.armijo * s):
                    break
            s *= opts.damping_shrink
        if best is None:
            raise EvaluationError("non-finite phi along the whole step")
        m_new, cand, phi_new, s_used = best

        if m_new >= merit:
            bad_streak += 1
            if bad_streak >= opts.divergence_patience:
                status = "diverged"
                theta, phi = cand, phi_new
                break
        else:
            bad_streak = 0

        step_size = float(np.max(np.abs(cand - theta)))
        theta, phi = cand, phi_new
        if step_size <= opts.eps_step * (1.0 + float(np.max(np.abs(theta)))):
            if float(np.max(np.abs(phi))) <= eps:
                status = "converged"
            break
    else:
        iterations = opts.max_iter

    if status != "diverged" and float(np.max(np.abs(phi))) <= eps:
        status = "converged"

    violation = np.abs(phi)
    return SolveResult(
        theta=_snap(theta), residual=phi, inclusion_violation=violation,
        support=_support(_snap(theta)), status=status, iterations=iterations,
        eps_kkt=eps, trace=trace)


def _newton_direction(J, phi):
    p = J.shape[0]
    try:
        cond = np.linalg.cond(J)
        if not np.isfinite(cond) or cond > COND_LIMIT:
            raise np.linalg.LinAlgError("ill-conditioned")
        return np.linalg.solve(J, -phi)
    except np.linalg.LinAlgError:
        grad = J.T @ phi
        gnorm = float(np.linalg.norm(grad))
        if gnorm == 0.0:
            raise SolverError(
                "singular Jacobian with zero merit gradient; cannot proceed")
        # gradient flow on the merit, scaled to a residual-sized step
        return -grad * (float(np.linalg.norm(phi)) / gnorm)


def _snap(theta):
    out = np.asarray(theta, dtype=float).copy()
    out[np.abs(out) < ZERO_SNAP] = 0.0
    return out


def _support(theta):
    return tuple(int(k) for k in np.nonzero(theta)[0])


def _inclusion_violation(pen, phi, theta):
    return subdifferential(pen, theta).distance(phi)


def solve_penalized(model, data, pen, opts=None):
    """Solve the inclusion phi_bar(theta) in d p_lambda(theta).

    Outer loop: local linear approximation replacing scad/mcp by their
    tangent weighted lasso at the current iterate (convex penalties skip
    it).  Inner loop: proximal coordinate sweeps on the linearized
    equation.  Convergence is certified by the inclusion violation
    max_k dist(phi_bar_k, d p(theta)_k) <= eps_kkt.
    """
    opts = opts or SolveOptions()
    if pen.kind == "lq":
        if pen.q < 1:
            raise SolverError(
                "lq penalties with q < 1 are not solvable: theta = 0 is "
                "always a stationary point")
        pen = Penalty(kind="lasso", lam=pen.lam)

    theta = _resolve_theta0(model, opts)
    phi = evaluate_phi_bar(model, data, theta)
    eps = _resolve_eps(opts, phi)

    nonconvex = pen.kind in ("scad", "mcp")
    lla_rounds = opts.lla_max if nonconvex else 1
    trace = []
    sweeps_left = opts.max_sweeps
    total_iters = 0
    status = "max-iter"

    for _ in range(lla_rounds):
        if nonconvex:
            work_pen = Penalty(kind="lasso", lam=tangent_weights(pen, theta))
        else:
            work_pen = pen

        theta, phi, inner_status, iters, sweeps_left, inner_trace = (
            _solve_convex_inclusion(
                model, data, work_pen, theta, phi, eps, opts, sweeps_left))
        total_iters += iters
        if opts.trace:
            trace.extend(inner_trace)
        if inner_status == "diverged":
            status = "diverged"
            break

        violation = _inclusion_violation(pen, phi, theta)
        if float(np.max(violation)) <= eps:
            status = "converged"
            break
        if not nonconvex:
            status = inner_status
            break
        if sweeps_left <= 0 or total_iters >= opts.max_iter:
            status = "max-iter"
            break
    else:
        status = "max-iter"

    theta = _snap(theta)
    phi = evaluate_phi_bar(model, data, theta)
    violation = _inclusion_violation(pen, phi, theta)
    if (status not in ("converged", "diverged")
            and pen.kind != "group-lasso" and len(_support(theta))):
        theta, phi, violation = _polish_support(
            model, data, pen, theta, phi, violation, opts)
    if status != "diverged":
        status = "converged" if float(np.max(violation)) <= eps else status
    return SolveResult(
        theta=theta, residual=phi, inclusion_violation=violation,
        support=_support(theta), status=status, iterations=total_iters,
        eps_kkt=eps, trace=trace)


def _penalty_curvature(pen, theta):
    """Diagonal second derivative of a separable penalty away from zero."""
    p = theta.size
    lam = pen.lam_vector(p)
    absd = np.abs(theta)
    if pen.kind == "lasso":
        return np.zeros(p)
    if pen.kind == "elastic-net":
        return np.full(p, 2.0 * pen.lam2)
    if pen.kind == "scad":
        mid = (absd > lam) & (absd <= pen.a * lam)
        return np.where(mid, -1.0 / (pen.a - 1.0), 0.0)
    if pen.kind == "mcp":
        return np.where(absd <= pen.a * lam, -1.0 / pen.a, 0.0)
    raise ValueError(pen.kind)


def _polish_support(model, data, pen, theta, phi, violation, opts):
    """Newton refinement of phi_bar(theta)_S = p'(theta)_S on the frozen
    support; the penalty is smooth off zero, so the fixed support turns the
    inclusion into a square system."""
    best = (theta, phi, violation)
    S = np.nonzero(theta)[0]
    signs = np.sign(theta[S])
    cur = theta.copy()
    for _ in range(40):
        rect = subdifferential(pen, cur)
        F = phi[S] - rect.lo[S]
        J = evaluate_J_hat(model, data, cur, fd_step=opts.fd_step)
        Jred = J[np.ix_(S, S)] - np.diag(_penalty_curvature(pen, cur)[S])
        try:
            delta = np.linalg.solve(Jred, -F)
        except np.linalg.LinAlgError:
            break
        moved = False
        s = 1.0
        fnorm = float(np.max(np.abs(F)))
        while s >= opts.min_damping:
            cand = cur.copy()
            cand[S] = cur[S] + s * delta
            if np.any(np.sign(cand[S]) != signs):
                s *= 0.5
                continue
            cand_phi = _safe_phi_bar(model, data, cand)
            if cand_phi is not None:
                cand_rect = subdifferential(pen, cand)
                cand_f = float(np.max(np.abs(cand_phi[S] - cand_rect.lo[S])))
                if cand_f < fnorm:
                    cur, phi = cand, cand_phi
                    cand_v = cand_rect.distance(cand_phi)
                    if float(np.max(cand_v)) < float(np.max(best[2])):
                        best = (cand, cand_phi, cand_v)
                    moved = True
                    break
            s *= 0.5
        if not moved:
            break
        if float(np.max(np.abs(phi[S] - subdifferential(pen, cur).lo[S]))) \
                <= 1e-15 * (1.0 + fnorm):
            break
    return best


def _solve_convex_inclusion(model, data, pen, theta, phi, eps, opts,
                            sweeps_left):
    """Sequential linearization + coordinate sweeps for a convex penalty."""
    trace = []
    bad_streak = 0
    prev_violation = np.inf
    status = "max-iter"
    iterations = 0

    for iterations in range(1, opts.max_iter + 1):
        violation = _inclusion_violation(pen, phi, theta)
        vmax = float(np.max(violation))
        if opts.trace:
            trace.append({"kkt": vmax})
        if vmax <= eps:
            status = "converged"
            break
        if vmax > prev_violation * (1.0 + 1e-12):
            bad_streak += 1
            if bad_streak >= opts.divergence_patience:
                status = "diverged"
                break
        else:
            bad_streak = 0
        prev_violation = vmax

        if sweeps_left <= 0:
            break
        J = evaluate_J_hat(model, data, theta, fd_step=opts.fd_step)
        Q = -(J + J.T) / 2.0
        diag = np.diag(Q).copy()
        floor = 1e-8 * (1.0 + float(np.max(np.abs(diag))))
        bad = diag <= floor
        if np.any(bad):
            Q = Q.copy()
            Q[np.diag_indices_from(Q)] = np.where(bad, floor, diag)
        g = -phi
        b = g - Q @ theta

        new = theta.copy()
        if pen.kind == "group-lasso":
            used, merits = _group_sweeps(
                Q, b, new, pen, min(sweeps_left, opts.max_sweeps), opts.eps_step)
        else:
            lam1, l2 = _separable_parameters(pen, model.dim)
            used, merits = kernels.penalized_sweeps(
                Q, b, new, lam1, l2, min(sweeps_left, opts.max_sweeps),
                opts.eps_step)
        sweeps_left -= used
        if opts.trace:
            trace[-1]["merits"] = list(merits)

        new = model.project(_snap(new))
        step = float(np.max(np.abs(new - theta)))
        theta = new
        phi = evaluate_phi_bar(model, data, theta)
        if step <= opts.eps_step * (1.0 + float(np.max(np.abs(theta)))):
            violation = _inclusion_violation(pen, phi, theta)
            if float(np.max(violation)) <= eps:
                status = "converged"
            break

    return theta, phi, status, iterations, sweeps_left, trace


def _separable_parameters(pen, p):
    lam1 = pen.lam_vector(p).astype(float).copy()
    l2 = float(pen.lam2) if pen.kind == "elastic-net" else 0.0
    return lam1, l2


def _group_sweeps(Q, b, theta, pen, max_sweeps, tol):
    """Coordinate sweeps with group-norm thresholding (python path)."""
    p = theta.shape[0]
    pen._check_groups(p)
    owner = {}
    for gi, g in enumerate(pen.groups):
        for k in g:
            if k in owner:
                raise SolverError(
                    "overlapping groups are not supported by the solver")
            owner[k] = gi
    members = {gi: np.array(g) for gi, g in enumerate(pen.groups)}

    r = Q @ theta + b
    merits = []
    sweeps = 0
    for _ in range(max_sweeps):
        sweeps += 1
        max_delta = 0.0
        for k in range(p):
            qkk = Q[k, k]
            z = theta[k] - r[k] / qkk
            rest = members[owner[k]]
            rest = rest[rest != k]
            rest_norm = float(np.linalg.norm(theta[rest])) if rest.size else 0.0
            new = scalar_threshold(pen, z, 1.0 / qkk, k, rest_norm=rest_norm)
            delta = new - theta[k]
            if delta != 0.0:
                theta[k] = new
                r += Q[:, k] * delta
                max_delta = max(max_delta, abs(delta))
        merits.append(0.5 * float(theta @ (Q @ theta)) + float(b @ theta)
                      + penalty_value(pen, theta))
        if max_delta <= tol:
            break
    return sweeps, np.asarray(merits)


def primal_dual_witness(model, data, pen, support, opts=None):
    """Two-step witness: solve the reduced problem on `support`, then check
    dual feasibility of the zero-padded candidate on the complement.

    Requires lam_k > 0 for every k outside the support.
    """
    opts = opts or SolveOptions()
    p = model.dim
    support = sorted(int(k) for k in support)
    if any(k < 0 or k >= p for k in support):
        raise ValueError("support index out of range")
    complement = [k for k in range(p) if k not in set(support)]

    lam_full = _dual_lambdas(pen, p)
    lam_c = lam_full[complement]
    if np.any(lam_c <= 0):
        bad = [complement[i] for i in np.nonzero(lam_c <= 0)[0]]
        raise ValueError(
            f"zero penalty outside the support (coordinates {bad}): the "
            "dual statistic divides by lambda")

    if support:
        reduced_model = _reduced_model(model, support)
        reduced_pen = restrict(pen, support, p)
        red_opts = _reduced_options(opts, support)
        reduced = solve_penalized(reduced_model, data, reduced_pen, red_opts)
        if reduced.status == "diverged":
            raise SolverError("reduced solve diverged")
        theta_red = reduced.theta
    else:
        theta_red = np.zeros(0)
        phi0 = evaluate_phi_bar(model, data, np.zeros(p))
        reduced = SolveResult(
            theta=theta_red, residual=np.zeros(0),
            inclusion_violation=np.zeros(0), support=(),
            status="converged", iterations=0,
            eps_kkt=_resolve_eps(opts, phi0))

    theta_full = np.zeros(p)
    theta_full[support] = theta_red
    phi_full = evaluate_phi_bar(model, data, theta_full)

    if complement:
        dual = float(np.max(np.abs(phi_full[complement]) / lam_c))
    else:
        dual = 0.0
    eps = reduced.eps_kkt
    passed = dual <= 1.0 + eps
    return WitnessResult(
        theta_reduced=theta_red, theta=theta_full, dual_stat=dual,
        passed=passed, margin=1.0 - dual, reduced_result=reduced)


def _dual_lambdas(pen, p):
    """Per-coordinate lambda used by the dual statistic."""
    if pen.kind == "group-lasso":
        lam_g = pen.lam_vector(p)
        lam = np.zeros(p)
        for gi, g in enumerate(pen.groups):
            for k in g:
                lam[k] += lam_g[gi]
        return lam
    return pen.lam_vector(p)


def _reduced_model(model, support):
    support = list(support)
    p = model.dim
    s = len(support)

    def embed(theta_s):
        full = np.zeros(p)
        full[support] = theta_s
        return full

    def phi(row, theta_s):
        return np.asarray(model.phi(row, embed(theta_s)), dtype=float)[support]

    phi_mat = None
    if model.phi_mat is not None:
        def phi_mat(values, theta_s):
            return np.asarray(model.phi_mat(values, embed(theta_s)),
                              dtype=float)[:, support]

    jac_mean = None
    if model.jac_mean is not None:
        def jac_mean(values, theta_s):
            J = np.asarray(model.jac_mean(values, embed(theta_s)), dtype=float)
            return J[np.ix_(support, support)]
    jacobian = None
    if model.jacobian is not None:
        def jacobian(row, theta_s):
            J = np.asarray(model.jacobian(row, embed(theta_s)), dtype=float)
            return J[np.ix_(support, support)]

    bounds = None
    if model.bounds is not None:
        bounds = (model.bounds[0][support], model.bounds[1][support])

    return EstimatingModel(
        dim=s, phi=phi, phi_mat=phi_mat, jacobian=jacobian,
        jac_mean=jac_mean, bounds=bounds, name=f"reduced({model.name})")


def _reduced_options(opts, support):
    theta0 = None
    if opts.theta0 is not None:
        theta0 = np.asarray(opts.theta0, dtype=float)[list(support)]
    return dataclasses.replace(opts, theta0=theta0)


def solve_sequential(stacked, data, opts=None):
    """Solve a triangular stacked model stage by stage.

    Each stage's equation is solved in its own parameters with earlier
    estimates substituted; the assembled vector satisfies the full stacked
    equation when every stage converges.
    """
    opts = opts or SolveOptions()
    if not isinstance(stacked, StackedModel):
        raise TypeError("solve_sequential needs a StackedModel")
    theta = np.zeros(stacked.dim)
    iterations = 0
    for idx, block in enumerate(stacked.blocks):
        sub = stacked.stage_model(idx, theta)
        stage_opts = _stage_options(opts, block)
        try:
            res = solve_unpenalized(sub, data, stage_opts)
        except (SolverError, EvaluationError) as exc:
            raise SolverError(f"stage {idx} failed: {exc}") from exc
        if res.status != "converged":
            raise SolverError(
                f"stage {idx} failed with status {res.status!r} "
                f"(kkt violation {res.kkt_violation:.3e})")
        theta[block.sl] = res.theta
        iterations += res.iterations

    phi = evaluate_phi_bar(stacked, data, theta)
    eps = opts.eps_kkt if opts.eps_kkt is not None else _resolve_eps(
        opts, evaluate_phi_bar(stacked, data, np.zeros(stacked.dim)))
    status = "converged" if float(np.max(np.abs(phi))) <= eps else "max-iter"
    theta = _snap(theta)
    return SolveResult(
        theta=theta, residual=phi, inclusion_violation=np.abs(phi),
        support=_support(theta), status=status, iterations=iterations,
        eps_kkt=eps, trace=[])


def _stage_options(opts, block):
    theta0 = None
    if opts.theta0 is not None:
        theta0 = np.asarray(opts.theta0, dtype=float)[block.sl]
    return dataclasses.replace(opts, theta0=theta0)
