"""Numerical evaluation of the checkable regularity quantities.

All population expectations are replaced by sample analogues evaluated on
the given dataset; suprema over parameter neighborhoods are taken over a
user-supplied (or default) finite grid, which is recorded in the report.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .models import evaluate_H_bar, evaluate_I_hat, evaluate_J_hat, evaluate_phi_matrix
from .penalties import subdifferential, weak_convexity_mu

COND_LIMIT = 1e12


def sigma_eta(model, data, theta_star):
    """Noise scale sigma_n = max_k sqrt(mean_i phi_i(theta*)_k^2) and the
    derived threshold eta_n = 2 sigma_n sqrt(ln p / n).

    For p = 1 the threshold degenerates to 0 (ln 1 = 0).
    """
    if data.n < 2:
        raise ValueError("sigma_eta needs n >= 2")
    mat = evaluate_phi_matrix(model, data, theta_star)
    sigma = float(np.sqrt(np.max(np.mean(mat ** 2, axis=0))))
    eta = 2.0 * sigma * np.sqrt(np.log(model.dim) / data.n)
    return sigma, float(eta)


def _j_blocks(model, data, theta, support, complement):
    J = evaluate_J_hat(model, data, theta)
    J11 = J[np.ix_(support, support)]
    J21 = J[np.ix_(complement, support)]
    cond = np.linalg.cond(J11)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise np.linalg.LinAlgError(
            f"J_(1) is numerically singular (condition number {cond:.3e})")
    return J11, J21


def incoherence_alpha(model, data, pen, support, theta_grid):
    """Mutual incoherence alpha over the supplied grid.

    General form: max over grid pairs (theta, theta~) of
    || diag(lam_(2))^-1 J(theta)_(2,1) J(theta)_(1)^-1 p'(theta~)_(1) ||_inf.
    For a scalar-lambda lasso the lambda factors cancel and the expression
    reduces to the maximal row l1-norm of J_(2,1) J_(1)^-1, which is what
    is computed in that case (it dominates every sign pattern).
    """
    support = sorted(int(k) for k in support)
    complement = [k for k in range(model.dim) if k not in set(support)]
    if not complement:
        return 0.0
    if not support:
        raise ValueError("incoherence needs a nonempty support")

    lam = _complement_lambdas(pen, model.dim)[complement]
    if np.any(lam <= 0):
        raise ValueError("incoherence needs positive lambda off the support")

    scalar_lasso = pen.kind == "lasso" and (
        pen.lam.size == 1 or np.all(pen.lam == pen.lam[0]))

    alpha = 0.0
    for theta in theta_grid:
        theta = np.asarray(theta, dtype=float)
        J11, J21 = _j_blocks(model, data, theta, support, complement)
        ratio = np.linalg.solve(J11.T, J21.T).T  # J21 @ inv(J11)
        if scalar_lasso:
            alpha = max(alpha, float(np.max(np.sum(np.abs(ratio), axis=1))))
            continue
        for theta_t in theta_grid:
            grad = subdifferential(pen, np.asarray(theta_t, dtype=float))
            g1 = grad.midpoint()[support]
            v = (ratio @ g1) / lam
            alpha = max(alpha, float(np.max(np.abs(v))))
    return alpha


def _complement_lambdas(pen, p):
    if pen.kind == "group-lasso":
        lam_g = pen.lam_vector(p)
        lam = np.zeros(p)
        for gi, g in enumerate(pen.groups):
            for k in g:
                lam[k] += lam_g[gi]
        return lam
    return pen.lam_vector(p)


def compute_J_nk(model, data, support, theta_grid):
    """Row sensitivities J_nk = max{1, sup_grid ||(J_k,(1) J_(1)^-1)^T||_1}
    for every k outside the support."""
    support = sorted(int(k) for k in support)
    complement = [k for k in range(model.dim) if k not in set(support)]
    out = np.ones(len(complement))
    for theta in theta_grid:
        theta = np.asarray(theta, dtype=float)
        J11, J21 = _j_blocks(model, data, theta, support, complement)
        rows = np.linalg.solve(J11.T, J21.T).T
        out = np.maximum(out, np.sum(np.abs(rows), axis=1))
    return out


def lambda_threshold(alpha, eta_n, J_nk):
    """Minimal off-support penalty levels 4/(1-alpha) * J_nk * eta_n."""
    if not 0 <= alpha < 1:
        raise ValueError(
            f"incoherence alpha = {alpha:.4f} is not in [0, 1): the witness "
            "construction is not guaranteed")
    J_nk = np.asarray(J_nk, dtype=float)
    return 4.0 / (1.0 - alpha) * J_nk * eta_n


def envelope_max_eig(model, data):
    """Largest eigenvalue of the average curvature envelope."""
    H = evaluate_H_bar(model, data)
    return float(np.linalg.eigvalsh(H)[-1])


def uniqueness_margin(c_hat, pen):
    """2c - mu; positive means the uniqueness regime holds."""
    if c_hat <= 0:
        raise ValueError("c_hat must be positive (c_hat = -envelope_max_eig)")
    return 2.0 * c_hat - weak_convexity_mu(pen)


def default_grid(model, data, theta_hat, points=5):
    """Line segment from theta_hat to a perturbation of radius r_hat.

    r_hat = sqrt(trace(I_hat)/n); the direction alternates signs across
    coordinates so the grid is deterministic for a fixed dataset.
    """
    theta_hat = np.asarray(theta_hat, dtype=float)
    I = evaluate_I_hat(model, data, theta_hat)
    r_hat = float(np.sqrt(max(np.trace(I), 0.0) / data.n))
    direction = np.array([(-1.0) ** k for k in range(model.dim)])
    direction /= np.linalg.norm(direction)
    return [theta_hat + t * r_hat * direction
            for t in np.linspace(0.0, 1.0, points)]


@dataclass
class ConditionReport:
    """Numeric summary of the checkable regularity conditions."""

    sigma_n: float
    eta_n: float
    alpha: float
    J_nk: np.ndarray
    lambda_thresholds: np.ndarray
    lambda_used: np.ndarray
    envelope_max_eig: object          # float or the string "not supplied"
    mu: float
    c_hat: object                     # float or None
    uniqueness_margin: object         # float or None
    verdicts: dict = field(default_factory=dict)
    grid_note: str = ""
    warnings: list = field(default_factory=list)

    @property
    def all_pass(self):
        return all(ok for ok, _ in self.verdicts.values())

    def to_dict(self):
        def scrub(x):
            if isinstance(x, np.ndarray):
                return x.tolist()
            if isinstance(x, (np.floating, np.integer)):
                return float(x)
            return x

        return {
            "sigma_n": self.sigma_n,
            "eta_n": self.eta_n,
            "alpha": self.alpha,
            "J_nk": scrub(self.J_nk),
            "lambda_thresholds": scrub(self.lambda_thresholds),
            "lambda_used": scrub(self.lambda_used),
            "envelope_max_eig": scrub(self.envelope_max_eig),
            "mu": self.mu,
            "c_hat": scrub(self.c_hat),
            "uniqueness_margin": scrub(self.uniqueness_margin),
            "verdicts": {k: {"pass": bool(ok), "margin": float(m)}
                         for k, (ok, m) in self.verdicts.items()},
            "grid_note": self.grid_note,
            "warnings": list(self.warnings),
        }

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), sort_keys=True, **kwargs)

    def format_text(self):
        lines = ["condition report", "-" * 40]
        lines.append(f"sigma_n            {self.sigma_n: .6g}")
        lines.append(f"eta_n              {self.eta_n: .6g}")
        lines.append(f"alpha              {self.alpha: .6g}")
        if isinstance(self.envelope_max_eig, str):
            lines.append(f"envelope max eig   {self.envelope_max_eig}")
        else:
            lines.append(f"envelope max eig   {self.envelope_max_eig: .6g}")
        lines.append(f"mu                 {self.mu: .6g}")
        if self.uniqueness_margin is not None:
            lines.append(f"uniqueness margin  {self.uniqueness_margin: .6g}")
        for name, (ok, margin) in sorted(self.verdicts.items()):
            flag = "pass" if ok else "FAIL"
            lines.append(f"[{flag}] {name:<18} margin {margin: .6g}")
        for w in self.warnings:
            lines.append(f"warning: {w}")
        if self.grid_note:
            lines.append(self.grid_note)
        return "\n".join(lines)


def check_conditions(model, data, pen, support, theta_hat, theta_star=None,
                     theta_grid=None, eta_override=None):
    """Evaluate every checkable condition and assemble a ConditionReport.

    theta_star defaults to theta_hat (plug-in); eta_override may raise
    eta_n above its lower bound 2 sigma_n sqrt(ln p / n).
    """
    theta_hat = np.asarray(theta_hat, dtype=float)
    theta_eval = theta_hat if theta_star is None else np.asarray(
        theta_star, dtype=float)
    warnings = []
    if model.dim == 1:
        warnings.append("p = 1: ln p = 0 degenerates eta_n and thresholds to 0")

    sigma, eta = sigma_eta(model, data, theta_eval)
    if eta_override is not None:
        if eta_override < eta - 1e-12:
            raise ValueError("eta_override is below the lower bound")
        eta = float(eta_override)

    if theta_grid is None:
        theta_grid = default_grid(model, data, theta_hat)
        grid_note = ("grid: 5-point segment from theta_hat along an "
                     "alternating-sign direction of radius r_hat")
    else:
        grid_note = f"grid: {len(theta_grid)} user-supplied points"

    support = sorted(int(k) for k in support)
    complement = [k for k in range(model.dim) if k not in set(support)]

    verdicts = {}
    alpha = 0.0
    J_nk = np.ones(len(complement))
    thresholds = np.zeros(len(complement))
    lam_used = _complement_lambdas(pen, model.dim)[complement]
    if complement and np.any(lam_used <= 0):
        warnings.append("zero penalty off the support: incoherence and "
                        "lambda-threshold checks skipped")
        complement = []
    if support and complement:
        alpha = incoherence_alpha(model, data, pen, support, theta_grid)
        verdicts["incoherence"] = (alpha < 1.0, 1.0 - alpha)
        if alpha < 1.0:
            J_nk = compute_J_nk(model, data, support, theta_grid)
            thresholds = lambda_threshold(alpha, eta, J_nk)
            margin = float(np.min(lam_used - thresholds)) if len(
                complement) else np.inf
            verdicts["lambda"] = (bool(np.all(lam_used >= thresholds - 1e-12)),
                                  margin)

    mu = weak_convexity_mu(pen)
    c_hat = None
    margin_u = None
    if model.envelope is not None or model.envelope_mean is not None:
        eig = envelope_max_eig(model, data)
        verdicts["envelope"] = (eig < 0.0, -eig)
        if eig < 0:
            c_hat = -eig
            margin_u = uniqueness_margin(c_hat, pen)
            verdicts["uniqueness"] = (margin_u > 0.0, margin_u)
        env_field = eig
    else:
        env_field = "not supplied"

    return ConditionReport(
        sigma_n=sigma, eta_n=eta, alpha=alpha, J_nk=J_nk,
        lambda_thresholds=thresholds, lambda_used=lam_used,
        envelope_max_eig=env_field, mu=mu, c_hat=c_hat,
        uniqueness_margin=margin_u, verdicts=verdicts,
        grid_note=grid_note, warnings=warnings)
