"""Sandwich covariance, standardization, and confidence intervals."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

COND_LIMIT = 1e12


def sandwich_covariance(J, I, A=None):
    """Asymptotic covariance A J^-1 I J^-T A^T, symmetrized.

    Raises on numerically singular J (condition number above 1e12).
    """
    J = np.asarray(J, dtype=float)
    I = np.asarray(I, dtype=float)
    p = J.shape[0]
    if J.shape != (p, p) or I.shape != (p, p):
        raise ValueError("J and I must be square matrices of equal size")
    cond = np.linalg.cond(J)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise np.linalg.LinAlgError(
            f"J is numerically singular (condition number {cond:.3e})")
    S = np.linalg.solve(J, I)            # J^-1 I
    M = np.linalg.solve(J, S.T).T        # (J^-1 I) J^-T
    if A is not None:
        A = np.atleast_2d(np.asarray(A, dtype=float))
        if A.shape[1] != p:
            raise ValueError(f"A has {A.shape[1]} columns, expected {p}")
        M = A @ M @ A.T
    return (M + M.T) / 2.0


def standardize(theta_hat, theta_star, J, A=None, n=1):
    """The statistic sqrt(n) A J (theta_hat - theta_star).

    Its Monte Carlo law is compared against N(0, A I A^T).
    """
    diff = np.asarray(theta_hat, dtype=float) - np.asarray(theta_star, dtype=float)
    out = np.asarray(J, dtype=float) @ diff
    if A is not None:
        out = np.atleast_2d(np.asarray(A, dtype=float)) @ out
    return np.sqrt(n) * out


def standardize_penalized(theta_hat_1, theta_star_1, J_1, bias_1, A=None, n=1):
    """Bias-corrected statistic sqrt(n) A [J_(1)(theta_hat - theta*)_(1) -
    p'_lambda(theta*)_(1)].

    For scad/mcp with all support coordinates beyond a*lambda the bias term
    is exactly zero and this reduces to `standardize` on the support block.
    """
    diff = (np.asarray(theta_hat_1, dtype=float)
            - np.asarray(theta_star_1, dtype=float))
    out = np.asarray(J_1, dtype=float) @ diff - np.asarray(bias_1, dtype=float)
    if A is not None:
        out = np.atleast_2d(np.asarray(A, dtype=float)) @ out
    return np.sqrt(n) * out


# Coefficients of Acklam's rational initializer for the standard normal
# quantile; one Halley refinement with erfc brings the result to close to
# machine precision.
_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)


def normal_quantile(prob):
    """Inverse standard normal CDF."""
    p = float(prob)
    if not 0.0 < p < 1.0:
        raise ValueError("probability must lie in (0, 1)")
    p_low = 0.02425
    if p < p_low:
        q = math.sqrt(-2.0 * math.log(p))
        x = ((((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4])
              * q + _C[5])
             / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0))
    elif p <= 1.0 - p_low:
        q = p - 0.5
        r = q * q
        x = ((((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4])
              * r + _A[5]) * q
             / (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4])
                * r + 1.0))
    else:
        q = math.sqrt(-2.0 * math.log(1.0 - p))
        x = -((((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4])
               * q + _C[5])
              / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0))
    # Halley refinement against the exact CDF via erfc
    err = 0.5 * math.erfc(-x / math.sqrt(2.0)) - p
    u = err * math.sqrt(2.0 * math.pi) * math.exp(x * x / 2.0)
    return x - u / (1.0 + x * u / 2.0)


def normal_cdf(x):
    """Standard normal CDF via erfc (vectorized)."""
    x = np.asarray(x, dtype=float)
    return 0.5 * np.vectorize(math.erfc)(-x / math.sqrt(2.0))


def confidence_intervals(theta_hat, covariance, n, level=0.95):
    """Per-coordinate normal intervals theta_k +- z * se_k / sqrt(n).

    covariance is the sandwich matrix on the sqrt(n) scale, so the
    half-width is z_{1-gamma/2} * sqrt(cov_kk / n).
    """
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    theta_hat = np.asarray(theta_hat, dtype=float)
    cov = np.atleast_2d(np.asarray(covariance, dtype=float))
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    z = normal_quantile(0.5 + level / 2.0)
    half = z * se / np.sqrt(n)
    return np.column_stack([theta_hat - half, theta_hat + half])


@dataclass
class InferenceReport:
    """Plug-in inference summary at the estimate."""

    theta: np.ndarray
    J_hat: np.ndarray
    I_hat: np.ndarray
    covariance: np.ndarray
    se: np.ndarray
    intervals: np.ndarray
    level: float
    n: int
    bias: object = None          # p'_lambda(theta)_(1) when penalized
    caveat: str = ""

    def to_dict(self):
        out = {
            "theta": self.theta.tolist(),
            "J_hat": self.J_hat.tolist(),
            "I_hat": self.I_hat.tolist(),
            "covariance": self.covariance.tolist(),
            "se": self.se.tolist(),
            "intervals": self.intervals.tolist(),
            "level": self.level,
            "n": int(self.n),
            "caveat": self.caveat,
        }
        if self.bias is not None:
            out["bias"] = np.asarray(self.bias).tolist()
        return out

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), sort_keys=True, **kwargs)

    def format_text(self):
        lines = [f"inference at the estimate ({self.level:.0%} intervals)"]
        lines.append(f"{'k':>4} {'theta':>12} {'se':>12} "
                     f"{'lower':>12} {'upper':>12}")
        for k in range(self.theta.size):
            lines.append(
                f"{k:>4} {self.theta[k]:>12.6g} {self.se[k]:>12.6g} "
                f"{self.intervals[k, 0]:>12.6g} {self.intervals[k, 1]:>12.6g}")
        if self.caveat:
            lines.append(f"note: {self.caveat}")
        return "\n".join(lines)


def infer(model, data, theta_hat, pen=None, A=None, level=0.95):
    """Assemble an InferenceReport with plug-in J, I at theta_hat.

    When a penalty is given, its (singleton) subgradient on the support is
    reported as the bias term of the penalized standardization.
    """
    from .models import evaluate_I_hat, evaluate_J_hat
    from .penalties import subdifferential

    theta_hat = np.asarray(theta_hat, dtype=float)
    J = evaluate_J_hat(model, data, theta_hat)
    I = evaluate_I_hat(model, data, theta_hat)
    cov = sandwich_covariance(J, I, A)
    if A is None:
        se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
        intervals = confidence_intervals(theta_hat, cov, data.n, level)
    else:
        A_arr = np.atleast_2d(np.asarray(A, dtype=float))
        se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
        intervals = confidence_intervals(A_arr @ theta_hat, cov, data.n, level)

    bias = None
    caveat = ""
    if pen is not None:
        support = np.nonzero(theta_hat)[0]
        bias = subdifferential(pen, theta_hat).midpoint()[support]
        caveat = ("J, I, and the penalty bias are plug-in values at the "
                  "estimate; outside simulation their error is not quantified")
    return InferenceReport(
        theta=theta_hat, J_hat=J, I_hat=I, covariance=cov, se=se,
        intervals=intervals, level=level, n=data.n, bias=bias, caveat=caveat)
