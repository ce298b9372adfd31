"""Ready-made estimating models: GLM scores, multi-sample stacks, the
two-step treatment-effect model, and batched gradient-descent paths.

Each constructor returns EstimatingModel/StackedModel instances wired with
vectorized fast paths and, where available, analytic reference quantities
used as Monte Carlo oracles.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.special import expit

from .models import Block, EstimatingModel, StackedModel, stack_multisample


@dataclass(frozen=True)
class GlmSpec:
    """Score specification psi for a single-index model phi = psi(y, x'theta) x.

    psi_prime_min is a user-supplied lower bound on |psi'| over the domain
    box; it feeds the curvature envelope -psi_prime_min * x x'.  Models
    without it cannot run the envelope checker.
    """

    psi: str = "least-squares"
    delta: float = 1.345
    psi_prime_min: float | None = None

    def __post_init__(self):
        if self.psi not in ("least-squares", "logistic", "huber"):
            raise ValueError(f"unknown psi kind {self.psi!r}")
        if self.psi == "huber" and self.delta <= 0:
            raise ValueError("huber delta must be positive")

    def psi_value(self, y, eta):
        if self.psi == "least-squares":
            return y - eta
        if self.psi == "logistic":
            return y - expit(eta)
        r = y - eta
        return np.clip(r, -self.delta, self.delta)

    def psi_prime(self, y, eta):
        if self.psi == "least-squares":
            return -np.ones_like(np.asarray(eta, dtype=float))
        if self.psi == "logistic":
            s = expit(eta)
            return -s * (1.0 - s)
        r = np.asarray(y, dtype=float) - eta
        return -(np.abs(r) <= self.delta).astype(float)

    def envelope_bound(self):
        if self.psi_prime_min is not None:
            return float(self.psi_prime_min)
        if self.psi == "least-squares":
            return 1.0
        return None


def glm_model(spec, x_cols, y_col, bounds=None):
    """Single-index M-estimation model phi(row, theta) = psi(y, x'theta) x.

    bounds is the optional domain box over which the user's psi_prime_min
    envelope bound is asserted to hold.
    """
    x_cols = list(x_cols)
    p = len(x_cols)
    bound = spec.envelope_bound()

    def phi(row, theta):
        x = row[x_cols]
        return spec.psi_value(row[y_col], float(x @ theta)) * x

    def jacobian(row, theta):
        x = row[x_cols]
        return spec.psi_prime(row[y_col], float(x @ theta)) * np.outer(x, x)

    def phi_mat(values, theta):
        X = values[:, x_cols]
        resid = spec.psi_value(values[:, y_col], X @ theta)
        return resid[:, None] * X

    def jac_mean(values, theta):
        X = values[:, x_cols]
        w = spec.psi_prime(values[:, y_col], X @ theta)
        return (X * w[:, None]).T @ X / values.shape[0]

    envelope = envelope_mean = None
    if bound is not None:
        def envelope(row):
            x = row[x_cols]
            return -bound * np.outer(x, x)

        def envelope_mean(values):
            X = values[:, x_cols]
            return -bound * X.T @ X / values.shape[0]

    return EstimatingModel(
        dim=p, phi=phi, jacobian=jacobian, envelope=envelope,
        phi_mat=phi_mat, jac_mean=jac_mean, envelope_mean=envelope_mean,
        bounds=bounds, name=f"glm.{spec.psi}")


def location_model(value_col, offset=0.0):
    """phi(row, theta) = row[value_col] - offset - theta (one parameter)."""
    def phi(row, theta):
        return np.array([row[value_col] - offset - theta[0]])

    def phi_mat(values, theta):
        return values[:, [value_col]] - offset - theta[0]

    return EstimatingModel(
        dim=1, phi=phi, phi_mat=phi_mat,
        jacobian=lambda row, theta: np.array([[-1.0]]),
        jac_mean=lambda values, theta: np.array([[-1.0]]),
        envelope=lambda row: np.array([[-1.0]]),
        envelope_mean=lambda values: np.array([[-1.0]]),
        name="location")


def distributed_model(submodel, labels, label_column=0):
    """K per-sample copies of a 1-d submodel plus the averaging
    reconciliation equation (1/K) sum_k theta_k - theta_{K+1}.

    Warns when subsample sizes differ (the reference variance formula
    assumes equal sizes).
    """
    if submodel.dim != 1:
        raise ValueError("distributed_model needs a 1-d submodel")
    labels = np.asarray(labels).astype(np.int64)
    K = int(labels.max())
    counts = np.bincount(labels, minlength=K + 1)[1:]
    if np.any(counts == 0):
        raise ValueError("every sample 1..K must be nonempty")
    if len(set(counts.tolist())) > 1:
        warnings.warn("unequal subsample sizes: the distributed variance "
                      "formula assumes n_1 = ... = n_K", stacklevel=2)
    n = labels.size

    blocks = []
    for k in range(1, K + 1):
        frac = Fraction(n, int(counts[k - 1]))
        blocks.append(Block(
            model=submodel,
            sl=slice(k - 1, k),
            gate=_eq_gate(label_column, k),
            gate_mat=_eq_gate_mat(label_column, k),
            weight=float(frac),
            weight_fraction=frac,
        ))

    dep_slices = tuple(slice(k - 1, k) for k in range(1, K + 1))

    def recon_phi(row, sub):
        return np.array([np.mean(sub[1:]) - sub[0]])

    def recon_phi_mat(values, sub):
        return np.full((values.shape[0], 1), np.mean(sub[1:]) - sub[0])

    recon_jac = np.concatenate([[-1.0], np.full(K, 1.0 / K)])[None, :]

    blocks.append(Block(
        model=EstimatingModel(dim=1, phi=recon_phi, phi_mat=recon_phi_mat,
                              name="reconciliation"),
        sl=slice(K, K + 1),
        deps=dep_slices,
        jac_sub=lambda values, sub: recon_jac,
    ))
    return StackedModel(blocks, name="distributed")


def _eq_gate(column, k):
    def gate(row):
        return int(row[column]) == k
    return gate


def _eq_gate_mat(column, k):
    def gate_mat(values):
        return values[:, column].astype(np.int64) == k
    return gate_mat


def quality_control_model(labels, q_col, a, label_column=0):
    """Per-machine location model phi_k = q - a - theta_k, stacked over the
    sample labels with the n/n_k standardization."""
    labels = np.asarray(labels).astype(np.int64)
    K = int(labels.max())
    sub = location_model(q_col, offset=a)
    model = stack_multisample([sub] * K, labels, label_column=label_column)
    return StackedModel(model.blocks, name="quality-control")


def cate_model(w_cols, z_cols, t_col, y_col, eps_sigma=1e-3):
    """Two-stage treatment-effect model.

    Stage 1: logistic propensity score in theta_1 over the confounders W.
    Stage 2: plug-in least-squares score for the effect coefficients
    theta_2 on Z, using inverse-propensity weighting with the stage-1
    probabilities clipped to [eps_sigma, 1 - eps_sigma].
    """
    from .models import stack_stepwise

    w_cols = list(w_cols)
    z_cols = list(z_cols)
    p1, p2 = len(w_cols), len(z_cols)

    def s1_phi(row, theta1):
        w = row[w_cols]
        return (row[t_col] - expit(float(w @ theta1))) * w

    def s1_phi_mat(values, theta1):
        W = values[:, w_cols]
        resid = values[:, t_col] - expit(W @ theta1)
        return resid[:, None] * W

    def s1_jac(values, theta1):
        W = values[:, w_cols]
        s = expit(W @ theta1)
        return -(W * (s * (1.0 - s))[:, None]).T @ W / values.shape[0]

    stage1 = EstimatingModel(dim=p1, phi=s1_phi, phi_mat=s1_phi_mat,
                             jac_mean=s1_jac, name="propensity")

    def _pseudo(values, theta1):
        W = values[:, w_cols]
        t = values[:, t_col]
        y = values[:, y_col]
        s_raw = expit(W @ theta1)
        s = np.clip(s_raw, eps_sigma, 1.0 - eps_sigma)
        clipped = s_raw != s
        return y * t / s - y * (1.0 - t) / (1.0 - s), s, clipped

    def s2_phi(row, sub):
        theta2, theta1 = sub[:p2], sub[p2:]
        vals = np.asarray(row, dtype=float)[None, :]
        ipw, _, _ = _pseudo(vals, theta1)
        z = row[z_cols]
        return (ipw[0] - float(z @ theta2)) * z

    def s2_phi_mat(values, sub):
        theta2, theta1 = sub[:p2], sub[p2:]
        ipw, _, clipped = _pseudo(values, theta1)
        frac = float(np.mean(clipped))
        if frac > 0.01:
            warnings.warn(
                f"propensity clipping hit {frac:.1%} of rows (> 1%)",
                stacklevel=2)
        Z = values[:, z_cols]
        return (ipw - Z @ theta2)[:, None] * Z

    def s2_jac(values, sub):
        theta2, theta1 = sub[:p2], sub[p2:]
        W = values[:, w_cols]
        Z = values[:, z_cols]
        t = values[:, t_col]
        y = values[:, y_col]
        _, s, clipped = _pseudo(values, theta1)
        sprime = s * (1.0 - s)
        coef = -(y * t / s ** 2 + y * (1.0 - t) / (1.0 - s) ** 2) * sprime
        coef = np.where(clipped, 0.0, coef)
        n = values.shape[0]
        d_own = -Z.T @ Z / n
        d_dep = (Z * coef[:, None]).T @ W / n
        return np.concatenate([d_own, d_dep], axis=1)

    stage2 = EstimatingModel(dim=p2, phi=s2_phi, phi_mat=s2_phi_mat,
                             name="effect")

    stacked = stack_stepwise([(stage1, ()), (stage2, (0,))])
    blocks = list(stacked.blocks)
    blocks[1] = Block(model=stage2, sl=blocks[1].sl, deps=blocks[1].deps,
                      jac_sub=s2_jac)
    return StackedModel(blocks, name="cate")


def propensity_clip_fraction(values, w_cols, theta1, eps_sigma=1e-3):
    """Share of rows whose fitted propensity hits the clipping bounds."""
    s = expit(values[:, list(w_cols)] @ np.asarray(theta1, dtype=float))
    return float(np.mean((s < eps_sigma) | (s > 1.0 - eps_sigma)))


@dataclass(frozen=True)
class GdPathSpec:
    """Batched gradient-descent path specification.

    f(x, theta) is the scalar update function with derivative bounds
    kappa <= f' <= L; the learning rate satisfies 0 < alpha <= 1/L.
    f_vec/fprime_vec are vectorized over the x column.
    """

    f_vec: object
    fprime_vec: object
    kappa: float
    L: float
    alpha: float
    K: int
    theta0_star: float
    x_col: int = 1

    def __post_init__(self):
        if not 0 < self.kappa <= self.L:
            raise ValueError("need 0 < kappa <= L")
        if not 0 < self.alpha <= 1.0 / self.L:
            raise ValueError("need 0 < alpha <= 1/L")
        if self.K < 1:
            raise ValueError("K must be >= 1")


def gd_path_model(spec, labels, label_column=0):
    """Stacked estimating equation whose exact solution is the batch
    recursion theta_k = theta_{k-1} - alpha (K/n) sum_{B_k} f(x, theta_{k-1}).

    Batches are the sample labels 1..K and must have equal sizes n/K.
    """
    labels = np.asarray(labels).astype(np.int64)
    K = spec.K
    if int(labels.max()) != K:
        raise ValueError(f"labels go up to {labels.max()}, expected K={K}")
    n = labels.size
    if n % K != 0:
        raise ValueError(f"n={n} not divisible by K={K}")
    counts = np.bincount(labels, minlength=K + 1)[1:]
    if np.any(counts != n // K):
        raise ValueError("batches must have equal sizes n/K")

    blocks = []
    for k in range(1, K + 1):
        has_dep = k >= 2

        def phi(row, sub, _k=k, _dep=has_dep):
            prev = sub[1] if _dep else spec.theta0_star
            x = np.asarray([row[spec.x_col]])
            val = K * (prev - sub[0] - spec.alpha * spec.f_vec(x, prev)[0])
            return np.array([val])

        def phi_mat(values, sub, _k=k, _dep=has_dep):
            prev = sub[1] if _dep else spec.theta0_star
            x = values[:, spec.x_col]
            vals = K * (prev - sub[0] - spec.alpha * spec.f_vec(x, prev))
            return vals[:, None]

        def jac_sub(values, sub, _k=k, _dep=has_dep):
            if not _dep:
                return np.array([[-float(K)]])
            prev = sub[1]
            x = values[:, spec.x_col]
            dprev = K * (1.0 - spec.alpha * float(
                np.mean(spec.fprime_vec(x, prev))))
            return np.array([[-float(K), dprev]])

        blocks.append(Block(
            model=EstimatingModel(dim=1, phi=phi, phi_mat=phi_mat,
                                  name=f"gd-stage-{k}"),
            sl=slice(k - 1, k),
            deps=(slice(k - 2, k - 1),) if has_dep else (),
            gate=_eq_gate(label_column, k),
            gate_mat=_eq_gate_mat(label_column, k),
            jac_sub=jac_sub,
        ))
    return StackedModel(blocks, name="gd-path")


def gd_population_path(spec, mean_f):
    """Deterministic recursion theta_k* = theta_{k-1}* - alpha E[f],
    with mean_f(theta) supplying the expectation.  Returns theta_0..theta_K."""
    path = [spec.theta0_star]
    for _ in range(spec.K):
        path.append(path[-1] - spec.alpha * float(mean_f(path[-1])))
    return np.asarray(path)


def gd_path_covariance(spec, theta_path, variances, mean_fprime):
    """Asymptotic covariance of the standardized iterate path.

    Parameters
    ----------
    theta_path : population path theta_0*..theta_K* (length K+1).
    variances : Var[f(X; theta_{k-1}*)] for k = 1..K.
    mean_fprime : E[f'(X; theta_m*)] for m = 1..K-1 (a longer vector is
        accepted; only the first K-1 entries are used).

    For i <= j,
    Sigma_ij = alpha^2 sum_{k=1}^{i} Var_k [prod_{m=k}^{i-1}(1 - alpha E_m)]^2
               * prod_{m=i}^{j-1}(1 - alpha E_m),
    with empty products equal to 1; the matrix is completed by symmetry.
    """
    K = spec.K
    theta_path = np.asarray(theta_path, dtype=float)
    if theta_path.size != K + 1:
        raise ValueError(f"theta_path must have length K+1={K + 1}")
    variances = np.asarray(variances, dtype=float)
    if variances.size != K:
        raise ValueError(f"variances must have length K={K}")
    decay = 1.0 - spec.alpha * np.asarray(mean_fprime, dtype=float)
    if decay.size < K - 1:
        raise ValueError(f"mean_fprime needs at least K-1={K - 1} entries")

    def prod(m_from, m_to):
        # product over m = m_from..m_to of decay[m-1]; empty when m_from > m_to
        if m_from > m_to:
            return 1.0
        return float(np.prod(decay[m_from - 1:m_to]))

    sigma = np.zeros((K, K))
    for i in range(1, K + 1):
        for j in range(i, K + 1):
            acc = 0.0
            for k in range(1, i + 1):
                acc += variances[k - 1] * prod(k, i - 1) ** 2 * prod(i, j - 1)
            sigma[i - 1, j - 1] = spec.alpha ** 2 * acc
            sigma[j - 1, i - 1] = sigma[i - 1, j - 1]
    return sigma
