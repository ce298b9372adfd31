"""Estimating models and their composition into one flat equation.

An EstimatingModel houses the per-observation estimating function
phi(row, theta), an optional analytic Jacobian, and an optional curvature
envelope H(row).  StackedModel composes sub-models (multi-sample blocks or
sequential stages) into a single p-dimensional equation.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np


class EvaluationError(ValueError):
    """Raised when phi produces a non-finite value; carries the row index."""

    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


def fd_steps(theta):
    """Per-coordinate central-difference steps: max(1e-6, 1e-7*(1+|theta_k|))."""
    theta = np.asarray(theta, dtype=np.float64)
    return np.maximum(1e-6, 1e-7 * (1.0 + np.abs(theta)))


class EstimatingModel:
    """A p-dimensional estimating equation evaluated row by row.

    Parameters
    ----------
    dim : int
        Parameter dimension p.
    phi : callable(row, theta) -> (p,) array
        Per-observation estimating function.
    jacobian : callable(row, theta) -> (p, p) array, optional
        Analytic Jacobian of phi with respect to theta.  When absent,
        evaluators fall back to central finite differences.
    envelope : callable(row) -> (p, p) symmetric array, optional
        Curvature majorant H(row) for the concavity checker.
    bounds : (lo, hi) pair of length-p arrays, optional
        Domain box; solvers project iterates onto it.
    phi_mat, jac_mean, envelope_mean : callables, optional
        Vectorized fast paths over the full (n, m) value matrix:
        phi_mat(values, theta) -> (n, p); jac_mean(values, theta) -> (p, p)
        average Jacobian; envelope_mean(values) -> (p, p) average envelope.
        Must agree with the row-wise definitions.
    """

    def __init__(self, dim, phi, jacobian=None, envelope=None, bounds=None,
                 phi_mat=None, jac_mean=None, envelope_mean=None, name=""):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = int(dim)
        self.phi = phi
        self.jacobian = jacobian
        self.envelope = envelope
        self.phi_mat = phi_mat
        self.jac_mean = jac_mean
        self.envelope_mean = envelope_mean
        self.name = name
        if bounds is not None:
            lo = np.broadcast_to(np.asarray(bounds[0], dtype=float), (self.dim,)).copy()
            hi = np.broadcast_to(np.asarray(bounds[1], dtype=float), (self.dim,)).copy()
            if np.any(lo > hi):
                raise ValueError("lower bound exceeds upper bound")
            bounds = (lo, hi)
        self.bounds = bounds

    def project(self, theta):
        """Clip theta onto the domain box (identity when unbounded)."""
        if self.bounds is None:
            return np.asarray(theta, dtype=float)
        lo, hi = self.bounds
        return np.clip(theta, lo, hi)

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"<{type(self).__name__}{label} dim={self.dim}>"


def _check_theta(model, theta):
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (model.dim,):
        raise ValueError(
            f"theta has shape {theta.shape}, model dim is {model.dim}")
    return theta


def evaluate_phi_matrix(model, data, theta):
    """All per-row values phi(row_i, theta), stacked into an (n, p) matrix."""
    theta = _check_theta(model, theta)
    if model.phi_mat is not None:
        mat = np.asarray(model.phi_mat(data.values, theta), dtype=np.float64)
        if mat.shape != (data.n, model.dim):
            raise ValueError(f"phi_mat returned shape {mat.shape}, "
                             f"expected {(data.n, model.dim)}")
    else:
        mat = np.empty((data.n, model.dim))
        for i in range(data.n):
            row_val = np.asarray(model.phi(data.values[i], theta), dtype=np.float64)
            if row_val.shape != (model.dim,):
                raise ValueError(f"phi returned shape {row_val.shape} at row {i}")
            mat[i] = row_val
    if not np.all(np.isfinite(mat)):
        i = int(np.argwhere(~np.isfinite(mat).all(axis=1))[0][0])
        raise EvaluationError(f"non-finite phi value at row {i}", row=i)
    return mat


def evaluate_phi_bar(model, data, theta):
    """Sample average (1/n) sum_i phi(row_i, theta)."""
    return evaluate_phi_matrix(model, data, theta).mean(axis=0)


def evaluate_J_hat(model, data, theta, force_fd=False, fd_step=None):
    """Average Jacobian (1/n) sum_i d phi(row_i, theta) / d theta.

    Uses the analytic Jacobian when the model supplies one, otherwise
    central finite differences of phi_bar with per-coordinate steps.
    """
    theta = _check_theta(model, theta)
    if not force_fd:
        if model.jac_mean is not None:
            J = np.asarray(model.jac_mean(data.values, theta), dtype=np.float64)
        elif model.jacobian is not None:
            J = np.zeros((model.dim, model.dim))
            for i in range(data.n):
                J += np.asarray(model.jacobian(data.values[i], theta), dtype=np.float64)
            J /= data.n
        else:
            J = _fd_jacobian(model, data, theta, fd_step)
        if J.shape != (model.dim, model.dim):
            raise ValueError(f"Jacobian has shape {J.shape}")
        if not np.all(np.isfinite(J)):
            raise EvaluationError("non-finite Jacobian entry")
        return J
    return _fd_jacobian(model, data, theta, fd_step)


def _fd_jacobian(model, data, theta, fd_step=None):
    steps = np.full(model.dim, fd_step) if fd_step else fd_steps(theta)
    J = np.empty((model.dim, model.dim))
    for k in range(model.dim):
        h = steps[k]
        up = theta.copy()
        up[k] += h
        dn = theta.copy()
        dn[k] -= h
        J[:, k] = (evaluate_phi_bar(model, data, up)
                   - evaluate_phi_bar(model, data, dn)) / (2.0 * h)
    if not np.all(np.isfinite(J)):
        raise EvaluationError("non-finite finite-difference Jacobian entry")
    return J


def evaluate_I_hat(model, data, theta):
    """Empirical covariance (1/n) sum_i (phi_i - phi_bar)(phi_i - phi_bar)^T."""
    if data.n < 2:
        raise ValueError("covariance needs n >= 2")
    mat = evaluate_phi_matrix(model, data, theta)
    centered = mat - mat.mean(axis=0)
    I = centered.T @ centered / data.n
    return (I + I.T) / 2.0


def evaluate_H_bar(model, data):
    """Average curvature envelope (1/n) sum_i H(row_i)."""
    if model.envelope_mean is not None:
        H = np.asarray(model.envelope_mean(data.values), dtype=np.float64)
    elif model.envelope is not None:
        H = np.zeros((model.dim, model.dim))
        for i in range(data.n):
            H += np.asarray(model.envelope(data.values[i]), dtype=np.float64)
        H /= data.n
    else:
        raise ValueError("model supplies no curvature envelope")
    if not np.allclose(H, H.T, atol=1e-10):
        raise ValueError("envelope average is not symmetric")
    return (H + H.T) / 2.0


@dataclass(frozen=True)
class Block:
    """One block of a stacked equation.

    The sub-model's phi receives theta_sub = concat(theta[sl], theta[d] for
    d in deps).  Rows where gate(row) is False contribute zero to this
    block's equations.  jac_sub, when given, returns the average over the
    rows it receives of d phi_b / d theta_sub, shape (width, len(theta_sub)).
    """

    model: EstimatingModel
    sl: slice
    deps: tuple = ()
    gate: object = None          # callable(row) -> bool, or None for all rows
    gate_mat: object = None      # callable(values) -> (n,) bool mask
    weight: float = 1.0
    weight_fraction: object = None
    jac_sub: object = None

    @property
    def width(self):
        return self.sl.stop - self.sl.start

    def sub_theta(self, theta):
        parts = [theta[self.sl]] + [theta[d] for d in self.deps]
        return np.concatenate(parts) if self.deps else parts[0]

    def effective_jac_sub(self):
        """jac_sub, falling back to the sub-model's own-parameter Jacobian
        for dependency-free blocks."""
        if self.jac_sub is not None:
            return self.jac_sub
        if not self.deps and self.model.jac_mean is not None:
            return self.model.jac_mean
        return None

    def row_mask(self, values):
        if self.gate_mat is not None:
            return np.asarray(self.gate_mat(values), dtype=bool)
        if self.gate is not None:
            return np.array([bool(self.gate(values[i]))
                             for i in range(values.shape[0])])
        return None


class StackedModel(EstimatingModel):
    """Flat estimating equation assembled from blocks.

    Block parameter slices are disjoint and cover 1..p by construction.
    """

    def __init__(self, blocks, name=""):
        blocks = tuple(blocks)
        p = sum(b.width for b in blocks)
        offset = 0
        for b in blocks:
            if b.sl.start != offset:
                raise ValueError("block slices must be contiguous and ordered")
            offset = b.sl.stop
        if offset != p:
            raise ValueError("block slices do not cover the parameter vector")
        self.blocks = blocks
        super().__init__(
            dim=p,
            phi=self._phi_row,
            phi_mat=self._phi_values,
            name=name,
        )
        # assemble an analytic average Jacobian when every block supports it
        if all(b.effective_jac_sub() is not None for b in blocks):
            self.jac_mean = self._jac_values

    def _phi_row(self, row, theta):
        out = np.zeros(self.dim)
        for b in self.blocks:
            if b.gate is None or b.gate(row):
                out[b.sl] = b.weight * np.asarray(
                    b.model.phi(row, b.sub_theta(theta)), dtype=np.float64)
        return out

    def _phi_values(self, values, theta):
        n = values.shape[0]
        out = np.zeros((n, self.dim))
        for b in self.blocks:
            sub = b.sub_theta(theta)
            if b.model.phi_mat is not None:
                vals = np.asarray(b.model.phi_mat(values, sub), dtype=np.float64)
            else:
                vals = np.empty((n, b.width))
                for i in range(n):
                    vals[i] = b.model.phi(values[i], sub)
            if b.gate_mat is not None:
                mask = np.asarray(b.gate_mat(values), dtype=bool)
                vals = np.where(mask[:, None], vals, 0.0)
            elif b.gate is not None:
                mask = np.array([bool(b.gate(values[i])) for i in range(n)])
                vals = np.where(mask[:, None], vals, 0.0)
            out[:, b.sl] = b.weight * vals
        return out

    def _jac_values(self, values, theta):
        n = values.shape[0]
        J = np.zeros((self.dim, self.dim))
        for b in self.blocks:
            jac = b.effective_jac_sub()
            mask = b.row_mask(values)
            if mask is None:
                vals, count = values, n
            else:
                vals = values[mask]
                count = vals.shape[0]
            if count == 0:
                continue
            sub = np.asarray(jac(vals, b.sub_theta(theta)), dtype=np.float64)
            scale = b.weight * count / n
            col_slices = (b.sl,) + b.deps
            offset = 0
            for cs in col_slices:
                width = cs.stop - cs.start
                J[b.sl, cs] += scale * sub[:, offset:offset + width]
                offset += width
        return J

    def stage_model(self, index, theta_prev):
        """Sub-model for one block with dependency values frozen.

        theta_prev is a full-length parameter vector supplying the
        dependency slices; only the block's own parameters stay free.
        """
        b = self.blocks[index]
        dep_vals = [np.asarray(theta_prev, dtype=float)[d] for d in b.deps]
        frozen = np.concatenate(dep_vals) if dep_vals else np.empty(0)

        def phi(row, own, _b=b, _f=frozen):
            return _b.model.phi(row, np.concatenate([own, _f]))

        phi_mat = None
        if b.model.phi_mat is not None:
            def phi_mat(values, own, _b=b, _f=frozen):
                return _b.model.phi_mat(values, np.concatenate([own, _f]))

        def gated_phi_mat(values, own, _inner=phi_mat, _phi=phi, _b=b):
            n = values.shape[0]
            if _inner is not None:
                vals = np.asarray(_inner(values, own), dtype=np.float64)
            else:
                vals = np.empty((n, _b.width))
                for i in range(n):
                    vals[i] = _phi(values[i], own)
            if _b.gate_mat is not None:
                mask = np.asarray(_b.gate_mat(values), dtype=bool)
                vals = np.where(mask[:, None], vals, 0.0)
            elif _b.gate is not None:
                mask = np.array([bool(_b.gate(values[i])) for i in range(n)])
                vals = np.where(mask[:, None], vals, 0.0)
            return _b.weight * vals

        def gated_phi(row, own, _phi=phi, _b=b):
            if _b.gate is not None and not _b.gate(row):
                return np.zeros(_b.width)
            return _b.weight * np.asarray(_phi(row, own), dtype=np.float64)

        jac = b.effective_jac_sub()
        stage_jac_mean = None
        if jac is not None:
            def stage_jac_mean(values, own, _b=b, _f=frozen, _jac=jac):
                mask = _b.row_mask(values)
                vals = values if mask is None else values[mask]
                count = vals.shape[0]
                if count == 0:
                    return np.zeros((_b.width, _b.width))
                sub = np.asarray(
                    _jac(vals, np.concatenate([own, _f])), dtype=np.float64)
                return _b.weight * (count / values.shape[0]) * sub[:, :_b.width]

        return EstimatingModel(
            dim=b.width, phi=gated_phi, phi_mat=gated_phi_mat,
            jac_mean=stage_jac_mean,
            name=f"{self.name}[stage {index}]")


def stack_multisample(submodels, labels, label_column=0):
    """Stack per-sample sub-models into one decoupled flat equation.

    Block k of the stacked phi equals 1{label==k} * (n/n_k) * phi_k; the
    n/n_k weights are computed as exact rationals from the observed label
    counts.

    Parameters
    ----------
    submodels : dict {label: EstimatingModel} or list in label order 1..K.
    labels : (n,) integer array of sample labels in {1..K}.
    label_column : position of the label inside each row vector, used to
        gate per-row evaluation.
    """
    labels = np.asarray(labels)
    if isinstance(submodels, dict):
        submodels = [submodels[k] for k in sorted(submodels)]
    K = len(submodels)
    n = labels.size
    counts = np.bincount(labels.astype(np.int64), minlength=K + 1)
    if labels.min() < 1 or labels.max() > K:
        raise ValueError(f"labels must lie in 1..{K}")
    empty = np.nonzero(counts[1 : K + 1] == 0)[0] + 1
    if empty.size:
        raise ValueError(f"empty sample group(s): {empty.tolist()}")

    blocks = []
    offset = 0
    for k, sub in enumerate(submodels, start=1):
        frac = Fraction(n, int(counts[k]))
        blocks.append(Block(
            model=sub,
            sl=slice(offset, offset + sub.dim),
            gate=_label_gate(label_column, k),
            gate_mat=_label_gate_mat(label_column, k),
            weight=float(frac),
            weight_fraction=frac,
        ))
        offset += sub.dim
    return StackedModel(blocks, name="multisample")


def _label_gate(column, k):
    def gate(row):
        return int(row[column]) == k
    return gate


def _label_gate_mat(column, k):
    def gate_mat(values):
        return values[:, column].astype(np.int64) == k
    return gate_mat


def stack_stepwise(stages):
    """Stack sequential stages into one triangular flat equation.

    Parameters
    ----------
    stages : list of (model, deps) pairs, in estimation order.  deps is a
        tuple of earlier stage indices whose parameters the stage's phi
        also reads; phi receives concat(theta_own, theta_dep...).

    Raises
    ------
    ValueError on forward or self references (the dependency graph must
    respect stage order, which rules out cycles).
    """
    slices = []
    offset = 0
    for model, _ in stages:
        slices.append(slice(offset, offset + model.dim))
        offset += model.dim

    blocks = []
    for idx, (model, deps) in enumerate(stages):
        deps = tuple(deps)
        for d in deps:
            if d >= idx:
                raise ValueError(
                    f"stage {idx} depends on stage {d}: dependencies must "
                    "point at earlier stages")
        blocks.append(Block(
            model=model,
            sl=slices[idx],
            deps=tuple(slices[d] for d in deps),
        ))
    return StackedModel(blocks, name="stepwise")


def mean_model(column=0):
    """Location model phi(x, theta) = x[column] - theta, the simplest example."""
    def phi(row, theta):
        return np.array([row[column] - theta[0]])

    def phi_mat(values, theta):
        return values[:, [column]] - theta[0]

    def jac_mean(values, theta):
        return np.array([[-1.0]])

    return EstimatingModel(
        dim=1, phi=phi, phi_mat=phi_mat,
        jacobian=lambda row, theta: np.array([[-1.0]]),
        jac_mean=jac_mean,
        envelope=lambda row: np.array([[-1.0]]),
        envelope_mean=lambda values: np.array([[-1.0]]),
        name="mean",
    )
