"""Seeded data generation, Monte Carlo suites, and statistic aggregation.

Replication streams: rep r of a scenario with master seed s draws from
numpy's PCG64 seeded with SeedSequence(entropy=[s, r]).  That splitting
rule is the determinism contract: identical (seed, rep) pairs produce
identical bytes.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .data import Dataset
from .inference import infer, normal_cdf
from .models import EvaluationError
from .penalties import Penalty
from .solvers import (
    SolveOptions,
    SolverError,
    primal_dual_witness,
    solve_penalized,
    solve_sequential,
    solve_unpenalized,
)
from . import zoo

MODEL_KINDS = ("mean", "glm.ls", "glm.logit", "glm.huber", "distributed",
               "qc", "cate", "gdpath")


def rep_rng(master_seed, rep):
    """The documented stream-splitting rule."""
    return np.random.Generator(np.random.PCG64(
        np.random.SeedSequence(entropy=[int(master_seed), int(rep)])))


@dataclass
class Scenario:
    """One Monte Carlo configuration.

    lambda_rule 'fixed' takes penalty lambdas as given; 'a6' replaces them
    with lambda_scale * 8 * sigma_star * sqrt(ln p / n) computed from the
    scenario's analytic noise scale (the threshold form with alpha = 0,
    J_nk = 1, which all shipped scenarios satisfy).
    """

    name: str
    model: str
    n: int
    p: int = 1
    K: int = 1
    theta_star: object = None
    design: str = "gaussian"
    noise: str = "gaussian"
    noise_scale: float = 1.0
    penalty: object = None
    lambda_rule: str = "fixed"
    lambda_scale: float = 1.0
    R: int = 100
    seed: int = 0
    witness: bool = False
    coverage: bool = False
    level: float = 0.95
    solver: str = "auto"
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.model not in MODEL_KINDS:
            raise ValueError(f"unknown scenario model {self.model!r}")
        if self.R < 1:
            raise ValueError("R must be >= 1")
        if self.theta_star is not None:
            self.theta_star = np.asarray(self.theta_star, dtype=float)
        if self.lambda_rule not in ("fixed", "a6"):
            raise ValueError("lambda_rule must be 'fixed' or 'a6'")


def _design_draw(rng, law, size):
    if law == "gaussian":
        return rng.standard_normal(size)
    if law == "uniform":
        # unit variance
        return rng.uniform(-math.sqrt(3.0), math.sqrt(3.0), size)
    if law == "rademacher":
        return rng.integers(0, 2, size).astype(float) * 2.0 - 1.0
    raise ValueError(f"unsupported design law {law!r}")


def _noise_draw(rng, law, size, scale):
    if law == "none":
        return np.zeros(size)
    if law == "gaussian":
        return scale * rng.standard_normal(size)
    if law == "logistic":
        return scale * rng.logistic(size=size)
    raise ValueError(f"unsupported noise law {law!r}")


def generate(scenario, rep):
    """Deterministic dataset for one replication."""
    rng = rep_rng(scenario.seed, rep)
    kind = scenario.model
    n, p = scenario.n, scenario.p
    theta = scenario.theta_star

    if kind == "mean":
        vals = theta[None, :] + _noise_draw(
            rng, scenario.noise, (n, p), scenario.noise_scale)
        return Dataset(vals, [f"x{j}" for j in range(p)])

    if kind in ("glm.ls", "glm.huber"):
        X = _design_draw(rng, scenario.design, (n, p))
        y = X @ theta + _noise_draw(rng, scenario.noise, n, scenario.noise_scale)
        return Dataset(np.column_stack([X, y]),
                       [f"x{j}" for j in range(p)] + ["y"])

    if kind == "glm.logit":
        X = _design_draw(rng, scenario.design, (n, p))
        y = (rng.random(n) < expit(X @ theta)).astype(float)
        return Dataset(np.column_stack([X, y]),
                       [f"x{j}" for j in range(p)] + ["y"])

    if kind in ("qc", "distributed"):
        K = scenario.K
        if n % K != 0:
            raise ValueError("n must be divisible by K")
        labels = np.repeat(np.arange(1, K + 1), n // K)
        scales = np.asarray(scenario.extra.get("block_scales",
                                               np.ones(K)), dtype=float)
        offset = scenario.extra.get("qc_a", 0.0) if kind == "qc" else 0.0
        x = (offset + theta[labels - 1]
             + scales[labels - 1] * _noise_draw(rng, scenario.noise, n, 1.0))
        return Dataset(np.column_stack([labels.astype(float), x]),
                       ["sample", "x"])

    if kind == "cate":
        p1 = scenario.extra["p1"]
        p2 = scenario.extra["p2"]
        theta1 = theta[:p1]
        theta2 = theta[p1:p1 + p2]
        W = _design_draw(rng, scenario.design, (n, p1))
        Z = W[:, :p2]
        t = (rng.random(n) < expit(W @ theta1)).astype(float)
        base = _noise_draw(rng, scenario.noise, n, scenario.noise_scale)
        y = base + t * (Z @ theta2)
        cols = ([f"w{j}" for j in range(p1)] + ["t", "y"])
        return Dataset(np.column_stack([W, t, y]), cols)

    if kind == "gdpath":
        K = scenario.K
        if n % K != 0:
            raise ValueError("n must be divisible by K")
        labels = np.repeat(np.arange(1, K + 1), n // K)
        x = scenario.extra.get("x_mean", 0.0) + _design_draw(
            rng, scenario.design, n)
        return Dataset(np.column_stack([labels.astype(float), x]),
                       ["sample", "x"])

    raise ValueError(f"unsupported model {kind!r}")


class _Runtime:
    """Per-scenario plumbing: model building, solving, standardization."""

    def __init__(self, scenario):
        self.sc = scenario
        self.theta_full = self._theta_full()
        self.pen = self._resolve_penalty()
        self.target_cov = None
        self.stat_dim = 0
        self._ref_cache = {}
        self._prepare()

    # -- scenario-specific pieces -------------------------------------
    def _theta_full(self):
        sc = self.sc
        if sc.model == "distributed":
            return np.concatenate([sc.theta_star,
                                   [float(np.mean(sc.theta_star))]])
        if sc.model == "gdpath":
            spec = self._gd_spec()
            mean_f = sc.extra["mean_f"]
            return zoo.gd_population_path(spec, mean_f)[1:]
        return np.asarray(sc.theta_star, dtype=float)

    def _gd_spec(self):
        e = self.sc.extra
        return zoo.GdPathSpec(
            f_vec=e["f_vec"], fprime_vec=e["fprime_vec"],
            kappa=e.get("kappa", 1.0), L=e.get("L", 1.0),
            alpha=e["alpha"], K=self.sc.K, theta0_star=e["theta0"],
            x_col=1)

    def _sigma_star(self):
        """Analytic sigma_n of the stacked equation, for the a6 lambda rule."""
        sc = self.sc
        if sc.model in ("mean", "glm.ls", "glm.huber", "glm.logit"):
            return sc.noise_scale
        if sc.model in ("qc", "distributed"):
            scales = np.asarray(sc.extra.get("block_scales", np.ones(sc.K)))
            return float(np.sqrt(sc.K) * np.max(scales))
        raise ValueError(f"a6 lambda rule unsupported for {sc.model}")

    def _resolve_penalty(self):
        sc = self.sc
        if sc.penalty is None:
            return None
        if sc.lambda_rule == "fixed":
            return sc.penalty
        p_eff = self.theta_full.size
        lam = (sc.lambda_scale * 8.0 * self._sigma_star()
               * math.sqrt(math.log(p_eff) / sc.n))
        pen = sc.penalty
        return Penalty(kind=pen.kind, lam=lam, a=pen.a, q=pen.q,
                       lam2=pen.lam2, groups=pen.groups)

    def _prepare(self):
        sc = self.sc
        if sc.model in ("mean", "glm.ls", "glm.huber", "glm.logit"):
            self.stat_dim = sc.p if not sc.penalty else len(self._support())
        elif sc.model == "qc":
            self.stat_dim = 0
        elif sc.model == "distributed":
            self.stat_dim = 1
            scales = np.asarray(sc.extra.get("block_scales", np.ones(sc.K)))
            self.sigma2 = float(np.mean(scales ** 2))
        elif sc.model == "gdpath":
            self.stat_dim = sc.K
            spec = self._gd_spec()
            path = zoo.gd_population_path(spec, sc.extra["mean_f"])
            var_f = np.asarray([sc.extra["var_f"](t) for t in path[:-1]])
            mean_fp = np.asarray([sc.extra["mean_fprime"](t)
                                  for t in path[1:-1]] or [0.0])
            self.target_cov = zoo.gd_path_covariance(
                spec, path, var_f, mean_fp[:max(sc.K - 1, 0)]
                if sc.K > 1 else np.zeros(0))
        elif sc.model == "cate":
            self.stat_dim = 0

    def _support(self):
        return tuple(int(k) for k in np.nonzero(self.theta_full)[0])

    # -- per-rep operations -------------------------------------------
    def build_model(self, data):
        sc = self.sc
        if sc.model == "mean":
            return _coordinatewise_mean(sc.p)
        if sc.model in ("glm.ls", "glm.huber", "glm.logit"):
            spec = zoo.GlmSpec(
                psi={"glm.ls": "least-squares", "glm.logit": "logistic",
                     "glm.huber": "huber"}[sc.model],
                delta=sc.extra.get("delta", 1.345),
                psi_prime_min=sc.extra.get("psi_prime_min"))
            return zoo.glm_model(spec, list(range(sc.p)), sc.p)
        if sc.model == "qc":
            return zoo.quality_control_model(
                data.labels, q_col=1, a=sc.extra.get("qc_a", 0.0))
        if sc.model == "distributed":
            return zoo.distributed_model(zoo.location_model(1), data.labels)
        if sc.model == "gdpath":
            return zoo.gd_path_model(self._gd_spec(), data.labels)
        if sc.model == "cate":
            p1, p2 = sc.extra["p1"], sc.extra["p2"]
            return zoo.cate_model(list(range(p1)), list(range(p2)),
                                  t_col=p1, y_col=p1 + 1)
        raise ValueError(sc.model)

    def solve(self, model, data):
        sc = self.sc
        opts = SolveOptions(**sc.extra.get("solve_options", {}))
        solver = sc.solver
        if solver == "auto":
            if self.pen is not None:
                solver = "penalized"
            elif sc.model in ("gdpath", "cate", "distributed"):
                solver = "sequential"
            else:
                solver = "newton"
        if solver == "penalized":
            return solve_penalized(model, data, self.pen, opts)
        if solver == "sequential":
            return solve_sequential(model, data, opts)
        if solver == "newton":
            return solve_unpenalized(model, data, opts)
        raise ValueError(f"unknown solver {solver!r}")

    def statistics(self, result, data):
        """Per-coordinate standardized statistics targeting N(0, 1).

        Uses the scenario's population J*, I* (analytic, or from a seeded
        reference sample for the logistic and Huber models) and, for
        penalized runs, the bias-corrected standardization on the support
        block.
        """
        from .inference import sandwich_covariance, standardize, standardize_penalized
        from .penalties import subdifferential

        sc = self.sc
        err = result.theta - self.theta_full
        if sc.model in ("mean", "glm.ls", "glm.huber", "glm.logit"):
            J_star, I_star = self._glm_reference()
            if self.pen is None:
                cov = sandwich_covariance(J_star, I_star)
                A = np.diag(1.0 / np.sqrt(np.diag(cov))) @ np.linalg.inv(
                    J_star)
                return standardize(result.theta, self.theta_full, J_star,
                                   A=A, n=sc.n)
            idx = list(self._support())
            J1 = J_star[np.ix_(idx, idx)]
            I1 = I_star[np.ix_(idx, idx)]
            bias = subdifferential(self.pen, self.theta_full).midpoint()[idx]
            raw = standardize_penalized(
                result.theta[idx], self.theta_full[idx], J1, bias, n=sc.n)
            return raw / np.sqrt(np.diag(I1))
        if sc.model == "distributed":
            return np.array([math.sqrt(sc.n) * err[-1]
                             / math.sqrt(self.sigma2)])
        if sc.model == "gdpath":
            scale = np.sqrt(np.diag(self.target_cov))
            return np.sqrt(sc.n / sc.K) * err / scale
        return np.zeros(0)

    def _glm_reference(self):
        """Population (J*, I*) matrices at theta*."""
        sc = self.sc
        if sc.model in ("mean", "glm.ls"):
            return -np.eye(sc.p), sc.noise_scale ** 2 * np.eye(sc.p)
        if sc.model == "glm.huber":
            return self._huber_reference()
        if sc.model == "glm.logit":
            return self._logit_reference()
        raise ValueError(sc.model)

    def _logit_reference(self):
        if "logit" not in self._ref_cache:
            rng = rep_rng(self.sc.seed, 10 ** 9)
            X = _design_draw(rng, self.sc.design, (10 ** 6, self.sc.p))
            s = expit(X @ self.theta_full)
            w = s * (1 - s)
            # E[w x x'] is direction-dependent for theta* != 0, so keep the
            # full matrix; the information equality gives I* = -J*
            J = -(X * w[:, None]).T @ X / X.shape[0]
            self._ref_cache["logit"] = (J, -J)
        return self._ref_cache["logit"]

    def _huber_reference(self):
        # noise independent of the design: J* = -E|psi'| E[xx'],
        # I* = E[psi^2] E[xx'], both isotropic under unit-variance designs
        if "huber" not in self._ref_cache:
            rng = rep_rng(self.sc.seed, 10 ** 9 + 1)
            spec = zoo.GlmSpec(psi="huber",
                               delta=self.sc.extra.get("delta", 1.345))
            eps = _noise_draw(rng, self.sc.noise, 10 ** 6, self.sc.noise_scale)
            psi = spec.psi_value(eps, 0.0)
            jj = float(np.mean(np.abs(spec.psi_prime(eps, 0.0))))
            ii = float(np.mean(psi ** 2))
            self._ref_cache["huber"] = (-jj * np.eye(self.sc.p),
                                        ii * np.eye(self.sc.p))
        return self._ref_cache["huber"]

    def run_witness(self, model, data):
        return primal_dual_witness(model, data, self.pen, self._support())

    def ci_covered(self, model, data, result):
        rep = infer(model, data, result.theta, level=self.sc.level)
        inside = ((rep.intervals[:, 0] <= self.theta_full)
                  & (self.theta_full <= rep.intervals[:, 1]))
        return float(np.mean(inside))


def _coordinatewise_mean(p):
    def phi(row, theta):
        return row[:p] - theta

    def phi_mat(values, theta):
        return values[:, :p] - theta

    return zoo.EstimatingModel(
        dim=p, phi=phi, phi_mat=phi_mat,
        jacobian=lambda row, theta: -np.eye(p),
        jac_mean=lambda values, theta: -np.eye(p),
        envelope=lambda row: -np.eye(p),
        envelope_mean=lambda values: -np.eye(p),
        name="mean")


@dataclass
class McSummary:
    """Aggregated Monte Carlo results plus the per-rep records."""

    scenario: str
    model: str
    R: int
    seed: int
    n: int
    failures: int
    rep_rows: list
    recovery_rate: object = None
    witness_rate: object = None
    err2_mean: float = 0.0
    err2_median: float = 0.0
    errinf_median: float = 0.0
    ks: list = field(default_factory=list)
    stat_mean: list = field(default_factory=list)
    stat_cov: list = field(default_factory=list)
    target_cov: object = None
    coverage: object = None

    def to_dict(self):
        return {
            "scenario": self.scenario,
            "model": self.model,
            "R": self.R,
            "seed": self.seed,
            "n": self.n,
            "failures": self.failures,
            "recovery_rate": self.recovery_rate,
            "witness_rate": self.witness_rate,
            "err2_mean": self.err2_mean,
            "err2_median": self.err2_median,
            "errinf_median": self.errinf_median,
            "ks": self.ks,
            "stat_mean": self.stat_mean,
            "stat_cov": self.stat_cov,
            "target_cov": self.target_cov,
            "coverage": self.coverage,
        }

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), sort_keys=True, **kwargs)

    def csv_header(self):
        q = len(self.rep_rows[0]["stats"]) if self.rep_rows else 0
        return (["rep", "seed", "status", "err2", "errinf", "recovered",
                 "witness"] + [f"stat{j}" for j in range(q)])

    def write_csv(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(",".join(self.csv_header()) + "\n")
            for row in self.rep_rows:
                cells = [str(row["rep"]), str(row["seed"]), row["status"],
                         _fmt(row["err2"]), _fmt(row["errinf"]),
                         _fmt_flag(row["recovered"]),
                         _fmt_flag(row["witness"])]
                cells += [_fmt(s) for s in row["stats"]]
                fh.write(",".join(cells) + "\n")


def _fmt(x):
    return "" if x is None else repr(float(x))


def _fmt_flag(x):
    return "" if x is None else str(int(bool(x)))


def run_monte_carlo(scenario, rep_order=None, max_failure_rate=0.2):
    """Run R seeded replications (generate -> solve -> statistics) and
    aggregate.

    Failures are recorded per rep and never silently dropped; the run
    aborts when more than max_failure_rate of the replications fail.
    Parallelism is capped by the ESTEQ_THREADS environment variable; each
    rep uses only its derived stream, so execution order cannot change the
    summary.
    """
    runtime = _Runtime(scenario)
    order = list(rep_order) if rep_order is not None else list(range(scenario.R))
    if sorted(order) != list(range(scenario.R)):
        raise ValueError("rep_order must be a permutation of 0..R-1")

    rows = [None] * scenario.R
    threads = int(os.environ.get("ESTEQ_THREADS", "1") or 1)

    def one(rep):
        return _run_rep(runtime, scenario, rep)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for rep, row in zip(order, pool.map(one, order)):
                rows[rep] = row
    else:
        for rep in order:
            rows[rep] = one(rep)

    failures = sum(1 for r in rows if r["status"] != "ok")
    if failures > max_failure_rate * scenario.R:
        statuses = {}
        for r in rows:
            statuses[r["status"]] = statuses.get(r["status"], 0) + 1
        raise RuntimeError(
            f"{failures}/{scenario.R} replications failed: {statuses}")

    good = [r for r in rows if r["status"] == "ok"]
    err2 = np.array([r["err2"] for r in good])
    errinf = np.array([r["errinf"] for r in good])
    stats = np.array([r["stats"] for r in good]) if good else np.zeros((0, 0))

    recovery = None
    if any(r["recovered"] is not None for r in good):
        recovery = float(np.mean([bool(r["recovered"]) for r in good]))
    witness_rate = None
    if scenario.witness:
        witness_rate = float(np.mean([bool(r["witness"]) for r in good]))
    coverage = None
    if scenario.coverage:
        coverage = float(np.mean([r["coverage"] for r in good]))

    ks = []
    stat_mean = []
    stat_cov = []
    if stats.size and stats.shape[1] > 0:
        if stats.shape[0] >= 30:
            ks = [ks_distance(stats[:, j]) for j in range(stats.shape[1])]
        stat_mean = np.mean(stats, axis=0).tolist()
        centered = stats - stats.mean(axis=0)
        stat_cov = (centered.T @ centered / stats.shape[0]).tolist()

    return McSummary(
        scenario=scenario.name, model=scenario.model, R=scenario.R,
        seed=scenario.seed, n=scenario.n, failures=failures, rep_rows=rows,
        recovery_rate=recovery, witness_rate=witness_rate,
        err2_mean=float(np.mean(err2)) if err2.size else 0.0,
        err2_median=float(np.median(err2)) if err2.size else 0.0,
        errinf_median=float(np.median(errinf)) if errinf.size else 0.0,
        ks=ks, stat_mean=stat_mean, stat_cov=stat_cov,
        target_cov=(runtime.target_cov.tolist()
                    if runtime.target_cov is not None else None),
        coverage=coverage)


def _run_rep(runtime, scenario, rep):
    row = {"rep": rep, "seed": scenario.seed, "status": "ok",
           "err2": None, "errinf": None, "recovered": None, "witness": None,
           "coverage": None, "stats": [0.0] * runtime.stat_dim}
    try:
        data = generate(scenario, rep)
        model = runtime.build_model(data)
        result = runtime.solve(model, data)
        if result.status != "converged":
            row["status"] = f"solver:{result.status}"
            return row
        err = result.theta - runtime.theta_full
        row["err2"] = float(np.linalg.norm(err))
        row["errinf"] = float(np.max(np.abs(err)))
        if runtime.pen is not None:
            row["recovered"] = (set(result.support)
                                == set(runtime._support()))
        if scenario.witness:
            row["witness"] = bool(runtime.run_witness(model, data).passed)
        if scenario.coverage:
            row["coverage"] = runtime.ci_covered(model, data, result)
        row["stats"] = [float(s) for s in runtime.statistics(result, data)]
    except (SolverError, EvaluationError, np.linalg.LinAlgError,
            ValueError) as exc:
        row["status"] = f"error:{type(exc).__name__}"
        row["stats"] = [0.0] * runtime.stat_dim
    return row


def ks_distance(samples):
    """Kolmogorov-Smirnov distance of the sample to the standard normal."""
    samples = np.sort(np.asarray(samples, dtype=float))
    m = samples.size
    if m < 30:
        raise ValueError("ks_distance needs at least 30 samples")
    cdf = normal_cdf(samples)
    upper = np.arange(1, m + 1) / m - cdf
    lower = cdf - np.arange(0, m) / m
    return float(max(np.max(upper), np.max(lower)))


def rate_scan(base_scenario, ladder, theta_rule=None, penalized=False,
              sparsity=None):
    """Median-error table over an (n, p) ladder with flatness verdict.

    Unpenalized rungs normalize the median error by sqrt(n/p); penalized
    rungs by 1/sqrt(s ln p / n).  The verdict passes when max/min of the
    normalized medians is at most 2.
    """
    import dataclasses

    rows = []
    for rung, (n, p) in enumerate(ladder):
        theta = theta_rule(n, p) if theta_rule is not None else np.zeros(p)
        sc = dataclasses.replace(
            base_scenario, name=f"{base_scenario.name}[n={n},p={p}]",
            n=n, p=p, theta_star=theta, seed=base_scenario.seed + rung)
        summary = run_monte_carlo(sc)
        med = summary.err2_median
        if penalized:
            s = sparsity if sparsity is not None else max(
                1, len(np.nonzero(theta)[0]))
            normalized = med / math.sqrt(s * math.log(p) / n)
        else:
            normalized = med * math.sqrt(n / p)
        rows.append({"n": n, "p": p, "median_err2": med,
                     "normalized": normalized})
    values = [r["normalized"] for r in rows]
    flat = max(values) / min(values) <= 2.0
    return {"rows": rows, "flat": bool(flat),
            "ratio": float(max(values) / min(values))}
