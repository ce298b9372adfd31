import numpy as np
import pytest
from numpy.testing import assert_allclose

from esteq.data import Dataset
from esteq.models import EstimatingModel, evaluate_phi_bar, mean_model
from esteq.penalties import Penalty, subdifferential
from esteq.solvers import (
    SolveOptions,
    SolverError,
    primal_dual_witness,
    solve_penalized,
    solve_sequential,
    solve_unpenalized,
)
from esteq.zoo import GlmSpec, glm_model


def ls_problem(seed=0, n=40, p=3, noise=0.1, theta=None):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    theta = rng.normal(size=p) if theta is None else theta
    y = X @ theta + noise * rng.normal(size=n)
    data = Dataset(np.column_stack([X, y]),
                   [f"x{j}" for j in range(p)] + ["y"])
    model = glm_model(GlmSpec("least-squares"), list(range(p)), p)
    return model, data, X, y


def kkt_replay(model, data, result, pen=None):
    """Independent inclusion check: re-evaluate everything from scratch."""
    phi = evaluate_phi_bar(model, data, result.theta)
    if pen is None:
        return float(np.max(np.abs(phi)))
    rect = subdifferential(pen, result.theta)
    return float(np.max(rect.distance(phi)))


class TestUnpenalized:
    def test_mean_model(self):
        d = Dataset(np.array([[1.0], [3.0]]), ["x"])
        res = solve_unpenalized(mean_model(0), d)
        assert res.converged
        assert_allclose(res.theta, [2.0], atol=1e-12)

    def test_ols_oracle_5x2(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(5, 2))
        y = rng.normal(size=5)
        d = Dataset(np.column_stack([X, y]), ["x0", "x1", "y"])
        model = glm_model(GlmSpec("least-squares"), [0, 1], 2)
        res = solve_unpenalized(model, d)
        ols = np.linalg.solve(X.T @ X, X.T @ y)
        assert res.converged
        assert np.max(np.abs(res.theta - ols)) < 1e-9

    def test_logistic_bisection_oracle(self):
        # balanced 1-d toy set; scalar score root found by bisection
        x = np.array([1.0, 1.0, 1.0, 1.0, -1.0, -1.0, -1.0, -1.0])
        y = np.array([1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0])
        d = Dataset(np.column_stack([x, y]), ["x", "y"])
        model = glm_model(GlmSpec("logistic"), [0], 1)

        def score(t):
            return float(np.mean((y - 1 / (1 + np.exp(-x * t))) * x))

        lo, hi = -10.0, 10.0
        for _ in range(200):
            mid = (lo + hi) / 2
            if score(lo) * score(mid) <= 0:
                hi = mid
            else:
                lo = mid
        root = (lo + hi) / 2
        res = solve_unpenalized(model, d)
        assert res.converged
        assert abs(res.theta[0] - root) < 1e-8

    def test_rootless_equation_never_converges(self):
        # no root exists: either a non-converged status or a hard error,
        # never a converged claim
        model = EstimatingModel(
            dim=1, phi=lambda row, th: np.array([1.0 + th[0] ** 2]))
        d = Dataset(np.ones((3, 1)))
        try:
            res = solve_unpenalized(model, d, SolveOptions(max_iter=100))
            assert not res.converged
            assert res.status in ("diverged", "max-iter")
        except SolverError:
            pass

    def test_trace_records_norms(self):
        model, data, _, _ = ls_problem()
        res = solve_unpenalized(model, data, SolveOptions(trace=True))
        assert len(res.trace) == res.iterations
        assert res.trace[-1] <= res.trace[0]

    def test_result_json_round_trip(self):
        import json

        model, data, _, _ = ls_problem()
        res = solve_unpenalized(model, data)
        decoded = json.loads(res.to_json())
        assert decoded["status"] == "converged"
        assert_allclose(decoded["theta"], res.theta)
        assert decoded["support"] == list(res.support)
        assert decoded["kkt_violation"] <= res.eps_kkt

    def test_domain_box_projection(self):
        d = Dataset(np.array([[1.0], [3.0]]), ["x"])
        m = mean_model(0)
        boxed = EstimatingModel(dim=1, phi=m.phi, phi_mat=m.phi_mat,
                                jac_mean=m.jac_mean, bounds=([0.0], [1.5]))
        res = solve_unpenalized(boxed, d, SolveOptions(max_iter=50))
        assert res.theta[0] <= 1.5 + 1e-12


class TestPenalized:
    def test_zero_lambda_matches_unpenalized(self):
        model, data, X, y = ls_problem(seed=2)
        res_u = solve_unpenalized(model, data)
        res_p = solve_penalized(model, data, Penalty(kind="lasso", lam=0.0))
        assert res_p.converged
        assert np.max(np.abs(res_p.theta - res_u.theta)) < 1e-8

    def test_orthonormal_design_soft_threshold(self):
        # exact orthonormal columns: lasso solution is coordinatewise
        # soft-thresholding of the OLS fit
        rng = np.random.default_rng(3)
        n, p = 64, 8
        M = rng.normal(size=(n, n))
        Qf, _ = np.linalg.qr(M)
        X = Qf[:, :p] * np.sqrt(n)          # X'X/n = I exactly (numerically)
        theta = np.array([2.0, -1.5, 0.8, 0.0, 0.0, 0.0, 0.4, 0.0])
        y = X @ theta + 0.05 * rng.normal(size=n)
        d = Dataset(np.column_stack([X, y]))
        model = glm_model(GlmSpec("least-squares"), list(range(p)), p)
        lam = 0.3
        res = solve_penalized(model, data=d, pen=Penalty(kind="lasso", lam=lam))
        ols = X.T @ y / n
        expected = np.sign(ols) * np.maximum(np.abs(ols) - lam, 0.0)
        assert res.converged
        assert np.max(np.abs(res.theta - expected)) < 1e-8

    def test_lasso_shrinkage_identity(self):
        # every nonzero coordinate satisfies phi_bar_k = lam * sign(theta_k)
        model, data, _, _ = ls_problem(seed=4, n=60, p=5)
        lam = 0.15
        res = solve_penalized(model, data, Penalty(kind="lasso", lam=lam))
        assert res.converged
        phi = evaluate_phi_bar(model, data, res.theta)
        for k in res.support:
            assert abs(phi[k] - lam * np.sign(res.theta[k])) <= res.eps_kkt

    def test_lasso_dead_zone(self):
        # zero coordinates satisfy |phi_bar_k| <= lam + eps
        model, data, _, _ = ls_problem(
            seed=5, n=80, p=6, theta=np.array([3.0, 0, 0, 0, 0, 0]))
        lam = 0.4
        res = solve_penalized(model, data, Penalty(kind="lasso", lam=lam))
        assert res.converged
        phi = evaluate_phi_bar(model, data, res.theta)
        zeros = [k for k in range(6) if k not in res.support]
        assert zeros
        for k in zeros:
            assert abs(phi[k]) <= lam + res.eps_kkt

    def test_scad_strong_signal_equals_oracle_fit(self):
        # far beyond a*lambda the scad fit matches OLS on the true support
        theta = np.zeros(8)
        theta[:2] = 10.0
        model, data, X, y = ls_problem(seed=6, n=300, p=8, theta=theta)
        pen = Penalty(kind="scad", lam=0.25, a=3.7)
        res = solve_penalized(model, data, pen)
        assert res.converged
        assert set(res.support) == {0, 1}
        Xs = X[:, :2]
        oracle = np.linalg.solve(Xs.T @ Xs, Xs.T @ y)
        assert np.max(np.abs(res.theta[:2] - oracle)) < 1e-7

    def test_mcp_solves(self):
        theta = np.zeros(6)
        theta[0] = 5.0
        model, data, _, _ = ls_problem(seed=7, n=200, p=6, theta=theta)
        pen = Penalty(kind="mcp", lam=0.3, a=3.0)
        res = solve_penalized(model, data, pen)
        assert res.converged
        assert kkt_replay(model, data, res, pen) <= res.eps_kkt

    def test_elastic_net_kkt(self):
        model, data, _, _ = ls_problem(seed=8, n=60, p=5)
        pen = Penalty(kind="elastic-net", lam=0.2, lam2=0.3)
        res = solve_penalized(model, data, pen)
        assert res.converged
        assert kkt_replay(model, data, res, pen) <= res.eps_kkt

    def test_group_lasso_kkt_and_group_sparsity(self):
        theta = np.array([2.0, -1.0, 0.0, 0.0, 0.0, 0.0])
        model, data, _, _ = ls_problem(seed=9, n=150, p=6, theta=theta)
        pen = Penalty(kind="group-lasso", lam=0.4,
                      groups=((0, 1), (2, 3), (4, 5)))
        res = solve_penalized(model, data, pen)
        assert res.converged
        assert kkt_replay(model, data, res, pen) <= res.eps_kkt
        # whole zero groups die together
        for g in ((2, 3), (4, 5)):
            vals = res.theta[list(g)]
            assert np.all(vals == 0.0) or np.all(vals != 0.0)

    def test_lq_rejected(self):
        model, data, _, _ = ls_problem()
        with pytest.raises(SolverError, match="q < 1"):
            solve_penalized(model, data, Penalty(kind="lq", lam=0.5, q=0.5))

    def test_lq_q1_solves_as_lasso(self):
        model, data, _, _ = ls_problem(seed=10)
        res_lq = solve_penalized(model, data, Penalty(kind="lq", lam=0.2, q=1.0))
        res_l1 = solve_penalized(model, data, Penalty(kind="lasso", lam=0.2))
        assert np.max(np.abs(res_lq.theta - res_l1.theta)) < 1e-12

    def test_kkt_replay_certificate(self):
        # converged results replayed through the independent checker
        cases = [
            (Penalty(kind="lasso", lam=0.2), 11),
            (Penalty(kind="scad", lam=0.2, a=3.7), 12),
            (Penalty(kind="elastic-net", lam=0.1, lam2=0.2), 13),
        ]
        for pen, seed in cases:
            model, data, _, _ = ls_problem(seed=seed, n=70, p=6)
            res = solve_penalized(model, data, pen)
            assert res.converged
            assert kkt_replay(model, data, res, pen) <= res.eps_kkt

    def test_merit_monotone_in_trace(self):
        model, data, _, _ = ls_problem(seed=14, n=60, p=5)
        res = solve_penalized(model, data, Penalty(kind="lasso", lam=0.2),
                              SolveOptions(trace=True))
        for entry in res.trace:
            merits = np.asarray(entry.get("merits", []))
            if merits.size > 1:
                slack = 1e-12 * (1.0 + np.abs(merits[:-1]))
                assert np.all(np.diff(merits) <= slack)

    def test_logistic_lasso_against_proximal_gradient_oracle(self):
        # independent ISTA reference on the penalized logistic likelihood
        from scipy.special import expit

        rng = np.random.default_rng(24)
        n, p = 400, 6
        X = rng.normal(size=(n, p))
        theta_true = np.array([1.5, -1.0, 0.0, 0.0, 0.0, 0.0])
        y = (rng.random(n) < expit(X @ theta_true)).astype(float)
        d = Dataset(np.column_stack([X, y]))
        model = glm_model(GlmSpec("logistic"), list(range(p)), p)
        lam = 0.05
        res = solve_penalized(model, d, Penalty(kind="lasso", lam=lam))
        assert res.converged

        def soft(v, t):
            return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)

        step = 4.0 / np.linalg.eigvalsh(X.T @ X / n)[-1]  # 1/L, L <= eig/4
        beta = np.zeros(p)
        for _ in range(20000):
            grad = -X.T @ (y - expit(X @ beta)) / n
            beta_new = soft(beta - step * grad, step * lam)
            if np.max(np.abs(beta_new - beta)) < 1e-13:
                beta = beta_new
                break
            beta = beta_new
        assert np.max(np.abs(res.theta - beta)) < 1e-7

    def test_kkt_stress_random_problems(self):
        # randomized designs, signals, and penalties: every converged
        # result must satisfy the independent replay check
        rng = np.random.default_rng(25)
        kinds = ["lasso", "scad", "mcp", "elastic-net"]
        for trial in range(30):
            n = int(rng.integers(30, 120))
            p = int(rng.integers(2, 12))
            X = rng.normal(size=(n, p)) * rng.uniform(0.5, 2.0, size=p)
            theta = np.where(rng.random(p) < 0.5,
                             rng.normal(size=p) * 3, 0.0)
            y = X @ theta + rng.uniform(0.05, 0.5) * rng.normal(size=n)
            d = Dataset(np.column_stack([X, y]))
            model = glm_model(GlmSpec("least-squares"), list(range(p)), p)
            kind = kinds[trial % len(kinds)]
            pen = Penalty(kind=kind,
                          lam=float(rng.uniform(0.01, 0.6)),
                          a=float(rng.uniform(2.1, 5.0)) if kind == "scad"
                          else float(rng.uniform(1.1, 4.0)),
                          lam2=float(rng.uniform(0.0, 0.5)))
            res = solve_penalized(model, d, pen)
            assert res.converged, (trial, kind)
            assert kkt_replay(model, d, res, pen) <= res.eps_kkt, (trial, kind)

    def test_uniqueness_probe_random_restarts(self):
        # convex penalty + strictly concave equation: ten restarts agree
        model, data, _, _ = ls_problem(seed=15, n=100, p=5)
        from esteq.conditions import envelope_max_eig

        assert envelope_max_eig(model, data) < 0
        pen = Penalty(kind="lasso", lam=0.3)
        rng = np.random.default_rng(16)
        solutions = []
        for _ in range(10):
            opts = SolveOptions(theta0=rng.normal(size=5) * 3)
            res = solve_penalized(model, data, pen, opts)
            assert res.converged
            solutions.append(res.theta)
        base = solutions[0]
        for sol in solutions[1:]:
            assert np.max(np.abs(sol - base)) < 1e-6


class TestWitness:
    def test_full_support_is_vacuous_pass(self):
        model, data, _, _ = ls_problem(seed=17, n=50, p=4)
        pen = Penalty(kind="lasso", lam=0.2)
        wit = primal_dual_witness(model, data, pen, range(4))
        assert wit.passed
        assert wit.dual_stat == 0.0
        ref = solve_penalized(model, data, pen)
        assert np.max(np.abs(wit.theta - ref.theta)) < 1e-7

    def test_witness_matches_full_solve_when_it_passes(self):
        theta = np.array([3.0, -2.0, 0.0, 0.0, 0.0])
        model, data, _, _ = ls_problem(seed=18, n=400, p=5, theta=theta)
        pen = Penalty(kind="lasso", lam=0.25)
        wit = primal_dual_witness(model, data, pen, [0, 1])
        assert wit.passed
        # the zero-padded candidate satisfies the full inclusion
        rect = subdifferential(pen, wit.theta)
        phi = evaluate_phi_bar(model, data, wit.theta)
        assert float(np.max(rect.distance(phi))) <= wit.reduced_result.eps_kkt

    def test_incoherent_design_fails_witness(self):
        # strongly correlated off-support column with tiny lambda there
        rng = np.random.default_rng(19)
        n = 500
        x1 = rng.normal(size=n)
        x2 = 0.98 * x1 + np.sqrt(1 - 0.98 ** 2) * rng.normal(size=n)
        y = 3.0 * x1 + 0.05 * rng.normal(size=n)
        d = Dataset(np.column_stack([x1, x2, y]), ["x1", "x2", "y"])
        model = glm_model(GlmSpec("least-squares"), [0, 1], 2)
        pen = Penalty(kind="lasso", lam=np.array([0.5, 1e-4]))
        wit = primal_dual_witness(model, data=d, pen=pen, support=[0])
        assert not wit.passed
        assert wit.dual_stat > 1.0

    def test_zero_lambda_off_support_rejected(self):
        model, data, _, _ = ls_problem(seed=20, n=50, p=3)
        pen = Penalty(kind="lasso", lam=np.array([0.1, 0.0, 0.1]))
        with pytest.raises(ValueError, match="zero penalty"):
            primal_dual_witness(model, data, pen, [0])

    def test_group_lasso_witness(self):
        # group-sparse truth; the support is a whole group, the dual
        # statistic divides by the per-coordinate group levels
        rng = np.random.default_rng(26)
        n, p = 600, 6
        X = rng.normal(size=(n, p))
        theta = np.array([2.0, -1.5, 0.0, 0.0, 0.0, 0.0])
        y = X @ theta + 0.2 * rng.normal(size=n)
        d = Dataset(np.column_stack([X, y]))
        model = glm_model(GlmSpec("least-squares"), list(range(p)), p)
        pen = Penalty(kind="group-lasso", lam=0.3,
                      groups=((0, 1), (2, 3), (4, 5)))
        wit = primal_dual_witness(model, d, pen, [0, 1])
        assert wit.passed
        assert np.all(wit.theta[2:] == 0.0)
        full = solve_penalized(model, d, pen)
        assert np.max(np.abs(wit.theta - full.theta)) < 1e-6

    def test_empty_support_candidate(self):
        theta = np.zeros(3)
        model, data, _, _ = ls_problem(seed=21, n=800, p=3, theta=theta,
                                       noise=0.05)
        pen = Penalty(kind="lasso", lam=0.5)
        wit = primal_dual_witness(model, data, pen, [])
        assert wit.passed
        assert_allclose(wit.theta, np.zeros(3))


class TestSequential:
    def test_single_stage_matches_unpenalized(self):
        from esteq.models import stack_stepwise

        d = Dataset(np.array([[1.0], [3.0]]), ["x"])
        stacked = stack_stepwise([(mean_model(0), ())])
        res_seq = solve_sequential(stacked, d)
        res_new = solve_unpenalized(stacked, d)
        assert res_seq.converged
        assert np.max(np.abs(res_seq.theta - res_new.theta)) < 1e-10

    def test_gd_path_reproduces_batch_recursion(self):
        from esteq.zoo import GdPathSpec, gd_path_model

        rng = np.random.default_rng(22)
        n, K = 200, 5
        labels = np.repeat(np.arange(1, K + 1), n // K)
        xs = rng.normal(loc=1.0, size=n)
        d = Dataset(np.column_stack([labels.astype(float), xs]),
                    ["sample", "x"])
        spec = GdPathSpec(
            f_vec=lambda x, th: th - x,
            fprime_vec=lambda x, th: np.ones_like(x),
            kappa=1.0, L=1.0, alpha=0.4, K=K, theta0_star=2.0)
        stacked = gd_path_model(spec, labels)
        res = solve_sequential(stacked, d)
        # independent recursion oracle
        th, path = 2.0, []
        for k in range(1, K + 1):
            batch = xs[labels == k]
            th = th - spec.alpha * (K / n) * np.sum(th - batch)
            path.append(th)
        assert res.converged
        assert np.max(np.abs(res.theta - np.asarray(path))) < 1e-12

    def test_cate_sequential_matches_stacked_newton(self):
        from esteq.zoo import cate_model
        from scipy.special import expit

        rng = np.random.default_rng(23)
        n = 600
        W = np.column_stack([np.ones(n), rng.normal(size=(n, 2))])
        theta1 = np.array([0.2, 0.8, -0.5])
        t = (rng.random(n) < expit(W @ theta1)).astype(float)
        Z = W[:, :2]
        theta2 = np.array([1.0, 0.5])
        y = 0.3 * rng.normal(size=n) + t * (Z @ theta2)
        d = Dataset(np.column_stack([W, t, y]),
                    ["w0", "w1", "w2", "t", "y"])
        model = cate_model([0, 1, 2], [0, 1], t_col=3, y_col=4)
        res_seq = solve_sequential(model, d)
        res_new = solve_unpenalized(model, d, SolveOptions(
            theta0=res_seq.theta * 0.0))
        assert res_seq.converged and res_new.converged
        assert np.max(np.abs(res_seq.theta - res_new.theta)) < 1e-8

    def test_stage_failure_reports_index(self):
        from esteq.models import stack_stepwise

        bad = EstimatingModel(
            dim=1, phi=lambda row, th: np.array([1.0 + th[0] ** 2]))
        stacked = stack_stepwise([(mean_model(0), ()), (bad, ())])
        d = Dataset(np.array([[1.0], [3.0]]), ["x"])
        with pytest.raises(SolverError, match="stage 1"):
            solve_sequential(stacked, d, SolveOptions(max_iter=60))
