"""Acceptance suite: one test per criterion, each printing a pass line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
report.  Budgets are wall-clock upper bounds on this suite's reference
hardware class; every check is a hard assertion.
"""

import time

import numpy as np

from esteq.data import Dataset
from esteq.harness import Scenario, rate_scan, run_monte_carlo
from esteq.models import evaluate_phi_bar
from esteq.penalties import (
    Penalty,
    penalty_value,
    scalar_threshold,
    subdifferential,
    weak_convexity_mu,
)
from esteq.solvers import solve_penalized, solve_sequential, solve_unpenalized
from esteq.zoo import (
    GdPathSpec,
    GlmSpec,
    cate_model,
    distributed_model,
    gd_path_covariance,
    gd_path_model,
    gd_population_path,
    glm_model,
    location_model,
)


def report(criterion, ok, detail, elapsed, budget):
    flag = "PASS" if ok else "FAIL"
    print(f"[{flag}] criterion {criterion}: {detail} "
          f"({elapsed:.1f}s / budget {budget:.0f}s)")
    assert ok, f"criterion {criterion}: {detail}"
    assert elapsed < budget, f"criterion {criterion} busted {budget}s budget"


def test_criterion_1_penalty_geometry():
    """Value/subdifferential/threshold invariants on 1e4 random probes."""
    start = time.time()
    rng = np.random.default_rng(1001)
    penalties = [
        Penalty(kind="lasso", lam=1.0),
        Penalty(kind="elastic-net", lam=0.7, lam2=0.4),
        Penalty(kind="group-lasso", lam=1.2, groups=((0, 1), (2, 3))),
        Penalty(kind="scad", lam=1.0, a=3.7),
        Penalty(kind="scad", lam=0.5, a=2.4),
        Penalty(kind="mcp", lam=1.0, a=2.0),
        Penalty(kind="mcp", lam=0.8, a=1.1),
    ]
    mus = [weak_convexity_mu(pen) for pen in penalties]
    assert mus[0] == 0.0 and mus[1] == 0.0 and mus[2] == 0.0
    assert mus[3] == 1.0 / 2.7 and mus[5] == 0.5

    n_probes = 10_000
    checked = 0
    for i in range(n_probes):
        pen = penalties[i % len(penalties)]
        mu = mus[i % len(penalties)]
        p = 4
        theta = rng.normal(size=p) * 3
        theta[rng.random(p) < 0.3] = 0.0

        # value: zero at origin, nonnegative
        assert penalty_value(pen, np.zeros(p)) == 0.0
        assert penalty_value(pen, theta) >= 0.0

        # P2 containment on a zero tail
        tail = theta.copy()
        tail[2:] = 0.0
        rect = subdifferential(pen, tail)
        lam = (np.full(p, 1.2) if pen.kind == "group-lasso"
               else pen.lam_vector(p))
        assert np.all(rect.lo[2:] <= -lam[2:] + 1e-15)
        assert np.all(rect.hi[2:] >= lam[2:] - 1e-15)

        # weak convexity (sharp, unhalved form) on a random pair
        from conftest import sample_subgradient

        other = rng.normal(size=p) * 3
        other[rng.random(p) < 0.3] = 0.0
        ga = sample_subgradient(pen, theta, rng)
        gb = sample_subgradient(pen, other, rng)
        diff = other - theta
        assert float(diff @ (gb - ga)) >= -mu * float(diff @ diff) - 1e-10

        # scad/mcp: zero derivative beyond a*lambda
        if pen.kind in ("scad", "mcp"):
            lam0 = float(pen.lam[0])
            big = pen.a * lam0 * (1.0 + rng.random())  + 0.1
            r = subdifferential(pen, np.full(p, big))
            assert np.all(r.lo == 0.0) and np.all(r.hi == 0.0)

        # threshold stationarity
        if pen.kind != "group-lasso":
            z = float(rng.normal() * 4)
            t = float(rng.uniform(0.2, 1.5))
            x = scalar_threshold(pen, z, t)
            out = np.zeros(1)
            out[0] = x
            r1 = subdifferential(
                Penalty(kind=pen.kind, lam=pen.lam[:1], a=pen.a,
                        lam2=pen.lam2), out)
            assert r1.distance(np.array([(z - x) / t]))[0] <= 1e-10
        else:
            z = float(rng.normal() * 4)
            t = float(rng.uniform(0.2, 1.5))
            rest = float(abs(rng.normal()))
            x = scalar_threshold(pen, z, t, k=0, rest_norm=rest)
            # stationarity of the smooth branch, or soft threshold at rest=0
            if rest > 0 and x != 0.0:
                g = (x - z) / t + 1.2 * x / np.hypot(x, rest)
                assert abs(g) <= 1e-8
        checked += 1

    elapsed = time.time() - start
    report(1, checked == n_probes,
           f"penalty geometry on {checked} probes", elapsed, 10.0)


def test_criterion_2_solver_kkt_suite():
    """Converged solves replayed through an independent inclusion checker."""
    start = time.time()
    rng = np.random.default_rng(1002)

    def replay(model, data, res, pen=None):
        phi = evaluate_phi_bar(model, data, res.theta)
        if pen is None:
            return float(np.max(np.abs(phi)))
        rect = subdifferential(pen, res.theta)
        return float(np.max(rect.distance(phi)))

    worst = 0.0
    cases = []

    # lasso at p = 200
    n, p = 400, 200
    X = rng.normal(size=(n, p))
    theta = np.zeros(p)
    theta[:8] = rng.uniform(1.0, 3.0, size=8) * np.sign(rng.normal(size=8))
    y = X @ theta + 0.3 * rng.normal(size=n)
    d = Dataset(np.column_stack([X, y]))
    model = glm_model(GlmSpec("least-squares"), list(range(p)), p)
    lam = 0.25
    pen = Penalty(kind="lasso", lam=lam)
    res = solve_penalized(model, d, pen)
    assert res.converged
    cases.append(("lasso-p200", replay(model, d, res, pen), res.eps_kkt))
    phi = evaluate_phi_bar(model, d, res.theta)
    for k in res.support:
        shrink = abs(phi[k] - lam * np.sign(res.theta[k]))
        assert shrink <= res.eps_kkt, f"shrinkage identity broke at {k}"

    # scad at p = 100
    n, p = 500, 100
    X = rng.normal(size=(n, p))
    theta = np.zeros(p)
    theta[:5] = 4.0
    y = X @ theta + 0.5 * rng.normal(size=n)
    d = Dataset(np.column_stack([X, y]))
    model = glm_model(GlmSpec("least-squares"), list(range(p)), p)
    pen = Penalty(kind="scad", lam=0.4, a=3.7)
    res = solve_penalized(model, d, pen)
    assert res.converged
    cases.append(("scad-p100", replay(model, d, res, pen), res.eps_kkt))

    # elastic net
    pen = Penalty(kind="elastic-net", lam=0.3, lam2=0.2)
    res = solve_penalized(model, d, pen)
    assert res.converged
    cases.append(("enet-p100", replay(model, d, res, pen), res.eps_kkt))

    # group lasso at p = 60
    n, p = 300, 60
    X = rng.normal(size=(n, p))
    theta = np.zeros(p)
    theta[:6] = 2.0
    y = X @ theta + 0.3 * rng.normal(size=n)
    d = Dataset(np.column_stack([X, y]))
    model = glm_model(GlmSpec("least-squares"), list(range(p)), p)
    groups = tuple(tuple(range(3 * g, 3 * g + 3)) for g in range(p // 3))
    pen = Penalty(kind="group-lasso", lam=0.3, groups=groups)
    res = solve_penalized(model, d, pen)
    assert res.converged
    cases.append(("group-p60", replay(model, d, res, pen), res.eps_kkt))

    # unpenalized logistic at p = 50
    n, p = 800, 50
    X = rng.normal(size=(n, p))
    theta = rng.normal(size=p) * 0.3
    from scipy.special import expit

    y = (rng.random(n) < expit(X @ theta)).astype(float)
    d = Dataset(np.column_stack([X, y]))
    model = glm_model(GlmSpec("logistic"), list(range(p)), p)
    res = solve_unpenalized(model, d)
    assert res.converged
    cases.append(("logit-p50", replay(model, d, res), res.eps_kkt))

    for name, violation, eps in cases:
        assert violation <= eps, f"{name}: replay {violation:.2e} > {eps:.2e}"
        worst = max(worst, violation / eps)

    elapsed = time.time() - start
    report(2, True, f"KKT replay on {len(cases)} solves, worst "
           f"violation/eps = {worst:.2e}", elapsed, 30.0)


def test_criterion_3_oracle_equivalences():
    """Closed-form and cross-solver agreements."""
    start = time.time()
    rng = np.random.default_rng(1003)

    # OLS closed form at 1e-9
    X = rng.normal(size=(120, 6))
    y = X @ rng.normal(size=6) + 0.2 * rng.normal(size=120)
    d = Dataset(np.column_stack([X, y]))
    model = glm_model(GlmSpec("least-squares"), list(range(6)), 6)
    res = solve_unpenalized(model, d)
    ols = np.linalg.solve(X.T @ X, X.T @ y)
    gap_ols = float(np.max(np.abs(res.theta - ols)))
    assert gap_ols < 1e-9

    # soft threshold under an orthonormal design at 1e-8
    n, p = 128, 10
    Qf, _ = np.linalg.qr(rng.normal(size=(n, n)))
    X = Qf[:, :p] * np.sqrt(n)
    theta = np.concatenate([rng.uniform(-2, 2, size=4), np.zeros(p - 4)])
    y = X @ theta + 0.1 * rng.normal(size=n)
    d = Dataset(np.column_stack([X, y]))
    model = glm_model(GlmSpec("least-squares"), list(range(p)), p)
    lam = 0.3
    res = solve_penalized(model, d, Penalty(kind="lasso", lam=lam))
    ols = X.T @ y / n
    soft = np.sign(ols) * np.maximum(np.abs(ols) - lam, 0.0)
    gap_soft = float(np.max(np.abs(res.theta - soft)))
    assert gap_soft < 1e-8

    # multi-sample: stacked newton vs sequential at 1e-8
    K, nk = 5, 80
    labels = np.repeat(np.arange(1, K + 1), nk)
    x = rng.normal(size=K * nk) + np.repeat(rng.normal(size=K), nk)
    d = Dataset(np.column_stack([labels.astype(float), x]), ["sample", "x"])
    dist = distributed_model(location_model(1), labels)
    r_new = solve_unpenalized(dist, d)
    r_seq = solve_sequential(dist, d)
    gap_ms = float(np.max(np.abs(r_new.theta - r_seq.theta)))
    assert gap_ms < 1e-8

    # CATE: stacked newton vs sequential at 1e-8
    from scipy.special import expit

    n = 1500
    W = np.column_stack([np.ones(n), rng.normal(size=(n, 2))])
    t = (rng.random(n) < expit(W @ np.array([0.2, 0.7, -0.4]))).astype(float)
    Z = W[:, :2]
    y = 0.4 * rng.normal(size=n) + t * (Z @ np.array([1.0, -0.6]))
    d = Dataset(np.column_stack([W, t, y]))
    cate = cate_model([0, 1, 2], [0, 1], t_col=3, y_col=4)
    r_seq = solve_sequential(cate, d)
    r_new = solve_unpenalized(cate, d)
    gap_cate = float(np.max(np.abs(r_new.theta - r_seq.theta)))
    assert gap_cate < 1e-8

    # GD path: stacked newton vs sequential (and the batch recursion)
    K, n = 6, 1200
    labels = np.repeat(np.arange(1, K + 1), n // K)
    xs = rng.normal(loc=0.3, size=n)
    d = Dataset(np.column_stack([labels.astype(float), xs]), ["sample", "x"])
    spec = GdPathSpec(f_vec=lambda x, th: th - x,
                      fprime_vec=lambda x, th: np.ones_like(x),
                      kappa=1.0, L=1.0, alpha=0.5, K=K, theta0_star=1.0)
    gd = gd_path_model(spec, labels)
    r_seq = solve_sequential(gd, d)
    r_new = solve_unpenalized(gd, d)
    th, recursion = 1.0, []
    for k in range(1, K + 1):
        batch = xs[labels == k]
        th = th - spec.alpha * (K / n) * np.sum(th - batch)
        recursion.append(th)
    gap_gd = max(float(np.max(np.abs(r_new.theta - r_seq.theta))),
                 float(np.max(np.abs(r_seq.theta - recursion))))
    assert gap_gd < 1e-8

    elapsed = time.time() - start
    report(3, True,
           f"ols {gap_ols:.1e}, soft {gap_soft:.1e}, multisample "
           f"{gap_ms:.1e}, cate {gap_cate:.1e}, gdpath {gap_gd:.1e}",
           elapsed, 30.0)


def test_criterion_4_normality():
    """Standardized coordinates of the mean and LS-GLM estimators are
    N(0,1) by KS at the 1% critical value."""
    start = time.time()
    R = 2000
    crit = 0.0365

    sc_mean = Scenario(name="mean-normality", model="mean", n=500, p=5,
                       theta_star=np.array([1.0, -1.0, 0.5, 0.0, 2.0]),
                       R=R, seed=40401)
    s_mean = run_monte_carlo(sc_mean)
    assert s_mean.failures == 0

    sc_glm = Scenario(name="glm-normality", model="glm.ls", n=500, p=5,
                      theta_star=np.array([0.5, -0.25, 0.0, 1.0, -1.5]),
                      R=R, seed=40402)
    s_glm = run_monte_carlo(sc_glm)
    assert s_glm.failures == 0

    worst = max(max(s_mean.ks), max(s_glm.ks))
    elapsed = time.time() - start
    report(4, worst < crit,
           f"max KS over 10 standardized coordinates = {worst:.4f} "
           f"(< {crit})", elapsed, 120.0)


def test_criterion_5_selection_consistency():
    """Quality-control selection: exact support recovery and witness pass
    rate at the reference penalty level."""
    start = time.time()
    K, s, nk, R = 50, 3, 500, 200
    theta = np.zeros(K)
    theta[:s] = 2.0
    sc = Scenario(name="qc-selection", model="qc", n=K * nk, K=K,
                  theta_star=theta, penalty=Penalty(kind="lasso", lam=1.0),
                  lambda_rule="a6", R=R, seed=40501, witness=True)
    summary = run_monte_carlo(sc)
    assert summary.failures == 0
    ok = summary.recovery_rate >= 0.95 and summary.witness_rate >= 0.95
    elapsed = time.time() - start
    report(5, ok, f"recovery rate {summary.recovery_rate:.3f}, witness rate "
           f"{summary.witness_rate:.3f} (>= 0.95)", elapsed, 120.0)


def test_criterion_6_oracle_property():
    """scad on a strong sparse signal matches the oracle fit's variance and
    is asymptotically normal after bias correction (bias = 0 here)."""
    start = time.time()
    n, s, p, R = 1000, 3, 100, 500
    seed = 40601
    theta = np.zeros(p)
    theta[:s] = 5.0
    lam = 8.0 * np.sqrt(np.log(p) / n)
    pen = Penalty(kind="scad", lam=lam, a=3.7)

    sc = Scenario(name="scad-oracle", model="glm.ls", n=n, p=p,
                  theta_star=theta, penalty=pen, R=R, seed=seed)
    summary = run_monte_carlo(sc)
    assert summary.failures == 0
    assert summary.recovery_rate >= 0.95

    # oracle replications: OLS restricted to the true support, same streams
    from esteq.harness import generate

    pen_est = np.empty((R, s))
    oracle_est = np.empty((R, s))
    for rep in range(R):
        data = generate(sc, rep)
        X = data.values[:, :p]
        y = data.values[:, p]
        Xs = X[:, :s]
        oracle_est[rep] = np.linalg.solve(Xs.T @ Xs, Xs.T @ y)
    rows = summary.rep_rows
    stats = np.array([r["stats"] for r in rows])
    # reconstruct the penalized support-block estimates from the stats:
    # stat = sqrt(n) * (-(theta_hat - theta*)) / 1  =>  invert
    pen_est = theta[:s] - stats[:, :s] / np.sqrt(n)

    var_pen = pen_est.var(axis=0)
    var_oracle = oracle_est.var(axis=0)
    ratio = var_pen / var_oracle
    ks_vals = summary.ks
    crit = 0.073
    ok = (np.all(ratio >= 0.85) and np.all(ratio <= 1.15)
          and max(ks_vals) < crit)
    elapsed = time.time() - start
    report(6, ok, f"variance ratios {np.round(ratio, 3).tolist()}, "
           f"max bias-corrected KS {max(ks_vals):.4f} (< {crit})",
           elapsed, 300.0)


def test_criterion_7_distributed_variance():
    """Reconciled distributed estimate: empirical variance within 15% of
    the averaged per-sample asymptotic variances."""
    start = time.time()
    K, n, R = 10, 5000, 2000
    scales = np.array([0.6, 0.8, 1.0, 1.2, 1.4, 0.7, 0.9, 1.1, 1.3, 1.0])
    theta = np.linspace(-1.0, 1.0, K)
    sc = Scenario(name="distributed-variance", model="distributed", n=n,
                  K=K, theta_star=theta, R=R, seed=40701,
                  extra={"block_scales": scales})
    summary = run_monte_carlo(sc)
    assert summary.failures == 0
    # statistics are prestandardized by sigma = sqrt(mean sigma_k^2);
    # their variance must be 1 within 15%
    stats = np.array([r["stats"][0] for r in summary.rep_rows])
    v = float(stats.var())
    ok = abs(v - 1.0) <= 0.15
    elapsed = time.time() - start
    report(7, ok, f"standardized variance {v:.4f} within 15% of 1",
           elapsed, 180.0)


def test_criterion_8_gd_path_covariance():
    """Batched descent path: empirical covariance of the standardized path
    matches the analytic propagation formula entrywise."""
    start = time.time()
    K, n, R = 10, 20000, 2000
    alpha, theta0, x_mean = 0.03, 2.0, 0.0
    extra = dict(
        alpha=alpha, theta0=theta0, x_mean=x_mean,
        f_vec=lambda x, th: th - x,
        fprime_vec=lambda x, th: np.ones_like(np.asarray(x, dtype=float)),
        mean_f=lambda t: t - x_mean,
        var_f=lambda t: 1.0,
        mean_fprime=lambda t: 1.0)
    sc = Scenario(name="gd-covariance", model="gdpath", n=n, K=K, R=R,
                  seed=40801, extra=extra)
    spec = GdPathSpec(f_vec=extra["f_vec"], fprime_vec=extra["fprime_vec"],
                      kappa=1.0, L=1.0, alpha=alpha, K=K, theta0_star=theta0)
    path = gd_population_path(spec, extra["mean_f"])
    target = gd_path_covariance(spec, path, np.ones(K), np.ones(K - 1))

    summary = run_monte_carlo(sc)
    assert summary.failures == 0
    # rep statistics are standardized by the target diagonal; rescale back
    stats = np.array([r["stats"] for r in summary.rep_rows])
    scale = np.sqrt(np.diag(target))
    errs = stats * scale
    emp = np.cov(errs.T, bias=True)

    rel_tol, abs_floor, abs_tol = 0.20, 1e-3, 2e-4
    worst_rel, worst_abs = 0.0, 0.0
    ok = True
    for i in range(K):
        for j in range(K):
            tgt, est = target[i, j], emp[i, j]
            if abs(tgt) < abs_floor:
                worst_abs = max(worst_abs, abs(est - tgt))
                ok &= abs(est - tgt) <= abs_tol
            else:
                rel = abs(est - tgt) / abs(tgt)
                worst_rel = max(worst_rel, rel)
                ok &= rel <= rel_tol
    elapsed = time.time() - start
    report(8, ok, f"worst relative error {worst_rel:.3f} (<= 0.20), worst "
           f"small-entry abs error {worst_abs:.2e} (<= 2e-4)",
           elapsed, 300.0)


def test_criterion_9_rate_flatness():
    """Unpenalized error ladder: median errors track sqrt(p/n) within a
    factor of two."""
    start = time.time()
    ladder = [(500, 13), (1000, 16), (2000, 21), (4000, 28)]
    assert [p for _, p in ladder] == [int(np.ceil(n ** 0.4))
                                      for n, _ in ladder]

    def theta_rule(n, p):
        theta = np.zeros(p)
        theta[::2] = 1.0 / np.sqrt(p)
        theta[1::2] = -1.0 / np.sqrt(p)
        return theta

    base = Scenario(name="rate-ladder", model="glm.ls", n=500, p=13,
                    theta_star=theta_rule(500, 13), R=200, seed=40901)
    out = rate_scan(base, ladder, theta_rule=theta_rule)
    elapsed = time.time() - start
    report(9, out["flat"], f"normalized medians ratio {out['ratio']:.3f} "
           f"(<= 2)", elapsed, 300.0)


def test_criterion_10_determinism():
    """Identical master seed reproduces byte-identical summary JSON."""
    start = time.time()
    theta = np.zeros(12)
    theta[:2] = 2.0
    sc = Scenario(name="determinism", model="qc", n=1200, K=12,
                  theta_star=theta, penalty=Penalty(kind="lasso", lam=1.0),
                  lambda_rule="a6", R=40, seed=41001, witness=True)
    s1 = run_monte_carlo(sc)
    s2 = run_monte_carlo(sc)
    same = s1.to_json() == s2.to_json()

    sc2 = Scenario(name="determinism-mean", model="mean", n=200, p=3,
                   theta_star=np.array([1.0, 0.0, -1.0]), R=50, seed=41002)
    r1 = run_monte_carlo(sc2)
    r2 = run_monte_carlo(sc2)
    same &= r1.to_json() == r2.to_json()
    elapsed = time.time() - start
    report(10, same, "reruns byte-identical", elapsed, 120.0)
