"""Flat key-value config files with dotted sections.

Grammar (one assignment per line):

    # comment
    section.key = value

Values: ints and floats parse numerically, true/false parse as booleans,
whitespace- or comma-separated tokens parse as lists, and '|' separates
groups of indices (for group-lasso groups).  Everything else stays a
string.
"""

from __future__ import annotations

import numpy as np

from .harness import Scenario
from .penalties import Penalty
from .solvers import SolveOptions


def parse_value(raw):
    raw = raw.strip()
    if "|" in raw:
        return [parse_value(part) for part in raw.split("|")]
    tokens = raw.replace(",", " ").split()
    if not tokens:
        return ""
    vals = [_parse_token(t) for t in tokens]
    return vals[0] if len(vals) == 1 else vals


def _parse_token(tok):
    low = tok.lower()
    if low == "true":
        return True
    if low == "false":
        return False
    try:
        return int(tok)
    except ValueError:
        pass
    try:
        return float(tok)
    except ValueError:
        pass
    return tok


def parse_config(text):
    """Parse config text into a nested dict keyed by dotted sections."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        key, raw = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ValueError(f"line {lineno}: empty key")
        node = out
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ValueError(f"line {lineno}: {key!r} clashes with a value")
        node[parts[-1]] = parse_value(raw)
    return out


def load_config(path):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def penalty_from_config(cfg):
    """Build a Penalty from the [penalty] section, or None if absent."""
    sec = cfg.get("penalty")
    if not sec:
        return None
    kind = sec.get("kind")
    if kind is None:
        raise ValueError("penalty.kind is required")
    lam = sec.get("lambda", 0.0)
    groups = sec.get("groups", ())
    if groups:
        if not any(isinstance(g, list) for g in groups):
            groups = [groups]
        groups = [g if isinstance(g, list) else [g] for g in groups]
    return Penalty(
        kind=str(kind),
        lam=np.asarray(lam, dtype=float) if isinstance(lam, list) else lam,
        a=float(sec.get("a", 3.7)),
        q=float(sec.get("q", 1.0)),
        lam2=float(sec.get("lambda2", 0.0)),
        groups=tuple(tuple(g) for g in groups) if groups else (),
    )


def solve_options_from_config(cfg):
    sec = dict(cfg.get("solve", {}))
    theta0 = sec.pop("theta0", None)
    if theta0 is not None:
        theta0 = np.asarray(theta0, dtype=float)
    known = {k: sec[k] for k in
             ("max_iter", "max_sweeps", "eps_kkt", "eps_step", "lla_max",
              "fd_step", "divergence_patience") if k in sec}
    return SolveOptions(theta0=theta0, **known)


def model_from_config(cfg, data):
    """Instantiate the configured model against a dataset's column names."""
    from . import zoo
    from .harness import _coordinatewise_mean

    sec = cfg.get("model", {})
    name = sec.get("name")
    if name is None:
        raise ValueError("model.name is required")

    def cols(key):
        raw = sec.get(key)
        if raw is None:
            raise ValueError(f"model.{key} is required for {name}")
        if not isinstance(raw, list):
            raw = [raw]
        return [data.column_index(str(c)) for c in raw]

    if name == "mean":
        idx = cols("x")
        if idx != list(range(len(idx))):
            raise ValueError("mean model expects its columns first")
        return _coordinatewise_mean(len(idx))
    if name in ("glm.ls", "glm.logit", "glm.huber"):
        spec = zoo.GlmSpec(
            psi={"glm.ls": "least-squares", "glm.logit": "logistic",
                 "glm.huber": "huber"}[name],
            delta=float(sec.get("delta", 1.345)),
            psi_prime_min=sec.get("psi_prime_min"))
        return zoo.glm_model(spec, cols("x"), cols("y")[0])
    if name == "qc":
        return zoo.quality_control_model(
            data.labels, q_col=cols("q")[0], a=float(sec.get("a", 0.0)),
            label_column=data.column_index("sample"))
    if name == "distributed":
        sub = zoo.location_model(cols("x")[0])
        return zoo.distributed_model(
            sub, data.labels, label_column=data.column_index("sample"))
    if name == "cate":
        return zoo.cate_model(cols("w"), cols("z"), t_col=cols("t")[0],
                              y_col=cols("y")[0],
                              eps_sigma=float(sec.get("eps_sigma", 1e-3)))
    if name == "gdpath":
        spec = _gd_spec_from_config(sec, data)
        return zoo.gd_path_model(
            spec, data.labels, label_column=data.column_index("sample"))
    raise ValueError(f"unknown model {name!r}")


def _gd_spec_from_config(sec, data):
    from . import zoo

    if sec.get("f", "linear") != "linear":
        raise ValueError("only the linear update f(x, theta) = theta - x "
                         "is configurable from files")
    K = int(data.labels.max())
    return zoo.GdPathSpec(
        f_vec=lambda x, th: th - x,
        fprime_vec=lambda x, th: np.ones_like(x),
        kappa=1.0, L=1.0,
        alpha=float(sec.get("alpha", 0.5)),
        K=K,
        theta0_star=float(sec.get("theta0", 0.0)),
        x_col=data.column_index(str(sec.get("x", "x"))))


def scenario_from_config(cfg):
    """Build a Scenario from the [scenario] (+ [penalty]) sections."""
    sec = dict(cfg.get("scenario", {}))
    name = str(sec.get("name", "scenario"))
    model = str(sec["model"])
    n = int(sec["n"])
    p = int(sec.get("p", 1))
    K = int(sec.get("K", 1))

    theta = sec.get("theta_star")
    if theta is not None:
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
    else:
        rule = sec.get("theta_rule")
        if rule is not None:
            kind, s, mag = rule
            if kind != "sparse":
                raise ValueError("theta_rule supports only 'sparse s mag'")
            size = K if model in ("qc", "distributed") else p
            theta = np.zeros(size)
            theta[: int(s)] = float(mag)

    extra = {}
    for key in ("qc_a", "p1", "p2", "delta", "psi_prime_min", "x_mean"):
        if key in sec:
            extra[key] = sec[key]
    if "block_scales" in sec:
        extra["block_scales"] = np.asarray(sec["block_scales"], dtype=float)
    if model == "gdpath":
        if sec.get("f", "linear") != "linear":
            raise ValueError("only the linear update is configurable")
        x_mean = float(sec.get("x_mean", 0.0))
        extra.update(
            alpha=float(sec.get("alpha", 0.5)),
            theta0=float(sec.get("theta0", 0.0)),
            f_vec=lambda x, th: th - x,
            fprime_vec=lambda x, th: np.ones_like(np.asarray(x, dtype=float)),
            mean_f=lambda t: t - x_mean,
            var_f=lambda t: 1.0,
            mean_fprime=lambda t: 1.0,
            x_mean=x_mean)

    return Scenario(
        name=name, model=model, n=n, p=p, K=K, theta_star=theta,
        design=str(sec.get("design", "gaussian")),
        noise=str(sec.get("noise", "gaussian")),
        noise_scale=float(sec.get("noise_scale", 1.0)),
        penalty=penalty_from_config(cfg),
        lambda_rule=str(sec.get("lambda_rule", "fixed")),
        lambda_scale=float(sec.get("lambda_scale", 1.0)),
        R=int(sec.get("R", 100)),
        seed=int(sec.get("seed", 0)),
        witness=bool(sec.get("witness", False)),
        coverage=bool(sec.get("coverage", False)),
        level=float(sec.get("level", 0.95)),
        solver=str(sec.get("solver", "auto")),
        extra=extra)
