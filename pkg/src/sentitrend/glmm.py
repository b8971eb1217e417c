"""Random-intercept logistic mixed model fit by Laplace approximation.

The model: the log-odds that message i in school k is negative equals
beta_0 + x_ik' beta + z_k, with z_k ~ N(0, sigma^2) shared by all of a
school's messages. Each school's random intercept is integrated out by a
Laplace approximation at the 1-D conditional mode (guarded Newton), and
the marginal likelihood is maximized over (beta, log sigma) by quasi-
Newton ascent with an exact analytic gradient of the Laplace objective.
An adaptive Gauss-Hermite evaluation of the same marginal serves as the
refinable oracle: one node reproduces the Laplace value, more nodes
converge to the exact integral.

Standard errors come from the inverse of the negative numerical Hessian
of the objective at the optimum (fixed-effect block), and odds-ratio
tables use Wald intervals on the coefficient scale.
"""

from __future__ import annotations

import io
import json
import math
import struct
import zlib
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import minimize
from scipy.special import erfc, expit

from .corpus import Cchie, Region, SchoolType
from .logistic import irls

WALD_Z = 1.959964  # two-sided 95% normal quantile
SIGMA_FLOOR = 1e-8
MAX_INNER = 50  # guarded Newton budget per mode search

REFERENCE_LEVELS = {
    "region": "Midwest",
    "school_type": "Public",
    "year": "2019",
    "d1": "No",
    "cchie": "BaccalaureateOrMasters",
    "medical": "No",
}

# Table order: categorical blocks first, then the standardized numerics.
NUMERIC_ORDER = (
    "city_population", "enrollment", "doctoral_programs", "tenure",
    "graduate_student", "selectivity", "graduation_rate",
)


class RankDeficiencyError(ValueError):
    def __init__(self, columns):
        super().__init__(f"design matrix is rank deficient; collinear columns: {columns}")
        self.columns = columns


class GlmmNumericalError(RuntimeError):
    pass


@dataclass(frozen=True)
class ColumnMeta:
    name: str
    kind: str  # "dummy" | "numeric"
    variable: str
    level: Optional[str] = None
    reference: Optional[str] = None
    mean: Optional[float] = None  # standardization constants (numeric only)
    sd: Optional[float] = None


@dataclass
class GlmmDesign:
    """Response, coefficient columns (no intercept column), cluster index."""

    y: np.ndarray  # (n,) 0/1
    X: np.ndarray  # (n, p) float64
    cluster: np.ndarray  # (n,) int, values 0..K-1
    cluster_ids: list  # cluster index -> school id
    columns: list  # ColumnMeta per X column

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=np.float64)
        self.X = np.asarray(self.X, dtype=np.float64)
        self.cluster = np.asarray(self.cluster, dtype=np.int64)

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def n_clusters(self) -> int:
        return len(self.cluster_ids)

    def validate(self):
        if set(np.unique(self.y)) - {0.0, 1.0}:
            raise ValueError("response must be 0/1")
        if len(self.columns) != self.p:
            raise ValueError("column metadata does not match X")
        if self.cluster.min(initial=0) < 0 or (self.n and self.cluster.max() >= self.n_clusters):
            raise ValueError("cluster index out of range")
        by_var = {}
        for j, col in enumerate(self.columns):
            if col.kind == "dummy":
                vals = np.unique(self.X[:, j])
                if set(vals) - {0.0, 1.0}:
                    raise ValueError(f"dummy column {col.name} not 0/1")
                by_var.setdefault(col.variable, []).append(j)
            elif col.kind == "numeric":
                # School-level columns (constant within cluster) must be
                # standardized across the school-level values, not messages.
                # Observation-varying numeric columns carry no such constraint.
                per_cluster = {}
                cluster_constant = True
                for ci, v in zip(self.cluster, self.X[:, j]):
                    prev = per_cluster.setdefault(int(ci), float(v))
                    if prev != float(v):
                        cluster_constant = False
                        break
                if cluster_constant:
                    vals = np.array(list(per_cluster.values()))
                    if len(vals) >= 2:
                        if abs(vals.mean()) > 1e-8 or abs(vals.std(ddof=1) - 1.0) > 1e-8:
                            raise ValueError(f"numeric column {col.name} not standardized "
                                             f"(mean {vals.mean():.2e}, "
                                             f"sd {vals.std(ddof=1):.6f})")
            else:
                raise ValueError(f"unknown column kind {col.kind!r}")
        for var, js in by_var.items():
            if np.any(self.X[:, js].sum(axis=1) > 1.0 + 1e-12):
                raise ValueError(f"dummies of {var} overlap within a row")


def _level_label(variable, value):
    if isinstance(value, (Region, SchoolType, Cchie)):
        return value.value
    if isinstance(value, bool):
        return "Yes" if value else "No"
    return str(value)


def build_design(predictions, covariates, reference_levels=None) -> GlmmDesign:
    """Dummy-coded, school-standardized design from classified messages.

    Messages from schools without complete covariates are dropped (the
    model runs on complete records only). Categorical variables are dummy
    coded against the configured reference levels; numeric covariates are
    centered and scaled by their across-school sample SD, recorded in the
    column metadata.
    """
    refs = dict(REFERENCE_LEVELS)
    if reference_levels:
        refs.update(reference_levels)

    cov_by_school = {c.school_id: c for c in covariates if c.is_complete}
    rows = [p for p in predictions if p.school_id in cov_by_school]
    if not rows:
        raise ValueError("no messages with complete school covariates")
    school_ids = sorted({p.school_id for p in rows})
    if len(school_ids) < 2:
        raise ValueError(f"need at least 2 clusters, got {len(school_ids)}")
    cluster_of = {s: i for i, s in enumerate(school_ids)}

    years = sorted({p.year for p in rows})
    level_sets = {
        "region": sorted(r.value for r in Region),
        "school_type": sorted(t.value for t in SchoolType),
        "year": [str(y) for y in years],
        "d1": ["No", "Yes"],
        "cchie": [c.value for c in Cchie],
        "medical": ["No", "Yes"],
    }
    for var, levels in level_sets.items():
        if refs[var] not in levels:
            raise ValueError(f"unknown reference level {refs[var]!r} for {var} "
                             f"(known: {levels})")

    def cat_value(var, pred, cov):
        if var == "year":
            return str(pred.year)
        if var == "school_type":
            return _level_label(var, cov.school_type)
        return _level_label(var, getattr(cov, var))

    columns = []
    col_values = []

    for var in ("region", "school_type", "year", "d1", "cchie", "medical"):
        for level in level_sets[var]:
            if level == refs[var]:
                continue
            columns.append(ColumnMeta(
                name=f"{var}={level}", kind="dummy", variable=var,
                level=level, reference=refs[var],
            ))
            col_values.append(np.array(
                [1.0 if cat_value(var, p, cov_by_school[p.school_id]) == level else 0.0
                 for p in rows]
            ))

    school_cov = [cov_by_school[s] for s in school_ids]
    for var in NUMERIC_ORDER:
        values = np.array([getattr(c, var) for c in school_cov], dtype=np.float64)
        mean = float(values.mean())
        sd = float(values.std(ddof=1))
        if sd == 0.0:
            raise ValueError(f"covariate {var} is constant across schools; cannot standardize")
        standardized = {s: (v - mean) / sd for s, v in zip(school_ids, values)}
        columns.append(ColumnMeta(name=var, kind="numeric", variable=var,
                                  mean=mean, sd=sd))
        col_values.append(np.array([standardized[p.school_id] for p in rows]))

    design = GlmmDesign(
        y=np.array([1.0 if p.is_negative else 0.0 for p in rows]),
        X=np.column_stack(col_values),
        cluster=np.array([cluster_of[p.school_id] for p in rows], dtype=np.int64),
        cluster_ids=school_ids,
        columns=columns,
    )
    design.validate()
    return design


def _check_rank(design: GlmmDesign):
    from scipy.linalg import qr

    X1 = np.column_stack([np.ones(design.n), design.X])
    _, R, piv = qr(X1, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = diag.max() * max(X1.shape) * np.finfo(float).eps * 10
    bad = [piv[i] for i in range(len(diag)) if diag[i] <= tol]
    if bad:
        names = ["(intercept)" if j == 0 else design.columns[j - 1].name for j in sorted(bad)]
        raise RankDeficiencyError(names)


def _cluster_modes(design: GlmmDesign, eta_fixed, sigma, z0=None):
    """Per-cluster conditional modes by damped Newton.

    Returns (z_hat, neg_g2, n_iter) where neg_g2 = -g'' at the mode
    (= sum of w within cluster + 1/sigma^2). g is strictly concave in z,
    so Newton with per-cluster step halving on any g decrease converges;
    the iteration cap is generous and overrunning it is an error.
    """
    K = design.n_clusters
    cl = design.cluster
    y = design.y
    inv_var = 1.0 / (sigma * sigma)
    z = np.zeros(K) if z0 is None else np.array(z0, dtype=np.float64)

    def g_values(zv):
        eta = eta_fixed + zv[cl]
        terms = y * eta - np.logaddexp(0.0, eta)
        return np.bincount(cl, weights=terms, minlength=K) - 0.5 * zv * zv * inv_var

    g_curr = g_values(z)
    for it in range(1, MAX_INNER + 1):
        eta = eta_fixed + z[cl]
        mu = expit(eta)
        s1 = np.bincount(cl, weights=y - mu, minlength=K)
        sw = np.bincount(cl, weights=mu * (1.0 - mu), minlength=K)
        grad = s1 - z * inv_var
        neg_g2 = sw + inv_var
        step = grad / neg_g2
        if not np.all(np.isfinite(step)):
            bad = int(np.flatnonzero(~np.isfinite(step))[0])
            raise GlmmNumericalError(
                f"non-finite Newton step for cluster {design.cluster_ids[bad]!r}")
        np.clip(step, -10.0, 10.0, out=step)
        scale = np.ones(K)
        for _ in range(30):
            g_new = g_values(z + scale * step)
            worse = g_new < g_curr - 1e-12
            if not np.any(worse):
                break
            scale[worse] *= 0.5
        z = z + scale * step
        g_curr = g_values(z)
        if np.max(np.abs(scale * step)) < 1e-10:
            return z, sw + inv_var, it
    raise GlmmNumericalError(f"mode search did not converge within {MAX_INNER} iterations")


def _eta_fixed(design: GlmmDesign, beta):
    return beta[0] + design.X @ np.asarray(beta[1:], dtype=np.float64)


def laplace_loglik(design: GlmmDesign, beta, sigma, z0=None, _detail=False):
    """Laplace-approximate marginal log-likelihood at (beta, sigma).

    Per cluster: g(z) = sum_i [y eta - log(1 + e^eta)] - z^2/(2 sigma^2)
    is maximized at z_hat; the cluster contributes
    g(z_hat) - log(sigma) - 0.5 log(-g''(z_hat)). Accumulation is in
    cluster index order for run-to-run reproducibility. sigma = 0 is the
    analytic limit: the ordinary logistic log-likelihood with all z at 0.
    """
    beta = np.asarray(beta, dtype=np.float64)
    eta_fixed = _eta_fixed(design, beta)
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0.0:
        terms = design.y * eta_fixed - np.logaddexp(0.0, eta_fixed)
        total = float(np.sum(terms))
        if _detail:
            K = design.n_clusters
            return total, np.zeros(K), np.full(K, np.inf), 0
        return total
    z_hat, neg_g2, n_iter = _cluster_modes(design, eta_fixed, sigma, z0=z0)
    cl = design.cluster
    inv_var = 1.0 / (sigma * sigma)
    eta = eta_fixed + z_hat[cl]
    terms = design.y * eta - np.logaddexp(0.0, eta)
    g_at_mode = np.bincount(cl, weights=terms, minlength=design.n_clusters) \
        - 0.5 * z_hat * z_hat * inv_var
    per_cluster = g_at_mode - math.log(sigma) - 0.5 * np.log(neg_g2)
    if not np.all(np.isfinite(per_cluster)):
        bad = int(np.flatnonzero(~np.isfinite(per_cluster))[0])
        raise GlmmNumericalError(
            f"non-finite likelihood contribution from cluster {design.cluster_ids[bad]!r}")
    total = float(np.sum(per_cluster))
    if _detail:
        return total, z_hat, neg_g2, n_iter
    return total


def laplace_grad(design: GlmmDesign, beta, sigma, z0=None):
    """Exact gradient of laplace_loglik w.r.t. (beta_0..beta_p, log sigma).

    Differentiates the approximation itself, including the dependence of
    the mode and curvature on the parameters (the mode's first-order
    condition removes the direct dz term from g, not from log(-g'')).
    """
    beta = np.asarray(beta, dtype=np.float64)
    eta_fixed = _eta_fixed(design, beta)
    z_hat, neg_g2, _ = _cluster_modes(design, eta_fixed, sigma, z0=z0)
    cl = design.cluster
    K = design.n_clusters
    inv_var = 1.0 / (sigma * sigma)
    eta = eta_fixed + z_hat[cl]
    mu = expit(eta)
    w = mu * (1.0 - mu)
    u = w * (1.0 - 2.0 * mu)  # d w / d eta
    X1 = np.column_stack([np.ones(design.n), design.X])

    H = neg_g2  # (K,)
    A = np.bincount(cl, weights=u, minlength=K)  # dH/dz per cluster
    grad = np.empty(len(beta) + 1)
    resid = design.y - mu
    for j in range(X1.shape[1]):
        xj = X1[:, j]
        s_resid = np.bincount(cl, weights=resid * xj, minlength=K)
        sw_x = np.bincount(cl, weights=w * xj, minlength=K)
        u_x = np.bincount(cl, weights=u * xj, minlength=K)
        dz = -sw_x / H
        grad[j] = float(np.sum(s_resid - (A * dz + u_x) / (2.0 * H)))
    dz_ds = 2.0 * z_hat * inv_var / H
    dH_ds = A * dz_ds - 2.0 * inv_var
    grad[-1] = float(np.sum(z_hat * z_hat * inv_var - 1.0 - dH_ds / (2.0 * H)))
    return grad


def aghq_loglik(design: GlmmDesign, beta, sigma, nodes: int, z0=None):
    """Adaptive Gauss-Hermite marginal log-likelihood.

    Quadrature is centered at each cluster's conditional mode and scaled
    by the curvature there; a single node reproduces the Laplace value
    exactly, and the value converges to the exact marginal as nodes grow.
    """
    if nodes < 1:
        raise ValueError("nodes must be >= 1")
    if sigma <= 0:
        raise ValueError("aghq requires sigma > 0")
    beta = np.asarray(beta, dtype=np.float64)
    eta_fixed = _eta_fixed(design, beta)
    z_hat, neg_g2, _ = _cluster_modes(design, eta_fixed, sigma, z0=z0)
    cl = design.cluster
    K = design.n_clusters
    inv_var = 1.0 / (sigma * sigma)
    tau = 1.0 / np.sqrt(neg_g2)
    x_q, w_q = np.polynomial.hermite.hermgauss(nodes)

    log_norm = -math.log(sigma) - 0.5 * math.log(2.0 * math.pi)
    acc = np.empty((K, nodes))
    for q in range(nodes):
        z_q = z_hat + math.sqrt(2.0) * tau * x_q[q]
        eta = eta_fixed + z_q[cl]
        terms = design.y * eta - np.logaddexp(0.0, eta)
        f_q = np.bincount(cl, weights=terms, minlength=K) \
            - 0.5 * z_q * z_q * inv_var + log_norm
        acc[:, q] = math.log(w_q[q]) + x_q[q] * x_q[q] + f_q
    m = acc.max(axis=1)
    lse = m + np.log(np.sum(np.exp(acc - m[:, None]), axis=1))
    per_cluster = 0.5 * math.log(2.0) + np.log(tau) + lse
    if not np.all(np.isfinite(per_cluster)):
        bad = int(np.flatnonzero(~np.isfinite(per_cluster))[0])
        raise GlmmNumericalError(
            f"non-finite quadrature for cluster {design.cluster_ids[bad]!r}")
    return float(np.sum(per_cluster))


@dataclass
class GlmmFit:
    beta: np.ndarray  # intercept first
    se: np.ndarray  # per fixed coefficient (NaN where information is singular)
    sigma: float
    z_hat: np.ndarray  # per-cluster random-effect modes at the optimum
    loglik: float
    converged: bool
    boundary_sigma: bool
    iterations_outer: int
    max_inner: int
    method: str
    column_names: list

    def to_json(self) -> str:
        return json.dumps({
            "beta": [float(b) for b in self.beta],
            "se": [None if not np.isfinite(s) else float(s) for s in self.se],
            "sigma": float(self.sigma),
            "z_hat": [float(z) for z in self.z_hat],
            "loglik": float(self.loglik),
            "converged": bool(self.converged),
            "boundary_sigma": bool(self.boundary_sigma),
            "iterations": {"outer": int(self.iterations_outer), "inner_max": int(self.max_inner)},
            "method": self.method,
            "columns": ["(intercept)"] + list(self.column_names),
        }, sort_keys=True)


def _num_hessian_from_grad(grad_fn, theta, h_scale=1e-5):
    m = len(theta)
    H = np.empty((m, m))
    for j in range(m):
        h = h_scale * max(1.0, abs(theta[j]))
        tp, tm = theta.copy(), theta.copy()
        tp[j] += h
        tm[j] -= h
        H[:, j] = (grad_fn(tp) - grad_fn(tm)) / (2.0 * h)
    return 0.5 * (H + H.T)


def _num_grad(f, theta, h_scale=1e-6):
    g = np.empty(len(theta))
    for j in range(len(theta)):
        h = h_scale * max(1.0, abs(theta[j]))
        tp, tm = theta.copy(), theta.copy()
        tp[j] += h
        tm[j] -= h
        g[j] = (f(tp) - f(tm)) / (2.0 * h)
    return g


def fit_glmm(design: GlmmDesign, method: str = "laplace", nodes: int = 25,
             fix_sigma: Optional[float] = None, max_iter: int = 500) -> GlmmFit:
    """Maximize the marginal log-likelihood over (beta, log sigma).

    method "laplace" uses the analytic gradient; "aghq" optimizes the
    nodes-point quadrature objective with central-difference gradients.
    sigma is optimized on the log scale with a floor at SIGMA_FLOOR;
    landing on the floor sets the boundary flag. fix_sigma pins sigma and
    optimizes beta only. Standard errors come from the inverse of the
    negative numerical Hessian at the optimum (fixed-effect block).
    """
    if method not in ("laplace", "aghq"):
        raise ValueError("method must be 'laplace' or 'aghq'")
    if design.n_clusters < 2:
        raise ValueError(f"need at least 2 clusters, got {design.n_clusters}")
    design.validate()
    _check_rank(design)

    p1 = design.p + 1
    warm = irls(np.column_stack([np.ones(design.n), design.X]), design.y,
                tol_coef=1e-8, max_iter=50)
    state = {"z": None, "max_inner": 0}

    def split(theta):
        if fix_sigma is not None:
            return theta, fix_sigma
        return theta[:-1], math.exp(theta[-1])

    def objective(theta):
        beta, sigma = split(theta)
        if method == "laplace":
            ll, z_hat, _, n_iter = laplace_loglik(design, beta, sigma,
                                                  z0=state["z"], _detail=True)
        else:
            eta_fx = _eta_fixed(design, beta)
            z_hat, _, n_iter = _cluster_modes(design, eta_fx, sigma, z0=state["z"])
            ll = aghq_loglik(design, beta, sigma, nodes, z0=z_hat)
        state["z"] = z_hat
        state["max_inner"] = max(state["max_inner"], n_iter)
        return -ll

    def gradient(theta):
        beta, sigma = split(theta)
        if method == "laplace":
            g = laplace_grad(design, beta, sigma, z0=state["z"])
            full = -g if fix_sigma is None else -g[:-1]
            return full
        return _num_grad(objective, theta)

    if fix_sigma is not None:
        theta0 = warm.beta.copy()
        bounds = None
    else:
        theta0 = np.concatenate([warm.beta, [math.log(0.5)]])
        bounds = [(None, None)] * p1 + [(math.log(SIGMA_FLOOR), None)]

    opts = {"maxiter": max_iter, "ftol": 1e-13, "gtol": 1e-6, "maxcor": 25}

    def projected_grad(theta):
        g = gradient(theta)
        if bounds is not None and theta[-1] <= math.log(SIGMA_FLOOR) + 1e-6:
            # at the sigma floor only ascent in log-sigma is feasible
            g = g.copy()
            g[-1] = min(g[-1], 0.0)
        return g

    result = minimize(objective, theta0, jac=gradient, method="L-BFGS-B",
                      bounds=bounds, options=opts)
    theta_hat = result.x
    outer_iters = int(result.nit)
    # Flat likelihoods can trip the function-change stop before the
    # gradient criterion; restarting resets the quasi-Newton memory.
    for _ in range(3):
        if np.max(np.abs(projected_grad(theta_hat))) < 1e-5:
            break
        result = minimize(objective, theta_hat, jac=gradient, method="L-BFGS-B",
                          bounds=bounds, options=opts)
        theta_hat = result.x
        outer_iters += int(result.nit)

    if fix_sigma is None:
        # Vanishing random-effect variance: the profile flattens near zero
        # (the log-scale gradient decays with sigma^2), so the optimizer can
        # stall above the floor. When the floor attains the same likelihood,
        # report the boundary and re-polish beta there.
        sigma_here = math.exp(theta_hat[-1])
        if sigma_here <= 1e-3:
            theta_floor = theta_hat.copy()
            theta_floor[-1] = math.log(SIGMA_FLOOR)
            if -objective(theta_floor) >= -objective(theta_hat) - 1e-10:
                pinned = [(None, None)] * p1 + [(math.log(SIGMA_FLOOR), math.log(SIGMA_FLOOR))]
                result = minimize(objective, theta_floor, jac=gradient,
                                  method="L-BFGS-B", bounds=pinned, options=opts)
                theta_hat = result.x
                outer_iters += int(result.nit)

    beta_hat, sigma_hat = split(theta_hat)
    boundary = fix_sigma is None and theta_hat[-1] <= math.log(SIGMA_FLOOR) + 1e-6
    converged = bool(np.max(np.abs(projected_grad(theta_hat))) < 1e-5)

    # Observed information: negative Hessian of the log-likelihood. At a
    # sigma boundary the log-sigma direction is excluded.
    if method == "laplace":
        def pos_grad(theta):
            b, s = split(theta)
            g = laplace_grad(design, b, s, z0=state["z"])
            return g if fix_sigma is None else g[:-1]
        hess = -_num_hessian_from_grad(pos_grad, theta_hat)
    else:
        hess = _num_hessian_from_grad(lambda t: _num_grad(objective, t), theta_hat,
                                      h_scale=1e-4)
    if fix_sigma is None and boundary:
        hess = hess[:p1, :p1]
    se = np.full(p1, np.nan)
    try:
        cov = np.linalg.inv(hess)
        diag = np.diag(cov)[:p1]
        with np.errstate(invalid="ignore"):
            se = np.where(diag > 0, np.sqrt(np.abs(diag)), np.nan)
    except np.linalg.LinAlgError:
        pass

    eta_fixed = _eta_fixed(design, beta_hat)
    if sigma_hat > 0:
        z_hat, _, _ = _cluster_modes(design, eta_fixed, sigma_hat, z0=state["z"])
    else:
        z_hat = np.zeros(design.n_clusters)
    loglik = laplace_loglik(design, beta_hat, sigma_hat) if method == "laplace" \
        else aghq_loglik(design, beta_hat, sigma_hat, nodes)

    return GlmmFit(
        beta=np.asarray(beta_hat, dtype=np.float64),
        se=se,
        sigma=float(sigma_hat),
        z_hat=z_hat,
        loglik=float(loglik),
        converged=converged,
        boundary_sigma=bool(boundary),
        iterations_outer=outer_iters,
        max_inner=int(state["max_inner"]),
        method=method,
        column_names=[c.name for c in design.columns],
    )


@dataclass(frozen=True)
class OddsRatioRow:
    name: str
    beta: float
    se: Optional[float]
    odds_ratio: float
    ci_low: Optional[float]
    ci_high: Optional[float]
    p_raw: Optional[float]
    flagged: bool = False  # SE unavailable (singular information)


@dataclass
class OddsRatioTable:
    rows: list

    def names(self):
        return [r.name for r in self.rows]


def wald_p(beta: float, se: float) -> float:
    """Two-sided normal p-value, 2 (1 - Phi(|beta/se|)), via erfc."""
    return float(erfc(abs(beta / se) / math.sqrt(2.0)))


def wald_table(fit: GlmmFit, design: GlmmDesign) -> OddsRatioTable:
    """Odds ratios, 95% Wald intervals, and raw two-sided p-values for
    every non-intercept coefficient. Entries without a usable SE are kept
    and flagged rather than dropped."""
    rows = []
    for j, col in enumerate(design.columns, start=1):
        b = float(fit.beta[j])
        s = float(fit.se[j]) if np.isfinite(fit.se[j]) else None
        if s is None or s <= 0:
            rows.append(OddsRatioRow(name=col.name, beta=b, se=None,
                                     odds_ratio=math.exp(b), ci_low=None,
                                     ci_high=None, p_raw=None, flagged=True))
            continue
        rows.append(OddsRatioRow(
            name=col.name, beta=b, se=s,
            odds_ratio=math.exp(b),
            ci_low=math.exp(b - WALD_Z * s),
            ci_high=math.exp(b + WALD_Z * s),
            p_raw=wald_p(b, s),
        ))
    return OddsRatioTable(rows=rows)


DESIGN_MAGIC = b"GLMD1\n"


def design_to_bytes(design: GlmmDesign) -> bytes:
    """Deterministic compressed container: JSON header + zlib blocks for
    y (uint8), cluster (int32), and X (little-endian float64)."""
    header = json.dumps({
        "n": design.n,
        "p": design.p,
        "clusters": design.cluster_ids,
        "columns": [
            {"name": c.name, "kind": c.kind, "variable": c.variable,
             "level": c.level, "reference": c.reference,
             "mean": c.mean, "sd": c.sd}
            for c in design.columns
        ],
    }, sort_keys=True).encode("utf-8")
    blocks = [
        zlib.compress(design.y.astype(np.uint8).tobytes(), 6),
        zlib.compress(design.cluster.astype("<i4").tobytes(), 6),
        zlib.compress(np.ascontiguousarray(design.X, dtype="<f8").tobytes(), 6),
    ]
    out = io.BytesIO()
    out.write(DESIGN_MAGIC)
    out.write(struct.pack("<I", len(header)))
    out.write(header)
    for b in blocks:
        out.write(struct.pack("<I", len(b)))
        out.write(b)
    return out.getvalue()


def design_from_bytes(blob: bytes) -> GlmmDesign:
    if not blob.startswith(DESIGN_MAGIC):
        raise ValueError("not a design container")
    off = len(DESIGN_MAGIC)
    (hlen,) = struct.unpack_from("<I", blob, off)
    off += 4
    header = json.loads(blob[off:off + hlen].decode("utf-8"))
    off += hlen
    blocks = []
    for _ in range(3):
        (blen,) = struct.unpack_from("<I", blob, off)
        off += 4
        blocks.append(zlib.decompress(blob[off:off + blen]))
        off += blen
    n, p = header["n"], header["p"]
    y = np.frombuffer(blocks[0], dtype=np.uint8).astype(np.float64)
    cluster = np.frombuffer(blocks[1], dtype="<i4").astype(np.int64)
    X = np.frombuffer(blocks[2], dtype="<f8").reshape(n, p).copy()
    columns = [ColumnMeta(**c) for c in header["columns"]]
    return GlmmDesign(y=y, X=X, cluster=cluster,
                      cluster_ids=list(header["clusters"]), columns=columns)
