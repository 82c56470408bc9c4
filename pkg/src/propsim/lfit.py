"""Longitudinal mixed models with a subject random intercept, fit by REML.

Both groups share the baseline mean (cLDA).  Within a subject the
covariance is compound symmetric, ``V = s2 I + t2 11'``, whose inverse is
``M / s2`` with ``M = (I - P) + rho P``, ``P = 11'/m`` and
``rho = s2 / (s2 + m t2)``.  On balanced complete data every quantity the
fit needs reduces to the per-group visit means and two scalars of the
pooled within-group scatter matrix ``W``:

    Q(beta) = tr(M W) + n_C r_C' M r_C + n_A r_A' M r_A,   r_g = ybar_g - f_g(beta)

so replicates are fit in batches.  The residual variance is profiled out in
closed form and the REML criterion is minimized over the scalar
``u = log(t2 / s2)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from . import gauss_newton as gn
from .datagen import ACTIVE, CONTROL, TrialDataset
from .statcore import condition_spd, inv_spd_batch, logdet_spd_batch, solve_spd_batch
from .xfit import LEVEL, FitBatch, FitResult

EFFECT_KINDS = ("slope", "proportional", "unstructured")

U_GRID = np.linspace(-20.0, 10.0, 21)
GOLDEN_ITERS = 48
DELTA_EPS = 1e-8
LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class VarianceComponents:
    residual_var: float
    intercept_var: float

    def __post_init__(self):
        if not self.residual_var > 0:
            raise ValueError(f"residual_var must be positive, got {self.residual_var}")
        if not self.intercept_var >= 0:
            raise ValueError(f"intercept_var must be non-negative, got {self.intercept_var}")


@dataclass(frozen=True)
class MixedModelSpec:
    """Mean structure of a longitudinal fit.

    ``slope``: control means mu_j, active means mu_j + gamma t_j.
    ``proportional``: control means mu_j, active means mu_0 at baseline and
    mu_j (1 - theta) afterwards.
    ``unstructured``: free means per group and visit (no baseline
    constraint); used as a reference model with a closed-form REML fit.
    """

    effect_kind: str
    schedule: tuple[float, ...]
    constrain_baseline: bool = True

    def __post_init__(self):
        if self.effect_kind not in EFFECT_KINDS:
            raise ValueError(f"effect_kind must be one of {EFFECT_KINDS}, got {self.effect_kind!r}")
        t = tuple(float(v) for v in self.schedule)
        object.__setattr__(self, "schedule", t)
        if len(t) < 2:
            raise ValueError("at least 2 visits are required")
        if any(b <= a for a, b in zip(t, t[1:])):
            raise ValueError("schedule must be strictly ascending")
        if self.effect_kind != "unstructured" and not self.constrain_baseline:
            raise ValueError("slope and proportional models always share the baseline mean")

    @property
    def m(self) -> int:
        return len(self.schedule)

    @property
    def n_params(self) -> int:
        return 2 * self.m if self.effect_kind == "unstructured" else self.m + 1

    @property
    def param_names(self) -> tuple[str, ...]:
        mus = tuple(f"mu_{j}" for j in range(self.m))
        if self.effect_kind == "slope":
            return mus + ("gamma",)
        if self.effect_kind == "proportional":
            return mus + ("theta",)
        return mus + tuple(f"delta_{j}" for j in range(self.m))

    @property
    def linear(self) -> bool:
        return self.effect_kind != "proportional"

    def means(self, beta):
        m = self.m
        mu = beta[:, :m]
        if self.effect_kind == "slope":
            return mu, mu + beta[:, m:m + 1] * np.asarray(self.schedule)
        if self.effect_kind == "unstructured":
            return mu, mu + beta[:, m:]
        fa = mu * (1.0 - beta[:, m:m + 1])
        fa[:, 0] = mu[:, 0]
        return mu, fa

    def jacobians(self, beta):
        m, p = self.m, self.n_params
        k = beta.shape[0]
        jc = np.zeros((1, m, p))
        jc[0, :, :m] = np.eye(m)
        if self.effect_kind == "slope":
            ja = jc.copy()
            ja[0, :, m] = self.schedule
            return jc, ja
        if self.effect_kind == "unstructured":
            ja = jc.copy()
            ja[0, :, m:] = np.eye(m)
            return jc, ja
        ja = np.zeros((k, m, p))
        d = np.ones((k, m))
        d[:, 1:] = (1.0 - beta[:, m])[:, None]
        ja[:, np.arange(m), np.arange(m)] = d
        ja[:, 1:, m] = -beta[:, 1:m]
        return jc, ja


@dataclass
class LongStats:
    """Per-replicate sufficient statistics of balanced two-group data."""

    times: np.ndarray
    n_control: int
    n_active: int
    mean_control: np.ndarray  # (B, m)
    mean_active: np.ndarray  # (B, m)
    within_trace: np.ndarray  # tr(W)
    within_ones: np.ndarray  # 1'W1 / m

    @property
    def n(self) -> int:
        return self.n_control + self.n_active

    @property
    def m(self) -> int:
        return len(self.times)

    def __len__(self) -> int:
        return self.mean_control.shape[0]

    def take(self, idx) -> "LongStats":
        return LongStats(
            self.times, self.n_control, self.n_active,
            self.mean_control[idx], self.mean_active[idx], self.within_trace[idx], self.within_ones[idx],
        )


def long_stats_from_arrays(times, yc: np.ndarray, ya: np.ndarray) -> LongStats:
    """Statistics from response arrays shaped (B, n_group, m) or (n_group, m)."""
    yc = np.asarray(yc, dtype=float)
    ya = np.asarray(ya, dtype=float)
    if yc.ndim == 2:
        yc, ya = yc[None], ya[None]
    m = yc.shape[-1]
    mc, ma = yc.mean(axis=1), ya.mean(axis=1)
    dc, da = yc - mc[:, None], ya - ma[:, None]
    trace = np.einsum("bij,bij->b", dc, dc) + np.einsum("bij,bij->b", da, da)
    ones = (np.sum(dc.sum(axis=2) ** 2, axis=1) + np.sum(da.sum(axis=2) ** 2, axis=1)) / m
    return LongStats(np.asarray(times, dtype=float), yc.shape[1], ya.shape[1], mc, ma, trace, ones)


def long_stats(data: TrialDataset, spec: MixedModelSpec | None = None) -> LongStats:
    times, grp, y = data.wide()
    if spec is not None and (len(times) != spec.m or np.any(times != np.asarray(spec.schedule))):
        raise ValueError(f"data visits {times.tolist()} do not match the model schedule {list(spec.schedule)}")
    yc, ya = y[grp == CONTROL], y[grp == ACTIVE]
    if len(yc) < 1 or len(ya) < 1:
        raise ValueError("both groups need at least one subject")
    return long_stats_from_arrays(times, yc, ya)


def stack_long(stats: list[LongStats]) -> LongStats:
    s0 = stats[0]
    return LongStats(
        s0.times, s0.n_control, s0.n_active,
        np.concatenate([s.mean_control for s in stats]),
        np.concatenate([s.mean_active for s in stats]),
        np.concatenate([s.within_trace for s in stats]),
        np.concatenate([s.within_ones for s in stats]),
    )


# --- M-weighted quadratic forms --------------------------------------------


def _qform(r, rho):
    m = r.shape[-1]
    return np.sum(r * r, axis=-1) - (1.0 - rho) * r.sum(axis=-1) ** 2 / m


def _gram(j, rho):
    m = j.shape[-2]
    s = j.sum(axis=-2)
    return np.swapaxes(j, -1, -2) @ j - (1.0 - rho)[:, None, None] * s[:, :, None] * s[:, None, :] / m


def _jtr(j, r, rho):
    m = j.shape[-2]
    return np.einsum("...ji,...j->...i", j, r) - (1.0 - rho)[:, None] * j.sum(axis=-2) * r.sum(axis=-1)[:, None] / m


class _Problem:
    """GLS pieces for one model on a batch of replicates."""

    def __init__(self, stats: LongStats, spec: MixedModelSpec):
        if stats.m != spec.m:
            raise ValueError("statistics and model disagree on the number of visits")
        self.stats = stats
        self.spec = spec
        self.nobs = stats.n * stats.m
        self.p = spec.n_params
        if self.nobs - self.p <= 0:
            raise ValueError("not enough observations for the fixed effects")

    def q(self, beta, rho, idx):
        s = self.stats
        fc, fa = self.spec.means(beta)
        base = s.within_trace[idx] - (1.0 - rho) * s.within_ones[idx]
        return base + s.n_control * _qform(s.mean_control[idx] - fc, rho) + s.n_active * _qform(s.mean_active[idx] - fa, rho)

    def normal_equations(self, beta, rho, idx):
        s = self.stats
        fc, fa = self.spec.means(beta)
        jc, ja = self.spec.jacobians(beta)
        h = s.n_control * _gram(jc, rho) + s.n_active * _gram(ja, rho)
        g = s.n_control * _jtr(jc, s.mean_control[idx] - fc, rho) + s.n_active * _jtr(ja, s.mean_active[idx] - fa, rho)
        return h, g

    def start(self):
        s = self.stats
        beta = np.zeros((len(s), self.p))
        beta[:, : s.m] = s.mean_control
        return beta

    def fit(self, rho, max_iter=200, tol=1e-10, start=None):
        """GLS fit at fixed ``rho``: ``(beta, Q, H, converged, iterations, reason)``."""
        B = len(self.stats)
        idx = np.arange(B)
        if self.spec.linear:
            beta0 = np.zeros((B, self.p))
            h, g = self.normal_equations(beta0, rho, idx)
            beta, ok = solve_spd_batch(h, g)
            ok &= condition_spd(h) <= gn.COND_LIMIT
            reason = np.where(ok, gn.OK, gn.SINGULAR)
            return beta, self.q(beta, rho, idx), h, ok, np.ones(B, dtype=int), reason
        res = gn.gauss_newton_batch(
            lambda b, i: self.q(b, rho[i], i),
            lambda b, i: self.normal_equations(b, rho[i], i),
            self.start() if start is None else start,
            max_iter=max_iter,
            tol=tol,
        )
        h, _ = self.normal_equations(res.params, rho, idx)
        return res.params, res.value, h, res.converged, res.iterations, res.reason

    def profiled(self, rho, **kw):
        """Criterion with the residual variance profiled out, up to a constant."""
        beta, q, h, ok, it, reason = self.fit(rho, **kw)
        logdet, pd = logdet_spd_batch(h)
        with np.errstate(divide="ignore", invalid="ignore"):
            c = (self.nobs - self.p) * np.log(q) - self.stats.n * np.log(rho) + logdet
        c = np.where(np.isfinite(c), c, np.inf)
        return c, (beta, q, h, ok & pd, it, reason)

    def neg2_reml(self, rho, lam1):
        """Full -2 restricted log-likelihood at ``(rho, lam1 = s2)``."""
        beta, q, h, ok, _, _ = self.fit(rho)
        logdet, _ = logdet_spd_batch(h)
        n, m, p = self.stats.n, self.stats.m, self.p
        lam2 = lam1 / rho
        return (
            (self.nobs - p) * LOG_2PI
            + n * ((m - 1) * np.log(lam1) + np.log(lam2))
            + logdet
            - p * np.log(lam1)
            + q / lam1
        )


def _rho_of_u(u, m):
    return 1.0 / (1.0 + m * np.exp(u))


def _minimize_u(f, B):
    """Per-element minimizer of ``f(u)`` over a grid, refined by golden section."""
    vals = np.stack([f(np.full(B, u)) for u in U_GRID], axis=1)
    k = np.argmin(vals, axis=1)
    a = U_GRID[np.clip(k - 1, 0, len(U_GRID) - 1)]
    b = U_GRID[np.clip(k + 1, 0, len(U_GRID) - 1)]
    r = (math.sqrt(5.0) - 1.0) / 2.0
    c, d = b - r * (b - a), a + r * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(GOLDEN_ITERS):
        left = fc < fd
        na, nb = np.where(left, a, c), np.where(left, d, b)
        nc = np.where(left, nb - r * (nb - na), d)
        nd = np.where(left, c, na + r * (nb - na))
        fnew = f(np.where(left, nc, nd))
        fc, fd = np.where(left, fnew, fd), np.where(left, fc, fnew)
        a, b, c, d = na, nb, nc, nd
    u = 0.5 * (a + b)
    return u, k


def _fit_batch(stats: LongStats, spec: MixedModelSpec, variance=None, max_iter=200, tol=1e-10, level=LEVEL) -> FitBatch:
    prob = _Problem(stats, spec)
    B, m = len(stats), stats.m
    boundary = np.zeros(B, dtype=bool)
    kw = dict(max_iter=max_iter, tol=tol)
    if variance is not None:
        rho = np.full(B, variance.residual_var / (variance.residual_var + m * variance.intercept_var))
        _, (beta, q, h, ok, it, reason) = prob.profiled(rho, **kw)
        lam1 = np.full(B, variance.residual_var)
    else:
        u, k = _minimize_u(lambda u: prob.profiled(_rho_of_u(u, m), **kw)[0], B)
        rho = _rho_of_u(u, m)
        c_int, fit_int = prob.profiled(rho, **kw)
        c_bd, fit_bd = prob.profiled(np.ones(B), **kw)
        boundary = c_bd <= c_int
        rho = np.where(boundary, 1.0, rho)
        beta, q, h, ok, it, reason = (
            np.where(boundary.reshape((B,) + (1,) * (np.ndim(xi) - 1)), xb, xi) for xi, xb in zip(fit_int, fit_bd)
        )
        lam1 = q / (prob.nobs - prob.p)
    inv, pd = inv_spd_batch(h)
    well = condition_spd(h) <= gn.COND_LIMIT
    converged = ok & pd & well
    reason = np.where(ok & ~(pd & well), gn.SINGULAR, reason)
    tau2 = lam1 * (1.0 / rho - 1.0) / m
    return FitBatch(
        model=spec.effect_kind,
        param_names=spec.param_names,
        focal=spec.n_params - 1,
        params=beta,
        cov=lam1[:, None, None] * inv,
        df=math.inf,
        converged=converged,
        iterations=it,
        reason=reason,
        residual_var=lam1,
        intercept_var=tau2,
        boundary=boundary,
        level=level,
    )


def _single(batch: FitBatch, spec: MixedModelSpec) -> FitResult:
    res = batch.result(0)
    res.schedule = spec.schedule
    if batch.boundary is not None and batch.boundary[0]:
        res.message = (res.message + "; " if res.message else "") + "intercept variance at boundary 0"
    return res


def fit_clda_slope_batch(stats: LongStats, spec: MixedModelSpec | None = None, variance=None, level=LEVEL) -> FitBatch:
    spec = spec or MixedModelSpec("slope", tuple(stats.times))
    if spec.effect_kind != "slope":
        raise ValueError("spec must have effect_kind='slope'")
    return _fit_batch(stats, spec, variance, level=level)


def fit_clda_slope(data: TrialDataset, spec: MixedModelSpec | None = None, variance: VarianceComponents | None = None, level: float = LEVEL) -> FitResult:
    """Slope (linear treatment effect) cLDA model fit by REML.

    ``variance`` fixes the variance components instead of estimating them.
    """
    stats = long_stats(data, spec)
    batch = fit_clda_slope_batch(stats, spec, variance, level)
    return _single(batch, MixedModelSpec("slope", tuple(stats.times)))


def fit_clda_prop_batch(
    stats: LongStats,
    spec: MixedModelSpec | None = None,
    variance=None,
    max_iter: int = 200,
    tol: float = 1e-10,
    level: float = LEVEL,
) -> FitBatch:
    spec = spec or MixedModelSpec("proportional", tuple(stats.times))
    if spec.effect_kind != "proportional":
        raise ValueError("spec must have effect_kind='proportional'")
    return _fit_batch(stats, spec, variance, max_iter, tol, level)


def fit_clda_prop(
    data: TrialDataset,
    spec: MixedModelSpec | None = None,
    variance: VarianceComponents | None = None,
    max_iter: int = 200,
    tol: float = 1e-10,
    level: float = LEVEL,
) -> FitResult:
    """Proportional-effect cLDA model with a random intercept.

    The post-baseline active means are ``mu_j (1 - theta)``.  Variance
    components are estimated by REML with the mean model linearized at the
    GLS estimate.  Non-convergence or a near-singular information matrix
    (placebo means near zero) gives ``converged=False``.
    """
    stats = long_stats(data, spec)
    batch = fit_clda_prop_batch(stats, spec, variance, max_iter, tol, level)
    return _single(batch, MixedModelSpec("proportional", tuple(stats.times)))


def fit_unstructured_batch(stats: LongStats, variance=None) -> FitBatch:
    spec = MixedModelSpec("unstructured", tuple(stats.times), constrain_baseline=False)
    return _fit_batch(stats, spec, variance)


def reml_criterion(data: TrialDataset, spec: MixedModelSpec, intercept_var: float, residual_var: float) -> float:
    """-2 restricted log-likelihood with the fixed effects profiled by GLS.

    Defined up to an additive constant that does not depend on the
    variance components.
    """
    VarianceComponents(residual_var, intercept_var)
    stats = long_stats(data, spec)
    prob = _Problem(stats, spec)
    rho = np.array([residual_var / (residual_var + stats.m * intercept_var)])
    return float(prob.neg2_reml(rho, np.array([residual_var]))[0])


# --- delta method ------------------------------------------------------------


@dataclass(frozen=True)
class RatioEstimate:
    estimate: float
    se: float
    ci_low: float
    ci_high: float


def delta_method_prop(fit: FitResult, t: float, level: float = LEVEL, eps: float = DELTA_EPS) -> RatioEstimate:
    """Proportional effect at visit ``t`` implied by a slope fit.

    ``theta(t) = -gamma t / mu(t)`` with a delta-method standard error.

    Raises
    ------
    ValueError
        If the fit did not converge, ``t`` is not a visit, or
        ``|mu(t)| <= eps`` (the ratio is undefined).
    """
    if fit.model != "slope":
        raise ValueError("delta_method_prop needs a slope-model fit")
    if not fit.converged:
        raise ValueError("fit did not converge")
    names = list(fit.param_names)
    j = _visit_index(fit, t)
    mu_name = f"mu_{j}"
    mu, gamma = fit.estimates[mu_name], fit.estimates["gamma"]
    if abs(mu) <= eps:
        raise ValueError(f"control mean at t={t:g} is {mu:.3g}: proportional effect undefined")
    theta = -gamma * t / mu
    grad = np.zeros(len(names))
    grad[names.index(mu_name)] = gamma * t / mu**2
    grad[names.index("gamma")] = -t / mu
    se = float(math.sqrt(max(grad @ fit.cov @ grad, 0.0)))
    z = float(ndtri((1 + level) / 2))
    return RatioEstimate(theta, se, theta - z * se, theta + z * se)


def _visit_index(fit: FitResult, t: float) -> int:
    sched = fit.schedule
    hits = [j for j, s in enumerate(sched) if s == t]
    if not hits:
        raise ValueError(f"t={t:g} is not a visit of the fitted schedule {list(sched)}")
    return hits[0]
