"""Cross-sectional estimators: pooled two-sample t-test and proportional NLS.

The proportional model is ``E(Y | x) = beta_c * (1 - theta * x)`` with x = 0
for control and 1 for active, fit by Gauss-Newton least squares.  With two
groups and two parameters the model saturates the group means, so the least
squares fit only depends on the data through the group sizes, group means
and the pooled within-group sum of squares.  The batch functions work on
those statistics for many replicates at once; the single-dataset functions
are thin wrappers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import gauss_newton as gn
from .datagen import ACTIVE, CONTROL, TrialDataset
from .statcore import inv_spd_batch, t_quantile, two_sided_p

LEVEL = 0.95


@dataclass
class FitResult:
    """One model fit, summarized for its focal parameter.

    ``estimate``/``se``/``test_stat``/``p_value``/``ci_*`` refer to the
    treatment parameter (delta, theta or gamma); ``estimates`` and
    ``std_errors`` hold every fixed effect by name.
    """

    model: str
    estimate: float
    se: float
    test_stat: float
    df: float
    p_value: float
    ci_low: float
    ci_high: float
    ci_kind: str = "wald"
    converged: bool = True
    iterations: int = 0
    estimates: dict = field(default_factory=dict)
    std_errors: dict = field(default_factory=dict)
    cov: np.ndarray | None = None
    param_names: tuple = ()
    residual_var: float = math.nan
    intercept_var: float = math.nan
    message: str = ""
    schedule: tuple = ()

    @property
    def rejects(self) -> bool:
        return bool(self.converged and self.p_value < 0.05)


@dataclass
class FitBatch:
    """Column-oriented fits for a batch of replicates."""

    model: str
    param_names: tuple
    focal: int
    params: np.ndarray
    cov: np.ndarray
    df: float
    converged: np.ndarray
    iterations: np.ndarray
    reason: np.ndarray
    residual_var: np.ndarray
    intercept_var: np.ndarray | None = None
    boundary: np.ndarray | None = None
    level: float = LEVEL

    def __len__(self) -> int:
        return self.params.shape[0]

    @property
    def estimate(self) -> np.ndarray:
        return self.params[:, self.focal]

    @property
    def se(self) -> np.ndarray:
        v = self.cov[:, self.focal, self.focal]
        with np.errstate(invalid="ignore"):
            return np.where(self.converged, np.sqrt(v), np.nan)

    @property
    def test_stat(self) -> np.ndarray:
        se = self.se
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(se > 0, self.estimate / se, np.nan)

    @property
    def p_value(self) -> np.ndarray:
        stat = self.test_stat
        p = np.full(stat.shape, np.nan)
        fin = np.isfinite(stat)
        if fin.any():
            p[fin] = two_sided_p(stat[fin], self.df)
        return p

    @property
    def critical_value(self) -> float:
        return float(t_quantile((1 + self.level) / 2, self.df))

    @property
    def ci_low(self) -> np.ndarray:
        return self.estimate - self.critical_value * self.se

    @property
    def ci_high(self) -> np.ndarray:
        return self.estimate + self.critical_value * self.se

    def result(self, i: int = 0) -> FitResult:
        ok = bool(self.converged[i])
        est = float(self.estimate[i])
        se = float(self.se[i])
        diag = np.diagonal(self.cov[i]) if ok else np.full(len(self.param_names), np.nan)
        with np.errstate(invalid="ignore"):
            ses = np.sqrt(diag)
        msg = gn.REASONS.get(int(self.reason[i]), "")
        if ok and se == 0:
            msg = "zero residual variance: p-value undefined"
        return FitResult(
            model=self.model,
            estimate=est,
            se=se,
            test_stat=float(self.test_stat[i]),
            df=float(self.df),
            p_value=float(self.p_value[i]),
            ci_low=float(self.ci_low[i]),
            ci_high=float(self.ci_high[i]),
            converged=ok,
            iterations=int(self.iterations[i]),
            estimates={k: float(v) for k, v in zip(self.param_names, self.params[i])},
            std_errors={k: float(v) for k, v in zip(self.param_names, ses)},
            cov=self.cov[i].copy(),
            param_names=tuple(self.param_names),
            residual_var=float(self.residual_var[i]),
            intercept_var=math.nan if self.intercept_var is None else float(self.intercept_var[i]),
            message=msg,
        )


@dataclass
class CrossStats:
    """Sufficient statistics of single-visit two-group data, batched."""

    n_control: int
    n_active: int
    mean_control: np.ndarray
    mean_active: np.ndarray
    ss_within: np.ndarray

    @property
    def n(self) -> int:
        return self.n_control + self.n_active

    def __len__(self) -> int:
        return len(self.mean_control)

    def take(self, idx) -> "CrossStats":
        return CrossStats(self.n_control, self.n_active, self.mean_control[idx], self.mean_active[idx], self.ss_within[idx])


def cross_stats(data: TrialDataset) -> CrossStats:
    if len(np.unique(data.time)) != 1:
        raise ValueError("cross-sectional fits need single-visit data")
    y = np.asarray(data.response, dtype=float)
    yc, ya = y[data.group == CONTROL], y[data.group == ACTIVE]
    if len(yc) < 2 or len(ya) < 2:
        raise ValueError("each group needs at least 2 observations")
    mc, ma = yc.mean(), ya.mean()
    ss = float(np.sum((yc - mc) ** 2) + np.sum((ya - ma) ** 2))
    return CrossStats(len(yc), len(ya), np.array([mc]), np.array([ma]), np.array([ss]))


def stack_cross(stats: list[CrossStats]) -> CrossStats:
    first = stats[0]
    if any(s.n_control != first.n_control or s.n_active != first.n_active for s in stats):
        raise ValueError("all replicates in a batch need the same group sizes")
    return CrossStats(
        first.n_control,
        first.n_active,
        np.concatenate([s.mean_control for s in stats]),
        np.concatenate([s.mean_active for s in stats]),
        np.concatenate([s.ss_within for s in stats]),
    )


def fit_ttest_batch(stats: CrossStats, level: float = LEVEL) -> FitBatch:
    nc, na = stats.n_control, stats.n_active
    df = nc + na - 2
    s2 = stats.ss_within / df
    delta = stats.mean_active - stats.mean_control
    B = len(stats)
    params = np.column_stack([stats.mean_control, delta])
    cov = np.empty((B, 2, 2))
    cov[:, 0, 0] = s2 / nc
    cov[:, 0, 1] = cov[:, 1, 0] = -s2 / nc
    cov[:, 1, 1] = s2 * (1 / nc + 1 / na)
    return FitBatch(
        model="ttest",
        param_names=("beta_c", "delta"),
        focal=1,
        params=params,
        cov=cov,
        df=float(df),
        converged=np.ones(B, dtype=bool),
        iterations=np.zeros(B, dtype=int),
        reason=np.zeros(B, dtype=int),
        residual_var=s2,
        level=level,
    )


def fit_ttest(data: TrialDataset, level: float = LEVEL) -> FitResult:
    """Pooled-variance two-sample t-test of active minus control."""
    return fit_ttest_batch(cross_stats(data), level).result(0)


def _prop_sse(stats: CrossStats, beta_c, theta, idx):
    fa = beta_c * (1.0 - theta)
    return (
        stats.ss_within[idx]
        + stats.n_control * (stats.mean_control[idx] - beta_c) ** 2
        + stats.n_active * (stats.mean_active[idx] - fa) ** 2
    )


def _prop_jtj(nc, na, beta_c, theta):
    c = 1.0 - theta
    H = np.empty(beta_c.shape + (2, 2))
    H[..., 0, 0] = nc + na * c * c
    H[..., 0, 1] = H[..., 1, 0] = -na * beta_c * c
    H[..., 1, 1] = na * beta_c * beta_c
    return H


def fit_prop_nls_batch(
    stats: CrossStats,
    start=None,
    max_iter: int = 50,
    tol: float = 1e-10,
    level: float = LEVEL,
) -> FitBatch:
    nc, na = stats.n_control, stats.n_active
    B = len(stats)
    if start is None:
        start = np.column_stack([stats.mean_control, np.zeros(B)])
    else:
        start = np.broadcast_to(np.asarray(start, dtype=float), (B, 2))

    def objective(p, idx):
        return _prop_sse(stats, p[:, 0], p[:, 1], idx)

    def normal_equations(p, idx):
        b, th = p[:, 0], p[:, 1]
        c = 1.0 - th
        rc = stats.mean_control[idx] - b
        ra = stats.mean_active[idx] - b * c
        g = np.column_stack([nc * rc + na * c * ra, -na * b * ra])
        return _prop_jtj(nc, na, b, th), g

    res = gn.gauss_newton_batch(objective, normal_equations, start, max_iter=max_iter, tol=tol)
    df = nc + na - 2
    s2 = res.value / df
    inv, ok = inv_spd_batch(_prop_jtj(nc, na, res.params[:, 0], res.params[:, 1]))
    converged = res.converged & ok
    reason = np.where(res.converged & ~ok, gn.SINGULAR, res.reason)
    cov = s2[:, None, None] * inv
    return FitBatch(
        model="proportional",
        param_names=("beta_c", "theta"),
        focal=1,
        params=res.params,
        cov=cov,
        df=float(df),
        converged=converged,
        iterations=res.iterations,
        reason=reason,
        residual_var=s2,
        level=level,
    )


def fit_prop_nls(data: TrialDataset, start=None, max_iter: int = 50, tol: float = 1e-10, level: float = LEVEL) -> FitResult:
    """Least squares fit of ``E(Y|x) = beta_c (1 - theta x)``.

    Failures (singular gradient as beta_c approaches 0, iteration limit,
    step halving exhausted) come back with ``converged=False``.
    """
    return fit_prop_nls_batch(cross_stats(data), start, max_iter, tol, level).result(0)


# --- profile intervals -----------------------------------------------------


@dataclass(frozen=True)
class ProfileInterval:
    low: float
    high: float
    open_low: bool = False
    open_high: bool = False

    @property
    def bounded(self) -> bool:
        return not (self.open_low or self.open_high)

    def covers(self, value: float) -> bool:
        return self.low <= value <= self.high


def profile_sse_theta(stats: CrossStats, theta0) -> np.ndarray:
    """SSE minimized over beta_c with theta held at ``theta0`` (closed form)."""
    nc, na = stats.n_control, stats.n_active
    c = 1.0 - np.asarray(theta0, dtype=float)
    num = (stats.mean_active - c * stats.mean_control) ** 2
    return stats.ss_within + nc * na * num / (nc + na * c * c)


def profile_sse_beta(stats: CrossStats, beta0) -> np.ndarray:
    """SSE minimized over theta with beta_c held at ``beta0``."""
    beta0 = np.asarray(beta0, dtype=float)
    sse = stats.ss_within + stats.n_control * (stats.mean_control - beta0) ** 2
    # theta cannot move the active mean away from zero when beta_c = 0
    return np.where(beta0 == 0, sse + stats.n_active * stats.mean_active**2, sse)


def profile_bounds(tau_fn, estimate, scale, crit, *, grow=1.5, max_steps=200, bisect_steps=200):
    """Crossings of a signed profile statistic at +/- ``crit``, found outward from ``estimate``.

    ``tau_fn(x)`` evaluates the absolute profile statistic elementwise.  The
    search walks away from the estimate in geometrically growing steps
    (starting at ``scale / 8``) until the statistic reaches ``crit`` and then
    bisects the bracket.  Sides that never reach ``crit`` come back as
    infinite and flagged open.
    """
    estimate = np.asarray(estimate, dtype=float)
    scale = np.where(np.asarray(scale) > 0, scale, np.maximum(np.abs(estimate), 1.0))
    out = []
    for sign in (-1.0, 1.0):
        inner = estimate.copy()
        outer = np.full(estimate.shape, np.nan)
        step = scale / 8.0
        found = np.zeros(estimate.shape, dtype=bool)
        for _ in range(max_steps):
            pend = ~found
            if not pend.any():
                break
            x = estimate + sign * step
            hit = pend & (tau_fn(x) >= crit)
            outer = np.where(hit, x, outer)
            found |= hit
            inner = np.where(pend & ~hit, x, inner)
            step = step * grow
        lo, hi = inner.copy(), outer.copy()
        for _ in range(bisect_steps):
            mid = 0.5 * (lo + hi)
            above = tau_fn(mid) >= crit
            hi = np.where(found & above, mid, hi)
            lo = np.where(found & ~above, mid, lo)
            if np.all(~found | (np.abs(hi - lo) <= 1e-13 * np.maximum(1.0, np.abs(hi)))):
                break
        bound = np.where(found, 0.5 * (lo + hi), sign * np.inf)
        out.append((bound, ~found))
    (low, open_low), (high, open_high) = out
    return low, high, open_low, open_high


def profile_ci_nls_batch(stats: CrossStats, fit: FitBatch, level: float = LEVEL, param: str = "theta"):
    """Profile-t intervals for one parameter over a batch of converged fits.

    Returns ``(low, high, open_low, open_high)`` arrays.
    """
    df = stats.n - 2
    crit = float(t_quantile((1 + level) / 2, df))
    s2 = fit.residual_var
    sse_min = s2 * df
    j = fit.param_names.index(param)
    est = fit.params[:, j]
    se = np.sqrt(np.abs(fit.cov[:, j, j]))
    prof = profile_sse_theta if param == "theta" else profile_sse_beta

    def tau(x):
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.sqrt(np.maximum(prof(stats, x) - sse_min, 0.0) / s2)

    low, high, ol, oh = profile_bounds(tau, est, se, crit)
    bad = ~fit.converged
    low[bad] = high[bad] = np.nan
    return low, high, ol & ~bad, oh & ~bad


def profile_ci_nls(data: TrialDataset, fit: FitResult, level: float = LEVEL) -> dict[str, ProfileInterval]:
    """Profile-likelihood intervals for ``beta_c`` and ``theta``.

    The signed profile statistic ``sqrt((SSE(x) - SSE_min) / s2)`` is
    inverted at the t quantile with n - 2 degrees of freedom.  Intervals
    are generally asymmetric about the estimate, and one side may be open.
    """
    if not fit.converged:
        raise ValueError("profile intervals need a converged fit")
    stats = cross_stats(data)
    batch = _batch_from_result(fit)
    out = {}
    for name in ("beta_c", "theta"):
        lo, hi, ol, oh = profile_ci_nls_batch(stats, batch, level, name)
        out[name] = ProfileInterval(float(lo[0]), float(hi[0]), bool(ol[0]), bool(oh[0]))
    return out


def _batch_from_result(fit: FitResult) -> FitBatch:
    names = tuple(fit.param_names)
    return FitBatch(
        model=fit.model,
        param_names=names,
        focal=len(names) - 1,
        params=np.array([[fit.estimates[k] for k in names]]),
        cov=np.asarray(fit.cov)[None],
        df=fit.df,
        converged=np.array([fit.converged]),
        iterations=np.array([fit.iterations]),
        reason=np.array([0]),
        residual_var=np.array([fit.residual_var]),
    )
