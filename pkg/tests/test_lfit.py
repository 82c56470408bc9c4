import math

import numpy as np
import pytest
from scipy.optimize import minimize

from propsim.datagen import TrialDataset, scenario_spec, scenario_trends, simulate_long
from propsim.lfit import (
    MixedModelSpec,
    VarianceComponents,
    delta_method_prop,
    fit_clda_prop,
    fit_clda_prop_batch,
    fit_clda_slope,
    fit_clda_slope_batch,
    fit_unstructured_batch,
    long_stats,
    long_stats_from_arrays,
    reml_criterion,
    stack_long,
)
from propsim.statcore import RngStream
from propsim.xfit import fit_prop_nls

from oracles import closed_form_cs, dense_neg2_reml, design

SLOPE = MixedModelSpec("slope", (0, 6, 12, 18))


def _data(label="A", seed=1, n=200, null=False, **kw):
    return simulate_long(scenario_spec(label, n_per_group=n, null=null, **kw), RngStream(seed, 0))


# --- REML criterion and variance estimates -------------------------------------


@pytest.mark.parametrize("kind", ["slope", "unstructured"])
@pytest.mark.parametrize("t2,s2", [(2.0, 1.5), (0.0, 1.0), (0.3, 4.0)])
def test_criterion_matches_dense_oracle(kind, t2, s2):
    d = _data(n=15, seed=4)
    spec = MixedModelSpec(kind, (0, 6, 12, 18), constrain_baseline=kind != "unstructured")
    got = reml_criterion(d, spec, t2, s2)
    assert got == pytest.approx(dense_neg2_reml(d, spec, t2, s2), rel=1e-11)


def test_slope_reml_matches_dense_optimizer():
    d = _data(n=15, seed=8)
    fit = fit_clda_slope(d, SLOPE)
    res = minimize(
        lambda v: dense_neg2_reml(d, SLOPE, math.exp(v[0]), math.exp(v[1])),
        x0=[0.0, 0.0], method="Nelder-Mead", options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 4000},
    )
    assert fit.intercept_var == pytest.approx(math.exp(res.x[0]), rel=1e-5)
    assert fit.residual_var == pytest.approx(math.exp(res.x[1]), rel=1e-5)


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_reml_matches_closed_form_decomposition(seed):
    d = _data("C", seed=seed)
    fit = fit_unstructured_batch(long_stats(d))
    s2, t2 = closed_form_cs(d)
    assert t2 > 0
    assert abs(fit.residual_var[0] - s2) < 1e-6
    assert abs(fit.intercept_var[0] - t2) < 1e-6


@pytest.mark.parametrize("kind", ["slope", "proportional"])
def test_reml_optimum_beats_grid(kind):
    d = _data("B", seed=5, n=60)
    spec = MixedModelSpec(kind, (0, 6, 12, 18))
    fit = (fit_clda_slope if kind == "slope" else fit_clda_prop)(d, spec)
    best = reml_criterion(d, spec, fit.intercept_var, fit.residual_var)
    t2s = np.linspace(0.5 * fit.intercept_var, 1.5 * fit.intercept_var, 50)
    s2s = np.linspace(0.5 * fit.residual_var, 1.5 * fit.residual_var, 50)
    grid = min(reml_criterion(d, spec, a, b) for a in t2s for b in s2s)
    assert best <= grid + 1e-9


def test_duplicating_subjects_keeps_argmin():
    d = _data("A", seed=6, n=40)
    times, grp, y = d.wide()
    dd = TrialDataset.from_groups(np.vstack([y[grp == 0]] * 2), np.vstack([y[grp == 1]] * 2), times)
    f1, f2 = fit_clda_slope(d), fit_clda_slope(dd)
    assert reml_criterion(d, SLOPE, 2.0, 1.5) != pytest.approx(reml_criterion(dd, SLOPE, 2.0, 1.5))
    # the doubled data have the same argmin up to the REML degrees-of-freedom correction
    res = 0.01
    assert f2.residual_var == pytest.approx(f1.residual_var, rel=res)
    assert f2.intercept_var == pytest.approx(f1.intercept_var, rel=5 * res)


def test_tau_zero_is_ols_reml():
    d = _data(n=20, seed=9)
    _, grp, y = d.wide()
    x = np.vstack([design(SLOPE, 4, g) for g in grp])
    yy = y.ravel()
    beta, *_ = np.linalg.lstsq(x, yy, rcond=None)
    rss = np.sum((yy - x @ beta) ** 2)
    nobs, p = x.shape
    s2 = 1.3
    ols = (nobs - p) * math.log(2 * math.pi) + nobs * math.log(s2) + np.linalg.slogdet(x.T @ x / s2)[1] + rss / s2
    assert reml_criterion(d, SLOPE, 0.0, s2) == pytest.approx(ols, rel=1e-12)


@pytest.mark.parametrize("kind", ["slope", "proportional"])
def test_score_vanishes_at_optimum(kind):
    d = _data("A", seed=12)
    spec = MixedModelSpec(kind, (0, 6, 12, 18))
    fit = (fit_clda_slope if kind == "slope" else fit_clda_prop)(d, spec)
    lt, ls = math.log(fit.intercept_var), math.log(fit.residual_var)
    h = 1e-5

    def loglik(a, b):
        return -0.5 * reml_criterion(d, spec, math.exp(a), math.exp(b))

    grad = [
        (loglik(lt + h, ls) - loglik(lt - h, ls)) / (2 * h),
        (loglik(lt, ls + h) - loglik(lt, ls - h)) / (2 * h),
    ]
    assert max(abs(g) for g in grad) < 1e-4


def test_boundary_flagged():
    rng = np.random.default_rng(3)
    y = rng.standard_normal((60, 4))
    y -= y.mean(axis=1, keepdims=True) * 1.5  # pushes the between-subject variance below zero
    d = TrialDataset.from_groups(y[:30], y[30:], (0, 6, 12, 18))
    fit = fit_clda_slope(d)
    assert fit.intercept_var == 0.0
    assert "boundary" in fit.message


def test_reml_criterion_rejects_bad_variances():
    d = _data(n=10)
    with pytest.raises(ValueError):
        reml_criterion(d, SLOPE, 1.0, 0.0)
    with pytest.raises(ValueError):
        reml_criterion(d, SLOPE, -1.0, 1.0)


# --- fixed effects ---------------------------------------------------------------


def _noiseless(label, sd=1e-6, schedule=(0, 6, 12, 18)):
    spec = scenario_spec(label, n_per_group=20, residual_var=sd**2, intercept_var=0.0, schedule=schedule)
    return simulate_long(spec, RngStream(1, 0))


def test_noiseless_slope_recovers_gamma():
    fit = fit_clda_slope(_noiseless("A"))
    assert fit.estimate == pytest.approx(0.5 / 18, abs=1e-6)


@pytest.mark.parametrize("label,theta", [("A", 2 / 3), ("B", 1.0), ("C", 2.0)])
def test_noiseless_prop_recovers_theta(label, theta):
    fit = fit_clda_prop(_noiseless(label))
    assert fit.converged
    assert fit.estimate == pytest.approx(theta, abs=1e-4)


def test_reduces_to_cross_sectional_nls():
    rng = np.random.default_rng(21)
    n = 40
    yc = np.column_stack([np.zeros(n), -0.8 + rng.standard_normal(n)])
    ya = np.column_stack([np.zeros(n), -0.4 + rng.standard_normal(n)])
    d = TrialDataset.from_groups(yc, ya, (0, 12))
    fit = fit_clda_prop(d, variance=VarianceComponents(1.0, 0.0))
    cross = fit_prop_nls(d.at_visit(12.0))
    assert fit.converged and cross.converged
    assert abs(fit.estimate - cross.estimate) < 1e-6


def test_slope_shift_invariance():
    d = _data("B", seed=14)
    a, b = fit_clda_slope(d), fit_clda_slope(d.shifted(3.7))
    assert abs(a.estimate - b.estimate) < 1e-10
    assert abs(a.se - b.se) < 1e-10


def test_prop_shift_sensitivity():
    d = _data("B", seed=14)
    a, b = fit_clda_prop(d), fit_clda_prop(d.shifted(-1.0))
    assert a.converged and b.converged
    assert abs(a.estimate - b.estimate) > 1e-3


def test_label_swap():
    d = _data("A", seed=15)
    s, ss = fit_clda_slope(d), fit_clda_slope(d.swapped())
    assert ss.test_stat == pytest.approx(-s.test_stat, rel=1e-9)
    p, ps = fit_clda_prop(d), fit_clda_prop(d.swapped())
    assert abs(ps.estimate + p.estimate) > 1e-3


def test_batch_matches_single():
    ds = [_data("C", seed=s, n=50) for s in range(6)]
    stats = stack_long([long_stats(d) for d in ds])
    sb, pb = fit_clda_slope_batch(stats), fit_clda_prop_batch(stats)
    for i, d in enumerate(ds):
        assert sb.result(i).estimate == pytest.approx(fit_clda_slope(d).estimate, rel=1e-12)
        assert pb.result(i).estimate == pytest.approx(fit_clda_prop(d).estimate, rel=1e-12)


def test_scenario_d_failures_are_recorded():
    spec = scenario_spec("D", n_per_group=200)
    ys = np.stack([simulate_long(spec, RngStream(17, i)).wide()[2] for i in range(200)])
    fit = fit_clda_prop_batch(long_stats_from_arrays(spec.schedule, ys[:, :200], ys[:, 200:]))
    assert 0 < (~fit.converged).sum()
    assert np.all(np.isnan(fit.se[~fit.converged]))


def test_schedule_mismatch_rejected():
    with pytest.raises(ValueError):
        fit_clda_slope(_data(), MixedModelSpec("slope", (0, 3, 6, 9)))
    with pytest.raises(ValueError):
        MixedModelSpec("slope", (0,))
    with pytest.raises(ValueError):
        MixedModelSpec("ratio", (0, 1))


# --- delta method -----------------------------------------------------------------


def test_delta_truth_plug_in():
    fit = fit_clda_slope(_noiseless("A"))
    r = delta_method_prop(fit, 18.0)
    assert r.estimate == pytest.approx(2 / 3, abs=1e-4)


def test_delta_zero_gamma():
    fit = fit_clda_slope(_data("A", seed=3))
    fit.estimates["gamma"] = 0.0
    r = delta_method_prop(fit, 18.0)
    mu = fit.estimates["mu_3"]
    assert r.estimate == 0.0
    assert r.se == pytest.approx(18 * fit.std_errors["gamma"] / abs(mu), rel=1e-12)


def test_delta_undefined_ratio():
    fit = fit_clda_slope(_data("A", seed=3))
    fit.estimates["mu_3"] = 0.0
    with pytest.raises(ValueError, match="undefined"):
        delta_method_prop(fit, 18.0)
    with pytest.raises(ValueError):
        delta_method_prop(fit, 7.0)


def test_delta_se_matches_bootstrap():
    d = _data("A", seed=2024, n=200)
    fit = fit_clda_slope(d)
    r = delta_method_prop(fit, 18.0)
    times, grp, y = d.wide()
    yc, ya = y[grp == 0], y[grp == 1]
    rng = np.random.default_rng(7)
    B = 2000
    ic = rng.integers(0, len(yc), (B, len(yc)))
    ia = rng.integers(0, len(ya), (B, len(ya)))
    boot = fit_clda_slope_batch(long_stats_from_arrays(times, yc[ic], ya[ia]))
    theta = -boot.params[:, 4] * 18.0 / boot.params[:, 3]
    sd = float(np.std(theta, ddof=1))
    assert abs(r.se / sd - 1) < 0.15
