import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from propsim.datagen import TrialDataset, simulate_cross
from propsim.statcore import RngStream, t_quantile
from propsim.xfit import (
    cross_stats,
    fit_prop_nls,
    fit_prop_nls_batch,
    fit_ttest,
    profile_ci_nls,
    profile_sse_theta,
    stack_cross,
)

TOY = TrialDataset.from_groups([-2.0, 0.0], [1.0, 3.0])


def test_ttest_toy_oracle():
    r = fit_ttest(TOY)
    assert r.estimate == pytest.approx(3.0)
    assert r.se == pytest.approx(math.sqrt(2), abs=1e-12)
    assert r.test_stat == pytest.approx(2.12132, abs=1e-5)
    assert r.df == 2
    assert r.p_value == pytest.approx(0.16794, abs=1e-5)
    assert r.p_value == pytest.approx(1 - r.test_stat / math.sqrt(2 + r.test_stat**2), abs=1e-14)


def test_ttest_identical_groups():
    d = TrialDataset.from_groups([1.0, 2.0, 4.0], [1.0, 2.0, 4.0])
    r = fit_ttest(d)
    assert r.estimate == 0 and r.p_value == pytest.approx(1.0)


def test_ttest_needs_two_per_group():
    with pytest.raises(ValueError):
        fit_ttest(TrialDataset.from_groups([1.0], [1.0, 2.0]))


def test_nls_toy_oracle():
    r = fit_prop_nls(TOY)
    assert r.converged
    assert r.estimates["beta_c"] == pytest.approx(-1.0, abs=1e-10)
    assert r.estimate == pytest.approx(3.0, abs=1e-10)
    # s2 (1 + (1 - theta)^2) / (n beta_c^2) with s2 = 2, n = 2
    assert r.se == pytest.approx(math.sqrt(5), abs=1e-10)
    assert r.test_stat == pytest.approx(1.34164, abs=1e-5)
    # df = 2 closed form: p = 1 - |t| / sqrt(2 + t^2); the quoted 0.31170 is this to 4 figures
    assert r.p_value == pytest.approx(1 - r.test_stat / math.sqrt(2 + r.test_stat**2), abs=1e-14)
    assert r.p_value == pytest.approx(0.31170, abs=1e-4)


def test_nls_equal_means_gives_zero():
    d = TrialDataset.from_groups([-1.0, -3.0], [-2.5, -1.5])
    assert fit_prop_nls(d).estimate == pytest.approx(0.0, abs=1e-12)


def test_nls_zero_control_mean_flags_singular():
    r = fit_prop_nls(TrialDataset.from_groups([-1.0, 1.0], [1.0, 3.0]))
    assert not r.converged
    assert "singular" in r.message


def test_nls_noiseless_zero_se_not_rejected():
    r = fit_prop_nls(TrialDataset.from_groups([-2.0, -2.0], [-1.0, -1.0]))
    assert r.converged and r.se == 0.0
    assert math.isnan(r.p_value) and not r.rejects
    assert "undefined" in r.message


def test_wald_ci_exact():
    r = fit_prop_nls(simulate_cross(50, -1.0, 0.3, 1.0, RngStream(4, 0)))
    q = t_quantile(0.975, r.df)
    assert r.ci_low == r.estimate - q * r.se
    assert r.ci_high == r.estimate + q * r.se


def _cross_data(seed, beta_c, delta, n=20):
    return simulate_cross(n, beta_c, delta, 1.0, RngStream(seed, 0))


@settings(max_examples=60, deadline=None)
@given(
    seed=st.integers(0, 2**32),
    beta_c=st.floats(-5, 5).filter(lambda b: abs(b) > 0.3),
    delta=st.floats(-1, 1),
)
def test_closed_form_and_label_swap(seed, beta_c, delta):
    d = _cross_data(seed, beta_c, delta)
    s = cross_stats(d)
    r = fit_prop_nls(d)
    assume(r.converged)
    yc, ya = s.mean_control[0], s.mean_active[0]
    assert abs(r.estimate - (1 - ya / yc)) < 1e-8
    assert abs(r.estimates["beta_c"] - yc) < 1e-8
    rs = fit_prop_nls(d.swapped())
    assume(rs.converged)
    assert abs((1 - r.estimate) * (1 - rs.estimate) - 1) < 1e-8
    t, ts = fit_ttest(d), fit_ttest(d.swapped())
    assert ts.estimate == -t.estimate


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32), delta=st.floats(-1, 1))
def test_wald_duality(seed, delta):
    for r in (fit_prop_nls(_cross_data(seed, -0.8, delta)), fit_ttest(_cross_data(seed, -0.8, delta))):
        if r.converged:
            excludes = r.ci_low > 0 or r.ci_high < 0
            assert (r.p_value < 0.05) == excludes


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32), c=st.floats(-10, 10).filter(lambda c: abs(c) > 0.1))
def test_location_shift(seed, c):
    d = _cross_data(seed, -1.0, 0.5)
    t0, t1 = fit_ttest(d), fit_ttest(d.shifted(c))
    assert abs(t0.estimate - t1.estimate) < 1e-10
    assert abs(t0.se - t1.se) < 1e-10
    assert abs(t0.p_value - t1.p_value) < 1e-10
    p0, p1 = fit_prop_nls(d), fit_prop_nls(d.shifted(c))
    if p0.converged and p1.converged:
        assert p0.estimate != pytest.approx(p1.estimate, abs=1e-6)


def test_batch_matches_single():
    data = [_cross_data(s, -0.5, 0.2) for s in range(30)]
    batch = fit_prop_nls_batch(stack_cross([cross_stats(d) for d in data]))
    for i, d in enumerate(data):
        one = fit_prop_nls(d)
        assert batch.result(i).estimate == one.estimate
        assert batch.result(i).converged == one.converged


# --- profile intervals --------------------------------------------------------


def test_profile_beta_equals_wald():
    d = _cross_data(7, -1.0, 0.2, n=50)
    r = fit_prop_nls(d)
    ci = profile_ci_nls(d, r)["beta_c"]
    q = t_quantile(0.975, r.df)
    se = r.std_errors["beta_c"]
    assert ci.low == pytest.approx(r.estimates["beta_c"] - q * se, abs=1e-8)
    assert ci.high == pytest.approx(r.estimates["beta_c"] + q * se, abs=1e-8)


def _grid_interval(stats, sse_min, s2, crit, est, lo, hi, k=2_000_001):
    grid = np.linspace(lo, hi, k)
    tau = np.sqrt(np.maximum(profile_sse_theta(stats, grid) - sse_min, 0) / s2)
    inside = tau < crit
    # connected component of the grid containing the estimate
    i0 = np.searchsorted(grid, est)
    left = i0
    while left > 0 and inside[left - 1]:
        left -= 1
    right = i0
    while right < k - 1 and inside[right + 1]:
        right += 1
    return grid[left], grid[right], grid[1] - grid[0]


def test_profile_toy_open_at_95():
    r = fit_prop_nls(TOY)
    ci = profile_ci_nls(TOY, r)["theta"]
    assert ci.open_low and ci.open_high and not ci.bounded


def test_profile_toy_asymmetric_matches_grid():
    r = fit_prop_nls(TOY)
    ci = profile_ci_nls(TOY, r, level=0.5)["theta"]
    assert ci.bounded
    assert abs(abs(ci.high - r.estimate) - abs(r.estimate - ci.low)) > 0.1
    stats = cross_stats(TOY)
    crit = t_quantile(0.75, 2)
    lo, hi, h = _grid_interval(stats, stats.ss_within[0], r.residual_var, crit, r.estimate, -20, 30)
    assert ci.low == pytest.approx(lo, abs=2 * h)
    assert ci.high == pytest.approx(hi, abs=2 * h)


def test_profile_simulated_matches_grid():
    d = _cross_data(11, -0.5, 0.0, n=50)
    r = fit_prop_nls(d)
    ci = profile_ci_nls(d, r)["theta"]
    stats = cross_stats(d)
    crit = t_quantile(0.975, r.df)
    lo, hi, h = _grid_interval(stats, stats.ss_within[0], r.residual_var, crit, r.estimate, -10, 10)
    assert ci.low == pytest.approx(lo, abs=2 * h)
    assert ci.high == pytest.approx(hi, abs=2 * h)


def test_profile_requires_convergence():
    d = TrialDataset.from_groups([-1.0, 1.0], [1.0, 3.0])
    with pytest.raises(ValueError):
        profile_ci_nls(d, fit_prop_nls(d))


def test_profile_can_disagree_with_wald_p():
    # beta_c near zero under the null: some Wald rejections whose profile interval covers 0
    found = 0
    for s in range(400):
        d = simulate_cross(50, -0.5, 0.0, 1.0, RngStream(99, s))
        r = fit_prop_nls(d)
        if r.converged and r.p_value < 0.05 and profile_ci_nls(d, r)["theta"].covers(0.0):
            found += 1
    assert found > 0
