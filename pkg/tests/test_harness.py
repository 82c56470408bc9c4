import math

import numpy as np
import pytest
from scipy import integrate, stats

from propsim.harness import (
    CHUNK,
    ReplicateRecord,
    cross_truths,
    run_cross_experiment,
    run_long_experiment,
    zipper_select,
)


def _rec(i, est, se, p, truth=0.0):
    return ReplicateRecord(i, "proportional", est, se, p, est - 2 * se, est + 2 * se, True, est > 0, truth=truth)


def test_cross_deterministic_across_workers_and_chunks():
    reps = CHUNK + 37  # forces a partial chunk
    a = run_cross_experiment([-0.5], [0.0, 0.3], reps=reps, master_seed=5, workers=1)
    b = run_cross_experiment([-0.5], [0.0, 0.3], reps=reps, master_seed=5, workers=3)
    assert a.summary == b.summary
    for c in a.replicates.columns:
        x, y = a.replicates[c], b.replicates[c]
        if x.dtype.kind == "f":
            assert np.array_equal(x, y, equal_nan=True)
        else:
            assert np.array_equal(x, y)


def test_cross_cells_independent_of_grid():
    full = run_cross_experiment([0.0, -0.5], [0.0, 0.3], reps=50, master_seed=2)
    one = run_cross_experiment([-0.5], [0.3], reps=50, master_seed=2)
    sub = full.replicates.where(beta_c=-0.5, delta=0.3)
    assert np.array_equal(sub["estimate"], one.replicates["estimate"], equal_nan=True)


def test_cross_models_paired():
    r = run_cross_experiment([-1.0], [0.3], reps=100, master_seed=3)
    tt = r.replicates.where(model="ttest")
    pr = r.replicates.where(model="proportional")
    assert np.array_equal(tt["replicate"], pr["replicate"])
    # both models fit the same data: the NLS theta is -delta_hat / beta_c_hat
    bc = -tt["estimate"] / pr["estimate"]
    assert np.all(np.isfinite(bc))
    assert np.allclose(bc, bc.mean(), rtol=0.5)


def test_summary_shape_and_rates():
    r = run_cross_experiment([0.0, -100.0], [-0.3, 0.0, 0.3], reps=200, master_seed=4)
    assert len(r.summary.rows) == 12
    row = r.summary.row(beta_c=-100.0, delta=0.3, model="ttest")
    sub = r.replicates.where(beta_c=-100.0, delta=0.3, model="ttest")
    assert row["rejection_rate"] == pytest.approx(100 * np.mean(sub["p_value"] < 0.05))
    assert row["n_replicates"] == 200


def test_favors_active_convention():
    r = run_cross_experiment([-0.5], [0.3], reps=100, master_seed=6)
    t = r.replicates
    assert np.array_equal(t["favors_active"], t["converged"] & (np.nan_to_num(t["estimate"]) > 0))


def test_cross_truths():
    assert cross_truths(-0.5, 0.3) == (0.3, pytest.approx(0.6))
    assert math.isnan(cross_truths(0.0, 0.3)[1])


def test_ttest_bias_near_zero():
    r = run_cross_experiment([-0.5], [0.3], reps=2000, master_seed=8)
    row = r.summary.row(model="ttest")
    mcse = math.sqrt(2 / 50) / math.sqrt(2000)
    assert abs(row["mean_bias"]) < 4 * mcse


def test_prop_null_mean_matches_ratio_oracle():
    # E[theta_hat] = 1 - mu E[1/ybar_C]; Jensen on 1/x for x < 0 makes it negative
    mu, s = -0.5, math.sqrt(1 / 50)
    e_inv = integrate.quad(lambda x: stats.norm.pdf(x, mu, s) / x, -np.inf, -1e-3, limit=200)[0]
    oracle = 1 - mu * e_inv
    r = run_cross_experiment([-0.5], [0.0], reps=4000, master_seed=8)
    sub = r.replicates.where(model="proportional")
    est = sub["estimate"][sub["converged"]]
    assert oracle < 0
    assert abs(est.mean() - oracle) < 4 * est.std() / math.sqrt(est.size)
    assert abs(np.median(est)) < 0.02


def test_models_agree_when_control_mean_far_from_zero():
    r = run_cross_experiment([-100.0], [0.0, 0.3], reps=500, master_seed=8)
    tt = r.replicates.where(model="ttest")
    pr = r.replicates.where(model="proportional")
    agree = np.mean((tt["p_value"] < 0.05) == (pr["p_value"] < 0.05))
    assert agree > 0.99


def test_long_experiment_rows_and_nulls():
    r = run_long_experiment(["B"], reps=40, master_seed=1)
    assert [(row["scenario"], row["model"]) for row in r.summary.rows] == [("B", "slope"), ("B", "proportional")]
    t = r.replicates
    assert set(t["hypothesis"].tolist()) == {"alt", "null"}
    null_slope = t.where(hypothesis="null", model="slope")
    assert np.all(null_slope["truth"] == 0.0)
    alt_prop = t.where(hypothesis="alt", model="proportional")
    assert np.allclose(alt_prop["truth"], 1.0)


def test_long_deterministic_across_workers():
    a = run_long_experiment(["A", "D"], reps=30, master_seed=9, workers=1)
    b = run_long_experiment(["A", "D"], reps=30, master_seed=9, workers=2)
    assert a.summary == b.summary


def test_reps_validation():
    with pytest.raises(ValueError):
        run_cross_experiment([0.0], [0.0], reps=0)


# --- zipper extracts ------------------------------------------------------------


def test_zipper_fraction_count():
    recs = [_rec(i, 0.01 * i, 1.0, 0.5) for i in range(10_000)]
    assert len(zipper_select(recs, 0.0, "p_value", 0.25)) == 2500


def test_zipper_full_ordering_by_bias():
    recs = [_rec(0, 0.5, 1.0, 0.6), _rec(1, -2.0, 1.0, 0.04), _rec(2, 1.0, 0.0, 0.2), _rec(3, 1.0, 0.25, 0.001)]
    rows = zipper_select(recs, 0.0, "standardized_bias", 1.0)
    assert [r.record.replicate_index for r in rows] == [3, 1, 0, 2]
    assert [r.rank for r in rows] == [1, 2, 3, 4]


def test_zipper_smallest_p_first():
    rows = zipper_select([_rec(0, 1.0, 1.0, 0.2), _rec(1, 1.0, 1.0, 0.01)], 0.0, "p_value", 0.5)
    assert len(rows) == 1 and rows[0].record.p_value == 0.01


def test_zipper_errors():
    with pytest.raises(ValueError):
        zipper_select([], 0.0)
    with pytest.raises(ValueError):
        zipper_select([_rec(0, 1, 1, 0.1)], 0.0, "p_value", 0.0)
    with pytest.raises(ValueError):
        zipper_select([_rec(0, 1, 1, 0.1)], 0.0, "median")


def test_zipper_accepts_table():
    r = run_cross_experiment([-0.5], [0.0], reps=40, master_seed=1)
    rows = zipper_select(r.replicates.where(model="ttest"), 0.0, "p_value", 0.25)
    assert len(rows) == 10
    ps = [row.record.p_value for row in rows]
    assert ps == sorted(ps)


def test_long_model_subset_matches_full_run():
    full = run_long_experiment(["C"], reps=20, master_seed=4)
    slope = run_long_experiment(["C"], reps=20, master_seed=4, models=["slope"])
    row = full.summary.row(model="slope")
    assert slope.summary == type(full.summary)(full.summary.schema, full.summary.columns, [row])
    with pytest.raises(ValueError):
        run_long_experiment(["C"], reps=5, models=["ratio"])
