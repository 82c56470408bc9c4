"""Monte Carlo replication engine.

Every simulation cell (a (beta_c, delta) pair, or a scenario under the
alternative or the null) gets its own seed derived from the master seed and
a cell key.  Replicate ``i`` of a cell draws from ``RngStream(cell_seed, i)``,
so results do not depend on how replicates are split into chunks or spread
over worker processes.  All models in a cell are fit to the same datasets.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .datagen import (
    DEFAULT_HORIZON,
    scenario_spec,
    simulate_cross,
    simulate_long,
)
from .lfit import fit_clda_prop_batch, fit_clda_slope_batch, long_stats_from_arrays
from .statcore import RngStream, derive_seed
from .xfit import cross_stats, fit_prop_nls_batch, fit_ttest_batch, profile_ci_nls_batch, stack_cross

CHUNK = 250
ALPHA = 0.05

REPLICATE_SCHEMA = "propsim.replicates/1"
REPLICATE_COLUMNS = (
    "experiment", "scenario", "hypothesis", "beta_c", "delta", "model", "replicate",
    "truth", "estimate", "se", "test_stat", "p_value", "ci_low", "ci_high", "ci_kind",
    "converged", "favors_active",
)
CROSS_SCHEMA = "propsim.summary.cross/1"
CROSS_COLUMNS = (
    "beta_c", "delta", "model", "n_replicates", "rejection_rate", "rejection_mcse",
    "favor_active_given_rejection", "convergence_rate", "mean_bias",
)
LONG_SCHEMA = "propsim.summary.long/1"
LONG_COLUMNS = (
    "scenario", "model", "n_replicates", "power", "power_mcse", "type1_error", "type1_mcse",
    "favor_active_null", "convergence_alt", "convergence_null", "mean_bias",
)


@dataclass
class ReplicateRecord:
    replicate_index: int
    model_kind: str
    estimate: float
    se: float
    p_value: float
    ci_low: float
    ci_high: float
    converged: bool
    favors_active: bool
    truth: float = math.nan
    test_stat: float = math.nan
    ci_kind: str = "wald"
    experiment: str = ""
    scenario: str = ""
    hypothesis: str = ""
    beta_c: float = math.nan
    delta: float = math.nan

    @property
    def rejects(self) -> bool:
        return bool(self.converged and self.p_value < ALPHA)


@dataclass
class ReplicateTable:
    """Column store of replicate records, one row per replicate and model."""

    columns: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.columns["model"]) if self.columns else 0

    def __getitem__(self, name):
        return self.columns[name]

    @classmethod
    def concat(cls, parts: list["ReplicateTable"]) -> "ReplicateTable":
        parts = [p for p in parts if len(p)]
        if not parts:
            return cls({c: np.array([]) for c in REPLICATE_COLUMNS})
        return cls({c: np.concatenate([p.columns[c] for p in parts]) for c in REPLICATE_COLUMNS})

    def select(self, mask) -> "ReplicateTable":
        return ReplicateTable({c: v[mask] for c, v in self.columns.items()})

    def where(self, **eq) -> "ReplicateTable":
        mask = np.ones(len(self), dtype=bool)
        for k, v in eq.items():
            col = self.columns[k]
            mask &= (col == v) if not (isinstance(v, float) and math.isnan(v)) else np.isnan(col)
        return self.select(mask)

    def records(self):
        c = self.columns
        for i in range(len(self)):
            yield ReplicateRecord(
                replicate_index=int(c["replicate"][i]),
                model_kind=str(c["model"][i]),
                estimate=float(c["estimate"][i]),
                se=float(c["se"][i]),
                p_value=float(c["p_value"][i]),
                ci_low=float(c["ci_low"][i]),
                ci_high=float(c["ci_high"][i]),
                converged=bool(c["converged"][i]),
                favors_active=bool(c["favors_active"][i]),
                truth=float(c["truth"][i]),
                test_stat=float(c["test_stat"][i]),
                ci_kind=str(c["ci_kind"][i]),
                experiment=str(c["experiment"][i]),
                scenario=str(c["scenario"][i]),
                hypothesis=str(c["hypothesis"][i]),
                beta_c=float(c["beta_c"][i]),
                delta=float(c["delta"][i]),
            )


@dataclass
class SummaryTable:
    schema: str
    columns: tuple
    rows: list

    def __eq__(self, other) -> bool:
        if not isinstance(other, SummaryTable) or (self.schema, tuple(self.columns)) != (other.schema, tuple(other.columns)):
            return False
        if len(self.rows) != len(other.rows):
            return False
        for a, b in zip(self.rows, other.rows):
            for c in self.columns:
                x, y = a[c], b[c]
                if isinstance(x, float) and isinstance(y, float) and math.isnan(x) and math.isnan(y):
                    continue
                if x != y:
                    return False
        return True

    def row(self, **eq) -> dict:
        hits = [r for r in self.rows if all(r[k] == v for k, v in eq.items())]
        if len(hits) != 1:
            raise KeyError(f"{len(hits)} rows match {eq}")
        return hits[0]


@dataclass
class ExperimentResult:
    summary: SummaryTable
    replicates: ReplicateTable


# --- per-chunk workers --------------------------------------------------------


def _model_columns(batch, est_ci=None) -> dict:
    est = batch.estimate
    conv = batch.converged
    out = {
        # failed fits carry no estimate
        "estimate": np.where(conv, est, np.nan),
        "se": batch.se,
        "test_stat": batch.test_stat,
        "p_value": batch.p_value,
        "ci_low": batch.ci_low,
        "ci_high": batch.ci_high,
        "converged": conv.copy(),
    }
    if est_ci is not None:
        out["ci_low"], out["ci_high"] = est_ci
    return out


def _cross_chunk(job) -> list[dict]:
    beta_c, delta, n, s2, cell_seed, start, stop, profile = job
    stats = stack_cross(
        [cross_stats(simulate_cross(n, beta_c, delta, s2, RngStream(cell_seed, i))) for i in range(start, stop)]
    )
    tt = fit_ttest_batch(stats)
    pr = fit_prop_nls_batch(stats)
    ci = None
    if profile:
        lo, hi, _, _ = profile_ci_nls_batch(stats, pr)
        ci = (lo, hi)
    return [_model_columns(tt), _model_columns(pr, ci)]


def _long_chunk(job) -> list[dict]:
    spec, cell_seed, start, stop, models = job
    ys = [simulate_long(spec, RngStream(cell_seed, i)).wide()[2] for i in range(start, stop)]
    y = np.stack(ys)
    n = spec.n_per_group
    stats = long_stats_from_arrays(spec.trend.visit_times, y[:, :n], y[:, n:])
    return [_model_columns(_LONG_FITTERS[m](stats)) for m in models]


_LONG_FITTERS = {"slope": fit_clda_slope_batch, "proportional": fit_clda_prop_batch}


def _run_jobs(fn, jobs, workers: int):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


def _chunks(reps: int):
    return [(s, min(s + CHUNK, reps)) for s in range(0, reps, CHUNK)]


def _cell_table(parts: list[list[dict]], models, meta: dict, truths) -> ReplicateTable:
    tables = []
    for k, model in enumerate(models):
        cols = {c: np.concatenate([p[k][c] for p in parts]) for c in parts[0][k]}
        reps = len(cols["estimate"])
        cols["replicate"] = np.arange(reps)
        cols["model"] = np.full(reps, model, dtype=object)
        cols["truth"] = np.full(reps, truths[k], dtype=float)
        cols["favors_active"] = cols["converged"] & (np.nan_to_num(cols["estimate"]) > 0)
        for key, val in meta.items():
            if key == "ci_kind" and isinstance(val, dict):
                val = val[model]
            dtype = object if isinstance(val, str) else float
            cols[key] = np.full(reps, val, dtype=dtype)
        tables.append(ReplicateTable({c: cols[c] for c in REPLICATE_COLUMNS}))
    return ReplicateTable.concat(tables)


# --- summaries ----------------------------------------------------------------


def _pct(x) -> float:
    return float(100.0 * x)


def _rates(t: ReplicateTable):
    reps = len(t)
    rej = t["converged"] & (np.nan_to_num(t["p_value"], nan=1.0) < ALPHA)
    rate = rej.mean() if reps else math.nan
    nrej = int(rej.sum())
    favor = (rej & t["favors_active"]).sum() / nrej if nrej else math.nan
    conv = t["converged"].mean() if reps else math.nan
    mcse = math.sqrt(rate * (1 - rate) / reps) if reps else math.nan
    ok = t["converged"] & np.isfinite(t["truth"])
    bias = float(np.mean(t["estimate"][ok] - t["truth"][ok])) if ok.any() else math.nan
    return rate, mcse, favor, conv, bias


def summarize_cross(table: ReplicateTable) -> SummaryTable:
    rows = []
    keys = zip(table["beta_c"].tolist(), table["delta"].tolist(), table["model"].tolist())
    for b, d, mdl in dict.fromkeys(keys):
        sub = table.where(beta_c=b, delta=d, model=mdl)
        rate, mcse, favor, conv, bias = _rates(sub)
        rows.append({
            "beta_c": b, "delta": d, "model": mdl, "n_replicates": len(sub),
            "rejection_rate": _pct(rate), "rejection_mcse": _pct(mcse),
            "favor_active_given_rejection": _pct(favor), "convergence_rate": _pct(conv), "mean_bias": bias,
        })
    return SummaryTable(CROSS_SCHEMA, CROSS_COLUMNS, rows)


def summarize_long(table: ReplicateTable) -> SummaryTable:
    rows = []
    for s, mdl in dict.fromkeys(zip(table["scenario"].tolist(), table["model"].tolist())):
        alt = table.where(scenario=s, model=mdl, hypothesis="alt")
        null = table.where(scenario=s, model=mdl, hypothesis="null")
        pa, pa_se, _, ca, bias = _rates(alt) if len(alt) else (math.nan,) * 5
        pn, pn_se, fn, cn, _ = _rates(null) if len(null) else (math.nan,) * 5
        rows.append({
            "scenario": str(s), "model": str(mdl), "n_replicates": max(len(alt), len(null)),
            "power": _pct(pa), "power_mcse": _pct(pa_se), "type1_error": _pct(pn), "type1_mcse": _pct(pn_se),
            "favor_active_null": _pct(fn), "convergence_alt": _pct(ca), "convergence_null": _pct(cn),
            "mean_bias": bias,
        })
    return SummaryTable(LONG_SCHEMA, LONG_COLUMNS, rows)


# --- experiments --------------------------------------------------------------


def cross_truths(beta_c: float, delta: float) -> tuple[float, float]:
    """True (delta, theta); theta = -delta / beta_c is undefined at beta_c = 0."""
    theta = -delta / beta_c if beta_c != 0 else math.nan
    return float(delta), float(theta) + 0.0


def run_cross_experiment(
    beta_c_grid,
    delta_grid,
    *,
    n_per_group: int = 50,
    residual_var: float = 1.0,
    reps: int = 10_000,
    master_seed: int = 0,
    workers: int = 1,
    profile_ci: bool = False,
) -> ExperimentResult:
    """t-test and proportional NLS on every (beta_c, delta) cell of the grid."""
    if reps < 1:
        raise ValueError("reps must be >= 1")
    jobs, cells = [], []
    for b in beta_c_grid:
        for d in delta_grid:
            b, d = float(b), float(d)
            seed = derive_seed(master_seed, f"cross/beta_c={b!r}/delta={d!r}")
            cells.append((b, d, len(jobs)))
            jobs += [(b, d, n_per_group, residual_var, seed, s, e, profile_ci) for s, e in _chunks(reps)]
    out = _run_jobs(_cross_chunk, jobs, workers)
    nchunk = len(_chunks(reps))
    tables = []
    for b, d, j0 in cells:
        meta = {
            "experiment": "cross", "scenario": "", "hypothesis": "null" if d == 0 else "alt",
            "beta_c": b, "delta": d,
            "ci_kind": {"ttest": "wald", "proportional": "profile" if profile_ci else "wald"},
        }
        tables.append(_cell_table(out[j0:j0 + nchunk], ("ttest", "proportional"), meta, cross_truths(b, d)))
    table = ReplicateTable.concat(tables)
    return ExperimentResult(summarize_cross(table), table)


def long_truths(spec) -> tuple[float, float]:
    """True (gamma, theta) of a scenario spec; theta is NaN where f_C = 0."""
    t = spec.trend
    gamma = (t.active_means[-1] - t.control_means[-1]) / t.visit_times[-1]
    theta = t.proportional_effect()[-1]
    return float(gamma), float(theta)


def run_long_experiment(
    scenarios=("A", "B", "C", "D"),
    *,
    schedule=None,
    horizon: float = DEFAULT_HORIZON,
    n_per_group: int = 200,
    residual_var: float = 1.5,
    intercept_var: float = 2.0,
    reps: int = 10_000,
    master_seed: int = 0,
    workers: int = 1,
    include_null: bool = True,
    models=("slope", "proportional"),
) -> ExperimentResult:
    """Slope and proportional mixed models per scenario, under the alternative and the null."""
    if reps < 1:
        raise ValueError("reps must be >= 1")
    models = tuple(models)
    if not models or any(m not in _LONG_FITTERS for m in models):
        raise ValueError(f"models must be drawn from {sorted(_LONG_FITTERS)}")
    jobs, cells = [], []
    for label in scenarios:
        for hyp in ("alt", "null") if include_null else ("alt",):
            spec = scenario_spec(
                label, schedule=schedule, horizon=horizon, n_per_group=n_per_group,
                residual_var=residual_var, intercept_var=intercept_var, null=hyp == "null",
            )
            sched = ",".join(repr(float(v)) for v in spec.schedule)
            seed = derive_seed(master_seed, f"long/{label}/{hyp}/n={n_per_group}/t={sched}")
            cells.append((label, hyp, spec, len(jobs)))
            jobs += [(spec, seed, s, e, models) for s, e in _chunks(reps)]
    out = _run_jobs(_long_chunk, jobs, workers)
    nchunk = len(_chunks(reps))
    tables = []
    for label, hyp, spec, j0 in cells:
        meta = {"experiment": "long", "scenario": label, "hypothesis": hyp, "beta_c": math.nan, "delta": math.nan, "ci_kind": "wald"}
        truth = dict(zip(("slope", "proportional"), long_truths(spec)))
        tables.append(_cell_table(out[j0:j0 + nchunk], models, meta, [truth[m] for m in models]))
    table = ReplicateTable.concat(tables)
    return ExperimentResult(summarize_long(table), table)


# --- zipper extracts ----------------------------------------------------------


@dataclass(frozen=True)
class ZipperRow:
    rank: int
    key: float
    record: ReplicateRecord


def zipper_select(records, truth: float, sort_key: str = "standardized_bias", fraction: float = 0.25) -> list[ZipperRow]:
    """Order replicate records for a zipper plot and keep the top ``fraction``.

    ``standardized_bias`` sorts by ``|estimate - truth| / se`` descending
    (records with a zero or undefined SE last); ``p_value`` sorts ascending.
    Ties keep the input order.
    """
    if isinstance(records, ReplicateTable):
        records = list(records.records())
    else:
        records = list(records)
    if not records:
        raise ValueError("no records to select from")
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    if sort_key in ("standardized_bias", "bias"):
        keys = []
        for r in records:
            z = abs(r.estimate - truth) / r.se if r.se > 0 else math.nan
            keys.append(z)
        order = sorted(range(len(records)), key=lambda i: (math.isnan(keys[i]), -keys[i] if not math.isnan(keys[i]) else 0.0))
    elif sort_key in ("p_value", "p"):
        keys = [r.p_value for r in records]
        order = sorted(range(len(records)), key=lambda i: (math.isnan(keys[i]), keys[i] if not math.isnan(keys[i]) else 0.0))
    else:
        raise ValueError(f"unknown sort key {sort_key!r}; use 'standardized_bias' or 'p_value'")
    keep = math.ceil(fraction * len(records))
    return [ZipperRow(rank, keys[i], records[i]) for rank, i in enumerate(order[:keep], start=1)]
