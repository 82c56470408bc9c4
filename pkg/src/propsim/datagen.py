"""Generative truths and trial simulators.

Longitudinal scenarios A-D share one additive effect: the active-group
slope exceeds the control slope by 0.5 response units per 18 months.  The
control slopes are chosen so that the implied proportional effects are 2/3,
1 and 2 for A-C, while D has a flat control mean and no finite proportional
effect.  All means start from 0 at baseline (change-from-baseline scale).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .statcore import RngStream

CONTROL = 0
ACTIVE = 1

EFFECT_PER_18_MONTHS = 0.5
CONTROL_SLOPE_PER_18_MONTHS = {"A": -0.75, "B": -0.5, "C": -0.25, "D": 0.0}
SCENARIO_LABELS = tuple(CONTROL_SLOPE_PER_18_MONTHS)

DEFAULT_SCHEDULE = (0.0, 6.0, 12.0, 18.0)
DEFAULT_HORIZON = 18.0
# Quarterly visits to month 15: brings slope-model power to the 88% target
# at the default variance components (see README).
TABLE1_SCHEDULE = (0.0, 3.0, 6.0, 9.0, 12.0, 15.0)
TABLE1_HORIZON = 15.0

DEFAULT_DELTA_GRID = tuple(round(-0.6 + 0.15 * k, 2) for k in range(9))
DEFAULT_BETA_C_GRID = (0.0, -0.5, -1.0, -100.0)


@dataclass(frozen=True)
class MeanTrend:
    visit_times: tuple[float, ...]
    control_means: tuple[float, ...]
    active_means: tuple[float, ...]

    def __post_init__(self):
        t = tuple(float(v) for v in self.visit_times)
        c = tuple(float(v) for v in self.control_means)
        a = tuple(float(v) for v in self.active_means)
        object.__setattr__(self, "visit_times", t)
        object.__setattr__(self, "control_means", c)
        object.__setattr__(self, "active_means", a)
        if not (len(t) == len(c) == len(a)) or not t:
            raise ValueError("visit_times, control_means and active_means must have equal non-zero length")
        if t[0] != 0.0:
            raise ValueError("the first visit must be at time 0")
        if any(b <= a_ for a_, b in zip(t, t[1:])):
            raise ValueError("visit_times must be strictly ascending")
        if c[0] != a[0]:
            raise ValueError("control and active groups must share the baseline mean")

    def proportional_effect(self) -> np.ndarray:
        """(f_C - f_A) / f_C per visit; NaN where f_C = 0."""
        c = np.asarray(self.control_means)
        a = np.asarray(self.active_means)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(c != 0, (c - a) / c, np.nan)

    def null(self) -> "MeanTrend":
        """Same trend with the active group set equal to control."""
        return MeanTrend(self.visit_times, self.control_means, self.control_means)


@dataclass(frozen=True)
class ScenarioSpec:
    trend: MeanTrend
    n_per_group: int
    residual_var: float
    intercept_var: float
    label: str = "custom"

    def __post_init__(self):
        if not self.residual_var > 0:
            raise ValueError(f"residual_var must be positive, got {self.residual_var}")
        if not self.intercept_var >= 0:
            raise ValueError(f"intercept_var must be non-negative, got {self.intercept_var}")
        if int(self.n_per_group) != self.n_per_group or self.n_per_group < 2:
            raise ValueError(f"n_per_group must be an integer >= 2, got {self.n_per_group}")

    @property
    def schedule(self) -> tuple[float, ...]:
        return self.trend.visit_times


@dataclass(frozen=True)
class TrialDataset:
    """Long-format trial data: one row per subject and visit.

    ``group`` is 0 for control and 1 for active.
    """

    subject: np.ndarray
    group: np.ndarray
    time: np.ndarray
    response: np.ndarray
    _wide: tuple | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        n = len(self.response)
        if not (len(self.subject) == len(self.group) == len(self.time) == n):
            raise ValueError("all columns must have the same length")

    def __len__(self) -> int:
        return len(self.response)

    @property
    def schedule(self) -> np.ndarray:
        return np.unique(self.time)

    def rows(self):
        for s, g, t, y in zip(self.subject, self.group, self.time, self.response):
            yield int(s), ("control", "active")[int(g)], float(t), float(y)

    def wide(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(times, subject_group, Y)`` with ``Y[i, j]`` the response of subject i at visit j.

        Raises ValueError unless every subject has exactly one row per visit.
        """
        if self._wide is not None:
            return self._wide
        times = np.unique(self.time)
        subjects, s_idx = np.unique(self.subject, return_inverse=True)
        t_idx = np.searchsorted(times, self.time)
        n, m = len(subjects), len(times)
        counts = np.zeros((n, m), dtype=int)
        np.add.at(counts, (s_idx, t_idx), 1)
        if np.any(counts != 1):
            raise ValueError("dataset is not balanced and complete")
        y = np.empty((n, m))
        y[s_idx, t_idx] = self.response
        grp = np.full(n, -1)
        grp[s_idx] = self.group
        if np.any(grp[s_idx] != self.group):
            raise ValueError("a subject appears in both groups")
        return times, grp, y

    def shifted(self, c: float) -> "TrialDataset":
        return TrialDataset(self.subject, self.group, self.time, self.response + c)

    def swapped(self) -> "TrialDataset":
        """Same data with the control and active labels exchanged."""
        return TrialDataset(self.subject, 1 - self.group, self.time, self.response)

    def at_visit(self, t: float) -> "TrialDataset":
        keep = self.time == t
        return TrialDataset(self.subject[keep], self.group[keep], self.time[keep], self.response[keep])

    @classmethod
    def from_groups(cls, control, active, times=(0.0,)) -> "TrialDataset":
        """Build a dataset from per-group response matrices (subjects x visits)."""
        times = np.asarray(times, dtype=float)
        yc = np.asarray(control, dtype=float).reshape(-1, len(times))
        ya = np.asarray(active, dtype=float).reshape(-1, len(times))
        return _from_wide(times, yc, ya)


def _from_wide(times: np.ndarray, yc: np.ndarray, ya: np.ndarray) -> TrialDataset:
    nc, na, m = yc.shape[0], ya.shape[0], len(times)
    n = nc + na
    y = np.vstack([yc, ya])
    grp = np.repeat(np.array([CONTROL, ACTIVE], dtype=np.int8), [nc, na])
    subject = np.repeat(np.arange(n), m)
    data = TrialDataset(
        subject=subject,
        group=np.repeat(grp, m),
        time=np.tile(times, n),
        response=y.ravel(),
    )
    object.__setattr__(data, "_wide", (times, grp.astype(int), y))
    return data


def scenario_trends(label: str, horizon: float = DEFAULT_HORIZON, schedule=None) -> MeanTrend:
    """Linear mean trends through the origin for scenario A, B, C or D."""
    if label not in CONTROL_SLOPE_PER_18_MONTHS:
        raise ValueError(f"unknown scenario {label!r}; expected one of {', '.join(SCENARIO_LABELS)}")
    if schedule is None:
        if horizon != DEFAULT_HORIZON:
            raise ValueError("a schedule is required when the horizon is not 18 months")
        schedule = DEFAULT_SCHEDULE
    t = np.asarray(schedule, dtype=float)
    if t[0] != 0 or t[-1] != horizon:
        raise ValueError(f"schedule must start at 0 and end at the horizon ({horizon:g})")
    control = CONTROL_SLOPE_PER_18_MONTHS[label] * t / 18.0
    active = control + EFFECT_PER_18_MONTHS * t / 18.0
    return MeanTrend(tuple(t), tuple(control), tuple(active))


def scenario_spec(
    label: str,
    *,
    schedule=None,
    horizon: float = DEFAULT_HORIZON,
    n_per_group: int = 200,
    residual_var: float = 1.5,
    intercept_var: float = 2.0,
    null: bool = False,
) -> ScenarioSpec:
    trend = scenario_trends(label, horizon, schedule)
    if null:
        trend = trend.null()
    return ScenarioSpec(trend, n_per_group, residual_var, intercept_var, label)


def scenario_catalog(schedule=DEFAULT_SCHEDULE, horizon: float = DEFAULT_HORIZON) -> list[dict]:
    out = []
    for label in SCENARIO_LABELS:
        trend = scenario_trends(label, horizon, schedule)
        theta = trend.proportional_effect()[-1]
        out.append(
            {
                "label": label,
                "schedule": list(trend.visit_times),
                "control_slope_per_18_months": CONTROL_SLOPE_PER_18_MONTHS[label],
                "active_slope_per_18_months": CONTROL_SLOPE_PER_18_MONTHS[label] + EFFECT_PER_18_MONTHS,
                "control_means": list(trend.control_means),
                "active_means": list(trend.active_means),
                "proportional_effect": None if math.isnan(theta) else theta,
                "residual_var": 1.5,
                "intercept_var": 2.0,
                "n_per_group": 200,
            }
        )
    return out


def catalog_json(schedule=DEFAULT_SCHEDULE, horizon: float = DEFAULT_HORIZON) -> str:
    return json.dumps(scenario_catalog(schedule, horizon), indent=2)


def simulate_cross(n_per_group: int, beta_c: float, delta: float, residual_var: float, stream: RngStream) -> TrialDataset:
    """One cross-sectional trial: control ~ N(beta_c, s2), active ~ N(beta_c + delta, s2)."""
    if residual_var < 0:
        raise ValueError(f"residual_var must be non-negative, got {residual_var}")
    n = int(n_per_group)
    sd = math.sqrt(residual_var)
    z = stream.standard_normal(2 * n)
    yc = beta_c + sd * z[:n]
    ya = beta_c + delta + sd * z[n:]
    return _from_wide(np.zeros(1), yc[:, None], ya[:, None])


def simulate_long(spec: ScenarioSpec, stream: RngStream) -> TrialDataset:
    """One longitudinal trial with subject random intercepts.

    Draw order: all intercepts (control subjects first), then residuals
    subject by subject.
    """
    n = int(spec.n_per_group)
    t = np.asarray(spec.trend.visit_times)
    m = len(t)
    b = math.sqrt(spec.intercept_var) * stream.standard_normal(2 * n)
    e = math.sqrt(spec.residual_var) * stream.standard_normal((2 * n, m))
    mean = np.vstack([np.tile(spec.trend.control_means, (n, 1)), np.tile(spec.trend.active_means, (n, 1))])
    y = mean + b[:, None] + e
    return _from_wide(t, y[:n], y[n:])
