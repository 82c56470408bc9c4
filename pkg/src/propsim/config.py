"""Run configuration: JSON in, validated dataclass out.

Validation errors name the offending field and the line of the config file
where it appears.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import asdict, dataclass, field

from .datagen import (
    DEFAULT_BETA_C_GRID,
    DEFAULT_DELTA_GRID,
    DEFAULT_HORIZON,
    DEFAULT_SCHEDULE,
    SCENARIO_LABELS,
)

CROSS_KEYS = {"beta_c_grid", "delta_grid", "n_per_group", "residual_var", "profile_ci"}
LONG_KEYS = {"scenarios", "schedule", "horizon", "n_per_group", "residual_var", "intercept_var", "include_null"}
COMMON_KEYS = {"experiment", "reps", "master_seed", "workers", "output_dir", "plots", "description"}
PLOT_KEYS = {"kind", "file", "model", "sort", "fraction", "beta_c", "delta", "scenario", "hypothesis"}


class ConfigError(ValueError):
    pass


@dataclass
class PlotSpec:
    kind: str
    file: str
    model: str = "proportional"
    sort: str = "bias"
    fraction: float = 0.25
    beta_c: float | None = None
    delta: float | None = None
    scenario: str | None = None
    hypothesis: str | None = None


@dataclass
class RunConfig:
    experiment: str
    reps: int = 10_000
    master_seed: int = 0
    workers: int | None = None
    output_dir: str | None = None
    description: str = ""
    n_per_group: int | None = None
    residual_var: float | None = None
    beta_c_grid: list = field(default_factory=lambda: list(DEFAULT_BETA_C_GRID))
    delta_grid: list = field(default_factory=lambda: list(DEFAULT_DELTA_GRID))
    profile_ci: bool = False
    scenarios: list = field(default_factory=lambda: list(SCENARIO_LABELS))
    schedule: list = field(default_factory=lambda: list(DEFAULT_SCHEDULE))
    horizon: float | None = None
    intercept_var: float = 2.0
    include_null: bool = True
    plots: list = field(default_factory=list)

    def __post_init__(self):
        if self.n_per_group is None:
            self.n_per_group = 50 if self.experiment == "cross" else 200
        if self.residual_var is None:
            self.residual_var = 1.0 if self.experiment == "cross" else 1.5
        if self.horizon is None and self.experiment == "long":
            self.horizon = float(self.schedule[-1]) if self.schedule else DEFAULT_HORIZON

    def to_dict(self) -> dict:
        d = asdict(self)
        keep = COMMON_KEYS | (CROSS_KEYS if self.experiment == "cross" else LONG_KEYS)
        return {k: v for k, v in d.items() if k in keep and v is not None}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def _line_of(text: str, key: str) -> int | None:
    pat = re.compile(r'"' + re.escape(key) + r'"\s*:')
    for i, line in enumerate(text.splitlines(), start=1):
        if pat.search(line):
            return i
    return None


class _Checker:
    def __init__(self, text: str, source: str):
        self.text = text
        self.source = source

    def fail(self, key: str, msg: str):
        line = _line_of(self.text, key)
        where = f"{self.source}:{line}" if line else self.source
        raise ConfigError(f"{where}: field '{key}': {msg}")

    def integer(self, d, key, lo=None):
        v = d[key]
        if isinstance(v, bool) or not isinstance(v, int):
            self.fail(key, f"must be an integer, got {v!r}")
        if lo is not None and v < lo:
            self.fail(key, f"must be >= {lo}, got {v}")
        return v

    def number(self, d, key, positive=False, nonneg=False):
        v = d[key]
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            self.fail(key, f"must be a finite number, got {v!r}")
        if positive and not v > 0:
            self.fail(key, f"must be positive, got {v}")
        if nonneg and v < 0:
            self.fail(key, f"must be non-negative, got {v}")
        return float(v)

    def numbers(self, d, key, min_len=1):
        v = d[key]
        if not isinstance(v, list) or len(v) < min_len:
            self.fail(key, f"must be a list of at least {min_len} number(s)")
        for x in v:
            if isinstance(x, bool) or not isinstance(x, (int, float)) or not math.isfinite(x):
                self.fail(key, f"contains a non-numeric entry {x!r}")
        return [float(x) for x in v]

    def boolean(self, d, key):
        v = d[key]
        if not isinstance(v, bool):
            self.fail(key, f"must be true or false, got {v!r}")
        return v


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}: invalid JSON: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{source}:1: config must be a JSON object")
    ck = _Checker(text, source)
    if "experiment" not in raw:
        raise ConfigError(f"{source}:1: field 'experiment' is required (cross or long)")
    kind = raw["experiment"]
    if kind not in ("cross", "long"):
        ck.fail("experiment", f"must be 'cross' or 'long', got {kind!r}")
    allowed = COMMON_KEYS | (CROSS_KEYS if kind == "cross" else LONG_KEYS)
    for key in raw:
        if key not in allowed:
            ck.fail(key, f"unknown for a {kind} experiment")
    out = {"experiment": kind}
    if "reps" in raw:
        out["reps"] = ck.integer(raw, "reps", lo=1)
    if "master_seed" in raw:
        seed = ck.integer(raw, "master_seed", lo=0)
        if seed >= 2**64:
            ck.fail("master_seed", "must fit in 64 bits")
        out["master_seed"] = seed
    if raw.get("workers") is not None:
        out["workers"] = ck.integer(raw, "workers", lo=1)
    if raw.get("output_dir") is not None:
        if not isinstance(raw["output_dir"], str):
            ck.fail("output_dir", "must be a string")
        out["output_dir"] = raw["output_dir"]
    if "description" in raw:
        out["description"] = str(raw["description"])
    if "n_per_group" in raw:
        out["n_per_group"] = ck.integer(raw, "n_per_group", lo=2)
    if "residual_var" in raw:
        out["residual_var"] = ck.number(raw, "residual_var", positive=True)
    if kind == "cross":
        for key in ("beta_c_grid", "delta_grid"):
            if key in raw:
                out[key] = ck.numbers(raw, key)
        if "profile_ci" in raw:
            out["profile_ci"] = ck.boolean(raw, "profile_ci")
    else:
        if "scenarios" in raw:
            sc = raw["scenarios"]
            if not isinstance(sc, list) or not sc or any(s not in SCENARIO_LABELS for s in sc):
                ck.fail("scenarios", f"must be a non-empty list drawn from {list(SCENARIO_LABELS)}")
            out["scenarios"] = list(sc)
        if "schedule" in raw:
            sched = ck.numbers(raw, "schedule", min_len=2)
            if sched[0] != 0 or any(b <= a for a, b in zip(sched, sched[1:])):
                ck.fail("schedule", "must start at 0 and be strictly ascending")
            out["schedule"] = sched
        if "horizon" in raw:
            out["horizon"] = ck.number(raw, "horizon", positive=True)
        sched = out.get("schedule", list(DEFAULT_SCHEDULE))
        if out.get("horizon", sched[-1]) != sched[-1]:
            ck.fail("horizon", "must equal the last visit of the schedule")
        if "intercept_var" in raw:
            out["intercept_var"] = ck.number(raw, "intercept_var", nonneg=True)
        if "include_null" in raw:
            out["include_null"] = ck.boolean(raw, "include_null")
    if "plots" in raw:
        out["plots"] = _parse_plots(ck, raw["plots"], kind)
    return RunConfig(**out)


def _parse_plots(ck: _Checker, plots, kind: str) -> list[PlotSpec]:
    if not isinstance(plots, list):
        ck.fail("plots", "must be a list")
    out = []
    for i, p in enumerate(plots):
        if isinstance(p, str):
            p = {"kind": p}
        if not isinstance(p, dict) or p.get("kind") not in ("power", "zipper"):
            ck.fail("plots", f"entry {i}: kind must be 'power' or 'zipper'")
        bad = set(p) - PLOT_KEYS
        if bad:
            ck.fail("plots", f"entry {i}: unknown key(s) {sorted(bad)}")
        if p["kind"] == "power" and kind != "cross":
            ck.fail("plots", f"entry {i}: power plots need a cross experiment")
        spec = PlotSpec(kind=p["kind"], file=p.get("file", f"{p['kind']}.svg" if i == 0 else f"{p['kind']}-{i}.svg"))
        if p["kind"] == "zipper":
            spec.model = p.get("model", "proportional")
            spec.sort = p.get("sort", "bias")
            if spec.sort not in ("bias", "p"):
                ck.fail("sort", f"entry {i}: sort must be 'bias' or 'p'")
            spec.fraction = float(p.get("fraction", 0.25))
            if not 0 < spec.fraction <= 1:
                ck.fail("fraction", f"entry {i}: must be in (0, 1]")
            for key in ("beta_c", "delta"):
                if key in p:
                    setattr(spec, key, float(p[key]))
            spec.scenario = p.get("scenario")
            spec.hypothesis = p.get("hypothesis")
        out.append(spec)
    return out


def load_config(path: str) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return parse_config(text, path)
