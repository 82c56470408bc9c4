"""Simulation study of proportional versus additive treatment-effect estimators."""

from .datagen import MeanTrend, ScenarioSpec, TrialDataset, scenario_spec, simulate_cross, simulate_long
from .harness import run_cross_experiment, run_long_experiment, zipper_select
from .lfit import MixedModelSpec, VarianceComponents, delta_method_prop, fit_clda_prop, fit_clda_slope, reml_criterion
from .xfit import FitResult, fit_prop_nls, fit_ttest, profile_ci_nls

__version__ = "0.1.0"

__all__ = [
    "FitResult",
    "MeanTrend",
    "MixedModelSpec",
    "ScenarioSpec",
    "TrialDataset",
    "VarianceComponents",
    "delta_method_prop",
    "fit_clda_prop",
    "fit_clda_slope",
    "fit_prop_nls",
    "fit_ttest",
    "profile_ci_nls",
    "reml_criterion",
    "run_cross_experiment",
    "run_long_experiment",
    "scenario_spec",
    "simulate_cross",
    "simulate_long",
    "zipper_select",
]
