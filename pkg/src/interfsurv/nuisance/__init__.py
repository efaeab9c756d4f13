"""Nuisance models: treatment law, event and censoring time distributions."""

from .base import ExposureQuery, GridSurvivalModel, HazardTableModel, PropensityModel, SurvivalModel
from .bundle import NO_FLOORS, S_FLOOR, Floors, LearnerConfig, NuisanceBundle, fit_bundle, oracle_learners
from .learners import fit_propensity, fit_survival

__all__ = [
    "ExposureQuery", "GridSurvivalModel", "HazardTableModel", "PropensityModel", "SurvivalModel",
    "NO_FLOORS", "S_FLOOR", "Floors", "LearnerConfig", "NuisanceBundle", "fit_bundle",
    "oracle_learners", "fit_propensity", "fit_survival",
]
