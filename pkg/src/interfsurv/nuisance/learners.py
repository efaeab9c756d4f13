"""Learner dispatch: build fitted nuisance models by name."""

from __future__ import annotations

from ..data import Dataset, TimeGrid
from ..errors import EmptyDataset


def fit_propensity(train: Dataset | None, learner: str = "logistic_penalized", seed: int = 0,
                   dgp=None, **params):
    """Fit the treatment model.  ``learner`` is "logistic_penalized" or "oracle"."""
    if learner == "oracle":
        from .oracle import OraclePropensity
        if dgp is None:
            raise ValueError("oracle propensity needs the simulation config")
        return OraclePropensity(dgp, **params)
    if train is None or train.m == 0:
        raise EmptyDataset("propensity learner needs training clusters")
    if learner in ("logistic_penalized", "logistic"):
        from .propensity import fit_logistic_propensity
        return fit_logistic_propensity(train, seed=seed, **params)
    raise ValueError(f"unknown propensity learner {learner!r}")


def fit_survival(train: Dataset | None, target: str, learner: str = "survival_forest",
                 grid: TimeGrid | None = None, seed: int = 0, dgp=None, **params):
    """Fit an event (``target="event"``) or censoring time model."""
    if target not in ("event", "censoring"):
        raise ValueError("target must be 'event' or 'censoring'")
    if learner == "oracle":
        from .oracle import OracleGamma
        if dgp is None:
            raise ValueError("oracle survival model needs the simulation config")
        return OracleGamma(dgp, target)
    if train is None or train.m == 0:
        raise EmptyDataset("survival learner needs training clusters")
    if grid is None:
        from ..data import build_time_grid
        grid = build_time_grid(train)
    if learner in ("survival_forest", "forest"):
        from .forest import fit_survival_forest
        return fit_survival_forest(train, target, grid, seed=seed, **params)
    if learner in ("discrete_hazard_logistic", "pooled_logistic"):
        from .pooled import fit_pooled_logistic
        return fit_pooled_logistic(train, target, grid, seed=seed, **params)
    raise ValueError(f"unknown survival learner {learner!r}")
