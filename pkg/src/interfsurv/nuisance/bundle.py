"""Nuisance bundles and learner configuration."""

from __future__ import annotations

from dataclasses import dataclass, field

from ..data import ClusterObservation, Dataset, TimeGrid
from ..errors import FoldViolation
from ..policies import PI_FLOOR, ClusterPolicyContext
from .base import PropensityModel, SurvivalModel

S_FLOOR = 0.05


@dataclass(frozen=True)
class Floors:
    """Lower bounds applied at evaluation: propensities, survival curves."""

    pi: float = PI_FLOOR
    s: float = S_FLOOR


NO_FLOORS = Floors(0.0, 0.0)


@dataclass(frozen=True, eq=False)
class NuisanceBundle:
    """Propensity, event and censoring models fitted outside one fold."""

    propensity: PropensityModel
    event: SurvivalModel
    censor: SurvivalModel
    fold: int = 0
    train_ids: frozenset = field(default_factory=frozenset)
    floors: Floors = field(default_factory=Floors)

    def check(self, cluster: ClusterObservation) -> None:
        if cluster.cluster_id in self.train_ids:
            raise FoldViolation(
                f"cluster {cluster.cluster_id!r} was used to train the fold-{self.fold} bundle")

    def context(self, cluster: ClusterObservation) -> ClusterPolicyContext:
        return ClusterPolicyContext.from_model(self.propensity.allocation(cluster.x),
                                               cluster.x, self.floors.pi)


@dataclass(frozen=True)
class LearnerConfig:
    """Which learners to fit and their settings.

    propensity: "logistic_penalized" or "oracle"; survival: "survival_forest",
    "discrete_hazard_logistic" or "oracle".  ``dgp`` is required by the oracle.
    """

    propensity: str = "logistic_penalized"
    survival: str = "survival_forest"
    propensity_params: dict = field(default_factory=dict)
    survival_params: dict = field(default_factory=dict)
    censor_params: dict | None = None
    floors: Floors | None = None
    dgp: object = None

    @property
    def is_oracle(self) -> bool:
        return self.propensity == "oracle" and self.survival == "oracle"


def oracle_learners(cfg) -> LearnerConfig:
    return LearnerConfig("oracle", "oracle", dgp=cfg, floors=NO_FLOORS)


def fit_bundle(train: Dataset | None, grid: TimeGrid | None, learners: LearnerConfig,
               fold: int = 0, seed: int = 0) -> NuisanceBundle:
    """Fit the three nuisance models on ``train`` (ignored by oracle learners)."""
    from .learners import fit_propensity, fit_survival

    prop = fit_propensity(train, learners.propensity, seed=seed, dgp=learners.dgp,
                          **learners.propensity_params)
    event = fit_survival(train, "event", learners.survival, grid, seed=seed + 1,
                         dgp=learners.dgp, **learners.survival_params)
    cparams = learners.survival_params if learners.censor_params is None else learners.censor_params
    censor = fit_survival(train, "censoring", learners.survival, grid, seed=seed + 2,
                          dgp=learners.dgp, **cparams)
    floors = learners.floors
    if floors is None:
        floors = NO_FLOORS if learners.is_oracle else Floors()
    ids = frozenset() if train is None or learners.is_oracle else \
        frozenset(c.cluster_id for c in train.clusters)
    return NuisanceBundle(prop, event, censor, fold, ids, floors)
