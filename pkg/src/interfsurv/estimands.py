"""Outcome transforms and estimand specifications.

Every estimand is a signed sum of three building blocks evaluated under one
policy: ``mu`` (average outcome over the cluster), ``mu1`` and ``mu0``
(average outcome of units set to 1 or 0 with the others drawn from the
policy).  Contrasts such as the direct, spillover and overall effects are
differences of these blocks.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import UnsupportedPolicy


@dataclass(frozen=True)
class RiskAt:
    """R(T) = 1(T <= tau)."""

    tau: float

    def __post_init__(self):
        if not (np.isfinite(self.tau) and self.tau >= 0):
            raise ValueError("RiskAt horizon must be finite and nonnegative")

    def __call__(self, t):
        return (np.asarray(t, dtype=float) <= self.tau).astype(float)

    def tail(self, last_point: float) -> float:
        return 0.0

    @property
    def label(self) -> str:
        return f"risk@{self.tau:g}"


@dataclass(frozen=True)
class RMST:
    """R(T) = min(T, h)."""

    h: float

    def __post_init__(self):
        if not (np.isfinite(self.h) and self.h > 0):
            raise ValueError("RMST horizon must be finite and positive")

    def __call__(self, t):
        return np.minimum(np.asarray(t, dtype=float), self.h)

    def tail(self, last_point: float) -> float:
        return float(self.h)

    @property
    def label(self) -> str:
        return f"rmst@{self.h:g}"


@dataclass(frozen=True)
class Identity:
    """R(T) = T.  Mass beyond the last grid point is valued at that point."""

    def __call__(self, t):
        return np.asarray(t, dtype=float)

    def tail(self, last_point: float) -> float:
        return float(last_point)

    @property
    def label(self) -> str:
        return "identity"


TransformSpec = Union[RiskAt, RMST, Identity]

BLOCKS = ("mu", "mu1", "mu0")
KINDS = ("mu", "mu1", "mu0", "de", "se1", "se0", "oe")
TWO_POLICY = ("se1", "se0", "oe")


@dataclass(frozen=True)
class EstimandSpec:
    """Target estimand: kind, outcome transform, policy and reference policy."""

    kind: str
    transform: TransformSpec
    policy: object
    policy_ref: object = None

    def __post_init__(self):
        kind = self.kind.lower()
        object.__setattr__(self, "kind", kind)
        if kind not in KINDS:
            raise ValueError(f"unknown estimand kind {self.kind!r}")
        if kind in TWO_POLICY:
            if self.policy_ref is None:
                raise ValueError(f"{kind} needs a reference policy")
            if type(self.policy_ref) is not type(self.policy):
                raise UnsupportedPolicy("contrasts require two policies of the same family")
        elif self.policy_ref is not None:
            raise ValueError(f"{kind} takes a single policy")

    def components(self) -> list[tuple[float, str, object]]:
        """Signed building blocks (coefficient, block, policy)."""
        k, q, q2 = self.kind, self.policy, self.policy_ref
        if k in BLOCKS:
            return [(1.0, k, q)]
        if k == "de":
            return [(1.0, "mu1", q), (-1.0, "mu0", q)]
        if k == "se1":
            return [(1.0, "mu1", q), (-1.0, "mu1", q2)]
        if k == "se0":
            return [(1.0, "mu0", q), (-1.0, "mu0", q2)]
        return [(1.0, "mu", q), (-1.0, "mu", q2)]

    @property
    def label(self) -> str:
        s = f"{self.kind}[{self.policy.label}"
        if self.policy_ref is not None:
            s += f" vs {self.policy_ref.label}"
        return s + f"; {self.transform.label}]"
