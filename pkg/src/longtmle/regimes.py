"""Dynamic threshold rules and their implied counterfactual treatment paths."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data_model import LongDataset

DEFAULT_THETAS = (7.0, 7.5, 8.0, 8.5)


@dataclass(frozen=True)
class Regime:
    """Intensify at the first interval the biomarker exceeds ``theta``, then stay.

    ``theta = -inf`` is always-treat and ``theta = +inf`` never-treat.  With
    ``threshold_inclusive`` the trigger is ``biomarker >= theta``.
    """

    theta: float
    biomarker: str = "a1c"
    threshold_inclusive: bool = False
    name: str | None = None

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        if math.isinf(self.theta):
            return "always" if self.theta < 0 else "never"
        return f"d{self.theta:g}"

    def triggered(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        if self.threshold_inclusive:
            return values >= self.theta
        return values > self.theta

    def next_action(self, biomarker_value, prev_action):
        """Vectorized one-step rule ``d_theta,t(L(t), A(t-1))``."""
        return np.where(np.asarray(prev_action) == 1, 1, self.triggered(biomarker_value).astype(int))

    @classmethod
    def from_config(cls, cfg: dict) -> "Regime":
        return cls(
            theta=float(cfg["theta"]),
            biomarker=cfg.get("biomarker", "a1c"),
            threshold_inclusive=bool(cfg.get("threshold_inclusive", False)),
            name=cfg.get("name"),
        )


@dataclass(frozen=True)
class RulePath:
    """Row-aligned rule-implied treatment ``A^theta(k)`` and ``I(A-bar(k) = A-bar^theta(k))``."""

    regime: Regime
    a_theta: np.ndarray
    follows: np.ndarray

    def for_subject(self, dataset: LongDataset, s: int) -> tuple[np.ndarray, np.ndarray]:
        sl = slice(dataset.start[s], dataset.start[s] + dataset.length[s])
        return self.a_theta[sl], self.follows[sl]


def rule_path(dataset: LongDataset, regime: Regime) -> RulePath:
    biomarker = dataset.column(regime.biomarker)
    # absorbing rule: intensified from the first trigger onward
    trig = regime.triggered(biomarker).astype(np.int64)
    a_theta = (dataset.within_subject_cumsum(trig) > 0).astype(np.int64)
    mismatch = (dataset.a_treat != a_theta).astype(np.int64)
    follows = (dataset.within_subject_cumsum(mismatch) == 0).astype(np.int64)
    return RulePath(regime=regime, a_theta=a_theta, follows=follows)
