"""Bounded IPW comparator: weighted discrete-time hazards, one per interval.

``h(k) = sum wt(k) I(Y(k) = 1) / sum wt(k) I(at risk, uncensored at k)``.  As a
ratio of weighted sums each hazard lies in ``[0, 1]``, so the implied risk
``1 - prod (1 - h)`` is bounded and non-decreasing in the horizon.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data_model import CensCause, LongDataset
from .errors import PositivityError
from .propensity import WeightTable
from .regimes import Regime


@dataclass(eq=False)
class IpwFit:
    regime: Regime
    t0: int
    hazards: np.ndarray
    risk_curve: np.ndarray
    n_subjects: int
    truncation: float | None
    stabilized: bool
    weight_mass: np.ndarray
    boot_risks: np.ndarray | None = field(default=None, repr=False)

    @property
    def psi_hat(self) -> float:
        return float(self.risk_curve[self.t0])

    @property
    def survival(self) -> float:
        return 1.0 - self.psi_hat

    @property
    def se(self) -> float | None:
        """Bootstrap standard error of the risk at ``t0`` (if resampled)."""
        if self.boot_risks is None:
            return None
        b = self.boot_risks[:, self.t0]
        b = b[np.isfinite(b)]
        return float(np.std(b, ddof=1)) if b.size > 1 else float("nan")


def _row_terms(dataset: LongDataset, weights: WeightTable, t0: int):
    sel = (dataset.t <= t0) & (dataset.a_cens == CensCause.NONE)
    rows = np.flatnonzero(sel)
    return rows, dataset.t[rows], weights.weight[rows], (dataset.y[rows] == 1).astype(float)


def _hazards(t, w, y, t0):
    den = np.bincount(t, weights=w, minlength=t0 + 1)
    num = np.bincount(t, weights=w * y, minlength=t0 + 1)
    with np.errstate(invalid="ignore", divide="ignore"):
        h = num / den
    return h, den


def ipw_estimate(dataset: LongDataset, regime: Regime, weights: WeightTable, t0: int,
                 n_boot: int = 0, seed: int = 0) -> IpwFit:
    """Weighted hazards through ``t0`` and the implied cumulative risk.

    With ``n_boot > 0`` subjects are resampled with replacement (multinomial
    counts) and the hazard ratio recomputed with the weights held fixed.
    """
    if weights.regime != regime:
        raise ValueError(f"weights are for {weights.regime.label}, not {regime.label}")
    if t0 < 0 or t0 > dataset.max_t:
        raise ValueError(f"t0={t0} outside [0, {dataset.max_t}]")
    rows, t, w, y = _row_terms(dataset, weights, t0)
    h, den = _hazards(t, w, y, t0)
    empty = np.flatnonzero(~(den > 0))
    if empty.size:
        k = int(empty[0])
        raise PositivityError(f"zero weighted at-risk mass for {regime.label} at k={k}", k=k)
    risk = 1.0 - np.cumprod(1.0 - h)
    boot = None
    if n_boot > 0:
        rng = np.random.default_rng(seed)
        n = dataset.n_subjects
        sid = dataset.sid[rows]
        boot = np.empty((n_boot, t0 + 1))
        for b in range(n_boot):
            c = rng.multinomial(n, np.full(n, 1.0 / n))
            hb, denb = _hazards(t, w * c[sid], y, t0)
            boot[b] = np.where(denb > 0, 1.0 - np.cumprod(1.0 - np.nan_to_num(hb)), np.nan)
            if np.any(~(denb > 0)):
                boot[b, np.argmax(~(denb > 0)):] = np.nan
    return IpwFit(
        regime=regime, t0=t0, hazards=h, risk_curve=risk, n_subjects=dataset.n_subjects,
        truncation=weights.truncation, stabilized=weights.stabilized, weight_mass=den, boot_risks=boot,
    )
