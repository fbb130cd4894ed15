"""Influence-curve based standard errors, Wald intervals and risk differences."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.stats import norm


@dataclass(frozen=True, eq=False)
class EicVector:
    """Per-subject efficient influence curve at ``(regime, t0)``.

    ``d0`` is ``Q*_0 - psi``; column ``k`` of ``components`` holds the weighted
    residual ``wt(k) (Q~_(k+1) - Q*_k)`` of each subject (0 if no row at ``k``).
    """

    subjects: np.ndarray
    d0: np.ndarray
    components: np.ndarray

    @property
    def values(self) -> np.ndarray:
        return self.d0 + self.components.sum(axis=1)

    @property
    def n(self) -> int:
        return int(self.d0.shape[0])

    def mean(self) -> float:
        return float(self.values.mean())


def eic(fit, weights=None) -> EicVector:
    """Assemble the influence curve from a completed TMLE fit.

    ``weights`` optionally replaces the row weights stored on the fit (for
    example with untruncated weights); by default the fit's own are used.
    """
    n = fit.n_subjects
    w = fit.row_weight if weights is None else np.asarray(weights, dtype=float)[fit.rows]
    resid = w * (fit.row_qtilde - fit.row_qstar)
    comps = np.zeros((n, fit.t0 + 1))
    np.add.at(comps, (fit.row_sid, fit.row_t), resid)
    return EicVector(subjects=fit.subjects, d0=fit.q_star0 - fit.psi_hat, components=comps)


@dataclass(frozen=True)
class WaldResult:
    estimate: float
    se: float
    ci_lo: float
    ci_hi: float
    ci_lo_raw: float
    ci_hi_raw: float
    level: float


def plugin_se(values: np.ndarray) -> float:
    """``sqrt(mean(D^2) / n)``."""
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        raise ValueError("need at least two subjects")
    return float(np.sqrt(np.mean(v * v) / v.size))


def wald(psi_hat: float, ic, level: float = 0.95, clip: bool = True, se: float | None = None) -> WaldResult:
    """Wald interval ``psi +/- z se``; ``ic`` is an :class:`EicVector` or array.

    With ``clip`` the reported bounds are clipped to ``[0, 1]``; the raw ones
    are kept alongside.
    """
    if se is None:
        values = ic.values if isinstance(ic, EicVector) else ic
        se = plugin_se(values)
    z = float(norm.ppf(0.5 + level / 2))
    lo, hi = psi_hat - z * se, psi_hat + z * se
    clo, chi = (max(lo, 0.0), min(hi, 1.0)) if clip else (lo, hi)
    return WaldResult(float(psi_hat), float(se), float(clo), float(chi), float(lo), float(hi), level)


@dataclass(frozen=True)
class RdResult:
    rd: float
    se: float
    ci_lo: float
    ci_hi: float
    eic: np.ndarray = field(repr=False, compare=False, default=None)


def risk_difference(fit1, fit2, eic1: EicVector | None = None, eic2: EicVector | None = None,
                    level: float = 0.95) -> RdResult:
    """``psi1 - psi2`` with the paired influence-curve difference for its SE."""
    if fit1.t0 != fit2.t0:
        raise ValueError("risk difference needs fits at the same horizon")
    if fit1.n_subjects != fit2.n_subjects or not np.array_equal(fit1.subjects, fit2.subjects):
        raise ValueError("risk difference needs fits on the same cohort")
    e1 = eic1 if eic1 is not None else fit1.eic
    e2 = eic2 if eic2 is not None else fit2.eic
    d = e1.values - e2.values
    rd = fit1.psi_hat - fit2.psi_hat
    w = wald(rd, d, level=level, clip=False)
    return RdResult(rd=rd, se=w.se, ci_lo=w.ci_lo, ci_hi=w.ci_hi, eic=d)


# --------------------------------------------------------------------------- report

@dataclass
class EstimateRow:
    estimator: str
    regime: str
    theta: float
    t0: int
    psi_hat: float
    se: float
    ci_lo: float
    ci_hi: float
    ci_lo_raw: float
    ci_hi_raw: float
    n: int
    se_method: str = "eic"

    @property
    def survival(self) -> float:
        return 1.0 - self.psi_hat


@dataclass
class RdRow:
    estimator: str
    regime1: str
    regime2: str
    t0: int
    rd_hat: float
    rd_se: float
    rd_ci_lo: float
    rd_ci_hi: float


@dataclass
class EstimateReport:
    estimates: list = field(default_factory=list)
    rds: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)
    weight_summaries: list = field(default_factory=list)
    errors: list = field(default_factory=list)

    def add_estimate(self, estimator: str, regime, t0: int, w: WaldResult, n: int, se_method="eic"):
        self.estimates.append(EstimateRow(
            estimator, regime.label, float(regime.theta), int(t0), w.estimate, w.se,
            w.ci_lo, w.ci_hi, w.ci_lo_raw, w.ci_hi_raw, int(n), se_method,
        ))

    def add_rd(self, estimator: str, r1, r2, t0: int, rd: RdResult):
        self.rds.append(RdRow(estimator, r1.label, r2.label, int(t0), rd.rd, rd.se, rd.ci_lo, rd.ci_hi))

    def to_dict(self) -> dict:
        return {
            "metadata": self.metadata,
            "estimates": [asdict(r) for r in self.estimates],
            "risk_differences": [asdict(r) for r in self.rds],
            "weight_summaries": self.weight_summaries,
            "errors": self.errors,
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True, default=_json_default)
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_dict(cls, d: dict) -> "EstimateReport":
        return cls(
            estimates=[EstimateRow(**r) for r in d.get("estimates", [])],
            rds=[RdRow(**r) for r in d.get("risk_differences", [])],
            metadata=d.get("metadata", {}),
            weight_summaries=d.get("weight_summaries", []),
            errors=d.get("errors", []),
        )

    @classmethod
    def from_json(cls, path) -> "EstimateReport":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def estimates_frame(self) -> pd.DataFrame:
        df = pd.DataFrame([asdict(r) for r in self.estimates])
        if not df.empty:
            df.insert(5, "survival", 1.0 - df["psi_hat"])
        return df

    def rd_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(r) for r in self.rds])

    def write_tables(self, outdir) -> list[Path]:
        """Flat estimate and RD tables plus one curve file per estimator/regime."""
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        paths = []
        est = self.estimates_frame()
        p = outdir / "estimates.csv"
        est.to_csv(p, index=False)
        paths.append(p)
        p = outdir / "risk_differences.csv"
        self.rd_frame().to_csv(p, index=False)
        paths.append(p)
        if self.weight_summaries:
            p = outdir / "weight_summary.csv"
            pd.DataFrame(self.weight_summaries).to_csv(p, index=False)
            paths.append(p)
        curves = outdir / "curves"
        curves.mkdir(exist_ok=True)
        if not est.empty:
            for (estimator, regime), g in est.groupby(["estimator", "regime"], sort=True):
                p = curves / f"{estimator}_{regime}.csv"
                g.sort_values("t0")[["t0", "psi_hat", "ci_lo", "ci_hi"]].rename(
                    columns={"psi_hat": "estimate", "ci_lo": "lo", "ci_hi": "hi"}).to_csv(p, index=False)
                paths.append(p)
        rd = self.rd_frame()
        if not rd.empty:
            for (estimator, r1, r2), g in rd.groupby(["estimator", "regime1", "regime2"], sort=True):
                p = curves / f"{estimator}_rd_{r1}_vs_{r2}.csv"
                g.sort_values("t0")[["t0", "rd_hat", "rd_ci_lo", "rd_ci_hi"]].rename(
                    columns={"rd_hat": "estimate", "rd_ci_lo": "lo", "rd_ci_hi": "hi"}).to_csv(p, index=False)
                paths.append(p)
        return paths


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")
