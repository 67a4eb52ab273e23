from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple
import logging

import numpy as np
import pandas as pd

from src.core.errors import EstimationError, PanelValidationError
from src.core.panel_model import PanelDataset, TimeIndex, TreatmentSpec
from src.estimation.inference import TwoWayFit, fit_two_way_wls, normal_interval

logger = logging.getLogger(__name__)

OMITTED_K = -1


@dataclass
class TwfeFit:
    """Two-way fixed-effects fit; the first unit and first period effects are normalized to 0"""
    beta: float
    se_clustered: float
    n_cells: int
    alpha: Dict[str, float]
    delta: Dict[TimeIndex, float]
    intercept: float = 0.0
    n_clusters: int = 0
    weighted: bool = True

    def summary(self) -> Dict:
        lo, hi = normal_interval(self.beta, self.se_clustered)
        return {
            "beta": self.beta,
            "se_clustered": self.se_clustered,
            "ci_lo": lo,
            "ci_hi": hi,
            "n_cells": self.n_cells,
            "n_clusters": self.n_clusters,
            "weighted": self.weighted,
        }


@dataclass
class EventStudyFit:
    """Relative-period coefficients; k = -1 is the omitted reference and never estimated"""
    coefficients: Dict[int, Tuple[float, float]]
    omitted_k: int = OMITTED_K
    n_cells: int = 0
    n_clusters: int = 0
    weighted: bool = True

    def to_frame(self, level: float = 0.95) -> pd.DataFrame:
        rows = []
        for k in sorted(self.coefficients):
            beta, se = self.coefficients[k]
            lo, hi = normal_interval(beta, se, level)
            rows.append((k, beta, se, lo, hi))
        return pd.DataFrame(rows, columns=["k", "beta", "se", "ci_lo", "ci_hi"])

    def pre_coefficients(self) -> Dict[int, Tuple[float, float]]:
        return {k: v for k, v in self.coefficients.items() if k < 0}


@dataclass
class _Design:
    """Present cells of the estimation sample in long form"""
    units: List[str]
    periods: List[TimeIndex]
    unit_idx: np.ndarray
    period_idx: np.ndarray
    y: np.ndarray
    weights: np.ndarray
    relative: np.ndarray = field(repr=False)


def _build_design(panel: PanelDataset, units: Sequence[str], onset: TimeIndex,
                  weight_by_nobs: bool) -> _Design:
    sample = panel.subset(units) if set(units) != set(panel.units) else panel
    unit_idx, period_idx, y, n_obs = sample.long_arrays()
    if len(y) == 0:
        raise EstimationError("estimation sample has no observed cells")

    # compact to units and periods that actually appear
    used_units, unit_idx = np.unique(unit_idx, return_inverse=True)
    used_periods, period_idx = np.unique(period_idx, return_inverse=True)
    periods = [sample.periods[p] for p in used_periods]
    relative = np.array([p.months_since(onset) for p in periods], dtype=np.int64)[period_idx]
    return _Design(
        units=[sample.units[u] for u in used_units],
        periods=periods,
        unit_idx=unit_idx,
        period_idx=period_idx,
        y=y,
        weights=n_obs if weight_by_nobs else np.ones_like(y),
        relative=relative,
    )


def _solve(design: _Design, regressors: np.ndarray, names: Sequence) -> Tuple[np.ndarray, np.ndarray, TwoWayFit]:
    """Two-way fixed-effects WLS with unit-clustered variance; returns (coef, vcov, full fit)"""
    fit = fit_two_way_wls(design.y, regressors, design.unit_idx, design.period_idx, design.weights, names)
    return fit.coef, fit.vcov, fit


def _normalized_effects(design: _Design, fit: TwoWayFit) -> Tuple[float, Dict[str, float], Dict[TimeIndex, float]]:
    return (
        fit.intercept,
        {u: float(a) for u, a in zip(design.units, fit.unit_effects)},
        {t: float(d) for t, d in zip(design.periods, fit.period_effects)},
    )


def _check_support(design: _Design, treated_mask: np.ndarray) -> None:
    post = design.relative >= 0
    for label, mask in [("treated pre", treated_mask & ~post), ("treated post", treated_mask & post),
                        ("control pre", ~treated_mask & ~post), ("control post", ~treated_mask & post)]:
        if not mask.any():
            raise EstimationError(f"treatment not identified: no {label} cells")


def twfe_did(panel: PanelDataset, spec: TreatmentSpec, weight_by_nobs: bool = True) -> TwfeFit:
    """ATT from Y_it = alpha_i + delta_t + beta * W_it with unit-clustered SEs"""
    spec.validate(panel)
    units = sorted(spec.treated | spec.controls)
    design = _build_design(panel, units, spec.onset, weight_by_nobs)
    treated_mask = np.array([design.units[u] in spec.treated for u in design.unit_idx])
    _check_support(design, treated_mask)

    w = (treated_mask & (design.relative >= 0)).astype(float)
    coef, vcov, two_way = _solve(design, w[:, None], ["W"])
    intercept, alpha, delta = _normalized_effects(design, two_way)

    fit = TwfeFit(
        beta=float(coef[0]),
        se_clustered=float(np.sqrt(max(vcov[0, 0], 0.0))),
        n_cells=len(design.y),
        alpha=alpha,
        delta=delta,
        intercept=intercept,
        n_clusters=len(design.units),
        weighted=weight_by_nobs,
    )
    logger.info(
        f"TWFE DiD on {fit.n_cells} cells ({len(spec.treated)} treated, {len(spec.controls)} controls): "
        f"beta={fit.beta:.6g} se={fit.se_clustered:.6g}"
    )
    return fit


def _event_columns(design: _Design, intensity: np.ndarray) -> Tuple[List[int], np.ndarray]:
    if OMITTED_K not in set(design.relative.tolist()):
        raise PanelValidationError("event study needs the period just before onset (k = -1) in the panel")
    n_pre = len({k for k in design.relative.tolist() if k < 0})
    if n_pre < 2:
        raise EstimationError("event study needs at least 2 pre-periods; a single pre-period has no pre-trend content")

    active = intensity != 0
    ks = sorted({int(k) for k in design.relative[active].tolist()} - {OMITTED_K})
    columns = np.zeros((len(design.y), len(ks)))
    for j, k in enumerate(ks):
        columns[:, j] = np.where(design.relative == k, intensity, 0.0)
    return ks, columns


def _event_fit(design: _Design, intensity: np.ndarray, weight_by_nobs: bool) -> EventStudyFit:
    ks, columns = _event_columns(design, intensity)
    coef, vcov, _ = _solve(design, columns, ks)
    se = np.sqrt(np.clip(np.diag(vcov), 0.0, None))
    return EventStudyFit(
        coefficients={k: (float(b), float(s)) for k, b, s in zip(ks, coef, se)},
        n_cells=len(design.y),
        n_clusters=len(design.units),
        weighted=weight_by_nobs,
    )


def event_study(panel: PanelDataset, spec: TreatmentSpec, weight_by_nobs: bool = True) -> EventStudyFit:
    """One coefficient per month relative to onset, k = -1 omitted"""
    spec.validate(panel)
    units = sorted(spec.treated | spec.controls)
    design = _build_design(panel, units, spec.onset, weight_by_nobs)
    treated_mask = np.array([design.units[u] in spec.treated for u in design.unit_idx])
    _check_support(design, treated_mask)

    fit = _event_fit(design, treated_mask.astype(float), weight_by_nobs)
    logger.info(f"Event study with {len(fit.coefficients)} relative-period coefficients on {fit.n_cells} cells")
    return fit


def _exposure_intensity(panel: PanelDataset, exposure: Mapping[str, float], design: _Design) -> np.ndarray:
    missing = [u for u in panel.units if u not in exposure]
    if missing:
        raise PanelValidationError(f"exposure missing for {len(missing)} panel units, e.g. '{missing[0]}'")
    values = np.array([float(exposure[u]) for u in design.units])
    if np.ptp(values) == 0:
        raise EstimationError("exposure has zero variance across units; collinear with time fixed effects")
    return values[design.unit_idx]


def continuous_did(panel: PanelDataset, exposure: Mapping[str, float], onset: TimeIndex,
                   weight_by_nobs: bool = True) -> TwfeFit:
    """Coefficient on exposure x post in the TWFE model"""
    panel.require_estimable()
    if not panel.periods[0] < onset <= panel.periods[-1]:
        raise PanelValidationError(f"onset {onset} must leave pre and post periods in the panel")
    design = _build_design(panel, list(panel.units), onset, weight_by_nobs)
    intensity = _exposure_intensity(panel, exposure, design)

    x = intensity * (design.relative >= 0)
    coef, vcov, two_way = _solve(design, x[:, None], ["exposure_x_post"])
    intercept, alpha, delta = _normalized_effects(design, two_way)
    fit = TwfeFit(
        beta=float(coef[0]),
        se_clustered=float(np.sqrt(max(vcov[0, 0], 0.0))),
        n_cells=len(design.y),
        alpha=alpha,
        delta=delta,
        intercept=intercept,
        n_clusters=len(design.units),
        weighted=weight_by_nobs,
    )
    logger.info(f"Continuous-exposure DiD: beta={fit.beta:.6g} se={fit.se_clustered:.6g}")
    return fit


def continuous_event_study(panel: PanelDataset, exposure: Mapping[str, float], onset: TimeIndex,
                           weight_by_nobs: bool = True) -> EventStudyFit:
    panel.require_estimable()
    if not panel.periods[0] < onset <= panel.periods[-1]:
        raise PanelValidationError(f"onset {onset} must leave pre and post periods in the panel")
    design = _build_design(panel, list(panel.units), onset, weight_by_nobs)
    intensity = _exposure_intensity(panel, exposure, design)
    return _event_fit(design, intensity, weight_by_nobs)
