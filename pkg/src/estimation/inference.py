from dataclasses import dataclass
from typing import Sequence, Tuple
import logging

import numpy as np
import pandas as pd
import statsmodels.api as sm
from scipy import stats

from src.core.errors import EstimationError

logger = logging.getLogger(__name__)


@dataclass
class TwoWayFit:
    """Two-way fixed-effects WLS fit; effects are relative to the first unit and first period"""
    coef: np.ndarray
    vcov: np.ndarray
    intercept: float
    unit_effects: np.ndarray
    period_effects: np.ndarray
    n_clusters: int


def _dummies(index: np.ndarray) -> np.ndarray:
    return pd.get_dummies(pd.Categorical(index), drop_first=True, dtype=float).to_numpy()


def _within_unit(columns: np.ndarray, unit_idx: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Subtract each unit's weighted mean (exact one-way within transformation)"""
    frame = pd.DataFrame(columns * weights[:, None])
    mass = pd.Series(weights).groupby(unit_idx).transform("sum").to_numpy()
    means = frame.groupby(unit_idx).transform("sum").to_numpy() / mass[:, None]
    return columns - means


def fit_two_way_wls(y: np.ndarray, regressors: np.ndarray, unit_idx: np.ndarray, period_idx: np.ndarray,
                    weights: np.ndarray, names: Sequence = ()) -> TwoWayFit:
    """WLS of ``y`` on ``regressors`` with unit and period effects, clustered by unit.

    Unit effects are absorbed by the within transformation and period effects
    enter as dummies. The statsmodels cluster sandwich is rescaled so that its
    small-sample factor G/(G-1) * (N-1)/(N-K) counts the absorbed unit effects in K.
    """
    y = np.asarray(y, dtype=float)
    weights = np.asarray(weights, dtype=float)
    regressors = np.asarray(regressors, dtype=float)
    if regressors.ndim == 1:
        regressors = regressors[:, None]
    n, k = regressors.shape
    period_dummies = _dummies(period_idx)
    X = np.column_stack([regressors, period_dummies])

    demeaned = _within_unit(np.column_stack([y, X]), unit_idx, weights)
    model = sm.WLS(demeaned[:, 0], demeaned[:, 1:], weights=weights)
    if np.linalg.matrix_rank(model.wexog) < X.shape[1]:
        raise EstimationError(f"treatment not identified (collinear with fixed effects): {list(names)}")

    n_clusters = len(np.unique(unit_idx))
    n_params = X.shape[1] + n_clusters
    if n > n_params:
        result = model.fit(cov_type="cluster", cov_kwds={"groups": np.asarray(unit_idx)})
        dof_rescale = (n - X.shape[1]) / (n - n_params)
        vcov = dof_rescale * np.asarray(result.cov_params())[:k, :k]
    else:
        logger.warning(f"No residual degrees of freedom (N={n}, K={n_params}); standard errors set to 0")
        result = model.fit()
        vcov = np.zeros((k, k))

    params = np.asarray(result.params)
    residual = (y - X @ params)[:, None]
    unit_means = (residual - _within_unit(residual, unit_idx, weights))[:, 0]
    alpha = pd.Series(unit_means).groupby(unit_idx).first().to_numpy()
    return TwoWayFit(
        coef=params[:k],
        vcov=vcov,
        intercept=float(alpha[0]),
        unit_effects=alpha - alpha[0],
        period_effects=np.concatenate([[0.0], params[k:]]),
        n_clusters=n_clusters,
    )


def weighted_mean_se(values: np.ndarray, weights: np.ndarray) -> Tuple[float, float]:
    """Weighted mean with a heteroskedasticity-robust SE (NaN below two observations)"""
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if len(values) < 2:
        return float(np.average(values, weights=weights)), float("nan")
    result = sm.WLS(values, np.ones(len(values)), weights=weights).fit(
        cov_type="cluster", cov_kwds={"groups": np.arange(len(values))}
    )
    return float(result.params[0]), float(result.bse[0])


def normal_interval(estimate: float, se: float, level: float = 0.95) -> Tuple[float, float]:
    z = stats.norm.ppf(0.5 + level / 2)
    return estimate - z * se, estimate + z * se
