from typing import Dict, Iterable, Mapping
import logging

import numpy as np
import pandas as pd

from src.core.errors import PanelValidationError
from src.core.panel_model import PanelDataset, TimeIndex
from src.estimation.inference import normal_interval, weighted_mean_se

logger = logging.getLogger(__name__)

TREND_COLUMNS = ["quartile", "year", "month", "mean", "ci_lo", "ci_hi", "n_units"]


def quartile_trends(panel: PanelDataset, quartiles: Mapping[str, int]) -> pd.DataFrame:
    """Per quartile and month: weighted mean outcome with a 95% interval, plot-ready"""
    frame = panel.to_frame()
    frame["quartile"] = frame["unit"].map(quartiles)
    unmatched = frame["quartile"].isna().sum()
    if unmatched:
        logger.warning(f"{unmatched} cells belong to occupations without an exposure quartile; dropped")
    frame = frame.dropna(subset=["quartile"])

    rows = []
    for (quartile, year, month), group in frame.groupby(["quartile", "year", "month"], sort=True):
        mean, se = weighted_mean_se(group["value"].to_numpy(), group["n_obs"].to_numpy(dtype=float))
        lo, hi = normal_interval(mean, se) if np.isfinite(se) else (np.nan, np.nan)
        rows.append((int(quartile), int(year), int(month), mean, lo, hi, len(group)))
    return pd.DataFrame(rows, columns=TREND_COLUMNS)


def window_means(panel: PanelDataset, groups: Mapping[str, Iterable[str]],
                 start: TimeIndex, end: TimeIndex) -> Dict[str, float]:
    """n_obs-weighted mean outcome of each group over cells in [start, end]"""
    if end < start:
        raise PanelValidationError(f"window end {end} precedes start {start}")
    out = {}
    for label, units in groups.items():
        units = set(units)
        cells = [
            c for (u, t), c in panel.cells.items()
            if u in units and start <= t <= end
        ]
        if not cells:
            out[label] = float("nan")
            continue
        weights = np.array([c.n_obs for c in cells], dtype=float)
        values = np.array([c.value for c in cells])
        out[label] = float(weights @ values / weights.sum())
    return out


def change_since_onset(panel: PanelDataset, groups: Mapping[str, Iterable[str]],
                       onset: TimeIndex, end: TimeIndex) -> Dict[str, float]:
    """Weighted mean at the last observed month <= end minus the weighted mean at onset"""
    last = max((t for t in panel.periods if t <= end), default=None)
    if last is None or onset not in panel.periods:
        raise PanelValidationError(f"panel must contain the onset {onset} and a month up to {end}")
    at_onset = window_means(panel, groups, onset, onset)
    at_end = window_means(panel, groups, last, last)
    return {label: at_end[label] - at_onset[label] for label in groups}
