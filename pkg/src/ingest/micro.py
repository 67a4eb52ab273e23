from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Union
import logging

import numpy as np
import pandas as pd

from src.core.errors import PanelValidationError
from src.core.panel_model import (
    EARNINGS_LABEL,
    UNEMPLOYMENT_LABEL,
    PanelCell,
    PanelDataset,
    TimeIndex,
)

logger = logging.getLogger(__name__)

MICRO_COLUMNS = ["occupation", "year", "month", "empstat", "weekly_earnings"]
DEFLATOR_BASE = TimeIndex(2010, 1)


class EmpStat(Enum):
    EMPLOYED = "employed"
    UNEMPLOYED = "unemployed"
    NILF = "nilf"


@dataclass(frozen=True)
class MicroRecord:
    """One person-month; weekly_earnings only for earnings-eligible (ORG) records"""
    occupation: str
    period: TimeIndex
    empstat: EmpStat
    weekly_earnings: Optional[float] = None

    def __post_init__(self):
        if self.weekly_earnings is not None and self.weekly_earnings < 0:
            raise PanelValidationError(
                f"negative weekly earnings {self.weekly_earnings} for '{self.occupation}' at {self.period}"
            )


@dataclass(frozen=True)
class DeflatorSeries:
    """Price index by month, normalized to 1 in January 2010"""
    index: Dict[TimeIndex, float]
    base: TimeIndex = DEFLATOR_BASE

    def __post_init__(self):
        for period, value in self.index.items():
            if not value > 0:
                raise PanelValidationError(f"deflator index must be positive, got {value} at {period}")
        if self.base not in self.index:
            raise PanelValidationError(f"deflator is missing base period {self.base}")
        if abs(self.index[self.base] - 1.0) > 1e-9:
            raise PanelValidationError(
                f"deflator base period {self.base} must equal 1, got {self.index[self.base]}"
            )

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> "DeflatorSeries":
        return cls({
            TimeIndex(int(y), int(m)): float(v)
            for y, m, v in zip(frame["year"], frame["month"], frame["index"])
        })

    def factor(self, period: TimeIndex) -> float:
        try:
            return self.index[period]
        except KeyError:
            raise PanelValidationError(f"deflator has no value for period {period}")


@dataclass(frozen=True)
class TopcodeRegime:
    cutover: TimeIndex = TimeIndex(2024, 4)
    fixed_threshold: float = 2884.0

    def __post_init__(self):
        if not self.fixed_threshold > 0:
            raise PanelValidationError(f"top-code threshold must be positive, got {self.fixed_threshold}")


@dataclass
class TopcodeReport:
    """Per-record flags (input order) and per-cell share of flagged earnings records"""
    flags: np.ndarray
    cell_share: pd.DataFrame = field(repr=False)


def records_frame(records: Union[List[MicroRecord], pd.DataFrame]) -> pd.DataFrame:
    """Normalize micro input to a frame with MICRO_COLUMNS"""
    if isinstance(records, pd.DataFrame):
        frame = records.loc[:, MICRO_COLUMNS].copy()
        frame["occupation"] = frame["occupation"].astype(str)
        frame["weekly_earnings"] = pd.to_numeric(frame["weekly_earnings"], errors="coerce")
        return frame
    return pd.DataFrame(
        [
            (r.occupation, r.period.year, r.period.month, r.empstat.value,
             np.nan if r.weekly_earnings is None else float(r.weekly_earnings))
            for r in records
        ],
        columns=MICRO_COLUMNS,
    )


def _panel_from_groups(grouped: pd.DataFrame, outcome_label: str) -> PanelDataset:
    cells = {
        (str(row.occupation), TimeIndex(int(row.year), int(row.month))): PanelCell(float(row.value), int(row.n_obs))
        for row in grouped.itertuples(index=False)
    }
    return PanelDataset.from_cells(cells, outcome_label)


def aggregate_unemployment(records: Union[List[MicroRecord], pd.DataFrame]) -> PanelDataset:
    """Unemployed over labor force per occupation-month; NILF records are excluded"""
    frame = records_frame(records)
    labor = frame[frame["empstat"].isin([EmpStat.EMPLOYED.value, EmpStat.UNEMPLOYED.value])]
    if labor.empty:
        logger.info("No labor-force records; returning empty unemployment panel")
        return PanelDataset.from_cells({}, UNEMPLOYMENT_LABEL)

    labor = labor.assign(unemployed=(labor["empstat"] == EmpStat.UNEMPLOYED.value).astype(np.int64))
    grouped = (
        labor.groupby(["occupation", "year", "month"], sort=True)["unemployed"]
        .agg(["sum", "count"])
        .reset_index()
    )
    grouped["value"] = grouped["sum"] / grouped["count"]
    grouped["n_obs"] = grouped["count"]
    panel = _panel_from_groups(grouped, UNEMPLOYMENT_LABEL)
    logger.info(f"Aggregated {len(labor)} labor-force records into {len(panel.cells)} unemployment cells")
    return panel


def aggregate_earnings(records: Union[List[MicroRecord], pd.DataFrame],
                       deflator: DeflatorSeries) -> PanelDataset:
    """Unweighted mean real weekly earnings (January-2010 dollars) per occupation-month"""
    frame = records_frame(records)
    earners = frame[frame["weekly_earnings"].notna()]
    if earners.empty:
        logger.info("No earnings records; returning empty earnings panel")
        return PanelDataset.from_cells({}, EARNINGS_LABEL)

    periods = earners[["year", "month"]].drop_duplicates()
    factors = {
        (int(y), int(m)): deflator.factor(TimeIndex(int(y), int(m)))
        for y, m in periods.itertuples(index=False)
    }
    keys = list(zip(earners["year"].astype(int), earners["month"].astype(int)))
    real = earners["weekly_earnings"].to_numpy(dtype=float) / np.array([factors[k] for k in keys])
    earners = earners.assign(real=real)

    grouped = (
        earners.groupby(["occupation", "year", "month"], sort=True)["real"]
        .agg(["mean", "count"])
        .reset_index()
        .rename(columns={"mean": "value", "count": "n_obs"})
    )
    panel = _panel_from_groups(grouped, EARNINGS_LABEL)
    logger.info(f"Aggregated {len(earners)} earnings records into {len(panel.cells)} earnings cells")
    return panel


def flag_topcoded(records: Union[List[MicroRecord], pd.DataFrame],
                  regime: TopcodeRegime = TopcodeRegime()) -> TopcodeReport:
    """Diagnostic top-code flags; values are never adjusted.

    Before the cutover a record is flagged at or above the fixed threshold.
    From the cutover on, the top code is a mean of top earners, so a record
    is flagged when it equals its month's maximum and at least two records
    share that value.
    """
    frame = records_frame(records).reset_index(drop=True)
    earnings = frame["weekly_earnings"]
    ordinal = frame["year"].astype(int) * 12 + frame["month"].astype(int) - 1
    post = ordinal >= regime.cutover.ordinal

    flags = pd.Series(False, index=frame.index)
    pre_mask = ~post & earnings.notna()
    flags.loc[pre_mask] = earnings[pre_mask] >= regime.fixed_threshold

    post_earners = frame[post & earnings.notna()]
    if not post_earners.empty:
        month_max = post_earners.groupby(["year", "month"])["weekly_earnings"].transform("max")
        at_max = post_earners["weekly_earnings"] == month_max
        max_count = at_max.groupby([post_earners["year"], post_earners["month"]]).transform("sum")
        flags.loc[post_earners.index] = at_max & (max_count >= 2)

    earners = frame[earnings.notna()].assign(flag=flags[earnings.notna()].astype(float))
    if earners.empty:
        share = pd.DataFrame(columns=["occupation", "year", "month", "topcode_share"])
    else:
        share = (
            earners.groupby(["occupation", "year", "month"], sort=True)["flag"]
            .mean()
            .reset_index()
            .rename(columns={"flag": "topcode_share"})
        )
    logger.info(f"Flagged {int(flags.sum())} of {int(earnings.notna().sum())} earnings records as top-coded")
    return TopcodeReport(flags=flags.to_numpy(dtype=bool), cell_share=share)
