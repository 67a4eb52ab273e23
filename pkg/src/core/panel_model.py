from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple
import logging

import numpy as np
import pandas as pd

from src.core.errors import PanelValidationError

logger = logging.getLogger(__name__)

UNEMPLOYMENT_LABEL = "unemployment_rate"
EARNINGS_LABEL = "real_weekly_earnings"
PANEL_COLUMNS = ["unit", "year", "month", "value", "n_obs"]


@dataclass(frozen=True, order=True)
class TimeIndex:
    """Calendar month, ordered by (year, month)"""
    year: int
    month: int

    def __post_init__(self):
        if not 1 <= self.month <= 12:
            raise PanelValidationError(f"month must be in 1..12, got {self.month}")

    @property
    def ordinal(self) -> int:
        return self.year * 12 + (self.month - 1)

    @classmethod
    def from_ordinal(cls, ordinal: int) -> "TimeIndex":
        return cls(ordinal // 12, ordinal % 12 + 1)

    def months_since(self, other: "TimeIndex") -> int:
        return self.ordinal - other.ordinal

    def shift(self, months: int) -> "TimeIndex":
        return TimeIndex.from_ordinal(self.ordinal + months)

    @classmethod
    def parse(cls, text: str) -> "TimeIndex":
        """Parse 'YYYY-MM'"""
        try:
            year, month = text.strip().split("-")
            return cls(int(year), int(month))
        except (ValueError, AttributeError):
            raise PanelValidationError(f"expected YYYY-MM period, got '{text}'")

    def __str__(self) -> str:
        return f"{self.year:04d}-{self.month:02d}"


# ChatGPT was released at the end of November 2022; December is the first treated month.
DEFAULT_ONSET = TimeIndex(2022, 12)


def month_range(start: TimeIndex, end: TimeIndex) -> List[TimeIndex]:
    return [TimeIndex.from_ordinal(o) for o in range(start.ordinal, end.ordinal + 1)]


@dataclass(frozen=True)
class PanelCell:
    value: float
    n_obs: int

    def __post_init__(self):
        if self.n_obs < 1:
            raise PanelValidationError(f"present cells need n_obs >= 1, got {self.n_obs}")
        if not np.isfinite(self.value):
            raise PanelValidationError(f"cell value must be finite, got {self.value}")


@dataclass(frozen=True)
class PanelDataset:
    """Unit-by-month grid of outcomes; missing cells are absent, never zero.

    Construction validates key references and period ordering. The 2x2
    minimum needed by the estimators is enforced by ``require_estimable`` so
    that aggregation can still hand back small or empty panels.
    """
    units: Tuple[str, ...]
    periods: Tuple[TimeIndex, ...]
    cells: Mapping[Tuple[str, TimeIndex], PanelCell]
    outcome_label: str
    _unit_pos: Dict[str, int] = field(init=False, repr=False, compare=False)
    _period_pos: Dict[TimeIndex, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "units", tuple(self.units))
        object.__setattr__(self, "periods", tuple(self.periods))
        object.__setattr__(self, "cells", dict(self.cells))

        for unit in self.units:
            if not unit:
                raise PanelValidationError("unit ids must be non-empty")
        if len(set(self.units)) != len(self.units):
            raise PanelValidationError("unit ids must be unique")
        for earlier, later in zip(self.periods, self.periods[1:]):
            if not earlier < later:
                raise PanelValidationError(f"periods must be strictly increasing ({earlier} then {later})")

        object.__setattr__(self, "_unit_pos", {u: i for i, u in enumerate(self.units)})
        object.__setattr__(self, "_period_pos", {t: i for i, t in enumerate(self.periods)})

        for (unit, period), cell in self.cells.items():
            if unit not in self._unit_pos:
                raise PanelValidationError(f"cell references unknown unit '{unit}'")
            if period not in self._period_pos:
                raise PanelValidationError(f"cell references unknown period {period}")
            if self.outcome_label == UNEMPLOYMENT_LABEL and not 0.0 <= cell.value <= 1.0:
                raise PanelValidationError(
                    f"unemployment rate out of [0,1] for {unit} {period}: {cell.value}"
                )

    @classmethod
    def from_cells(cls, cells: Mapping[Tuple[str, TimeIndex], PanelCell], outcome_label: str,
                   units: Optional[Iterable[str]] = None,
                   periods: Optional[Iterable[TimeIndex]] = None) -> "PanelDataset":
        """Build a panel with canonical ordering: units lexicographic, periods by (year, month)"""
        unit_set = set(units) if units is not None else {u for u, _ in cells}
        period_set = set(periods) if periods is not None else {t for _, t in cells}
        return cls(
            units=tuple(sorted(unit_set)),
            periods=tuple(sorted(period_set)),
            cells=cells,
            outcome_label=outcome_label,
        )

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, outcome_label: str) -> "PanelDataset":
        """Build from a long frame with columns unit, year, month, value, n_obs"""
        cells = {}
        for row in frame.itertuples(index=False):
            key = (str(row.unit), TimeIndex(int(row.year), int(row.month)))
            if key in cells:
                raise PanelValidationError(f"duplicate cell for unit '{key[0]}' at {key[1]}")
            cells[key] = PanelCell(float(row.value), int(row.n_obs))
        return cls.from_cells(cells, outcome_label)

    def to_frame(self) -> pd.DataFrame:
        rows = [
            (unit, period.year, period.month, cell.value, cell.n_obs)
            for (unit, period), cell in self.cells.items()
        ]
        frame = pd.DataFrame(rows, columns=PANEL_COLUMNS)
        return frame.sort_values(["unit", "year", "month"], kind="mergesort").reset_index(drop=True)

    def require_estimable(self) -> None:
        if len(self.units) < 2 or len(self.periods) < 2:
            raise PanelValidationError(
                f"panel needs at least 2 units and 2 periods, has {len(self.units)} x {len(self.periods)}"
            )

    def require_units(self, units: Iterable[str]) -> None:
        for unit in units:
            if unit not in self._unit_pos:
                raise PanelValidationError(f"unknown unit id '{unit}'")

    def has_cell(self, unit: str, period: TimeIndex) -> bool:
        return (unit, period) in self.cells

    def cell(self, unit: str, period: TimeIndex) -> Optional[PanelCell]:
        return self.cells.get((unit, period))

    def observed_periods(self, unit: str) -> List[TimeIndex]:
        return [t for t in self.periods if (unit, t) in self.cells]

    def matrix(self, units: Sequence[str], periods: Sequence[TimeIndex],
               attribute: str = "value") -> np.ndarray:
        """Dense units x periods array of ``value`` or ``n_obs``; absent cells are NaN"""
        out = np.full((len(units), len(periods)), np.nan)
        for i, unit in enumerate(units):
            for j, period in enumerate(periods):
                cell = self.cells.get((unit, period))
                if cell is not None:
                    out[i, j] = getattr(cell, attribute)
        return out

    def long_arrays(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Present cells as (unit position, period position, value, n_obs), ordered by (unit, period)"""
        keys = sorted(self.cells, key=lambda k: (self._unit_pos[k[0]], self._period_pos[k[1]]))
        unit_idx = np.fromiter((self._unit_pos[u] for u, _ in keys), dtype=np.int64, count=len(keys))
        period_idx = np.fromiter((self._period_pos[t] for _, t in keys), dtype=np.int64, count=len(keys))
        values = np.fromiter((self.cells[k].value for k in keys), dtype=float, count=len(keys))
        n_obs = np.fromiter((self.cells[k].n_obs for k in keys), dtype=float, count=len(keys))
        return unit_idx, period_idx, values, n_obs

    def subset(self, units: Iterable[str]) -> "PanelDataset":
        keep = set(units)
        self.require_units(keep)
        return PanelDataset(
            units=tuple(u for u in self.units if u in keep),
            periods=self.periods,
            cells={k: c for k, c in self.cells.items() if k[0] in keep},
            outcome_label=self.outcome_label,
        )

    def map_values(self, fn) -> "PanelDataset":
        """Copy with every cell value replaced by fn(unit, period, value)"""
        return PanelDataset(
            units=self.units,
            periods=self.periods,
            cells={(u, t): PanelCell(fn(u, t, c.value), c.n_obs) for (u, t), c in self.cells.items()},
            outcome_label=self.outcome_label,
        )


@dataclass(frozen=True)
class TreatmentSpec:
    """Treated set, control set and the common onset month (first treated period)"""
    treated: FrozenSet[str]
    controls: FrozenSet[str]
    onset: TimeIndex = DEFAULT_ONSET

    def __post_init__(self):
        object.__setattr__(self, "treated", frozenset(self.treated))
        object.__setattr__(self, "controls", frozenset(self.controls))
        overlap = self.treated & self.controls
        if overlap:
            raise PanelValidationError(f"units both treated and control: {sorted(overlap)}")

    @classmethod
    def for_panel(cls, panel: PanelDataset, treated: Iterable[str], controls: Iterable[str],
                  onset: TimeIndex = DEFAULT_ONSET) -> "TreatmentSpec":
        spec = cls(frozenset(treated), frozenset(controls), onset)
        spec.validate(panel)
        return spec

    def validate(self, panel: PanelDataset) -> None:
        panel.require_estimable()
        panel.require_units(sorted(self.treated | self.controls))
        if not panel.periods[0] < self.onset <= panel.periods[-1]:
            raise PanelValidationError(
                f"onset {self.onset} must leave at least one pre and one post period "
                f"inside {panel.periods[0]}..{panel.periods[-1]}"
            )

    def is_treated(self, unit: str) -> bool:
        return unit in self.treated


def check_balanced(panel: PanelDataset, units: Iterable[str]) -> bool:
    """True iff every listed unit has a cell in every period of the panel"""
    units = list(units)
    panel.require_units(units)
    return all((u, t) in panel.cells for u in units for t in panel.periods)


def donor_pool_for(panel: PanelDataset, treated_unit: str, spec: TreatmentSpec) -> Tuple[str, ...]:
    """Controls observed in every period where the treated unit is observed.

    Only periods inside the treated unit's observed range matter; the result
    is ordered lexicographically.
    """
    if treated_unit not in spec.treated:
        raise PanelValidationError(f"'{treated_unit}' is not a treated unit")
    panel.require_units([treated_unit])

    observed = panel.observed_periods(treated_unit)
    n_pre = sum(1 for t in observed if t < spec.onset)
    if n_pre < 2:
        raise PanelValidationError(f"insufficient pre-period data for '{treated_unit}' ({n_pre} observed)")

    donors = tuple(
        control for control in sorted(spec.controls)
        if all((control, t) in panel.cells for t in observed)
    )
    logger.debug(f"Donor pool for {treated_unit}: {len(donors)} of {len(spec.controls)} controls")
    return donors


def split_pre_post(panel: PanelDataset, spec: TreatmentSpec) -> Tuple[List[TimeIndex], List[TimeIndex]]:
    spec.validate(panel)
    pre = [t for t in panel.periods if t < spec.onset]
    post = [t for t in panel.periods if t >= spec.onset]
    return pre, post
