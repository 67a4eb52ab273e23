from pathlib import Path
from typing import Callable, List, Optional, Tuple, Union
import logging

import numpy as np
import pandas as pd

from src.core.errors import PanelValidationError
from src.core.panel_model import PANEL_COLUMNS, PanelDataset
from src.ingest.exposure import ExposureScore, TaskClass, TaskRecord
from src.ingest.micro import MICRO_COLUMNS, DeflatorSeries, EmpStat

# 6 significant digits keeps reruns diff-able
CSV_FLOAT_FORMAT = "%.6g"
TASK_COLUMNS = ["occupation", "task_id", "prompt_share", "classification"]
DEFLATOR_COLUMNS = ["year", "month", "index"]
TREATMENT_COLUMNS = ["unit", "group"]
SCORE_COLUMNS = ["occupation", "overall", "automative", "augmentative", "n_tasks"]

PathLike = Union[str, Path]


class CsvStore:
    """Reads and writes the long-format CSV files every command exchanges.

    Malformed input raises PanelValidationError carrying the 1-based file
    row (header is row 1) and the offending column.
    """

    def __init__(self, float_format: str = CSV_FLOAT_FORMAT):
        self.float_format = float_format
        self.logger = logging.getLogger(__name__)

    def _read(self, path: PathLike, columns: List[str]) -> pd.DataFrame:
        path = Path(path)
        if not path.exists():
            raise PanelValidationError(f"input file not found: {path}")
        try:
            frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
        except pd.errors.EmptyDataError:
            raise PanelValidationError(f"{path.name} is empty; expected header {columns}", row=1)
        except (pd.errors.ParserError, UnicodeDecodeError) as e:
            raise PanelValidationError(f"cannot parse {path}: {str(e)}")
        missing = [c for c in columns if c not in frame.columns]
        if missing:
            raise PanelValidationError(f"{path.name} is missing columns {missing}", row=1)
        self.logger.info(f"Read {len(frame)} rows from {path}")
        return frame.loc[:, columns]

    @staticmethod
    def _convert(frame: pd.DataFrame, column: str, convert: Callable, allow_blank: bool = False) -> list:
        out = []
        for position, raw in enumerate(frame[column]):
            text = raw.strip()
            if allow_blank and text == "":
                out.append(None)
                continue
            try:
                out.append(convert(text))
            except (ValueError, TypeError, PanelValidationError):
                raise PanelValidationError(f"invalid value '{raw}'", row=position + 2, column=column)
        return out

    @staticmethod
    def _nonempty(frame: pd.DataFrame, column: str) -> list:
        values = [v.strip() for v in frame[column]]
        for position, value in enumerate(values):
            if not value:
                raise PanelValidationError("empty identifier", row=position + 2, column=column)
        return values

    def read_panel(self, path: PathLike, outcome_label: Optional[str] = None) -> PanelDataset:
        frame = self._read(path, PANEL_COLUMNS)
        long = pd.DataFrame({
            "unit": self._nonempty(frame, "unit"),
            "year": self._convert(frame, "year", int),
            "month": self._convert(frame, "month", _month),
            "value": self._convert(frame, "value", _finite),
            "n_obs": self._convert(frame, "n_obs", _positive_int),
        })
        label = outcome_label or Path(path).stem
        return PanelDataset.from_frame(long, label)

    def read_tasks(self, path: PathLike) -> List[TaskRecord]:
        frame = self._read(path, TASK_COLUMNS)
        occupations = self._nonempty(frame, "occupation")
        task_ids = self._nonempty(frame, "task_id")
        shares = self._convert(frame, "prompt_share", _finite)
        classes = self._convert(frame, "classification", TaskClass)
        return [
            TaskRecord(occupation=o, task_id=t, prompt_share=s, classification=c)
            for o, t, s, c in zip(occupations, task_ids, shares, classes)
        ]

    def read_micro(self, path: PathLike) -> pd.DataFrame:
        """Micro records as a validated frame (kept columnar for large extracts)"""
        frame = self._read(path, MICRO_COLUMNS)
        earnings = self._convert(frame, "weekly_earnings", _nonnegative, allow_blank=True)
        return pd.DataFrame({
            "occupation": self._nonempty(frame, "occupation"),
            "year": self._convert(frame, "year", int),
            "month": self._convert(frame, "month", _month),
            "empstat": [e.value for e in self._convert(frame, "empstat", EmpStat)],
            "weekly_earnings": np.array([np.nan if e is None else e for e in earnings], dtype=float),
        })

    def read_deflator(self, path: PathLike) -> DeflatorSeries:
        frame = self._read(path, DEFLATOR_COLUMNS)
        return DeflatorSeries.from_frame(pd.DataFrame({
            "year": self._convert(frame, "year", int),
            "month": self._convert(frame, "month", _month),
            "index": self._convert(frame, "index", _finite),
        }))

    def read_treatment(self, path: PathLike) -> Tuple[frozenset, frozenset]:
        """Treatment assignment file: unit,group with group in {treated, control}"""
        frame = self._read(path, TREATMENT_COLUMNS)
        units = self._nonempty(frame, "unit")
        groups = self._convert(frame, "group", _group)
        treated = frozenset(u for u, g in zip(units, groups) if g == "treated")
        controls = frozenset(u for u, g in zip(units, groups) if g == "control")
        return treated, controls

    def read_scores(self, path: PathLike) -> List[ExposureScore]:
        frame = self._read(path, SCORE_COLUMNS)
        columns = {c: self._convert(frame, c, _unit_interval) for c in ["overall", "automative", "augmentative"]}
        return [
            ExposureScore(occupation=o, overall=a, automative=b, augmentative=c, n_tasks=n)
            for o, a, b, c, n in zip(
                self._nonempty(frame, "occupation"), columns["overall"], columns["automative"],
                columns["augmentative"], self._convert(frame, "n_tasks", _positive_int),
            )
        ]

    def write_frame(self, frame: pd.DataFrame, path: PathLike) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False, float_format=self.float_format, lineterminator="\n", encoding="utf-8")
        self.logger.info(f"Wrote {len(frame)} rows to {path}")
        return path

    def write_panel(self, panel: PanelDataset, path: PathLike) -> Path:
        return self.write_frame(panel.to_frame(), path)


def _month(text: str) -> int:
    month = int(text)
    if not 1 <= month <= 12:
        raise ValueError(month)
    return month


def _finite(text: str) -> float:
    value = float(text)
    if not np.isfinite(value):
        raise ValueError(text)
    return value


def _nonnegative(text: str) -> float:
    value = _finite(text)
    if value < 0:
        raise ValueError(text)
    return value


def _unit_interval(text: str) -> float:
    value = _finite(text)
    if not 0.0 <= value <= 1.0:
        raise ValueError(text)
    return value


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise ValueError(text)
    return value


def _group(text: str) -> str:
    if text not in ("treated", "control"):
        raise ValueError(text)
    return text


