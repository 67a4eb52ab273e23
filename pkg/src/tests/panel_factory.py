from typing import Dict, Optional, Sequence

from src.core.panel_model import PanelCell, PanelDataset, TimeIndex, month_range


def make_panel(series: Dict[str, Sequence[Optional[float]]], start: TimeIndex = TimeIndex(2022, 10),
               n_obs: Optional[Dict[str, Sequence[int]]] = None, label: str = "y") -> PanelDataset:
    """Panel from per-unit value lists over consecutive months; None marks an absent cell"""
    length = max(len(v) for v in series.values())
    periods = month_range(start, start.shift(length - 1))
    cells = {}
    for unit, values in series.items():
        counts = (n_obs or {}).get(unit, [1] * len(values))
        for period, value, count in zip(periods, values, counts):
            if value is not None:
                cells[(unit, period)] = PanelCell(float(value), int(count))
    return PanelDataset.from_cells(cells, label, units=series.keys(), periods=periods)
