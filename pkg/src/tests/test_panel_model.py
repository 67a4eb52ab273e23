import pandas as pd
import pytest

from src.core.errors import PanelValidationError
from src.core.panel_model import (
    DEFAULT_ONSET,
    UNEMPLOYMENT_LABEL,
    PanelCell,
    PanelDataset,
    TimeIndex,
    TreatmentSpec,
    check_balanced,
    donor_pool_for,
    month_range,
    split_pre_post,
)
from src.tests.panel_factory import make_panel


def test_time_index_order_and_arithmetic():
    assert TimeIndex(2022, 12) < TimeIndex(2023, 1)
    assert TimeIndex(2022, 12).shift(1) == TimeIndex(2023, 1)
    assert TimeIndex(2023, 1).shift(-13) == TimeIndex(2021, 12)
    assert TimeIndex(2024, 3).months_since(DEFAULT_ONSET) == 15
    assert TimeIndex.parse("2022-12") == DEFAULT_ONSET
    assert str(TimeIndex(2010, 1)) == "2010-01"
    assert len(month_range(TimeIndex(2022, 1), TimeIndex(2023, 12))) == 24


def test_time_index_rejects_bad_month():
    with pytest.raises(PanelValidationError):
        TimeIndex(2022, 13)
    with pytest.raises(PanelValidationError):
        TimeIndex.parse("December 2022")


def test_cell_invariants():
    with pytest.raises(PanelValidationError):
        PanelCell(1.0, 0)
    with pytest.raises(PanelValidationError):
        PanelCell(float("nan"), 3)


def test_panel_validates_keys_and_ordering():
    t0, t1 = TimeIndex(2022, 1), TimeIndex(2022, 2)
    with pytest.raises(PanelValidationError, match="unknown unit"):
        PanelDataset(("a",), (t0, t1), {("b", t0): PanelCell(1.0, 1)}, "y")
    with pytest.raises(PanelValidationError, match="strictly increasing"):
        PanelDataset(("a",), (t1, t0), {}, "y")
    with pytest.raises(PanelValidationError, match="unique"):
        PanelDataset(("a", "a"), (t0, t1), {}, "y")
    with pytest.raises(PanelValidationError, match="unemployment"):
        PanelDataset(("a",), (t0,), {("a", t0): PanelCell(1.5, 10)}, UNEMPLOYMENT_LABEL)


def test_from_frame_sorts_and_rejects_duplicates():
    frame = pd.DataFrame({
        "unit": ["b", "a", "a"], "year": [2022, 2022, 2022], "month": [2, 2, 1],
        "value": [1.0, 2.0, 3.0], "n_obs": [5, 6, 7],
    })
    panel = PanelDataset.from_frame(frame, "y")
    assert panel.units == ("a", "b")
    assert panel.periods == (TimeIndex(2022, 1), TimeIndex(2022, 2))
    assert panel.to_frame()["unit"].tolist() == ["a", "a", "b"]

    with pytest.raises(PanelValidationError, match="duplicate"):
        PanelDataset.from_frame(pd.concat([frame, frame.iloc[:1]]), "y")


def test_small_panel_is_not_estimable():
    panel = make_panel({"a": [1.0, 2.0]})
    with pytest.raises(PanelValidationError, match="at least 2 units"):
        panel.require_estimable()


def test_check_balanced():
    full = make_panel({"a": [1, 2, 3], "b": [4, 5, 6]})
    assert check_balanced(full, {"a", "b"})
    holed = make_panel({"a": [1, 2, 3], "b": [4, None, 6]})
    assert not check_balanced(holed, {"a", "b"})
    assert check_balanced(holed, {"a"})
    assert check_balanced(holed, set())
    with pytest.raises(PanelValidationError, match="zz"):
        check_balanced(holed, {"zz"})


def test_donor_pool_drops_unbalanced_controls():
    panel = make_panel({"T": [1, 2, 3, 4], "A": [1, 2, 3, 4], "B": [1, None, 3, 4]})
    spec = TreatmentSpec.for_panel(panel, {"T"}, {"A", "B"}, TimeIndex(2023, 1))
    assert donor_pool_for(panel, "T", spec) == ("A",)


def test_donor_pool_all_and_none():
    full = make_panel({"T": [1, 2, 3], "A": [1, 2, 3], "B": [1, 2, 3]})
    spec = TreatmentSpec.for_panel(full, {"T"}, {"A", "B"}, TimeIndex(2022, 12))
    assert donor_pool_for(full, "T", spec) == ("A", "B")

    holed = make_panel({"T": [1, 2, 3], "A": [None, 2, 3], "B": [1, 2, None]})
    spec = TreatmentSpec.for_panel(holed, {"T"}, {"A", "B"}, TimeIndex(2022, 12))
    assert donor_pool_for(holed, "T", spec) == ()


def test_donor_pool_only_checks_treated_observed_periods():
    panel = make_panel({"T": [None, 2, 3, 4], "A": [None, 2, 3, 4]})
    spec = TreatmentSpec.for_panel(panel, {"T"}, {"A"}, TimeIndex(2023, 1))
    assert donor_pool_for(panel, "T", spec) == ("A",)


def test_donor_pool_is_monotone_in_control_observations():
    sparse = make_panel({"T": [1, 2, 3, 4], "A": [1, None, 3, 4]})
    dense = make_panel({"T": [1, 2, 3, 4], "A": [1, 2, 3, 4]})
    pools = []
    for panel in (sparse, dense):
        spec = TreatmentSpec.for_panel(panel, {"T"}, {"A"}, TimeIndex(2023, 1))
        pools.append(set(donor_pool_for(panel, "T", spec)))
    assert pools[0] == set()
    assert pools[0] <= pools[1] == {"A"}


def test_donor_pool_needs_two_pre_periods():
    panel = make_panel({"T": [None, 2, 3, 4], "A": [1, 2, 3, 4]})
    spec = TreatmentSpec.for_panel(panel, {"T"}, {"A"}, TimeIndex(2022, 12))
    with pytest.raises(PanelValidationError, match="insufficient pre-period data"):
        donor_pool_for(panel, "T", spec)


def test_split_pre_post_at_onset():
    panel = make_panel({"T": [1, 2, 3, 4], "C": [1, 2, 3, 4]})
    spec = TreatmentSpec.for_panel(panel, {"T"}, {"C"}, TimeIndex(2022, 12))
    pre, post = split_pre_post(panel, spec)
    assert pre == [TimeIndex(2022, 10), TimeIndex(2022, 11)]
    assert post == [TimeIndex(2022, 12), TimeIndex(2023, 1)]


def test_treatment_spec_invariants():
    panel = make_panel({"T": [1, 2, 3], "C": [1, 2, 3]})
    with pytest.raises(PanelValidationError, match="both treated and control"):
        TreatmentSpec({"T"}, {"T", "C"})
    with pytest.raises(PanelValidationError, match="onset"):
        TreatmentSpec.for_panel(panel, {"T"}, {"C"}, TimeIndex(2022, 10))
    with pytest.raises(PanelValidationError, match="onset"):
        TreatmentSpec.for_panel(panel, {"T"}, {"C"}, TimeIndex(2023, 1))
    with pytest.raises(PanelValidationError, match="unknown unit"):
        TreatmentSpec.for_panel(panel, {"X"}, {"C"}, TimeIndex(2022, 11))
