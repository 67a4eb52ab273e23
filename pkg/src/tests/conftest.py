import pytest

from src.core.panel_model import TimeIndex, TreatmentSpec
from src.tests.panel_factory import make_panel


@pytest.fixture
def two_by_two():
    """Treated 10 -> 20, control 5 -> 8; onset is the second month"""
    panel = make_panel({"T": [10, 20], "C": [5, 8]}, start=TimeIndex(2022, 11))
    spec = TreatmentSpec.for_panel(panel, {"T"}, {"C"}, TimeIndex(2022, 12))
    return panel, spec
