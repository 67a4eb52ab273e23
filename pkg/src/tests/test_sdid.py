import numpy as np
import pytest

from src.core.errors import EstimationError, PanelValidationError
from src.core.panel_model import TimeIndex, TreatmentSpec
from src.estimation.did import twfe_did
from src.estimation.sdid import (
    SKIP_INSUFFICIENT_PRE,
    SKIP_NO_DONORS,
    SdidOptions,
    SdidUnitFit,
    UnitWeightOptions,
    bootstrap_se,
    sdid_per_unit,
    weighted_att,
    weighted_twfe_tau,
)
from src.estimation.simplex import SimplexWeights
from src.tests.panel_factory import make_panel

ONSET = TimeIndex(2022, 12)


def _uniform(keys):
    keys = tuple(keys)
    return SimplexWeights(keys, np.full(len(keys), 1.0 / len(keys)), 0.0)


def _unit_fit(unit, tau, weight):
    empty = SimplexWeights(("c",), np.ones(1), 0.0)
    return SdidUnitFit(unit, tau, 0.0, {}, {}, empty, empty, 1, weight)


def test_two_by_two_matches_double_difference(two_by_two):
    panel, spec = two_by_two
    fit = weighted_twfe_tau(panel, "T", ["C"], _uniform(["C"]), _uniform([panel.periods[0]]), ONSET)
    assert abs(fit.tau - 7.0) <= 1e-8


def test_uniform_weights_reproduce_twfe():
    rng = np.random.default_rng(4)
    series = {u: rng.normal(size=7) for u in ("T", "a", "b", "c")}
    panel = make_panel(series, start=ONSET.shift(-4))
    pre = [t for t in panel.periods if t < ONSET]
    donors = ["a", "b", "c"]

    fit = weighted_twfe_tau(panel, "T", donors, _uniform(donors), _uniform(pre), ONSET)
    spec = TreatmentSpec.for_panel(panel, {"T"}, set(donors), ONSET)
    beta = twfe_did(panel, spec, weight_by_nobs=False).beta
    assert fit.tau == pytest.approx(beta, abs=1e-10)


def test_tau_is_shift_invariant_for_fixed_weights():
    rng = np.random.default_rng(12)
    series = {u: rng.normal(size=6) for u in ("T", "a", "b")}
    panel = make_panel(series, start=ONSET.shift(-4))
    spec = TreatmentSpec.for_panel(panel, {"T"}, {"a", "b"}, ONSET)
    base = sdid_per_unit(panel, spec, n_boot=10).unit_fits[0]

    bumps = {u: i * 7.0 for i, u in enumerate(panel.units)}
    steps = {t: i * -1.5 for i, t in enumerate(panel.periods)}
    for shifted in (panel.map_values(lambda u, t, v: v + 50.0),
                    panel.map_values(lambda u, t, v: v + bumps[u]),
                    panel.map_values(lambda u, t, v: v + steps[t])):
        refit = weighted_twfe_tau(shifted, "T", ["a", "b"], base.omega, base.lambda_, ONSET)
        assert refit.tau == pytest.approx(base.tau, abs=1e-9)

    # a common level shift also leaves both weight programs unchanged
    level = sdid_per_unit(panel.map_values(lambda u, t, v: v + 50.0), spec, n_boot=10).unit_fits[0]
    assert level.tau == pytest.approx(base.tau, abs=1e-4)


def test_zero_effect_when_treated_copies_a_control():
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=6), rng.normal(size=6)
    panel = make_panel({"T1": a, "T2": b, "a": a, "b": b}, start=ONSET.shift(-4),
                       n_obs={"T1": [30] * 6, "T2": [10] * 6})
    spec = TreatmentSpec.for_panel(panel, {"T1", "T2"}, {"a", "b"}, ONSET)
    fit = sdid_per_unit(panel, spec, n_boot=50)
    assert [f.tau for f in fit.unit_fits] == pytest.approx([0.0, 0.0], abs=1e-3)
    assert fit.att == pytest.approx(0.0, abs=1e-3)
    assert [f.n_obs_weight for f in fit.unit_fits] == [60.0, 20.0]


def test_weights_must_respect_donors_and_pre_periods(two_by_two):
    panel, _ = two_by_two
    pre, post = panel.periods
    with pytest.raises(PanelValidationError, match="non-donor"):
        weighted_twfe_tau(panel, "T", ["C"], _uniform(["X"]), _uniform([pre]), ONSET)
    with pytest.raises(PanelValidationError, match="pre-periods"):
        weighted_twfe_tau(panel, "T", ["C"], _uniform(["C"]), _uniform([post]), ONSET)
    degenerate = SimplexWeights(("C",), np.zeros(1), 0.0)
    with pytest.raises(EstimationError, match="degenerate"):
        weighted_twfe_tau(panel, "T", ["C"], degenerate, _uniform([pre]), ONSET)


def test_skips_are_recorded():
    panel = make_panel({
        "T_ok": [1, 2, 3, 5, 6],
        "T_short": [None, None, 3, 5, 6],
        "a": [0, 1, 2, 3, 4],
        "b": [1, 1, 2, 2, None],
    }, start=ONSET.shift(-3))
    spec = TreatmentSpec.for_panel(panel, {"T_ok", "T_short"}, {"a", "b"}, ONSET)
    fit = sdid_per_unit(panel, spec, n_boot=10)
    assert [f.treated_unit for f in fit.unit_fits] == ["T_ok"]
    assert fit.skipped == [("T_short", SKIP_INSUFFICIENT_PRE)]
    assert fit.unit_fits[0].donor_count == 1

    lonely = make_panel({"T": [1, 2, 3, 4], "a": [1, None, 3, 4]}, start=ONSET.shift(-2))
    lonely_spec = TreatmentSpec.for_panel(lonely, {"T"}, {"a"}, ONSET)
    with pytest.raises(EstimationError, match="no treated unit"):
        sdid_per_unit(lonely, lonely_spec, n_boot=10)


def test_no_donor_skip_reason():
    panel = make_panel({"T": [1, 2, 3, 4], "U": [2, 3, 4, 6], "a": [1, None, 3, 4], "b": [0, 1, 2, 3]},
                       start=ONSET.shift(-2))
    spec = TreatmentSpec.for_panel(panel, {"T", "U"}, {"a"}, ONSET)
    with pytest.raises(EstimationError):
        sdid_per_unit(panel, spec, n_boot=10)
    spec = TreatmentSpec.for_panel(panel, {"T"}, {"a", "b"}, ONSET)
    assert sdid_per_unit(panel, spec, n_boot=10).unit_fits[0].donor_count == 1

    partial = make_panel({"T": [1, 2, 3, 4], "U": [2, 3, 4, None], "a": [1, 2, 3, None]},
                         start=ONSET.shift(-2))
    spec = TreatmentSpec.for_panel(partial, {"T", "U"}, {"a"}, ONSET)
    fit = sdid_per_unit(partial, spec, n_boot=10)
    assert fit.skipped == [("T", SKIP_NO_DONORS)]


def test_att_is_nobs_weighted():
    fits = [_unit_fit("x", 1.0, 1.0), _unit_fit("y", 4.0, 3.0)]
    assert weighted_att(np.array([f.tau for f in fits]), np.array([f.n_obs_weight for f in fits])) == 3.25


def test_bootstrap_degenerate_cases():
    assert bootstrap_se([_unit_fit("x", 2.0, 5.0), _unit_fit("y", 2.0, 1.0)], n_boot=200, seed=1) == 0.0
    assert bootstrap_se([_unit_fit("x", 0.0, 1.0), _unit_fit("y", 10.0, 1.0)], n_boot=1, seed=1) == 0.0
    with pytest.raises(PanelValidationError):
        bootstrap_se([_unit_fit("x", 0.0, 1.0)], n_boot=0)


def test_bootstrap_two_point_distribution():
    fits = [_unit_fit("x", 0.0, 1.0), _unit_fit("y", 10.0, 1.0)]
    se = bootstrap_se(fits, n_boot=10_000, seed=20221201)
    assert abs(se - 5.0 / np.sqrt(2.0)) <= 0.05 * 5.0 / np.sqrt(2.0)
    assert se == bootstrap_se(fits, n_boot=10_000, seed=20221201)


def test_parallel_and_serial_runs_agree():
    rng = np.random.default_rng(6)
    series = {f"t{i}": rng.normal(size=8) + 2.0 for i in range(4)}
    series.update({f"c{i}": rng.normal(size=8) for i in range(6)})
    panel = make_panel(series, start=ONSET.shift(-5))
    spec = TreatmentSpec.for_panel(panel, [u for u in series if u[0] == "t"], [u for u in series if u[0] == "c"], ONSET)
    serial = sdid_per_unit(panel, spec, n_boot=100, options=SdidOptions(n_jobs=1))
    threaded = sdid_per_unit(panel, spec, n_boot=100, options=SdidOptions(n_jobs=3))
    assert serial.summary() == threaded.summary()
    assert serial.unit_frame().equals(threaded.unit_frame())


def test_refit_bootstrap_is_seeded_and_positive():
    rng = np.random.default_rng(8)
    series = {f"t{i}": rng.normal(size=7) + 1.0 for i in range(3)}
    series.update({f"c{i}": rng.normal(size=7) for i in range(4)})
    panel = make_panel(series, start=ONSET.shift(-4))
    spec = TreatmentSpec.for_panel(panel, [u for u in series if u[0] == "t"], [u for u in series if u[0] == "c"], ONSET)
    options = SdidOptions(bootstrap_mode="refit", seed=3, n_jobs=2)
    first = sdid_per_unit(panel, spec, n_boot=30, options=options)
    second = sdid_per_unit(panel, spec, n_boot=30, options=SdidOptions(bootstrap_mode="refit", seed=3))
    assert first.se_bootstrap == second.se_bootstrap
    assert first.se_bootstrap > 0


def test_weight_options():
    with pytest.raises(PanelValidationError):
        SdidOptions(bootstrap_mode="placebo")
    with pytest.raises(PanelValidationError):
        UnitWeightOptions(ridge=-1.0)

    rng = np.random.default_rng(10)
    series = {u: rng.normal(size=7) for u in ("T", "a", "b", "c")}
    panel = make_panel(series, start=ONSET.shift(-4))
    spec = TreatmentSpec.for_panel(panel, {"T"}, {"a", "b", "c"}, ONSET)
    options = SdidOptions(unit_weights=UnitWeightOptions(ridge=10.0, intercept=True))
    fit = sdid_per_unit(panel, spec, n_boot=10, options=options).unit_fits[0]
    assert abs(fit.omega.values.sum() - 1.0) <= 1e-9
    # a heavy ridge pulls the unit weights toward uniform
    assert np.max(np.abs(fit.omega.values - 1.0 / 3.0)) < 0.2


def test_fit_outputs():
    rng = np.random.default_rng(2)
    series = {f"t{i}": rng.normal(size=6) for i in range(3)}
    series.update({f"c{i}": rng.normal(size=6) for i in range(3)})
    panel = make_panel(series, start=ONSET.shift(-3))
    spec = TreatmentSpec.for_panel(panel, ["t0", "t1", "t2"], ["c0", "c1", "c2"], ONSET)
    fit = sdid_per_unit(panel, spec, n_boot=25)
    frame = fit.unit_frame()
    assert list(frame.columns) == [
        "unit", "tau", "donor_count", "omega_entropy", "objective_pre", "n_obs_weight", "skip_reason",
    ]
    assert frame["unit"].tolist() == ["t0", "t1", "t2"]
    assert fit.summary()["n_fitted"] == 3 and fit.summary()["n_boot"] == 25
    assert int(fit.tau_histogram(bins=4)["count"].sum()) == 3
    for unit_fit in fit.unit_fits:
        assert set(unit_fit.omega.keys) <= set(spec.controls)
        assert all(t < ONSET for t in unit_fit.lambda_.keys)


def test_per_unit_fit_does_not_depend_on_the_outcome_level():
    rng = np.random.default_rng(21)
    series = {u: rng.normal(size=7) for u in ("T", "a", "b", "c")}
    panel = make_panel(series, start=ONSET.shift(-4))
    spec = TreatmentSpec.for_panel(panel, {"T"}, {"a", "b", "c"}, ONSET)
    base = sdid_per_unit(panel, spec, n_boot=10).unit_fits[0]
    level = sdid_per_unit(panel.map_values(lambda u, t, v: v + 1000.0), spec, n_boot=10).unit_fits[0]
    assert level.tau == pytest.approx(base.tau, abs=1e-3)
    for key, value in base.omega.as_dict().items():
        assert level.omega.as_dict()[key] == pytest.approx(value, abs=1e-3)
