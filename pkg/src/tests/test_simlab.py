import numpy as np
import pytest

from src.core.errors import PanelValidationError
from src.core.panel_model import check_balanced
from src.estimation.did import event_study, twfe_did
from src.estimation.sdid import sdid_per_unit
from src.simulation.simlab import FactorDgpConfig, generate, load_config, monte_carlo, replication_seed


def test_generate_shapes_and_balance():
    config = FactorDgpConfig(n_treated=3, n_control=5, n_pre=6, n_post=2, seed=4)
    panel, spec, tau = generate(config)
    assert tau == 5.0
    assert len(panel.units) == 8 and len(panel.periods) == 8
    assert check_balanced(panel, panel.units)
    assert spec.onset == config.onset
    assert sum(t < spec.onset for t in panel.periods) == 6
    assert all(20 <= c.n_obs <= 200 for c in panel.cells.values())


def test_generate_is_deterministic():
    config = FactorDgpConfig(seed=11, factor_dim=2, loading_treatment_corr=0.5)
    first, _, _ = generate(config)
    second, _, _ = generate(config)
    assert first.cells == second.cells


def test_parallel_trends_recovery():
    # 20 units x 24 months, no factors and no noise
    config = FactorDgpConfig(n_treated=5, n_control=15, n_pre=18, n_post=6,
                             factor_dim=0, noise_sd=0.0, tau_true=5.0, seed=1)
    panel, spec, tau = generate(config)
    assert abs(twfe_did(panel, spec).beta - tau) <= 1e-8
    assert abs(sdid_per_unit(panel, spec, n_boot=50).att - tau) <= 1e-8


def test_config_validation():
    with pytest.raises(ValueError):
        FactorDgpConfig(n_treated=0)
    with pytest.raises(ValueError):
        FactorDgpConfig(loading_treatment_corr=1.5)
    with pytest.raises(ValueError):
        FactorDgpConfig(n_units=10)


def test_load_config(tmp_path):
    path = tmp_path / "dgp.txt"
    path.write_text("# factor design\nn_treated = 4\nfactor_dim=1\nloading_treatment_corr = 0.9  # strong\n\n")
    config = load_config(path)
    assert config.n_treated == 4 and config.loading_treatment_corr == 0.9

    path.write_text("n_treated 4\n")
    with pytest.raises(PanelValidationError, match="row 1"):
        load_config(path)
    path.write_text("noise = loud\n")
    with pytest.raises(PanelValidationError, match="invalid simulation config"):
        load_config(path)


def test_replication_seeds_are_order_free():
    assert replication_seed(7, 3) == replication_seed(7, 3)
    assert len({replication_seed(7, rep) for rep in range(50)}) == 50


def test_monte_carlo_report_is_reproducible():
    config = FactorDgpConfig(n_treated=3, n_control=6, n_pre=6, n_post=2, seed=5)
    serial = monte_carlo(config, n_reps=4, n_boot=20, n_jobs=1)
    threaded = monte_carlo(config, n_reps=4, n_boot=20, n_jobs=2)
    assert serial.model_dump() == threaded.model_dump()
    assert set(serial.estimators) == {"did", "sdid"}
    assert serial.estimators["did"].n_ok == 4
    assert len(serial.replication_frame()) == 8


def test_monte_carlo_rejects_unknown_estimator():
    with pytest.raises(PanelValidationError):
        monte_carlo(FactorDgpConfig(), n_reps=1, estimators=["lasso"])


@pytest.mark.slow
def test_sdid_reduces_factor_bias():
    config = FactorDgpConfig(n_treated=5, n_control=20, n_pre=12, n_post=4, factor_dim=1,
                             loading_treatment_corr=0.9, noise_sd=0.5, seed=20221201)
    report = monte_carlo(config, n_reps=200, n_boot=50, n_jobs=4)
    assert report.estimators["sdid"].rmse < report.estimators["did"].rmse
    difference, mcse = report.rmse_difference("sdid", "did")
    assert -difference > 3 * mcse

    mean_abs = {
        name: np.mean([abs(r.estimate - config.tau_true) for r in report.replications
                       if r.estimator == name and not r.failed])
        for name in ("did", "sdid")
    }
    assert mean_abs["sdid"] < mean_abs["did"]


@pytest.mark.slow
def test_event_study_pre_period_size():
    config = FactorDgpConfig(n_treated=20, n_control=40, n_pre=8, n_post=4, factor_dim=0, noise_sd=1.0)
    rejections, total = 0, 0
    for rep in range(100):
        panel, spec, _ = generate(config.model_copy(update={"seed": replication_seed(99, rep)}))
        fit = event_study(panel, spec)
        assert -1 not in fit.coefficients
        for beta, se in fit.pre_coefficients().values():
            rejections += abs(beta) > 1.96 * se
            total += 1
    assert 0.01 <= rejections / total <= 0.10


def test_load_config_missing_file(tmp_path):
    with pytest.raises(PanelValidationError, match="not found"):
        load_config(tmp_path / "absent.txt")


@pytest.mark.parametrize("tau_true", [5.0, 0.0])
def test_estimators_are_centred_without_factors(tau_true):
    config = FactorDgpConfig(n_treated=4, n_control=10, n_pre=8, n_post=3, factor_dim=0,
                             tau_true=tau_true, noise_sd=1.0, seed=606)
    report = monte_carlo(config, n_reps=60, n_boot=20, n_jobs=2)
    assert report.tau_true == tau_true
    for name in ("did", "sdid"):
        summary = report.estimators[name]
        assert summary.n_ok == 60
        assert abs(summary.mean_bias) < 3 * summary.bias_mcse


def test_correlated_factors_show_up_as_pre_trends():
    config = FactorDgpConfig(n_treated=20, n_control=40, n_pre=8, n_post=4, factor_dim=2,
                             loading_treatment_corr=0.9, noise_sd=0.5, seed=314)
    panel, spec, _ = generate(config)
    pre = event_study(panel, spec).pre_coefficients()
    assert any(abs(beta) / se > 2 for beta, se in pre.values())
