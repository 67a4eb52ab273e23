from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple, Union
import logging

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from src.core.errors import EstimationError, PanelValidationError
from src.core.panel_model import DEFAULT_ONSET, PanelCell, PanelDataset, TimeIndex, TreatmentSpec
from src.estimation.did import twfe_did
from src.estimation.inference import normal_interval
from src.estimation.sdid import SdidOptions, sdid_per_unit

logger = logging.getLogger(__name__)

ESTIMATORS = ("did", "sdid")
N_OBS_RANGE = (20, 200)


class FactorDgpConfig(BaseModel):
    """Interactive fixed-effects DGP: Y = alpha_i + delta_t + gamma_i'upsilon_t + tau*W_it + eps_it"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    n_treated: int = Field(10, ge=1)
    n_control: int = Field(30, ge=1)
    n_pre: int = Field(12, ge=1)
    n_post: int = Field(4, ge=1)
    tau_true: float = 5.0
    factor_dim: int = Field(1, ge=0)
    loading_treatment_corr: float = Field(0.0, ge=-1.0, le=1.0)
    noise_sd: float = Field(1.0, ge=0.0)
    seed: int = 0

    @property
    def onset(self) -> TimeIndex:
        return DEFAULT_ONSET


class EstimatorSummary(BaseModel):
    mean_bias: float
    bias_mcse: float
    rmse: float
    coverage: float = Field(ge=0.0, le=1.0)
    n_ok: int
    n_failed: int


class ReplicationRow(BaseModel):
    rep: int
    seed: int
    estimator: str
    estimate: Optional[float] = None
    se: Optional[float] = None
    failed: bool = False
    error: str = ""


class McReport(BaseModel):
    n_reps: int
    tau_true: float
    config: FactorDgpConfig
    estimators: Dict[str, EstimatorSummary]
    replications: List[ReplicationRow]

    def rmse_difference(self, a: str, b: str) -> Tuple[float, float]:
        """RMSE(a) - RMSE(b) over replications where both succeeded, with its delta-method MC SE"""
        rows: Dict[int, Dict[str, float]] = {}
        for r in self.replications:
            if not r.failed and r.estimator in (a, b):
                rows.setdefault(r.rep, {})[r.estimator] = r.estimate - self.tau_true
        paired = [(v[a], v[b]) for v in rows.values() if a in v and b in v]
        if len(paired) < 2:
            raise EstimationError(f"need at least 2 paired replications of {a} and {b}")
        sq = np.array(paired) ** 2
        rmse_a, rmse_b = np.sqrt(sq.mean(axis=0))
        # d RMSE = d MSE / (2 RMSE)
        influence = sq[:, 0] / (2 * rmse_a) - sq[:, 1] / (2 * rmse_b)
        return float(rmse_a - rmse_b), float(influence.std(ddof=1) / np.sqrt(len(paired)))

    def replication_frame(self) -> pd.DataFrame:
        return pd.DataFrame([r.model_dump() for r in self.replications])


def load_config(path: Union[str, Path]) -> FactorDgpConfig:
    """Read key=value lines; blank lines and '#' comments are ignored"""
    if not Path(path).is_file():
        raise PanelValidationError(f"config file not found: {path}")
    values = {}
    for number, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise PanelValidationError(f"expected key=value in {path}", row=number)
        key, value = (part.strip() for part in line.split("=", 1))
        values[key] = value
    try:
        return FactorDgpConfig(**values)
    except ValidationError as e:
        raise PanelValidationError(f"invalid simulation config {path}: {str(e)}")


def replication_seed(base_seed: int, rep: int) -> int:
    """Counter-based seed, independent of the order replications run in"""
    return int(np.random.SeedSequence([base_seed, rep]).generate_state(1)[0])


def generate(config: FactorDgpConfig) -> Tuple[PanelDataset, TreatmentSpec, float]:
    """Balanced synthetic panel from the interactive fixed-effects model.

    Loadings mix a treatment-indicator component into a normal draw:
    gamma_i = rho * D_i + sqrt(1 - rho^2) * z_i, with rho the configured
    loading_treatment_corr.
    """
    rng = np.random.default_rng(config.seed)
    treated = [f"t{i:04d}" for i in range(config.n_treated)]
    controls = [f"c{i:04d}" for i in range(config.n_control)]
    units = treated + controls
    onset = config.onset
    periods = [onset.shift(k) for k in range(-config.n_pre, config.n_post)]

    n_units, n_periods = len(units), len(periods)
    D = np.array([1.0] * config.n_treated + [0.0] * config.n_control)
    post = np.array([0.0] * config.n_pre + [1.0] * config.n_post)

    alpha = rng.standard_normal(n_units)
    delta = rng.standard_normal(n_periods)
    upsilon = rng.standard_normal((n_periods, config.factor_dim))
    rho = config.loading_treatment_corr
    gamma = rho * D[:, None] + np.sqrt(1.0 - rho ** 2) * rng.standard_normal((n_units, config.factor_dim))
    eps = rng.normal(0.0, config.noise_sd, size=(n_units, n_periods)) if config.noise_sd > 0 else np.zeros((n_units, n_periods))
    n_obs = rng.integers(N_OBS_RANGE[0], N_OBS_RANGE[1] + 1, size=(n_units, n_periods))

    Y = alpha[:, None] + delta[None, :] + gamma @ upsilon.T + config.tau_true * np.outer(D, post) + eps
    cells = {
        (unit, period): PanelCell(float(Y[i, j]), int(n_obs[i, j]))
        for i, unit in enumerate(units)
        for j, period in enumerate(periods)
    }
    panel = PanelDataset.from_cells(cells, "simulated")
    spec = TreatmentSpec.for_panel(panel, treated, controls, onset)
    return panel, spec, config.tau_true


def _run_replication(config: FactorDgpConfig, rep: int, estimators: List[str],
                     n_boot: int) -> List[ReplicationRow]:
    seed = replication_seed(config.seed, rep)
    panel, spec, _ = generate(config.model_copy(update={"seed": seed}))
    rows = []
    for estimator in estimators:
        try:
            if estimator == "did":
                fit = twfe_did(panel, spec, weight_by_nobs=True)
                estimate, se = fit.beta, fit.se_clustered
            else:
                fit = sdid_per_unit(panel, spec, n_boot=n_boot, options=SdidOptions(seed=seed))
                estimate, se = fit.att, fit.se_bootstrap
            rows.append(ReplicationRow(rep=rep, seed=seed, estimator=estimator, estimate=estimate, se=se))
        except (EstimationError, PanelValidationError, np.linalg.LinAlgError) as e:
            logger.warning(f"Replication {rep} failed for {estimator}: {str(e)}")
            rows.append(ReplicationRow(rep=rep, seed=seed, estimator=estimator, failed=True, error=str(e)))
    return rows


def _summarize(rows: List[ReplicationRow], tau_true: float) -> EstimatorSummary:
    ok = [r for r in rows if not r.failed]
    if not ok:
        return EstimatorSummary(mean_bias=float("nan"), bias_mcse=float("nan"), rmse=float("nan"),
                                coverage=0.0, n_ok=0, n_failed=len(rows))
    errors = np.array([r.estimate - tau_true for r in ok])
    covered = [lo <= tau_true <= hi for lo, hi in (normal_interval(r.estimate, r.se) for r in ok)]
    return EstimatorSummary(
        mean_bias=float(errors.mean()),
        bias_mcse=float(errors.std(ddof=1) / np.sqrt(len(errors))) if len(errors) > 1 else 0.0,
        rmse=float(np.sqrt(np.mean(errors ** 2))),
        coverage=float(np.mean(covered)),
        n_ok=len(ok),
        n_failed=len(rows) - len(ok),
    )


def monte_carlo(config: FactorDgpConfig, n_reps: int, estimators: Iterable[str] = ESTIMATORS,
                n_boot: int = 200, n_jobs: int = 1) -> McReport:
    """Bias, RMSE and 95% coverage of each estimator over independent replications"""
    if n_reps < 1:
        raise PanelValidationError(f"n_reps must be >= 1, got {n_reps}")
    estimators = sorted(set(estimators))
    unknown = [e for e in estimators if e not in ESTIMATORS]
    if unknown:
        raise PanelValidationError(f"unknown estimators {unknown}; choose from {ESTIMATORS}")

    logger.info(f"Monte Carlo: {n_reps} replications of {estimators} (n_jobs={n_jobs})")
    batches = Parallel(n_jobs=n_jobs)(
        delayed(_run_replication)(config, rep, estimators, n_boot) for rep in range(n_reps)
    )
    replications = [row for batch in batches for row in batch]
    summaries = {
        e: _summarize([r for r in replications if r.estimator == e], config.tau_true)
        for e in estimators
    }
    for name, summary in summaries.items():
        logger.info(f"{name}: bias={summary.mean_bias:.4g} rmse={summary.rmse:.4g} coverage={summary.coverage:.3f}")
    return McReport(
        n_reps=n_reps,
        tau_true=config.tau_true,
        config=config,
        estimators=summaries,
        replications=replications,
    )
