from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple
import logging

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from src.core.errors import EstimationError, PanelValidationError
from src.core.panel_model import PanelDataset, TimeIndex, TreatmentSpec, donor_pool_for
from src.estimation.simplex import SimplexWeights, SolverOptions, solve_simplex_ls

logger = logging.getLogger(__name__)

DEFAULT_N_BOOT = 1000
BOOTSTRAP_MODES = ("units", "refit")

SKIP_INSUFFICIENT_PRE = "insufficient_pre_periods"
SKIP_NO_POST = "no_post_periods"
SKIP_NO_DONORS = "no_balanced_donors"


@dataclass(frozen=True)
class UnitWeightOptions:
    """Extensions to the plain weight programs; both off by default"""
    ridge: float = 0.0
    intercept: bool = False

    def __post_init__(self):
        if self.ridge < 0:
            raise PanelValidationError(f"ridge penalty must be >= 0, got {self.ridge}")


@dataclass(frozen=True)
class SdidOptions:
    unit_weights: UnitWeightOptions = UnitWeightOptions()
    solver: SolverOptions = SolverOptions()
    bootstrap_mode: str = "units"
    seed: int = 20221201
    n_jobs: int = 1

    def __post_init__(self):
        if self.bootstrap_mode not in BOOTSTRAP_MODES:
            raise PanelValidationError(f"bootstrap mode must be one of {BOOTSTRAP_MODES}, got '{self.bootstrap_mode}'")


@dataclass
class SdidUnitFit:
    treated_unit: str
    tau: float
    mu: float
    unit_fe: Dict[str, float]
    time_fe: Dict[TimeIndex, float]
    omega: SimplexWeights
    lambda_: SimplexWeights
    donor_count: int
    n_obs_weight: float


@dataclass
class SdidFit:
    unit_fits: List[SdidUnitFit]
    skipped: List[Tuple[str, str]]
    att: float
    se_bootstrap: float
    n_boot: int
    bootstrap_mode: str = "units"
    seed: int = 0

    def summary(self) -> Dict:
        return {
            "att": self.att,
            "se_bootstrap": self.se_bootstrap,
            "n_boot": self.n_boot,
            "n_fitted": len(self.unit_fits),
            "n_skipped": len(self.skipped),
            "bootstrap_mode": self.bootstrap_mode,
            "seed": self.seed,
        }

    def unit_frame(self) -> pd.DataFrame:
        rows = [
            (f.treated_unit, f.tau, f.donor_count, f.omega.entropy(), f.omega.objective, f.n_obs_weight, "")
            for f in self.unit_fits
        ]
        rows += [(unit, np.nan, 0, np.nan, np.nan, np.nan, reason) for unit, reason in self.skipped]
        frame = pd.DataFrame(rows, columns=[
            "unit", "tau", "donor_count", "omega_entropy", "objective_pre", "n_obs_weight", "skip_reason",
        ])
        return frame.sort_values("unit", kind="mergesort").reset_index(drop=True)

    def tau_histogram(self, bins: int = 20) -> pd.DataFrame:
        taus = np.array([f.tau for f in self.unit_fits])
        counts, edges = np.histogram(taus, bins=bins)
        return pd.DataFrame({"bin_lo": edges[:-1], "bin_hi": edges[1:], "count": counts})


def _balanced_block(panel: PanelDataset, units: Sequence[str], periods: Sequence[TimeIndex]) -> np.ndarray:
    block = panel.matrix(units, periods)
    if np.isnan(block).any():
        raise PanelValidationError("weight programs need a balanced panel over the treated unit and its donors")
    return block


def _unit_weight_program(treated_pre: np.ndarray, donors_pre: np.ndarray, keys: Sequence,
                         options: UnitWeightOptions, solver: SolverOptions) -> SimplexWeights:
    """min_w sum_t (y_t - sum_j w_j Y_jt)^2 over the simplex, with optional intercept and ridge"""
    A = donors_pre.T.copy()
    b = treated_pre.copy()
    if options.intercept:
        A -= A.mean(axis=0, keepdims=True)
        b -= b.mean()
    if options.ridge > 0:
        n_pre = A.shape[0]
        penalty = np.sqrt(options.ridge ** 2 * n_pre) * np.eye(A.shape[1])
        A = np.vstack([A, penalty])
        b = np.concatenate([b, np.zeros(A.shape[1])])
    return solve_simplex_ls(A, b, keys=keys, options=solver)


def _time_weight_program(donors_pre: np.ndarray, donors_post: np.ndarray, keys: Sequence,
                         intercept: bool, solver: SolverOptions) -> SimplexWeights:
    """min_l sum_j (sum_t l_t Y_jt - mean_post Y_j)^2 over the simplex"""
    A = donors_pre.copy()
    b = donors_post.mean(axis=1)
    if intercept:
        A -= A.mean(axis=0, keepdims=True)
        b = b - b.mean()
    return solve_simplex_ls(A, b, keys=keys, options=solver)


def solve_unit_weights(panel: PanelDataset, treated_unit: str, donors: Sequence[str],
                       pre: Sequence[TimeIndex], options: UnitWeightOptions = UnitWeightOptions(),
                       solver: SolverOptions = SolverOptions()) -> SimplexWeights:
    donors = sorted(donors)
    if not donors:
        raise EstimationError(f"no balanced donors for '{treated_unit}'")
    treated_pre = _balanced_block(panel, [treated_unit], pre)[0]
    donors_pre = _balanced_block(panel, donors, pre)
    return _unit_weight_program(treated_pre, donors_pre, donors, options, solver)


def solve_time_weights(panel: PanelDataset, donors: Sequence[str], pre: Sequence[TimeIndex],
                       post: Sequence[TimeIndex], intercept: bool = False,
                       solver: SolverOptions = SolverOptions()) -> SimplexWeights:
    donors = sorted(donors)
    if not donors:
        raise EstimationError("no balanced donors for the time-weight program")
    if not post:
        raise EstimationError("time weights need at least one post period")
    return _time_weight_program(
        _balanced_block(panel, donors, pre), _balanced_block(panel, donors, post), list(pre), intercept, solver,
    )


def product_weight_twfe(Y: np.ndarray, unit_w: np.ndarray, time_w: np.ndarray,
                        treated_rows: np.ndarray, post_cols: np.ndarray) -> Tuple[float, float, np.ndarray, np.ndarray]:
    """Weighted TWFE on a balanced block with cell weights unit_w[i] * time_w[t].

    Under product weights the additive projection is exact in one step, so
    tau is the weighted double difference. Returns (tau, mu, alpha, beta)
    with alpha and beta centered to weighted mean zero.
    """
    a = unit_w / unit_w.sum()
    b = time_w / time_w.sum()
    D = treated_rows.astype(float)
    P = post_cols.astype(float)
    d_c = D - a @ D
    p_c = P - b @ P
    W_tilde = np.outer(d_c, p_c)
    cell_w = np.outer(a, b)
    denom = np.sum(cell_w * W_tilde * W_tilde)
    if denom <= 0:
        raise EstimationError("degenerate weighting: treated block or post block carries no weight")
    tau = float(np.sum(cell_w * W_tilde * Y) / denom)

    Z = Y - tau * np.outer(D, P)
    mu = float(a @ Z @ b)
    alpha = Z @ b - mu
    beta = a @ Z - mu
    return tau, mu, alpha, beta


def weighted_twfe_tau(panel: PanelDataset, treated_unit: str, donors: Sequence[str],
                      omega: SimplexWeights, lambda_: SimplexWeights, onset: TimeIndex) -> SdidUnitFit:
    """tau, mu and fixed effects of the SDiD weighted regression for one treated unit.

    The treated row carries unit weight 1 against omega over donors; pre
    periods carry lambda and post periods carry 1/T_post.
    """
    stray = set(omega.keys) - set(donors)
    if stray:
        raise PanelValidationError(f"unit weights placed on non-donor units: {sorted(stray)}")
    donors = list(omega.keys)
    if any(t >= onset for t in lambda_.keys):
        raise PanelValidationError("time weights must be supported on pre-periods only")
    if omega.values.sum() <= 0 or lambda_.values.sum() <= 0:
        raise EstimationError("degenerate weighting: unit or time weights sum to zero")

    post = [t for t in panel.observed_periods(treated_unit) if t >= onset]
    if not post:
        raise EstimationError(f"'{treated_unit}' has no post-period observations")
    pre = list(lambda_.keys)
    periods = pre + post
    units = [treated_unit] + donors
    Y = _balanced_block(panel, units, periods)

    # treated block gets mass equal to the donor block, mirroring 1/N_tr against sum(omega) = 1
    unit_w = np.concatenate([[1.0], omega.values])
    time_w = np.concatenate([lambda_.values, np.full(len(post), 1.0 / len(post))])
    treated_rows = np.zeros(len(units), dtype=bool)
    treated_rows[0] = True
    post_cols = np.array([False] * len(pre) + [True] * len(post))

    keep_u = unit_w > 0
    keep_t = time_w > 0
    tau, mu, alpha, beta = product_weight_twfe(
        Y[np.ix_(keep_u, keep_t)], unit_w[keep_u], time_w[keep_t], treated_rows[keep_u], post_cols[keep_t],
    )
    n_obs_weight = float(np.nansum(panel.matrix([treated_unit], post, attribute="n_obs")))
    return SdidUnitFit(
        treated_unit=treated_unit,
        tau=tau,
        mu=mu,
        unit_fe={u: float(a) for u, a in zip([u for u, k in zip(units, keep_u) if k], alpha)},
        time_fe={t: float(b) for t, b in zip([p for p, k in zip(periods, keep_t) if k], beta)},
        omega=omega,
        lambda_=lambda_,
        donor_count=len(donors),
        n_obs_weight=n_obs_weight,
    )


def _fit_unit(panel: PanelDataset, spec: TreatmentSpec, unit: str,
              options: SdidOptions) -> Tuple[Optional[SdidUnitFit], Optional[str]]:
    observed = panel.observed_periods(unit)
    pre = [t for t in observed if t < spec.onset]
    post = [t for t in observed if t >= spec.onset]
    if len(pre) < 2:
        return None, SKIP_INSUFFICIENT_PRE
    if not post:
        return None, SKIP_NO_POST
    donors = donor_pool_for(panel, unit, spec)
    if not donors:
        return None, SKIP_NO_DONORS

    omega = solve_unit_weights(panel, unit, donors, pre, options.unit_weights, options.solver)
    lambda_ = solve_time_weights(panel, donors, pre, post, options.unit_weights.intercept, options.solver)
    return weighted_twfe_tau(panel, unit, donors, omega, lambda_, spec.onset), None


def weighted_att(taus: np.ndarray, weights: np.ndarray) -> float:
    return float(np.sum(weights * taus) / np.sum(weights))


def bootstrap_se(unit_fits: List[SdidUnitFit], n_boot: int = DEFAULT_N_BOOT, seed: int = 0) -> float:
    """SD of the weighted ATT over resamples of treated-unit effects drawn with replacement"""
    if not unit_fits:
        raise EstimationError("bootstrap needs at least one unit fit")
    if n_boot < 1:
        raise PanelValidationError(f"n_boot must be >= 1, got {n_boot}")
    taus = np.array([f.tau for f in unit_fits])
    weights = np.array([f.n_obs_weight for f in unit_fits])
    rng = np.random.default_rng(seed)
    draws = rng.integers(0, len(unit_fits), size=(n_boot, len(unit_fits)))
    stats = np.sum(weights[draws] * taus[draws], axis=1) / np.sum(weights[draws], axis=1)
    return float(np.std(stats))


def _refit_replicate(panel: PanelDataset, spec: TreatmentSpec, unit_fits: List[SdidUnitFit],
                     seed_seq: np.random.SeedSequence, options: SdidOptions) -> float:
    rng = np.random.default_rng(seed_seq)
    picks = rng.integers(0, len(unit_fits), size=len(unit_fits))
    taus, weights = [], []
    for pick in picks:
        fit = unit_fits[pick]
        donors = list(fit.omega.keys)
        drawn = [donors[i] for i in rng.integers(0, len(donors), size=len(donors))]
        pre = list(fit.lambda_.keys)
        post = [t for t in panel.observed_periods(fit.treated_unit) if t >= spec.onset]
        treated = panel.matrix([fit.treated_unit], pre + post)[0]
        block = panel.matrix(drawn, pre + post)
        n_pre = len(pre)

        slots = list(range(len(drawn)))
        omega = _unit_weight_program(treated[:n_pre], block[:, :n_pre], slots, options.unit_weights, options.solver)
        lambda_ = _time_weight_program(block[:, :n_pre], block[:, n_pre:], pre,
                                       options.unit_weights.intercept, options.solver)
        Y = np.vstack([treated, block])
        unit_w = np.concatenate([[1.0], omega.values])
        time_w = np.concatenate([lambda_.values, np.full(len(post), 1.0 / len(post))])
        treated_rows = np.arange(len(drawn) + 1) == 0
        post_cols = np.arange(len(pre) + len(post)) >= n_pre
        tau, _, _, _ = product_weight_twfe(Y, unit_w, time_w, treated_rows, post_cols)
        taus.append(tau)
        weights.append(fit.n_obs_weight)
    return weighted_att(np.array(taus), np.array(weights))


def bootstrap_refit_se(panel: PanelDataset, spec: TreatmentSpec, unit_fits: List[SdidUnitFit],
                       n_boot: int, seed: int, options: SdidOptions) -> float:
    """Slow bootstrap: resample treated units and their donors, re-solving the weights each time"""
    children = np.random.SeedSequence(seed).spawn(n_boot)
    stats = Parallel(n_jobs=options.n_jobs, prefer="threads")(
        delayed(_refit_replicate)(panel, spec, unit_fits, child, options) for child in children
    )
    return float(np.std(np.array(stats)))


def sdid_per_unit(panel: PanelDataset, spec: TreatmentSpec, n_boot: int = DEFAULT_N_BOOT,
                  options: SdidOptions = SdidOptions()) -> SdidFit:
    """Fit SDiD separately for each treated unit and aggregate an n_obs-weighted ATT"""
    spec.validate(panel)
    treated_units = sorted(spec.treated)
    results = Parallel(n_jobs=options.n_jobs, prefer="threads")(
        delayed(_fit_unit)(panel, spec, unit, options) for unit in treated_units
    )

    unit_fits: List[SdidUnitFit] = []
    skipped: List[Tuple[str, str]] = []
    for unit, (fit, reason) in zip(treated_units, results):
        if fit is None:
            logger.warning(f"Skipping treated unit {unit}: {reason}")
            skipped.append((unit, reason))
        else:
            unit_fits.append(fit)
    if not unit_fits:
        raise EstimationError(f"no treated unit could be fitted ({len(skipped)} skipped)")

    att = weighted_att(np.array([f.tau for f in unit_fits]), np.array([f.n_obs_weight for f in unit_fits]))
    if options.bootstrap_mode == "refit":
        se = bootstrap_refit_se(panel, spec, unit_fits, n_boot, options.seed, options)
    else:
        se = bootstrap_se(unit_fits, n_boot, options.seed)

    logger.info(
        f"SDiD: {len(unit_fits)} treated units fitted, {len(skipped)} skipped; "
        f"ATT={att:.6g} (bootstrap SE {se:.6g}, {n_boot} draws)"
    )
    return SdidFit(
        unit_fits=unit_fits,
        skipped=skipped,
        att=att,
        se_bootstrap=se,
        n_boot=n_boot,
        bootstrap_mode=options.bootstrap_mode,
        seed=options.seed,
    )
