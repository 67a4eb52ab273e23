from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple, Union
import logging

import pandas as pd

from src.config import AppConfig
from src.core.errors import EstimationError, PanelValidationError
from src.core.panel_model import (
    DEFAULT_ONSET,
    EARNINGS_LABEL,
    UNEMPLOYMENT_LABEL,
    PanelDataset,
    TimeIndex,
    TreatmentSpec,
)
from src.analysis.trends import change_since_onset, quartile_trends, window_means
from src.estimation.did import continuous_did, continuous_event_study, event_study, twfe_did
from src.estimation.sdid import SdidOptions, UnitWeightOptions, sdid_per_unit
from src.ingest.exposure import (
    ExposureScore,
    ExposureVariant,
    binarize_above_median,
    compute_exposure,
    exposure_frame,
    most_exposed,
    quartile_bins,
)
from src.ingest.micro import aggregate_earnings, aggregate_unemployment, flag_topcoded
from src.simulation.simlab import ESTIMATORS, McReport, load_config, monte_carlo
from src.storage.csv_store import CsvStore
from src.utils.helpers import write_json
from src.utils.manifest_store import ManifestStore, RunManifest

PathLike = Union[str, Path]

PRE_WINDOW_MONTHS = 24


class PipelineService:
    """Runs one command end to end: read inputs, estimate, write outputs plus a manifest.

    Every method returns the output paths it wrote, keyed by role.
    """

    def __init__(self, config: AppConfig, output_dir: Optional[PathLike] = None):
        self.config = config
        self.output_dir = Path(output_dir or config.output_dir)
        self.store = CsvStore()
        self.manifests = ManifestStore(self.output_dir)
        self.logger = logging.getLogger(__name__)

    # -- shared plumbing -------------------------------------------------

    def _finish(self, manifest: RunManifest, outputs: Dict[str, Path]) -> Dict[str, Path]:
        for name, path in sorted(outputs.items()):
            manifest.add_output(name, path)
        self.manifests.save(manifest)
        return outputs

    def _load_scores(self, manifest: RunManifest, exposure_path: PathLike) -> List[ExposureScore]:
        manifest.add_input("exposure", exposure_path)
        return self.store.read_scores(exposure_path)

    def _treatment(self, manifest: RunManifest, panel: PanelDataset, onset: TimeIndex,
                   treatment_path: Optional[PathLike], exposure_path: Optional[PathLike],
                   variant: ExposureVariant) -> TreatmentSpec:
        """Treatment from an explicit assignment file or from a median split of exposure scores"""
        if treatment_path is not None:
            manifest.add_input("treatment", treatment_path)
            treated, controls = self.store.read_treatment(treatment_path)
        elif exposure_path is not None:
            scores = self._scores_in_panel(panel, self._load_scores(manifest, exposure_path))
            treated, controls = binarize_above_median(scores, variant)
        else:
            raise PanelValidationError("either a treatment file or an exposure file is required")
        return TreatmentSpec.for_panel(panel, treated, controls, onset)

    def _scores_in_panel(self, panel: PanelDataset, scores: List[ExposureScore]) -> List[ExposureScore]:
        units = set(panel.units)
        kept = [s for s in scores if s.occupation in units]
        if len(kept) < len(scores):
            self.logger.warning(f"{len(scores) - len(kept)} scored occupations are not in the panel; ignored")
        return kept

    def _exposure_panel(self, panel: PanelDataset, scores: List[ExposureScore],
                        variant: ExposureVariant) -> Tuple[PanelDataset, Dict[str, float]]:
        """Panel restricted to scored occupations, with the chosen exposure per unit"""
        scores = self._scores_in_panel(panel, scores)
        exposure = {s.occupation: s.score(variant) for s in scores}
        dropped = len(panel.units) - len(exposure)
        if dropped:
            self.logger.warning(f"{dropped} panel occupations have no exposure score; dropped")
        return panel.subset(exposure), exposure

    # -- commands --------------------------------------------------------

    def ingest(self, micro_path: PathLike, deflator_path: Optional[PathLike] = None) -> Dict[str, Path]:
        """Aggregate micro records into the unemployment panel and, given a deflator, the earnings panel"""
        manifest = self.manifests.new_manifest("ingest", {"deflated": deflator_path is not None})
        try:
            manifest.add_input("micro", micro_path)
            records = self.store.read_micro(micro_path)
            outputs = {
                "unemployment": self.store.write_panel(
                    aggregate_unemployment(records), self.output_dir / f"{UNEMPLOYMENT_LABEL}.csv"
                ),
            }
            if deflator_path is not None:
                manifest.add_input("deflator", deflator_path)
                deflator = self.store.read_deflator(deflator_path)
                outputs["earnings"] = self.store.write_panel(
                    aggregate_earnings(records, deflator), self.output_dir / f"{EARNINGS_LABEL}.csv"
                )
                report = flag_topcoded(records)
                outputs["topcode_share"] = self.store.write_frame(
                    report.cell_share, self.output_dir / "topcode_share.csv"
                )
            return self._finish(manifest, outputs)
        except Exception as e:
            self.logger.error(f"Error ingesting micro records: {str(e)}")
            raise

    def exposure(self, tasks_path: PathLike, variant: ExposureVariant = ExposureVariant.OVERALL,
                 n_top: int = 6) -> Dict[str, Path]:
        manifest = self.manifests.new_manifest("exposure", {"variant": variant.value, "n_top": n_top})
        try:
            manifest.add_input("tasks", tasks_path)
            scores = compute_exposure(self.store.read_tasks(tasks_path))
            top = most_exposed(scores, variant, n_top)
            top_frame = pd.DataFrame(
                [(rank, s.occupation, s.score(variant)) for rank, s in enumerate(top, start=1)],
                columns=["rank", "occupation", variant.value],
            )
            outputs = {
                "scores": self.store.write_frame(exposure_frame(scores), self.output_dir / "exposure_scores.csv"),
                "most_exposed": self.store.write_frame(top_frame, self.output_dir / "most_exposed.csv"),
            }
            return self._finish(manifest, outputs)
        except Exception as e:
            self.logger.error(f"Error computing exposure scores: {str(e)}")
            raise

    def did(self, panel_path: PathLike, treatment_path: Optional[PathLike] = None,
            exposure_path: Optional[PathLike] = None, variant: ExposureVariant = ExposureVariant.OVERALL,
            onset: TimeIndex = DEFAULT_ONSET, weighted: bool = True, continuous: bool = False) -> Dict[str, Path]:
        """TWFE DiD coefficient table; ``continuous`` uses exposure x post instead of the median split"""
        manifest = self.manifests.new_manifest("did", {
            "onset": str(onset), "weighted": weighted, "continuous": continuous, "variant": variant.value,
        })
        try:
            manifest.add_input("panel", panel_path)
            panel = self.store.read_panel(panel_path)
            if continuous:
                if exposure_path is None:
                    raise PanelValidationError("continuous DiD needs an exposure file")
                sample, exposure = self._exposure_panel(panel, self._load_scores(manifest, exposure_path), variant)
                fit = continuous_did(sample, exposure, onset, weight_by_nobs=weighted)
                regressor = f"{variant.value}_exposure_x_post"
            else:
                spec = self._treatment(manifest, panel, onset, treatment_path, exposure_path, variant)
                fit = twfe_did(panel, spec, weight_by_nobs=weighted)
                regressor = "treated_x_post"

            payload = {
                "outcome": panel.outcome_label,
                "onset": str(onset),
                "regressor": regressor,
                "coefficients": {regressor: fit.summary()},
            }
            outputs = {"summary": write_json(payload, self.output_dir / "did_summary.json")}
            return self._finish(manifest, outputs)
        except Exception as e:
            self.logger.error(f"Error running DiD: {str(e)}")
            raise

    def event_study(self, panel_path: PathLike, treatment_path: Optional[PathLike] = None,
                    exposure_path: Optional[PathLike] = None,
                    variant: ExposureVariant = ExposureVariant.OVERALL, onset: TimeIndex = DEFAULT_ONSET,
                    weighted: bool = True, continuous: bool = False) -> Dict[str, Path]:
        manifest = self.manifests.new_manifest("event-study", {
            "onset": str(onset), "weighted": weighted, "continuous": continuous, "variant": variant.value,
        })
        try:
            manifest.add_input("panel", panel_path)
            panel = self.store.read_panel(panel_path)
            if continuous:
                if exposure_path is None:
                    raise PanelValidationError("continuous event study needs an exposure file")
                sample, exposure = self._exposure_panel(panel, self._load_scores(manifest, exposure_path), variant)
                fit = continuous_event_study(sample, exposure, onset, weight_by_nobs=weighted)
            else:
                spec = self._treatment(manifest, panel, onset, treatment_path, exposure_path, variant)
                fit = event_study(panel, spec, weight_by_nobs=weighted)

            table = fit.to_frame()
            payload = {
                "outcome": panel.outcome_label,
                "onset": str(onset),
                "omitted_k": fit.omitted_k,
                "n_cells": fit.n_cells,
                "n_clusters": fit.n_clusters,
                "weighted": fit.weighted,
                "coefficients": table.to_dict(orient="records"),
            }
            outputs = {
                "summary": write_json(payload, self.output_dir / "event_study.json"),
                "coefficients": self.store.write_frame(table, self.output_dir / "event_study.csv"),
            }
            return self._finish(manifest, outputs)
        except Exception as e:
            self.logger.error(f"Error running event study: {str(e)}")
            raise

    def sdid(self, panel_path: PathLike, treatment_path: Optional[PathLike] = None,
             exposure_path: Optional[PathLike] = None, variant: ExposureVariant = ExposureVariant.OVERALL,
             onset: TimeIndex = DEFAULT_ONSET, n_boot: Optional[int] = None, bootstrap_mode: str = "units",
             ridge: float = 0.0, intercept: bool = False, bins: int = 20) -> Dict[str, Path]:
        n_boot = n_boot or self.config.n_boot
        options = SdidOptions(
            unit_weights=UnitWeightOptions(ridge=ridge, intercept=intercept),
            bootstrap_mode=bootstrap_mode,
            seed=self.config.seed,
            n_jobs=self.config.threads,
        )
        manifest = self.manifests.new_manifest("sdid", {
            "onset": str(onset), "n_boot": n_boot, "bootstrap_mode": bootstrap_mode, "seed": options.seed,
            "ridge": ridge, "intercept": intercept, "variant": variant.value, "bins": bins,
        })
        try:
            manifest.add_input("panel", panel_path)
            panel = self.store.read_panel(panel_path)
            spec = self._treatment(manifest, panel, onset, treatment_path, exposure_path, variant)
            fit = sdid_per_unit(panel, spec, n_boot=n_boot, options=options)

            payload = dict(fit.summary(), outcome=panel.outcome_label, onset=str(onset))
            outputs = {
                "summary": write_json(payload, self.output_dir / "sdid_summary.json"),
                "units": self.store.write_frame(fit.unit_frame(), self.output_dir / "sdid_units.csv"),
                "tau_histogram": self.store.write_frame(fit.tau_histogram(bins), self.output_dir / "sdid_tau_hist.csv"),
            }
            return self._finish(manifest, outputs)
        except Exception as e:
            self.logger.error(f"Error running SDiD: {str(e)}")
            raise

    def _rmse_difference(self, report: McReport) -> Optional[Dict[str, float]]:
        try:
            diff, se = report.rmse_difference("sdid", "did")
        except EstimationError as e:
            self.logger.warning(f"RMSE difference not reported: {str(e)}")
            return None
        return {"estimate": diff, "mcse": se}

    def simulate(self, config_path: PathLike, n_reps: int, estimators: Iterable[str] = ESTIMATORS,
                 n_boot: int = 200) -> Dict[str, Path]:
        estimators = sorted(set(estimators))
        manifest = self.manifests.new_manifest("simulate", {
            "n_reps": n_reps, "estimators": estimators, "n_boot": n_boot,
        })
        try:
            manifest.add_input("config", config_path)
            dgp = load_config(config_path)
            report = monte_carlo(dgp, n_reps, estimators, n_boot=n_boot, n_jobs=self.config.threads)
            payload = report.model_dump(exclude={"replications"})
            if set(ESTIMATORS) <= set(estimators):
                payload["rmse_difference_sdid_minus_did"] = self._rmse_difference(report)
            outputs = {
                "report": write_json(payload, self.output_dir / "simulate_report.json"),
                "replications": self.store.write_frame(
                    report.replication_frame(), self.output_dir / "simulate_replications.csv"
                ),
            }
            return self._finish(manifest, outputs)
        except Exception as e:
            self.logger.error(f"Error running simulation: {str(e)}")
            raise

    def trends(self, panel_path: PathLike, exposure_path: PathLike,
               variant: ExposureVariant = ExposureVariant.OVERALL,
               onset: TimeIndex = DEFAULT_ONSET) -> Dict[str, Path]:
        """Plot-ready quartile trends plus pre-window levels and changes since onset by treatment group"""
        manifest = self.manifests.new_manifest("trends", {"onset": str(onset), "variant": variant.value})
        try:
            manifest.add_input("panel", panel_path)
            panel = self.store.read_panel(panel_path)
            scores = self._scores_in_panel(panel, self._load_scores(manifest, exposure_path))
            table = quartile_trends(panel, quartile_bins(scores, variant))

            treated, controls = binarize_above_median(scores, variant)
            groups = {"treated": treated, "control": controls}
            pre_start = onset.shift(-PRE_WINDOW_MONTHS)
            payload = {
                "outcome": panel.outcome_label,
                "onset": str(onset),
                "pre_window": {"start": str(pre_start), "end": str(onset.shift(-1))},
                "pre_window_means": window_means(panel, groups, pre_start, onset.shift(-1)),
                "change_since_onset": change_since_onset(panel, groups, onset, panel.periods[-1]),
            }
            outputs = {
                "trends": self.store.write_frame(table, self.output_dir / "trends.csv"),
                "summary": write_json(payload, self.output_dir / "trends_summary.json"),
            }
            return self._finish(manifest, outputs)
        except Exception as e:
            self.logger.error(f"Error computing trends: {str(e)}")
            raise
