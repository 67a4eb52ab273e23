from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Tuple
import logging

import numpy as np
import pandas as pd

from src.core.errors import PanelValidationError

logger = logging.getLogger(__name__)


class TaskClass(Enum):
    AUTOMATIVE = "automative"
    AUGMENTATIVE = "augmentative"
    NEITHER = "neither"


class ExposureVariant(Enum):
    OVERALL = "overall"
    AUTOMATIVE = "automative"
    AUGMENTATIVE = "augmentative"


@dataclass(frozen=True)
class TaskRecord:
    """One O*NET task, already mapped to a Census-2010 occupation code"""
    occupation: str
    task_id: str
    prompt_share: float
    classification: TaskClass


@dataclass(frozen=True)
class ExposureScore:
    occupation: str
    overall: float
    automative: float
    augmentative: float
    n_tasks: int

    def score(self, variant: ExposureVariant) -> float:
        return getattr(self, variant.value)


def compute_exposure(tasks: List[TaskRecord]) -> List[ExposureScore]:
    """Share of each occupation's tasks with any associated prompts, overall and by task class.

    Every variant shares the denominator ``n_tasks``; only the positivity of
    ``prompt_share`` matters.
    """
    seen = set()
    counts: Dict[str, List[int]] = {}
    for task in tasks:
        if not task.occupation:
            raise PanelValidationError(f"task '{task.task_id}' has no occupation")
        if task.prompt_share < 0 or not np.isfinite(task.prompt_share):
            raise PanelValidationError(
                f"negative or non-finite prompt_share {task.prompt_share} for "
                f"task '{task.task_id}' in occupation '{task.occupation}'"
            )
        key = (task.occupation, task.task_id)
        if key in seen:
            raise PanelValidationError(f"duplicate task '{task.task_id}' in occupation '{task.occupation}'")
        seen.add(key)

        # n_tasks, prompted, prompted automative, prompted augmentative
        tally = counts.setdefault(task.occupation, [0, 0, 0, 0])
        tally[0] += 1
        if task.prompt_share > 0:
            tally[1] += 1
            if task.classification is TaskClass.AUTOMATIVE:
                tally[2] += 1
            elif task.classification is TaskClass.AUGMENTATIVE:
                tally[3] += 1

    scores = []
    for occupation in sorted(counts):
        n_tasks, prompted, automative, augmentative = counts[occupation]
        if n_tasks == 0:
            raise PanelValidationError(f"occupation '{occupation}' has no tasks")
        scores.append(ExposureScore(
            occupation=occupation,
            overall=prompted / n_tasks,
            automative=automative / n_tasks,
            augmentative=augmentative / n_tasks,
            n_tasks=n_tasks,
        ))
    logger.info(f"Computed exposure for {len(scores)} occupations from {len(tasks)} tasks")
    return scores


def binarize_above_median(scores: List[ExposureScore],
                          variant: ExposureVariant = ExposureVariant.OVERALL) -> Tuple[frozenset, frozenset]:
    """Treated = strictly above the median, so a mass point at the median stays in controls"""
    if len(scores) < 2:
        raise PanelValidationError(f"median split needs at least 2 occupations, got {len(scores)}")
    values = np.array([s.score(variant) for s in scores])
    median = float(np.median(values))
    treated = frozenset(s.occupation for s in scores if s.score(variant) > median)
    controls = frozenset(s.occupation for s in scores) - treated
    logger.info(
        f"Median {variant.value} exposure {median:.6g} over {len(scores)} occupations: "
        f"{len(treated)} treated, {len(controls)} controls"
    )
    return treated, controls


def quartile_bins(scores: List[ExposureScore],
                  variant: ExposureVariant = ExposureVariant.OVERALL) -> Dict[str, int]:
    """Quartile 1..4 per occupation; a score equal to a cutpoint goes to the lower bin"""
    if len(scores) < 4:
        raise PanelValidationError(f"quartile bins need at least 4 occupations, got {len(scores)}")
    values = np.array([s.score(variant) for s in scores])
    cutpoints = np.percentile(values, [25, 50, 75])
    return {
        s.occupation: 1 + int(np.sum(s.score(variant) > cutpoints))
        for s in scores
    }


def most_exposed(scores: List[ExposureScore], variant: ExposureVariant = ExposureVariant.OVERALL,
                 n: int = 6) -> List[ExposureScore]:
    ranked = sorted(scores, key=lambda s: (-s.score(variant), s.occupation))
    return ranked[:n]


def exposure_frame(scores: List[ExposureScore]) -> pd.DataFrame:
    """Scores with quartile and treatment columns for every variant"""
    frame = pd.DataFrame(
        [(s.occupation, s.overall, s.automative, s.augmentative, s.n_tasks) for s in scores],
        columns=["occupation", "overall", "automative", "augmentative", "n_tasks"],
    )
    for variant in ExposureVariant:
        bins = quartile_bins(scores, variant) if len(scores) >= 4 else {}
        treated, _ = binarize_above_median(scores, variant)
        frame[f"quartile_{variant.value}"] = frame["occupation"].map(bins).astype("Int64")
        frame[f"treated_{variant.value}"] = frame["occupation"].isin(treated).astype(int)
    return frame.sort_values("occupation", kind="mergesort").reset_index(drop=True)
