"""Per-stratum balanced experiments: sampling, CV accuracy, importance reports."""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from . import gbm
from .data import Axis, UserClass
from .engine import FeatureMatrix
from .grammar import FeatureCategory

log = logging.getLogger(__name__)

REPORT_HEADER = ["kind", "name", "category", "mean", "std", "median", "q25", "q75"]
ACCURACY_HEADER = ["task", "axis", "stratum", "n_rows", "mean", "std"]
SKIP_HEADER = ["task", "axis", "stratum", "reason"]
SUITE_STRATA = [
    (Axis.GENDER, "Male"),
    (Axis.GENDER, "Female"),
    (Axis.DISTRICT_KIND, "Urban"),
    (Axis.DISTRICT_KIND, "Rural"),
    (Axis.DISTRICT_WEALTH, "Rich"),
    (Axis.DISTRICT_WEALTH, "Poor"),
]


class Task(Enum):
    ADOPTION_VS_VOICE = "AdoptionVsVoice"
    P2P_VS_VOICE = "P2PVsVoice"


class InsufficientDataError(ValueError):
    pass


def task_label(user_class: UserClass, task: Task) -> int | None:
    """1 / 0 for the task's positive / negative class, None when the row takes no part."""
    if user_class is UserClass.VOICE_ONLY:
        return 0
    if task is Task.ADOPTION_VS_VOICE:
        return 1
    return 1 if user_class is UserClass.P2P else None


@dataclass
class ExperimentSpec:
    task: Task
    axis: Axis
    stratum: str
    seed: int = 0
    params: gbm.GBMParams = field(default_factory=gbm.GBMParams)
    k: int = 5
    repeats: int = 10
    min_n: int = 20


def _eligible(matrix: FeatureMatrix, spec: ExperimentSpec) -> tuple[np.ndarray, np.ndarray]:
    if matrix.classes is None:
        raise ValueError("feature matrix carries no user classes")
    if matrix.strata is None or spec.axis not in matrix.strata:
        raise ValueError(f"feature matrix carries no {spec.axis.value} strata")
    strata = matrix.strata[spec.axis]
    rows, labels = [], []
    for i, (cls, s) in enumerate(zip(matrix.classes, strata)):
        lab = task_label(cls, spec.task)
        if lab is not None and s == spec.stratum:
            rows.append(i)
            labels.append(lab)
    return np.array(rows, dtype=np.int64), np.array(labels, dtype=np.int64)


def balanced_sample(matrix: FeatureMatrix, spec: ExperimentSpec) -> np.ndarray:
    """Row indices: the whole minority class plus an equal-sized seeded draw from the majority."""
    rows, labels = _eligible(matrix, spec)
    pos, neg = rows[labels == 1], rows[labels == 0]
    if min(len(pos), len(neg)) < spec.min_n:
        raise InsufficientDataError(
            f"{spec.task.value}/{spec.stratum}: {len(pos)} positives and {len(neg)} negatives, "
            f"need min_n={spec.min_n} of each"
        )
    minority, majority = (pos, neg) if len(pos) <= len(neg) else (neg, pos)
    rng = np.random.default_rng([spec.seed, 7])
    drawn = rng.choice(majority, size=len(minority), replace=False)
    return np.sort(np.concatenate([minority, drawn]))


@dataclass
class FeatureImportanceRow:
    name: str
    category: str
    mean: float
    std: float


@dataclass
class CategoryRow:
    category: str
    mean: float
    std: float
    median: float
    q25: float
    q75: float


@dataclass
class ImportanceReport:
    spec: ExperimentSpec
    subscriber_ids: list[str]
    features: list[FeatureImportanceRow]
    categories: list[CategoryRow]
    fold_accuracies: list[float]

    @property
    def accuracy_mean(self) -> float:
        return float(np.mean(self.fold_accuracies))

    @property
    def accuracy_std(self) -> float:
        return float(np.std(self.fold_accuracies))

    def category_means(self) -> dict[str, float]:
        return {c.category: c.mean for c in self.categories}

    def rows(self) -> list[list[str]]:
        out = [["feature", f.name, f.category, repr(f.mean), repr(f.std), "", "", ""] for f in self.features]
        out += [["category", c.category, c.category, repr(c.mean), repr(c.std), repr(c.median),
                 repr(c.q25), repr(c.q75)] for c in self.categories]
        out += [["fold", f"fold_{i}", "", repr(a), "", "", "", ""] for i, a in enumerate(self.fold_accuracies)]
        out.append(["accuracy", "mean", "", repr(self.accuracy_mean), "", "", "", ""])
        out.append(["accuracy", "std", "", repr(self.accuracy_std), "", "", "", ""])
        return out

    @property
    def filename(self) -> str:
        return f"importance_{self.spec.task.value}_{self.spec.stratum}.csv"

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(REPORT_HEADER)
            w.writerows(self.rows())


def aggregate_categories(features: list[FeatureImportanceRow]) -> list[CategoryRow]:
    out = []
    for cat in FeatureCategory:
        vals = np.array([f.mean for f in features if f.category == cat.value])
        if len(vals) == 0:
            continue
        q25, med, q75 = np.percentile(vals, [25, 50, 75])
        out.append(CategoryRow(cat.value, float(vals.mean()), float(vals.std()), float(med), float(q25), float(q75)))
    return out


def run_experiment(spec: ExperimentSpec, matrix: FeatureMatrix) -> ImportanceReport:
    """Balanced sample -> k-fold CV -> holdout permutation importance per fold -> report."""
    idx = balanced_sample(matrix, spec)
    labels = np.array([task_label(matrix.classes[i], spec.task) for i in idx], dtype=np.int64)
    X = matrix.values[idx]
    cv = gbm.cross_validate(X, labels, k=spec.k, seed=spec.seed, params=spec.params)
    per_fold = []
    for f, model in enumerate(cv.models):
        test = cv.folds == f
        per_fold.append(gbm.permutation_importance(model, X[test], labels[test], repeats=spec.repeats,
                                                   seed=(spec.seed, 1000 + f), return_repeats=True))
    stacked = np.vstack(per_fold)
    cats = matrix.categories
    features = [
        FeatureImportanceRow(name, cat, float(m), float(s))
        for name, cat, m, s in zip(matrix.descriptor_names, cats, stacked.mean(axis=0), stacked.std(axis=0))
    ]
    log.info("%s/%s: n=%d accuracy=%.3f", spec.task.value, spec.stratum, len(idx), cv.mean)
    return ImportanceReport(spec, [matrix.subscriber_ids[i] for i in idx], features,
                            aggregate_categories(features), cv.fold_accuracies)


@dataclass
class SkipRecord:
    task: Task
    axis: Axis
    stratum: str
    reason: str


@dataclass
class SuiteResult:
    reports: list[ImportanceReport]
    skipped: list[SkipRecord]

    def accuracy_rows(self) -> list[list[str]]:
        return [[r.spec.task.value, r.spec.axis.value, r.spec.stratum, str(len(r.subscriber_ids)),
                 repr(r.accuracy_mean), repr(r.accuracy_std)] for r in self.reports]

    def write(self, out_dir) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        written = []
        for r in self.reports:
            r.write_csv(out / r.filename)
            written.append(out / r.filename)
        for name, header, rows in (
            ("accuracy_summary.csv", ACCURACY_HEADER, self.accuracy_rows()),
            ("skipped.csv", SKIP_HEADER,
             [[s.task.value, s.axis.value, s.stratum, s.reason] for s in self.skipped]),
        ):
            with open(out / name, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(header)
                w.writerows(rows)
            written.append(out / name)
        return written


def run_suite(matrix: FeatureMatrix, seed: int = 0, params: gbm.GBMParams | None = None, k: int = 5,
              repeats: int = 10, min_n: int = 20, tasks=tuple(Task), strata=tuple(SUITE_STRATA),
              threads: int = 1) -> SuiteResult:
    """Both tasks x six strata. Cells lacking data become skip records instead of failing."""
    if matrix.strata is None or any(a not in matrix.strata for a, _ in SUITE_STRATA):
        raise ValueError("feature matrix must carry gender, district and wealth strata")
    params = params or gbm.GBMParams()
    specs = [ExperimentSpec(t, a, s, seed, params, k, repeats, min_n) for t in tasks for a, s in strata]

    def cell(spec):
        try:
            return run_experiment(spec, matrix)
        except InsufficientDataError as exc:
            return SkipRecord(spec.task, spec.axis, spec.stratum, str(exc))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(cell, specs))
    else:
        results = [cell(s) for s in specs]
    reports = [r for r in results if isinstance(r, ImportanceReport)]
    skipped = [r for r in results if isinstance(r, SkipRecord)]
    for s in skipped:
        log.warning("skipped %s/%s: %s", s.task.value, s.stratum, s.reason)
    return SuiteResult(reports, skipped)
