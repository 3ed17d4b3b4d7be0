from __future__ import annotations

import io
import logging
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Protocol

import numpy as np
import pandas as pd
from modules.chirp_core import ChirpParams, SensingGeometry
from modules.classifier import SvmHyperparams, fit_scaler, labels_of, predict, train_linear_svm
from modules.echo_features import ExtractionConfig, FeatureMatrix
from modules.enums import ActionClass, FeatureKind, GroupBy, ReportFormat
from modules.errors import DataError, LeakageError, ParameterError, UsageError
from modules.manifest import DatasetManifest, ManifestRecord, Selector
from modules.settings import read_conditions
from modules.tasks import TaskQueue
from sklearn.metrics import confusion_matrix
from sklearn.model_selection import train_test_split
from threads.extractor import ExtractTask, cache_key

if TYPE_CHECKING:
    from collections.abc import Callable, Iterable, Sequence
    from pathlib import Path

logger = logging.getLogger()

CLASSIFIER_NAME = "linear-svm"
N_CLASSES = len(ActionClass)


class ConditionMode(Enum):
    HOLDOUT = "holdout"
    "Stratified split of the train selection"

    TRANSFER = "transfer"
    "Train on one selection, evaluate on another"


@dataclass(frozen=True)
class Condition:
    name: str
    train: Selector
    eval: Selector | None = None
    mode: ConditionMode = ConditionMode.TRANSFER
    test_size: float = 0.3

    def __post_init__(self):
        if self.mode is ConditionMode.TRANSFER and self.eval is None:
            raise UsageError(f"condition {self.name!r}: transfer mode needs an eval selector")
        if not 0.0 < self.test_size < 1.0:
            raise UsageError(f"condition {self.name!r}: test_size must lie in (0, 1)")

    @property
    def eval_description(self) -> str:
        if self.mode is ConditionMode.HOLDOUT:
            return f"{self.train} ({self.test_size:.0%} held out)"
        return str(self.eval)

    @classmethod
    def from_dict(cls, name: str, dct: dict) -> Condition:
        try:
            mode = ConditionMode(str(dct.get("mode", "transfer")).strip().lower())
        except ValueError:
            raise UsageError(f"condition {name!r}: unknown mode {dct.get('mode')!r}") from None
        eval_text = dct.get("eval")
        return cls(
            name=name,
            train=Selector.parse(dct.get("train")),
            eval=Selector.parse(eval_text) if eval_text else None,
            mode=mode,
            test_size=float(dct.get("test_size", 0.3)),
        )


def load_conditions(path: Path) -> list[Condition]:
    conditions = [Condition.from_dict(name, values) for name, values in read_conditions(path).items()]
    if not conditions:
        raise UsageError(f"{path} declares no conditions")
    return conditions


@dataclass
class Fold:
    index: int
    train: list[ManifestRecord]
    eval: list[ManifestRecord]
    description: str = ""

    @property
    def train_ids(self) -> set[str]:
        return {r.id for r in self.train}

    @property
    def eval_ids(self) -> set[str]:
        return {r.id for r in self.eval}


def assign_folds(keys: Sequence[str], k: int, seed: int = 0) -> np.ndarray:
    """Fold number per item; items sharing a key always share a fold.

    Groups are shuffled by the seed, then placed largest first into the currently smallest fold.
    """
    if k < 2:
        raise ParameterError(f"k must be >= 2 (got {k})")
    sizes = Counter(keys)
    groups = list(sizes)
    if len(groups) < k:
        raise ParameterError(f"{len(groups)} groups cannot fill {k} folds")

    rng = np.random.default_rng(seed)
    shuffled = [groups[i] for i in rng.permutation(len(groups))]
    shuffled.sort(key=lambda g: -sizes[g])

    fold_sizes = np.zeros(k, dtype=np.int64)
    assignment = {}
    for group in shuffled:
        fold = int(np.argmin(fold_sizes))
        assignment[group] = fold
        fold_sizes[fold] += sizes[group]
    return np.asarray([assignment[key] for key in keys], dtype=np.int64)


def split_grouped_kfold(
    manifest: DatasetManifest | Sequence[ManifestRecord],
    k: int = 4,
    group_by: GroupBy | str = GroupBy.SUBJECT,
    seed: int = 0,
) -> list[Fold]:
    records = list(manifest)
    group_by = GroupBy(group_by)
    if group_by is GroupBy.NONE:
        keys = [r.id for r in records]
    else:
        keys = [r.field_value(group_by.value) for r in records]

    folds = assign_folds(keys, k, seed)
    result = []
    for i in range(k):
        held = [r for r, f in zip(records, folds) if f == i]
        if group_by is GroupBy.NONE:
            description = f"fold {i + 1}/{k}"
        else:
            values = dict.fromkeys(r.field_value(group_by.value) for r in held)
            description = f"{group_by.value}={','.join(values)}"
        result.append(
            Fold(index=i, train=[r for r, f in zip(records, folds) if f != i], eval=held, description=description)
        )
    return result


def holdout_split(records: Sequence[ManifestRecord], test_size: float = 0.3, seed: int = 0) -> Fold:
    records = list(records)
    if len(records) < 2:
        raise DataError(f"cannot split {len(records)} records into train and eval")
    try:
        train, held = train_test_split(
            records,
            test_size=test_size,
            random_state=seed,
            stratify=[int(r.label) for r in records],
        )
    except ValueError as e:
        raise DataError(f"stratified split failed: {e}") from e
    return Fold(index=0, train=list(train), eval=list(held), description=f"{test_size:.0%} held out")


class FeatureSource(Protocol):
    def matrices(self, records: Sequence[ManifestRecord], kind: FeatureKind) -> list[FeatureMatrix]: ...


class FeatureStore:
    """Extracts each record once and keeps every window of every requested kind in memory.

    With `cache_dir` set, windows are also written to disk under a digest of the chirp, geometry
    and extraction settings, so runs with the same settings reuse them.
    """

    def __init__(
        self,
        manifest: DatasetManifest,
        params: ChirpParams | None = None,
        geometry: SensingGeometry | None = None,
        config: ExtractionConfig | None = None,
        workers: int = 1,
        cache_dir: Path | None = None,
    ):
        self.manifest = manifest
        self.params = params or ChirpParams()
        self.geometry = geometry or SensingGeometry()
        self.config = config or ExtractionConfig()
        self.workers = workers
        self.cache_dir = None if cache_dir is None else cache_dir / cache_key(self.params, self.geometry, self.config)
        self._windows: dict[tuple[str, FeatureKind], list[FeatureMatrix]] = {}

    def prefetch(self, records: Iterable[ManifestRecord], kinds: Iterable[FeatureKind]):
        kinds = tuple(kinds)
        queue = TaskQueue(worker_count=self.workers)
        for record in records:
            missing = tuple(kind for kind in kinds if (record.id, kind) not in self._windows)
            if missing:
                queue.append(
                    ExtractTask(
                        record=record,
                        wav_path=self.manifest.wav_path(record),
                        kinds=missing,
                        params=self.params,
                        geometry=self.geometry,
                        config=self.config,
                        cache_dir=self.cache_dir,
                    )
                )
        if not queue:
            return
        logger.info(f"Extracting features for {len(queue)} recordings")
        tasks = list(queue)
        for task, found in zip(tasks, queue.run()):
            for kind, windows in found.items():
                self._windows[(task.record.id, kind)] = windows

    def windows(self, record: ManifestRecord, kind: FeatureKind) -> list[FeatureMatrix]:
        if (record.id, kind) not in self._windows:
            self.prefetch([record], [kind])
        return self._windows[(record.id, kind)]

    def matrices(self, records: Sequence[ManifestRecord], kind: FeatureKind) -> list[FeatureMatrix]:
        self.prefetch(records, [kind])
        return [m for record in records for m in self._windows[(record.id, kind)]]


@dataclass(frozen=True)
class ConditionDescriptor:
    name: str
    train: str
    eval: str
    feature_kind: FeatureKind
    classifier: str = CLASSIFIER_NAME


@dataclass
class EvalReport:
    condition: ConditionDescriptor
    confusion: np.ndarray
    "Rows are true classes, columns predicted classes, in label order"

    per_fold: list[float] = field(default_factory=list)

    def __post_init__(self):
        self.confusion = np.asarray(self.confusion, dtype=np.int64)
        if self.confusion.shape != (N_CLASSES, N_CLASSES):
            raise ParameterError(f"confusion must be {N_CLASSES} x {N_CLASSES}, got {self.confusion.shape}")
        if not self.per_fold:
            self.per_fold = [self.accuracy]

    @property
    def total(self) -> int:
        return int(self.confusion.sum())

    @property
    def accuracy(self) -> float:
        total = self.total
        return float(np.trace(self.confusion)) / total if total else 0.0

    @property
    def class_counts(self) -> np.ndarray:
        return self.confusion.sum(axis=1)

    @classmethod
    def from_predictions(
        cls,
        condition: ConditionDescriptor,
        truth: Sequence[ActionClass | int],
        predicted: Sequence[ActionClass | int],
    ) -> EvalReport:
        confusion = confusion_matrix(
            [int(t) for t in truth],
            [int(p) for p in predicted],
            labels=list(range(N_CLASSES)),
        )
        return cls(condition=condition, confusion=confusion)


def combine_reports(reports: Sequence[EvalReport], name: str | None = None) -> EvalReport:
    """Pooled confusion of several folds, keeping the per-fold accuracies."""
    if not reports:
        raise ParameterError("no reports to combine")
    first = reports[0].condition
    condition = ConditionDescriptor(
        name=name or first.name,
        train=first.train if len(reports) == 1 else "folds",
        eval=" | ".join(r.condition.eval for r in reports),
        feature_kind=first.feature_kind,
        classifier=first.classifier,
    )
    return EvalReport(
        condition=condition,
        confusion=sum(r.confusion for r in reports),
        per_fold=[r.accuracy for r in reports],
    )


def select_c(
    matrices: Sequence[FeatureMatrix],
    labels: Sequence[ActionClass],
    groups: Sequence[str],
    grid: Sequence[float],
    hyperparams: SvmHyperparams | None = None,
    k: int = 4,
    trainer: Callable = train_linear_svm,
) -> float:
    """C from `grid` with the best inner k-fold accuracy on the given (training) rows; ties go to the smaller C."""
    hyperparams = hyperparams or SvmHyperparams()
    grid = sorted({float(c) for c in grid})
    if not grid:
        raise ParameterError("empty C grid")
    if len(grid) == 1:
        return grid[0]

    keys = list(groups) if len(set(groups)) >= 2 else [m.recording_id + str(m.window) for m in matrices]
    folds = assign_folds(keys, min(k, len(set(keys))), hyperparams.seed)
    labels = list(labels)

    best_c, best_accuracy = grid[0], -1.0
    for c in grid:
        params = SvmHyperparams(C=c, epochs=hyperparams.epochs, seed=hyperparams.seed)
        correct = 0
        for fold in range(int(folds.max()) + 1):
            train_idx = np.flatnonzero(folds != fold)
            eval_idx = np.flatnonzero(folds == fold)
            train_labels = [labels[i] for i in train_idx]
            if len(set(train_labels)) < 2:
                continue
            model = trainer([matrices[i] for i in train_idx], train_labels, params)
            predicted, _ = predict(model, [matrices[i] for i in eval_idx])
            correct += sum(p == labels[i] for p, i in zip(predicted, eval_idx))
        accuracy = correct / len(matrices)
        logger.debug(f"C={c:g}: inner accuracy {accuracy:.4f}")
        if accuracy > best_accuracy:
            best_c, best_accuracy = c, accuracy

    logger.info(f"Selected C={best_c:g} (inner accuracy {best_accuracy:.4f})")
    return best_c


def evaluate_split(
    store: FeatureSource,
    train: Sequence[ManifestRecord],
    held: Sequence[ManifestRecord],
    kind: FeatureKind,
    descriptor: ConditionDescriptor,
    hyperparams: SvmHyperparams | None = None,
    scaler_factory: Callable = fit_scaler,
    trainer: Callable = train_linear_svm,
    grid_c: Sequence[float] | None = None,
) -> EvalReport:
    """Fits the scaler and the classifier on `train` only, then scores `held`."""
    hyperparams = hyperparams or SvmHyperparams()
    if not train or not held:
        raise DataError(f"{descriptor.name}: empty train ({len(train)}) or eval ({len(held)}) selection")
    overlap = {r.id for r in train} & {r.id for r in held}
    if overlap:
        raise LeakageError(f"{descriptor.name}: {len(overlap)} records in both train and eval, e.g. {sorted(overlap)[0]}")

    train_matrices = store.matrices(train, kind)
    train_labels = labels_of(train_matrices)

    if grid_c:
        subjects = {r.id: r.subject for r in train}
        groups = [subjects.get(m.recording_id, m.recording_id) for m in train_matrices]
        c = select_c(train_matrices, train_labels, groups, grid_c, hyperparams, trainer=trainer)
        hyperparams = SvmHyperparams(C=c, epochs=hyperparams.epochs, seed=hyperparams.seed)

    scaler = scaler_factory(train_matrices)
    model = trainer(train_matrices, train_labels, hyperparams, scaler=scaler)

    eval_matrices = store.matrices(held, kind)
    predicted, _ = predict(model, eval_matrices)
    report = EvalReport.from_predictions(descriptor, labels_of(eval_matrices), predicted)
    logger.info(f"{descriptor.name} [{kind.value}]: accuracy {report.accuracy:.4f} on {report.total} windows")
    return report


def run_condition(
    manifest: DatasetManifest,
    condition: Condition,
    kind: FeatureKind,
    hyperparams: SvmHyperparams | None = None,
    store: FeatureSource | None = None,
    seed: int = 0,
    **kwargs,
) -> EvalReport:
    store = store or FeatureStore(manifest)
    if condition.mode is ConditionMode.HOLDOUT:
        fold = holdout_split(manifest.select(condition.train), condition.test_size, seed)
        train, held = fold.train, fold.eval
    else:
        train, held = manifest.select(condition.train), manifest.select(condition.eval)

    descriptor = ConditionDescriptor(
        name=condition.name,
        train=str(condition.train),
        eval=condition.eval_description,
        feature_kind=kind,
    )
    return evaluate_split(store, train, held, kind, descriptor, hyperparams, **kwargs)


def run_xval(
    manifest: DatasetManifest,
    kind: FeatureKind,
    k: int = 4,
    group_by: GroupBy | str = GroupBy.SUBJECT,
    hyperparams: SvmHyperparams | None = None,
    store: FeatureSource | None = None,
    seed: int = 0,
    **kwargs,
) -> list[EvalReport]:
    """One report per fold; `combine_reports` pools them."""
    store = store or FeatureStore(manifest)
    reports = []
    for fold in split_grouped_kfold(manifest, k, group_by, seed):
        descriptor = ConditionDescriptor(
            name=f"xval-{fold.index + 1}",
            train=f"all but {fold.description}",
            eval=fold.description,
            feature_kind=kind,
        )
        reports.append(evaluate_split(store, fold.train, fold.eval, kind, descriptor, hyperparams, **kwargs))
    return reports


def comparison_table(reports: Iterable[EvalReport]) -> pd.DataFrame:
    """Accuracy per condition (rows) and feature kind (columns)."""
    rows = [
        {"condition": r.condition.name, "feature_kind": r.condition.feature_kind.value, "accuracy": r.accuracy}
        for r in reports
    ]
    table = pd.DataFrame(rows).pivot_table(
        index="condition", columns="feature_kind", values="accuracy", aggfunc="mean", sort=False
    )
    kinds = [kind.value for kind in FeatureKind if kind.value in table.columns]
    return table[kinds]


def _confusion_frame(report: EvalReport) -> pd.DataFrame:
    slugs = [c.slug for c in ActionClass]
    return pd.DataFrame(report.confusion, index=pd.Index(slugs, name="true"), columns=slugs)


def _csv_rows(reports: Sequence[EvalReport]) -> pd.DataFrame:
    rows = []
    for r in reports:
        row = {
            "condition": r.condition.name,
            "train": r.condition.train,
            "eval": r.condition.eval,
            "feature_kind": r.condition.feature_kind.value,
            "classifier": r.condition.classifier,
            "accuracy": r.accuracy,
            "per_fold": ";".join(repr(float(a)) for a in r.per_fold),
        }
        for i in range(N_CLASSES):
            for j in range(N_CLASSES):
                row[f"cm_{i}_{j}"] = int(r.confusion[i, j])
        rows.append(row)
    return pd.DataFrame(rows)


def emit_report(reports: EvalReport | Sequence[EvalReport], fmt: ReportFormat | str = ReportFormat.TEXT) -> str:
    if isinstance(reports, EvalReport):
        reports = [reports]
    try:
        fmt = ReportFormat(fmt)
    except ValueError:
        raise UsageError(
            f"Unknown report format {fmt!r}; choose from {', '.join(f.value for f in ReportFormat)}"
        ) from None

    if fmt is ReportFormat.CSV:
        buffer = io.StringIO()
        _csv_rows(reports).to_csv(buffer, index=False, float_format="%.17g")
        return buffer.getvalue()

    parts = ["Accuracy", comparison_table(reports).to_string(float_format=lambda v: f"{v:.4f}"), ""]
    for r in reports:
        c = r.condition
        folds = ", ".join(f"{a:.4f}" for a in r.per_fold)
        parts.append(f"{c.name} [{c.feature_kind.value}, {c.classifier}]  train: {c.train}  eval: {c.eval}")
        parts.append(f"accuracy {r.accuracy:.4f} over {r.total} windows; per fold: {folds}")
        parts.append(_confusion_frame(r).to_string())
        parts.append("")
    return "\n".join(parts)


def parse_report_csv(text: str) -> list[EvalReport]:
    frame = pd.read_csv(io.StringIO(text), dtype={"per_fold": str, "train": str, "eval": str}, keep_default_na=False)
    reports = []
    for row in frame.to_dict(orient="records"):
        confusion = np.array(
            [[int(row[f"cm_{i}_{j}"]) for j in range(N_CLASSES)] for i in range(N_CLASSES)], dtype=np.int64
        )
        per_fold = [float(a) for a in str(row["per_fold"]).split(";") if a]
        reports.append(
            EvalReport(
                condition=ConditionDescriptor(
                    name=str(row["condition"]),
                    train=str(row["train"]),
                    eval=str(row["eval"]),
                    feature_kind=FeatureKind.parse(row["feature_kind"]),
                    classifier=str(row["classifier"]),
                ),
                confusion=confusion,
                per_fold=per_fold,
            )
        )
    return reports
