from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
import zstandard
from modules.enums import ActionClass
from modules.errors import DataError, ParameterError, TrainingError
from semver import Version

if TYPE_CHECKING:
    from collections.abc import Sequence

    from modules.echo_features import FeatureMatrix

logger = logging.getLogger()

SCALE_FLOOR = 1e-8
MODEL_MAGIC = b"USVM"
MODEL_FORMAT = Version(1, 0, 0)


def as_rows(features: Sequence[FeatureMatrix] | np.ndarray) -> np.ndarray:
    """One flattened (slow-time major) row per feature matrix."""
    if isinstance(features, np.ndarray):
        rows = features.astype(np.float64, copy=False)
        if rows.ndim != 2:
            raise ParameterError(f"feature rows must be 2-D, got shape {rows.shape}")
        return rows

    features = list(features)
    if not features:
        raise ParameterError("no feature matrices given")
    shapes = {m.values.shape for m in features}
    if len(shapes) > 1:
        raise ParameterError(f"feature matrices have differing shapes: {sorted(shapes)}")
    return np.stack([m.flatten() for m in features]).astype(np.float64, copy=False)


def labels_of(features: Sequence[FeatureMatrix]) -> list[ActionClass]:
    labels = [m.label for m in features]
    if any(label is None for label in labels):
        raise ParameterError("every training feature matrix needs a label")
    return labels


@dataclass
class Scaler:
    mean: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.scale = np.maximum(np.asarray(self.scale, dtype=np.float64), SCALE_FLOOR)
        if self.mean.shape != self.scale.shape or self.mean.ndim != 1:
            raise ParameterError(f"scaler mean {self.mean.shape} and scale {self.scale.shape} disagree")

    @property
    def width(self) -> int:
        return self.mean.shape[0]

    @classmethod
    def identity(cls, width: int) -> Scaler:
        return cls(mean=np.zeros(width), scale=np.ones(width))

    def transform(self, rows: np.ndarray) -> np.ndarray:
        rows = np.atleast_2d(rows)
        if rows.shape[1] != self.width:
            raise ParameterError(f"feature width {rows.shape[1]} does not match scaler width {self.width}")
        return (rows - self.mean) / self.scale


def fit_scaler(features: Sequence[FeatureMatrix] | np.ndarray) -> Scaler:
    rows = as_rows(features)
    if rows.shape[0] == 0:
        raise ParameterError("cannot fit a scaler on zero rows")
    return Scaler(mean=rows.mean(axis=0), scale=rows.std(axis=0))


@dataclass(frozen=True)
class SvmHyperparams:
    C: float = 1.0
    epochs: int = 50
    seed: int = 0

    def __post_init__(self):
        if not self.C > 0:
            raise ParameterError(f"C must be positive (got {self.C})")
        if self.epochs < 1:
            raise ParameterError(f"epochs must be >= 1 (got {self.epochs})")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, dct: dict):
        return cls(C=float(dct["C"]), epochs=int(dct["epochs"]), seed=int(dct["seed"]))


@dataclass
class LinearSvmModel:
    weights: np.ndarray
    "K x D, one row per one-vs-rest machine"

    biases: np.ndarray
    scaler: Scaler
    hyperparams: SvmHyperparams
    classes: tuple[ActionClass, ...] = tuple(ActionClass)
    objective_history: list[float] = field(default_factory=list)
    "Primal objective summed over the machines at each epoch boundary"

    feature_kind: str = ""
    config_hash: str = ""

    def __post_init__(self):
        k, d = self.weights.shape
        if self.biases.shape != (k,) or len(self.classes) != k:
            raise ParameterError(f"{k} weight rows but {self.biases.shape} biases and {len(self.classes)} classes")
        if d != self.scaler.width:
            raise ParameterError(f"weight width {d} does not match scaler width {self.scaler.width}")
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.biases))):
            raise TrainingError("model weights are not finite")

    @property
    def width(self) -> int:
        return self.weights.shape[1]


def _objective(w_aug: np.ndarray, x_aug: np.ndarray, y: np.ndarray, lam: float) -> np.ndarray:
    """Per-machine lam/2 |w|^2 + mean hinge."""
    margins = y * (x_aug @ w_aug)
    hinge = np.maximum(0.0, 1.0 - margins).mean(axis=0)
    return 0.5 * lam * np.sum(w_aug**2, axis=0) + hinge


def train_linear_svm(
    features: Sequence[FeatureMatrix] | np.ndarray,
    labels: Sequence[ActionClass | int] | None = None,
    hyperparams: SvmHyperparams | None = None,
    classes: Sequence[ActionClass] = tuple(ActionClass),
    scaler: Scaler | None = None,
) -> LinearSvmModel:
    """One-vs-rest primal hinge-loss SVMs by stochastic subgradient descent.

    All machines share one shuffled pass per epoch. With lam = 1/(C n) and step 1/(lam (t+1)) the
    iterate is w_t = V_t / (t+1) where V accumulates y x / lam over margin violators, so no
    per-step shrinking is needed. The bias is an extra constant-one column. After every epoch
    each machine keeps whichever weights have the lowest full-set objective so far.
    """
    hyperparams = hyperparams or SvmHyperparams()
    if labels is None:
        labels = labels_of(features)
    rows = as_rows(features)
    labels = np.asarray([int(label) for label in labels], dtype=np.int64)
    classes = tuple(ActionClass(c) for c in classes)

    n, d = rows.shape
    if labels.shape != (n,):
        raise ParameterError(f"{n} feature rows but {labels.shape[0]} labels")
    present = np.unique(labels)
    if present.size < 2:
        raise TrainingError(f"training needs at least two classes, got {present.size}")
    unknown = set(present.tolist()) - {int(c) for c in classes}
    if unknown:
        raise ParameterError(f"labels {sorted(unknown)} are not among the model classes")

    scaler = scaler or fit_scaler(rows)
    x = np.hstack([scaler.transform(rows), np.ones((n, 1))])
    y = np.where(labels[:, np.newaxis] == np.asarray([int(c) for c in classes]), 1.0, -1.0)

    lam = 1.0 / (hyperparams.C * n)
    rng = np.random.default_rng(hyperparams.seed)
    accumulated = np.zeros((d + 1, len(classes)))
    best = np.zeros_like(accumulated)
    best_objective = np.full(len(classes), np.inf)
    history = []

    t = 0
    for epoch in range(hyperparams.epochs):
        for i in rng.permutation(n):
            t += 1
            # margin of w = accumulated / t below 1
            violated = y[i] * (x[i] @ accumulated) < t
            if np.any(violated):
                accumulated[:, violated] += np.outer(x[i], y[i, violated]) / lam

        w = accumulated / (t + 1)
        objective = _objective(w, x, y, lam)
        if not np.all(np.isfinite(objective)):
            raise TrainingError(f"objective diverged at epoch {epoch}")
        improved = objective < best_objective
        best[:, improved] = w[:, improved]
        best_objective = np.where(improved, objective, best_objective)
        history.append(float(best_objective.sum()))
        logger.debug(f"epoch {epoch + 1}/{hyperparams.epochs}: objective {history[-1]:.6f}")

    model = LinearSvmModel(
        weights=np.ascontiguousarray(best[:-1].T),
        biases=best[-1].copy(),
        scaler=scaler,
        hyperparams=hyperparams,
        classes=classes,
        objective_history=history,
    )
    logger.debug(f"Trained {len(classes)} machines on {n} x {d} rows, objective {history[-1]:.6f}")
    return model


def decision_function(model: LinearSvmModel, features, standardize=True) -> np.ndarray:
    rows = as_rows(features)
    if rows.shape[1] != model.width:
        raise ParameterError(f"feature width {rows.shape[1]} does not match model width {model.width}")
    if standardize:
        rows = model.scaler.transform(rows)
    return rows @ model.weights.T + model.biases


def predict(model: LinearSvmModel, features, standardize=True) -> tuple[list[ActionClass], np.ndarray]:
    """Labels by argmax of the decision values (first index wins ties) plus the K-column score matrix."""
    scores = decision_function(model, features, standardize=standardize)
    labels = [model.classes[k] for k in np.argmax(scores, axis=1)]
    return labels, scores


def bypass_scaler(model: LinearSvmModel) -> LinearSvmModel:
    return replace(model, scaler=Scaler.identity(model.width))


def save_model(model: LinearSvmModel, path: Path) -> Path:
    header = {
        "format": str(MODEL_FORMAT),
        "classes": [c.slug for c in model.classes],
        "width": model.width,
        "hyperparams": model.hyperparams.to_dict(),
        "objective_history": model.objective_history,
        "feature_kind": model.feature_kind,
        "config_hash": model.config_hash,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode()
    arrays = [model.scaler.mean, model.scaler.scale, model.weights, model.biases]
    payload = struct.pack("<I", len(header_bytes)) + header_bytes
    payload += b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as f:
        f.write(MODEL_MAGIC)
        f.write(zstandard.ZstdCompressor(level=10).compress(payload))
    logger.info(f"Saved model to {path}")
    return path


def load_model(path: Path) -> LinearSvmModel:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise DataError(f"Failed to read model {path}: {e}") from e
    if raw[:4] != MODEL_MAGIC:
        raise DataError(f"{path} is not a model file")

    try:
        payload = zstandard.ZstdDecompressor().decompress(raw[4:])
        (header_len,) = struct.unpack_from("<I", payload)
        header = json.loads(payload[4 : 4 + header_len])
        version = Version.parse(header["format"])
    except (zstandard.ZstdError, struct.error, json.decoder.JSONDecodeError, KeyError, ValueError) as e:
        raise DataError(f"Corrupt model file {path}: {e}") from e
    if version.major > MODEL_FORMAT.major:
        raise DataError(f"{path} uses model format {version}, newer than supported {MODEL_FORMAT}")

    k, d = len(header["classes"]), int(header["width"])
    values = np.frombuffer(payload, dtype="<f8", offset=4 + header_len)
    if values.size != 2 * d + k * d + k:
        raise DataError(f"{path} holds {values.size} values, expected {2 * d + k * d + k}")

    mean, scale, weights, biases = np.split(values.astype(np.float64), [d, 2 * d, 2 * d + k * d])
    return LinearSvmModel(
        weights=weights.reshape(k, d),
        biases=biases,
        scaler=Scaler(mean=mean, scale=scale),
        hyperparams=SvmHyperparams.from_dict(header["hyperparams"]),
        classes=tuple(ActionClass.from_slug(slug) for slug in header["classes"]),
        objective_history=[float(v) for v in header["objective_history"]],
        feature_kind=header.get("feature_kind", ""),
        config_hash=header.get("config_hash", ""),
    )
