from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
from modules.chirp_core import (
    ChirpParams,
    CycleIndexing,
    SensingGeometry,
    cycle_indexing,
    design_chirp,
    param_hash,
)
from modules.dsp_kernels import EPS_SCALE, analytic_envelope, matched_filter, transfer_impulse_response
from modules.enums import ActionClass, FeatureKind
from modules.errors import DataError, DetectionError, ParameterError, SegmentationError

if TYPE_CHECKING:
    from collections.abc import Iterable

logger = logging.getLogger()


@dataclass(frozen=True)
class ExtractionConfig:
    frames_per_window: int = 128
    "Cycles per labeled instance window"

    peak_threshold: float = 0.5
    "Matched-filter peak threshold, relative to the global correlation maximum"

    min_quality: float = 0.6
    "Minimum normalized correlation for a direct wave to count as detected"

    eps_scale: float = EPS_SCALE
    "Deconvolution regularizer relative to max |Y_dir|^2"

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, dct: dict):
        return cls(
            frames_per_window=int(dct.get("frames_per_window", cls.frames_per_window)),
            peak_threshold=float(dct.get("peak_threshold", cls.peak_threshold)),
            min_quality=float(dct.get("min_quality", cls.min_quality)),
            eps_scale=float(dct.get("eps_scale", cls.eps_scale)),
        )


@dataclass
class Recording:
    channels: np.ndarray
    "(channels, samples) array"

    fs: float
    params: ChirpParams
    geometry: SensingGeometry
    recording_id: str = ""

    def __post_init__(self):
        try:
            channels = np.asarray(self.channels, dtype=np.float64)
        except ValueError as e:
            raise ParameterError(f"channels must have equal lengths: {e}") from e
        if channels.ndim == 1:
            channels = channels[np.newaxis, :]
        if channels.ndim != 2 or channels.shape[0] < 1:
            raise ParameterError(f"channels must be a (channels, samples) array, got shape {channels.shape}")
        if self.fs != self.params.fs:
            raise ParameterError(f"recording fs {self.fs} does not match chirp fs {self.params.fs}")
        self.channels = channels

    @property
    def n_channels(self) -> int:
        return self.channels.shape[0]

    @property
    def length(self) -> int:
        return self.channels.shape[1]

    @property
    def indexing(self) -> CycleIndexing:
        return cycle_indexing(self.geometry, self.params)

    def channel(self, channel: int) -> np.ndarray:
        if not 0 <= channel < self.n_channels:
            raise ParameterError(f"channel {channel} out of range (recording has {self.n_channels})")
        return self.channels[channel]


@dataclass
class EchoFrameSeries:
    direct_frames: np.ndarray
    "N x n_tau, the direct chirp of every cycle"

    reflect_frames: np.ndarray
    "N x (n_max - n_min + 1), the reflection gate of every cycle"

    direct_indices: np.ndarray
    channel_id: int
    params: ChirpParams
    indexing: CycleIndexing
    recording_id: str = ""

    def __post_init__(self):
        n = len(self.direct_indices)
        if n < 1:
            raise SegmentationError("frame series needs at least one cycle")
        if self.direct_frames.shape[0] != n or self.reflect_frames.shape[0] != n:
            raise SegmentationError(
                f"row counts differ: {self.direct_frames.shape[0]} direct, "
                f"{self.reflect_frames.shape[0]} reflected, {n} indices"
            )
        gaps = np.diff(self.direct_indices)
        bad = np.flatnonzero(np.abs(gaps - self.indexing.n_cycle) > 1)
        if bad.size:
            cycle = int(bad[0]) + 1
            raise SegmentationError(
                f"cycle {cycle}: gap {int(gaps[bad[0]])} is not n_cycle={self.indexing.n_cycle} +/- 1",
                cycle=cycle,
            )

    @property
    def n(self) -> int:
        return len(self.direct_indices)

    def head(self, n: int) -> EchoFrameSeries:
        return replace(
            self,
            direct_frames=self.direct_frames[:n],
            reflect_frames=self.reflect_frames[:n],
            direct_indices=self.direct_indices[:n],
        )


@dataclass
class FeatureMatrix:
    kind: FeatureKind
    values: np.ndarray
    "N x W float32, slow-time rows and fast-time columns"

    label: ActionClass | None = None
    recording_id: str = ""
    channel: str = "0"
    config_hash: str = ""
    fs: float = 96_000.0
    window: int = 0
    "Index of the N-cycle window inside the source recording"

    def __post_init__(self):
        # Same precision as the on-disk payload, so fresh and cached matrices are identical
        values = np.asarray(self.values, dtype=np.float32)
        if values.ndim != 2:
            raise ParameterError(f"feature values must be 2-D, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise DataError(f"{self.kind.value} of {self.recording_id or 'recording'} has non-finite values")
        self.values = values

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def w(self) -> int:
        return self.values.shape[1]

    def flatten(self) -> np.ndarray:
        """Slow-time major flatten, one classifier row per matrix."""
        return self.values.reshape(-1)

    def with_label(self, label: ActionClass | None) -> FeatureMatrix:
        return replace(self, label=label)

    def to_dict(self):
        return {
            "kind": self.kind.value,
            "n": self.n,
            "w": self.w,
            "label": None if self.label is None else self.label.slug,
            "fs": self.fs,
            "config_hash": self.config_hash,
            "recording_id": self.recording_id,
            "channel": self.channel,
            "window": self.window,
            "dtype": "<f4",
        }


def locate_direct_waves(
    recording: Recording,
    channel: int = 0,
    config: ExtractionConfig | None = None,
) -> np.ndarray:
    """Start sample of every complete chirp cycle.

    The direct wave is the strongest arrival of its cycle, so the offset with the largest
    matched-filter amplitude anchors the series. From the anchor the series is walked back to the
    earliest cycle and then forward, one period at a time with +/- 1 sample of slack; every accepted
    index must reach `min_quality` normalized correlation. Recordings may start mid-cycle or after
    a silent lead-in.
    """
    config = config or ExtractionConfig()
    indexing = recording.indexing
    y = recording.channel(channel)
    n_cycle = indexing.n_cycle

    if len(y) < 2 * n_cycle:
        raise DetectionError(f"recording has {len(y)} samples, fewer than two cycles ({2 * n_cycle})")

    result = matched_filter(
        y,
        design_chirp(recording.params),
        threshold_ratio=config.peak_threshold,
        min_separation=n_cycle - indexing.n_tau,
    )
    corr = result.correlation
    amplitude = result.amplitude

    anchor = int(np.argmax(amplitude))
    if corr[anchor] < config.min_quality:
        raise DetectionError(
            f"strongest arrival at sample {anchor} has correlation {corr[anchor]:.3f}, "
            f"below {config.min_quality} (channel {channel})",
            peak_values=result.peak_values()[:16],
        )

    current = anchor
    while True:
        expected = current - n_cycle
        lo, hi = max(expected - 1, 0), expected + 2
        if hi <= lo:
            break
        candidate = lo + int(np.argmax(amplitude[lo:hi]))
        if corr[candidate] < config.min_quality:
            break
        current = candidate

    indices = []
    while current + n_cycle <= len(y):
        indices.append(current)
        expected = current + n_cycle
        lo, hi = expected - 1, min(expected + 2, len(corr))
        if lo >= hi:
            break
        candidate = lo + int(np.argmax(amplitude[lo:hi]))
        if corr[candidate] < config.min_quality:
            if candidate + n_cycle <= len(y):
                logger.warning(
                    f"Direct wave lost after {len(indices)} cycles in {recording.recording_id or 'recording'} "
                    f"(correlation {corr[candidate]:.3f})"
                )
            break
        current = candidate

    if not indices:
        raise DetectionError(
            f"only a partial cycle follows the direct wave at sample {current}",
            peak_values=result.peak_values()[:16],
        )

    logger.debug(f"Located {len(indices)} direct waves on channel {channel}, first at {indices[0]}")
    return np.asarray(indices, dtype=np.int64)


def segment_frames(recording: Recording, channel: int, indices: Iterable[int]) -> EchoFrameSeries:
    indexing = recording.indexing
    y = recording.channel(channel)
    indices = np.asarray(list(indices), dtype=np.int64)

    if indices.size == 0:
        raise SegmentationError("no cycle indices to segment")
    for i, idx in enumerate(indices):
        if idx < 0 or idx + indexing.n_max >= len(y):
            raise SegmentationError(
                f"cycle {i} at sample {idx} does not fit its reflection gate in {len(y)} samples", cycle=i
            )

    direct = y[indices[:, np.newaxis] + np.arange(indexing.n_tau)]
    reflect = y[indices[:, np.newaxis] + np.arange(indexing.n_min, indexing.n_max + 1)]

    return EchoFrameSeries(
        direct_frames=direct,
        reflect_frames=reflect,
        direct_indices=indices,
        channel_id=channel,
        params=recording.params,
        indexing=indexing,
        recording_id=recording.recording_id,
    )


def _feature(frames: EchoFrameSeries, kind: FeatureKind, values: np.ndarray) -> FeatureMatrix:
    return FeatureMatrix(
        kind=kind,
        values=values,
        recording_id=frames.recording_id,
        channel=str(frames.channel_id),
        fs=frames.params.fs,
    )


def extract_f_ref(frames: EchoFrameSeries) -> FeatureMatrix:
    return _feature(frames, FeatureKind.F_REF, frames.reflect_frames)


def extract_f_renv(frames: EchoFrameSeries) -> FeatureMatrix:
    return _feature(frames, FeatureKind.F_RENV, analytic_envelope(frames.reflect_frames))


def _impulse_responses(frames: EchoFrameSeries, eps_scale: float) -> np.ndarray:
    # Each cycle is deconvolved against its own direct wave; lags cover the reflection gate
    direct = np.zeros((frames.n, frames.indexing.gate_width))
    direct[:, : frames.indexing.n_tau] = frames.direct_frames
    return transfer_impulse_response(
        direct,
        frames.reflect_frames,
        band=frames.params.band,
        fs=frames.params.fs,
        eps_scale=eps_scale,
    )


def extract_f_ir(frames: EchoFrameSeries, eps_scale: float = EPS_SCALE) -> FeatureMatrix:
    return _feature(frames, FeatureKind.F_IR, _impulse_responses(frames, eps_scale))


def extract_f_ienv(frames: EchoFrameSeries, eps_scale: float = EPS_SCALE) -> FeatureMatrix:
    return _feature(frames, FeatureKind.F_IENV, analytic_envelope(_impulse_responses(frames, eps_scale)))


def _extract_kind(frames: EchoFrameSeries, kind: FeatureKind, config: ExtractionConfig) -> FeatureMatrix:
    if kind is FeatureKind.F_REF:
        return extract_f_ref(frames)
    if kind is FeatureKind.F_RENV:
        return extract_f_renv(frames)
    if kind is FeatureKind.F_IR:
        return extract_f_ir(frames, config.eps_scale)
    return extract_f_ienv(frames, config.eps_scale)


def extraction_hash(recording: Recording, config: ExtractionConfig) -> str:
    return param_hash(recording.params.to_dict(), recording.geometry.to_dict(), config.to_dict())


def extract_all(
    recording: Recording,
    kinds: Iterable[FeatureKind],
    config: ExtractionConfig | None = None,
    label: ActionClass | None = None,
) -> list[FeatureMatrix]:
    """Locate, segment and extract per channel; channels are concatenated along fast-time."""
    config = config or ExtractionConfig()
    wanted = set(kinds)
    ordered = [kind for kind in FeatureKind if kind in wanted]
    if not ordered:
        return []

    series = []
    for channel in range(recording.n_channels):
        indices = locate_direct_waves(recording, channel, config)
        series.append(segment_frames(recording, channel, indices))

    n = min(frames.n for frames in series)
    if any(frames.n != n for frames in series):
        logger.warning(f"Channels of {recording.recording_id} disagree on cycle count, keeping {n}")
        series = [frames.head(n) for frames in series]

    config_hash = extraction_hash(recording, config)
    channel_tag = ",".join(str(frames.channel_id) for frames in series)
    matrices = []
    for kind in ordered:
        values = np.concatenate([_extract_kind(frames, kind, config).values for frames in series], axis=1)
        matrices.append(
            FeatureMatrix(
                kind=kind,
                values=values,
                label=label,
                recording_id=recording.recording_id,
                channel=channel_tag,
                config_hash=config_hash,
                fs=recording.fs,
            )
        )
    return matrices


def split_windows(matrix: FeatureMatrix, frames_per_window: int = 128) -> list[FeatureMatrix]:
    """Non-overlapping windows of `frames_per_window` cycles; a trailing remainder is dropped."""
    if frames_per_window < 1:
        raise ParameterError(f"frames_per_window must be >= 1 (got {frames_per_window})")
    if matrix.n < frames_per_window:
        raise DataError(
            f"{matrix.recording_id or 'recording'} has {matrix.n} cycles, fewer than one window of {frames_per_window}"
        )

    count = matrix.n // frames_per_window
    if matrix.n % frames_per_window:
        logger.debug(f"Dropping {matrix.n % frames_per_window} trailing cycles of {matrix.recording_id}")
    return [
        replace(
            matrix,
            values=matrix.values[k * frames_per_window : (k + 1) * frames_per_window],
            window=k,
        )
        for k in range(count)
    ]


def _paths(path: Path) -> tuple[Path, Path]:
    path = Path(path)
    return path.with_suffix(".f32"), path.with_suffix(".json")


def save_feature_matrix(matrix: FeatureMatrix, path: Path) -> Path:
    payload, sidecar = _paths(path)
    payload.parent.mkdir(parents=True, exist_ok=True)
    np.ascontiguousarray(matrix.values, dtype="<f4").tofile(payload)
    with sidecar.open("w", encoding="utf-8") as f:
        json.dump(matrix.to_dict(), f, indent=2, sort_keys=True)
    return payload


def load_feature_matrix(path: Path) -> FeatureMatrix:
    payload, sidecar = _paths(path)
    try:
        with sidecar.open(encoding="utf-8") as f:
            header = json.load(f)
        values = np.fromfile(payload, dtype="<f4")
    except (json.decoder.JSONDecodeError, FileNotFoundError, OSError) as e:
        raise DataError(f"Failed to load feature matrix {path}: {e}") from e

    n, w = int(header["n"]), int(header["w"])
    if values.size != n * w:
        raise DataError(f"{payload} holds {values.size} values, header says {n} x {w}")

    label = header.get("label")
    return FeatureMatrix(
        kind=FeatureKind.parse(header["kind"]),
        values=values.reshape(n, w),
        label=None if label is None else ActionClass.from_slug(label),
        recording_id=header.get("recording_id", ""),
        channel=header.get("channel", "0"),
        config_hash=header.get("config_hash", ""),
        fs=float(header.get("fs", 96_000.0)),
        window=int(header.get("window", 0)),
    )

