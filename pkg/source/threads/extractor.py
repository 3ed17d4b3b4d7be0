from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

from modules.chirp_core import ChirpParams, SensingGeometry, param_hash
from modules.echo_features import (
    ExtractionConfig,
    FeatureMatrix,
    extract_all,
    load_feature_matrix,
    save_feature_matrix,
    split_windows,
)
from modules.enums import FeatureKind
from modules.errors import DataError
from modules.manifest import ManifestRecord
from modules.task import Task
from modules.wav_io import read_recording

logger = logging.getLogger()


def cache_key(params: ChirpParams, geometry: SensingGeometry, config: ExtractionConfig) -> str:
    return param_hash(params.to_dict(), geometry.to_dict(), config.to_dict())


def extract_windows(
    wav_path: Path,
    record: ManifestRecord,
    kinds: tuple[FeatureKind, ...],
    params: ChirpParams,
    geometry: SensingGeometry,
    config: ExtractionConfig,
) -> dict[FeatureKind, list[FeatureMatrix]]:
    recording = read_recording(wav_path, params, geometry, recording_id=record.id)
    matrices = extract_all(recording, kinds, config, label=record.label)
    return {m.kind: split_windows(m, config.frames_per_window) for m in matrices}


@dataclass
class ExtractTask(Task):
    record: ManifestRecord
    wav_path: Path
    kinds: tuple[FeatureKind, ...]
    params: ChirpParams
    geometry: SensingGeometry
    config: ExtractionConfig
    cache_dir: Path | None = None

    def _cached(self, kind: FeatureKind) -> list[FeatureMatrix] | None:
        if self.cache_dir is None:
            return None
        folder = self.cache_dir / kind.value
        files = sorted(folder.glob(f"{self.record.id}-w*.json"))
        if not files:
            return None
        try:
            return [load_feature_matrix(file) for file in files]
        except DataError as e:
            logger.warning(f"Ignoring broken cache entry for {self.record.id}: {e}")
            return None

    def run(self) -> dict[FeatureKind, list[FeatureMatrix]]:
        found = {}
        for kind in self.kinds:
            windows = self._cached(kind)
            if windows is not None:
                found[kind] = windows

        missing = tuple(kind for kind in self.kinds if kind not in found)
        if missing:
            extracted = extract_windows(self.wav_path, self.record, missing, self.params, self.geometry, self.config)
            if self.cache_dir is not None:
                for kind, windows in extracted.items():
                    for matrix in windows:
                        save_feature_matrix(matrix, self.cache_dir / kind.value / f"{self.record.id}-w{matrix.window:03d}")
            found.update(extracted)

        logger.debug(f"{self.record.id}: {len(missing)} extracted, {len(self.kinds) - len(missing)} from cache")
        return found

    def __str__(self):
        return f"Extract {', '.join(kind.value for kind in self.kinds)} from {self.record.id}"
