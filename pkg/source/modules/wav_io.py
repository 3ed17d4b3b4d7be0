from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
from modules.echo_features import Recording
from modules.errors import DataError
from scipy.io import wavfile

if TYPE_CHECKING:
    from pathlib import Path

    from modules.chirp_core import ChirpParams, SensingGeometry

logger = logging.getLogger()

# Full-scale divisors for integer PCM
_PCM_SCALE = {
    np.dtype(np.int16): 32768.0,
    np.dtype(np.int32): 2147483648.0,
}


@dataclass(frozen=True)
class WavHeader:
    channels: int
    rate: int
    frames: int
    sample_format: str

    @property
    def duration(self) -> float:
        return self.frames / self.rate


def _read(path: Path, mmap: bool):
    try:
        return wavfile.read(path, mmap=mmap)
    except (FileNotFoundError, OSError, ValueError) as e:
        raise DataError(f"Failed to read WAV {path}: {e}") from e


def read_wav_header(path: Path) -> WavHeader:
    """Channel count, rate, frame count and sample format; samples are memory-mapped, not loaded."""
    rate, data = _read(path, mmap=True)
    channels = 1 if data.ndim == 1 else data.shape[1]
    header = WavHeader(channels=channels, rate=int(rate), frames=data.shape[0], sample_format=data.dtype.str)
    del data
    return header


def write_recording(path: Path, recording: Recording) -> Path:
    """32-bit float PCM, one column per channel."""
    frames = np.ascontiguousarray(recording.channels.T, dtype=np.float32)
    if frames.shape[1] == 1:
        frames = frames[:, 0]
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        wavfile.write(path, int(recording.fs), frames)
    except OSError as e:
        raise DataError(f"Failed to write WAV {path}: {e}") from e
    logger.debug(f"Wrote {path} ({recording.n_channels} ch, {recording.length} frames)")
    return path


def read_recording(path: Path, params: ChirpParams, geometry: SensingGeometry, recording_id: str = "") -> Recording:
    rate, data = _read(path, mmap=False)
    if rate != params.fs:
        raise DataError(f"{path} is sampled at {rate} Hz, configuration expects {params.fs:g} Hz")

    if data.dtype in _PCM_SCALE:
        samples = data.astype(np.float64) / _PCM_SCALE[data.dtype]
    elif data.dtype == np.uint8:
        samples = (data.astype(np.float64) - 128.0) / 128.0
    elif np.issubdtype(data.dtype, np.floating):
        samples = data.astype(np.float64)
    else:
        raise DataError(f"{path} has unsupported sample format {data.dtype}")

    channels = samples[np.newaxis, :] if samples.ndim == 1 else samples.T
    return Recording(
        channels=channels,
        fs=params.fs,
        params=params,
        geometry=geometry,
        recording_id=recording_id or path.stem,
    )
