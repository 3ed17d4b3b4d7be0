from __future__ import annotations

from pathlib import Path

import numpy as np
from modules._platform import get_config_file
from modules.chirp_core import ChirpParams, SensingGeometry
from modules.classifier import SvmHyperparams
from modules.echo_features import ExtractionConfig
from modules.errors import ParameterError, UsageError
from modules.scene_sim import MIC_OFFSETS, SimConfig
from PySide6.QtCore import QSettings

NO_NOISE = {"", "none", "off", "inf"}


def get_settings():
    file = get_config_file()
    if not file.parent.is_dir():
        file.parent.mkdir(parents=True)

    return QSettings(file.as_posix(), QSettings.Format.IniFormat)


def _text(value) -> str:
    # QSettings hands back a list for unquoted values containing commas
    if isinstance(value, (list, tuple)):
        return ",".join(str(v).strip() for v in value)
    return "" if value is None else str(value).strip()


def _float(settings: QSettings, key: str, default: float) -> float:
    try:
        return float(_text(settings.value(key, defaultValue=default)))
    except ValueError:
        raise ParameterError(f"{settings.fileName()}: {key} is not a number") from None


def _int(settings: QSettings, key: str, default: int) -> int:
    value = _float(settings, key, default)
    if value != int(value):
        raise ParameterError(f"{settings.fileName()}: {key} must be an integer")
    return int(value)


def get_chirp_params(settings: QSettings | None = None) -> ChirpParams:
    settings = settings or get_settings()
    defaults = ChirpParams()
    return ChirpParams(
        **{name: _float(settings, f"chirp/{name}", getattr(defaults, name)) for name in ChirpParams.__dataclass_fields__}
    )


def get_sensing_geometry(settings: QSettings | None = None) -> SensingGeometry:
    settings = settings or get_settings()
    defaults = SensingGeometry()
    return SensingGeometry(
        d_min=_float(settings, "geometry/d_min", defaults.d_min),
        d_max=_float(settings, "geometry/d_max", defaults.d_max),
        c=_float(settings, "geometry/c", defaults.c),
    )


def save_sensing_config(params: ChirpParams, geometry: SensingGeometry, settings: QSettings | None = None):
    settings = settings or get_settings()
    for name, value in params.to_dict().items():
        settings.setValue(f"chirp/{name}", repr(float(value)))
    for name, value in geometry.to_dict().items():
        settings.setValue(f"geometry/{name}", repr(float(value)))
    settings.sync()


def get_sim_config(settings: QSettings | None = None, seed: int = 0) -> SimConfig:
    settings = settings or get_settings()
    defaults = SimConfig()

    snr = _text(settings.value("simulation/snr_db", defaultValue=defaults.snr_db))
    if snr.lower() in NO_NOISE:
        snr_db = None
    else:
        snr_db = _float(settings, "simulation/snr_db", defaults.snr_db)
    channel_count = _int(settings, "simulation/channel_count", defaults.channel_count)

    offsets_text = _text(settings.value("simulation/mic_offsets", defaultValue=""))
    if offsets_text:
        try:
            values = np.asarray([float(v) for v in offsets_text.split(",")]).reshape(-1, 3)
        except ValueError:
            raise ParameterError(f"mic_offsets needs x,y,z triples, got {offsets_text!r}") from None
        mic_offsets = tuple(tuple(float(v) for v in row) for row in values)
    else:
        mic_offsets = MIC_OFFSETS[:channel_count]

    return SimConfig(
        snr_db=snr_db,
        seed=seed,
        c=_float(settings, "simulation/c", _float(settings, "geometry/c", defaults.c)),
        channel_count=channel_count,
        mic_offsets=mic_offsets,
        lead_in=_int(settings, "simulation/lead_in", defaults.lead_in),
    )


def get_extraction_config(settings: QSettings | None = None) -> ExtractionConfig:
    settings = settings or get_settings()
    defaults = ExtractionConfig()
    return ExtractionConfig(
        frames_per_window=_int(settings, "extraction/frames_per_window", defaults.frames_per_window),
        peak_threshold=_float(settings, "extraction/peak_threshold", defaults.peak_threshold),
        min_quality=_float(settings, "extraction/min_quality", defaults.min_quality),
        eps_scale=_float(settings, "extraction/eps_scale", defaults.eps_scale),
    )


def get_svm_hyperparams(settings: QSettings | None = None) -> SvmHyperparams:
    settings = settings or get_settings()
    defaults = SvmHyperparams()
    return SvmHyperparams(
        C=_float(settings, "svm/C", defaults.C),
        epochs=_int(settings, "svm/epochs", defaults.epochs),
        seed=_int(settings, "svm/seed", defaults.seed),
    )


def read_conditions(path: Path) -> dict[str, dict[str, str]]:
    """Every group of a condition INI as a plain dict, in group order."""
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"Condition file {path} does not exist")

    settings = QSettings(path.as_posix(), QSettings.Format.IniFormat)
    conditions = {}
    for group in settings.childGroups():
        settings.beginGroup(group)
        conditions[group] = {key: _text(settings.value(key)) for key in settings.childKeys()}
        settings.endGroup()
    return conditions
