"""Point-scatterer scenes for the eight action classes and their synthetic recordings.

A scene is a set of point reflectors, each following a closed-form trajectory. Recordings are
built first order: every scatterer returns one delayed, attenuated copy of the chirp per cycle,
with its position frozen at the start of that cycle.
"""

from __future__ import annotations

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import asdict, dataclass, field, replace
from typing import TYPE_CHECKING, ClassVar

import numpy as np
from modules.chirp_core import (
    SPEED_OF_SOUND,
    ChirpParams,
    SensingGeometry,
    build_excitation,
    chirp_waveform,
    validate_timing,
)
from modules.echo_features import Recording
from modules.enums import ActionClass
from modules.errors import GeometryError, ParameterError, SimulationError
from modules.manifest import MANIFEST_NAME, DatasetManifest, ManifestWriter
from modules.tasks import TaskQueue

if TYPE_CHECKING:
    from pathlib import Path

logger = logging.getLogger()

Vec3 = tuple[float, float, float]

# Microphones 22.5 mm to either side of the speaker and 38 mm below it
MIC_OFFSETS: tuple[Vec3, ...] = ((0.0, 0.0225, -0.038), (0.0, -0.0225, -0.038))

DEFAULT_FRAMES = 128
DEFAULT_DURATION = DEFAULT_FRAMES * ChirpParams().n_cycle / ChirpParams().fs

TORSO = ("head", "chest", "abdomen", "hips")


def _unit(v: Vec3) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


def _times(t) -> np.ndarray:
    return np.atleast_1d(np.asarray(t, dtype=np.float64))


class Motion(ABC):
    @abstractmethod
    def offset(self, t: np.ndarray) -> np.ndarray:
        """(len(t), 3) displacement from the anchor."""
        raise NotImplementedError


@dataclass(frozen=True)
class Oscillation(Motion):
    direction: Vec3
    amplitude: float
    frequency: float
    phase: float = 0.0

    def offset(self, t):
        s = self.amplitude * np.sin(2.0 * np.pi * self.frequency * t + self.phase)
        return s[:, np.newaxis] * _unit(self.direction)


@dataclass(frozen=True)
class Arc(Motion):
    """Out-and-return excursion of `amplitude` along `direction`, zero outside [start, start + duration]."""

    direction: Vec3
    amplitude: float
    start: float
    duration: float

    def offset(self, t):
        u = np.clip((t - self.start) / self.duration, 0.0, 1.0)
        s = self.amplitude * 0.5 * (1.0 - np.cos(2.0 * np.pi * u))
        return s[:, np.newaxis] * _unit(self.direction)


@dataclass(frozen=True)
class Transition(Motion):
    """Smooth move by `displacement` during [start, start + duration], held afterwards."""

    displacement: Vec3
    start: float
    duration: float

    def offset(self, t):
        u = np.clip((t - self.start) / self.duration, 0.0, 1.0)
        s = 0.5 * (1.0 - np.cos(np.pi * u))
        return s[:, np.newaxis] * np.asarray(self.displacement, dtype=np.float64)


@dataclass(frozen=True)
class Translation(Motion):
    velocity: Vec3
    start: float = 0.0

    def offset(self, t):
        return np.maximum(t - self.start, 0.0)[:, np.newaxis] * np.asarray(self.velocity, dtype=np.float64)


@dataclass(frozen=True)
class ScattererTrajectory:
    name: str
    anchor: Vec3
    "Position at rest, metres, sensor at the origin"

    reflectivity: float
    motions: tuple[Motion, ...] = ()

    def __post_init__(self):
        if not (math.isfinite(self.reflectivity) and self.reflectivity >= 0):
            raise ParameterError(f"{self.name}: reflectivity must be finite and >= 0 (got {self.reflectivity})")

    @property
    def is_static(self) -> bool:
        return not self.motions

    def position(self, t) -> np.ndarray:
        """Position at time(s) t; shape (3,) for a scalar, (len(t), 3) for an array."""
        times = _times(t)
        pos = np.tile(np.asarray(self.anchor, dtype=np.float64), (len(times), 1))
        for motion in self.motions:
            pos = pos + motion.offset(times)
        return pos[0] if np.ndim(t) == 0 else pos

    def distance(self, t) -> np.ndarray:
        return np.linalg.norm(self.position(t), axis=-1)


@dataclass(frozen=True)
class SubjectProfile:
    limb_speed: float = 1.0
    "Multiplier on motion rates"

    amplitude: float = 1.0
    "Multiplier on motion extents"

    base_distance: float = 1.0
    "Torso distance from the sensor when standing (m)"

    LIMITS: ClassVar[dict[str, tuple[float, float]]] = {
        "limb_speed": (0.5, 2.0),
        "amplitude": (0.5, 1.5),
        "base_distance": (0.7, 1.3),
    }
    DRAW_RANGE: ClassVar[dict[str, tuple[float, float]]] = {
        "limb_speed": (0.8, 1.2),
        "amplitude": (0.8, 1.2),
        "base_distance": (0.8, 1.2),
    }

    def __post_init__(self):
        for name, (lo, hi) in self.LIMITS.items():
            value = getattr(self, name)
            if not (math.isfinite(value) and lo <= value <= hi):
                raise ParameterError(f"subject {name}={value} outside [{lo}, {hi}]")

    @classmethod
    def draw(cls, rng: np.random.Generator) -> SubjectProfile:
        return cls(**{name: float(rng.uniform(lo, hi)) for name, (lo, hi) in cls.DRAW_RANGE.items()})

    def to_dict(self):
        return asdict(self)


def subject_profile(seed: int, subject: int) -> SubjectProfile:
    """Deterministic profile of subject number `subject` under dataset seed `seed`."""
    return SubjectProfile.draw(np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1, subject))))


# Static reflector sets standing in for an anechoic, an empty and a furnished room
ROOM_PROFILES: dict[str, tuple[ScattererTrajectory, ...]] = {
    "Ra": (),
    "Rb": (
        ScattererTrajectory("wall-back", (1.75, 0.3, 0.2), 0.35),
        ScattererTrajectory("wall-side", (0.9, 1.3, 0.0), 0.30),
    ),
    "Rc": (
        ScattererTrajectory("desk", (0.7, -0.6, -0.35), 0.20),
        ScattererTrajectory("chair", (1.1, 0.7, -0.5), 0.15),
        ScattererTrajectory("shelf", (1.5, -0.8, 0.3), 0.25),
        ScattererTrajectory("sofa", (1.6, 0.6, -0.45), 0.25),
        ScattererTrajectory("lamp", (0.8, 0.9, 0.6), 0.08),
        ScattererTrajectory("cabinet", (1.3, -1.1, -0.1), 0.20),
    ),
}
ROOM_NAMES = tuple(ROOM_PROFILES)


def room_reflectors(room: str) -> tuple[ScattererTrajectory, ...]:
    try:
        return ROOM_PROFILES[room]
    except KeyError:
        raise ParameterError(f"Unknown room profile {room!r} (known: {', '.join(ROOM_NAMES)})") from None


@dataclass(frozen=True)
class Scene:
    scatterers: tuple[ScattererTrajectory, ...]
    room_reflectors: tuple[ScattererTrajectory, ...]
    label: ActionClass
    subject_profile: SubjectProfile
    duration: float
    room: str = "Ra"
    seed: int = 0

    def __post_init__(self):
        if not self.scatterers and not self.room_reflectors:
            raise ParameterError("scene has no scatterers")
        if not self.duration > 0:
            raise ParameterError(f"scene duration must be positive (got {self.duration})")

    @property
    def all_scatterers(self) -> tuple[ScattererTrajectory, ...]:
        return self.scatterers + self.room_reflectors

    def scatterer(self, name: str) -> ScattererTrajectory:
        for s in self.all_scatterers:
            if s.name == name:
                return s
        raise KeyError(name)

    def torso_centroid(self, t) -> np.ndarray:
        parts = [s.position(t) for s in self.scatterers if s.name in TORSO]
        return np.mean(parts, axis=0)


# Standing body, x towards the subject, z up, relative to base distance b
_STANDING = (
    ("head", (0.05, 0.0, 0.55), 0.04),
    ("chest", (0.0, 0.0, 0.25), 0.10),
    ("abdomen", (0.02, 0.0, 0.0), 0.09),
    ("hips", (0.03, 0.0, -0.25), 0.07),
    ("hand-left", (-0.05, 0.25, -0.05), 0.03),
    ("hand-right", (-0.05, -0.25, -0.05), 0.03),
    ("knees", (0.0, 0.08, -0.6), 0.04),
    ("feet", (0.02, 0.1, -0.9), 0.03),
)
_SITTING = {
    "head": (0.25, 0.0, 0.3),
    "chest": (0.22, 0.0, 0.05),
    "abdomen": (0.25, 0.0, -0.15),
    "hips": (0.35, 0.0, -0.35),
    "hand-left": (0.05, 0.22, -0.3),
    "hand-right": (0.05, -0.22, -0.3),
    "knees": (-0.1, 0.08, -0.38),
    "feet": (-0.1, 0.1, -0.9),
}
_LYING = {
    "head": (0.4, 0.0, -0.75),
    "chest": (0.25, 0.0, -0.75),
    "abdomen": (0.1, 0.0, -0.75),
    "hips": (-0.05, 0.0, -0.75),
    "hand-left": (0.2, 0.3, -0.78),
    "hand-right": (0.2, -0.3, -0.78),
    "knees": (-0.3, 0.08, -0.78),
    "feet": (-0.5, 0.1, -0.8),
}


def _body(base: Vec3, layout, gain: float) -> dict[str, ScattererTrajectory]:
    body = {}
    for name, rel, reflectivity in _STANDING:
        if layout is not None:
            rel = layout[name]
        anchor = (base[0] + rel[0], base[1] + rel[1], base[2] + rel[2])
        body[name] = ScattererTrajectory(name, anchor, reflectivity * gain)
    return body


def _moving(body: dict[str, ScattererTrajectory], names, *motions: Motion):
    for name in names:
        body[name] = replace(body[name], motions=body[name].motions + motions)


def make_action_scene(
    label: ActionClass,
    subject_profile: SubjectProfile | None = None,
    seed: int = 0,
    duration: float = DEFAULT_DURATION,
    room: str = "Ra",
) -> Scene:
    """Builds the scatterer cluster of one action instance.

    The seed jitters the body position, motion timing and phase, and reflectivity, so repeated
    instances of a class differ while the class kinematics stay recognisable.
    """
    profile = subject_profile or SubjectProfile()
    label = ActionClass(label)
    rng = np.random.default_rng(seed)

    dx, dy = rng.uniform(-0.04, 0.04, size=2)
    phase = float(rng.uniform(0.0, 2.0 * np.pi))
    start_jitter = float(rng.uniform(-0.08, 0.08))
    gain = float(rng.uniform(0.9, 1.1))

    b = profile.base_distance
    speed = profile.limb_speed
    amp = profile.amplitude
    base = (b + dx, dy, 0.0)

    if label is ActionClass.SITTING:
        body = _body(base, _SITTING, gain)
    elif label is ActionClass.WALKING:
        body = _body((0.6 + dx, dy, 0.0), None, gain)
    else:
        body = _body(base, None, gain)

    if label is ActionClass.HAND_WAVING:
        body["hand-right"] = replace(body["hand-right"], anchor=(b - 0.15 + dx, -0.25 + dy, 0.45))
        _moving(
            body,
            ["hand-right"],
            Oscillation(
                direction=(-1.0, 0.0, 0.3),
                amplitude=float(np.clip(0.3 * amp, 0.2, 0.4)),
                frequency=float(np.clip(2.0 * speed, 1.0, 3.0)),
                phase=phase,
            ),
        )
    elif label is ActionClass.THROWING:
        body["hand-right"] = replace(body["hand-right"], anchor=(b + 0.1 + dx, -0.25 + dy, 0.4))
        _moving(
            body,
            ["hand-right"],
            Arc(
                direction=(-0.9, 0.1, -0.1),
                amplitude=float(np.clip(0.5 * amp, 0.3, 0.7)),
                start=0.35 + start_jitter,
                duration=0.45 / speed,
            ),
        )
    elif label is ActionClass.KICKING:
        start, length = 0.4 + start_jitter, 0.6 / speed
        extent = float(np.clip(0.5 * amp, 0.3, 0.7))
        _moving(body, ["feet"], Arc((-0.7, 0.0, 0.7), extent, start, length))
        _moving(body, ["knees"], Arc((-0.7, 0.0, 0.7), 0.5 * extent, start, length))
    elif label is ActionClass.PICKING_UP:
        start = 0.15 + start_jitter
        length = max(min(1.1 / speed, duration - start - 0.05), 0.1)
        _moving(
            body,
            ["head", "chest", "abdomen", "hand-left", "hand-right"],
            Arc((-0.3, 0.0, -0.95), float(np.clip(0.45 * amp, 0.3, 0.6)), start, length),
        )
    elif label is ActionClass.WALKING:
        span = float(np.clip(0.66 * speed * duration, 0.5, 0.85))
        _moving(body, list(body), Translation((span / duration, 0.0, 0.0)))
        stride = 0.08 * amp
        _moving(body, ["feet"], Oscillation((1.0, 0.0, 0.0), stride, 1.8 * speed, phase))
        _moving(body, ["knees"], Oscillation((1.0, 0.0, 0.0), stride, 1.8 * speed, phase + np.pi))
    elif label is ActionClass.LYING_DOWN:
        start = 0.2 + start_jitter
        length = max(min(0.7 / speed, duration - start - 0.1), 0.1)
        for name, scatterer in body.items():
            rel = _LYING[name]
            target = (base[0] + rel[0], base[1] + rel[1], rel[2])
            displacement = tuple(float(t - a) for t, a in zip(target, scatterer.anchor))
            body[name] = replace(scatterer, motions=(Transition(displacement, start, length),))

    scene = Scene(
        scatterers=tuple(body.values()),
        room_reflectors=room_reflectors(room),
        label=label,
        subject_profile=profile,
        duration=float(duration),
        room=room,
        seed=int(seed),
    )
    logger.debug(f"Scene {label.slug} seed={seed} room={room}: {len(scene.all_scatterers)} scatterers")
    return scene


@dataclass(frozen=True)
class SimConfig:
    snr_db: float | None = 20.0
    "Noise level relative to total echo power; None disables noise"

    seed: int = 0
    c: float = SPEED_OF_SOUND
    "Propagation speed used for the echoes (m/s)"

    channel_count: int = 1
    mic_offsets: tuple[Vec3, ...] = MIC_OFFSETS[:1]
    lead_in: int = 480
    "Silent samples before the first chirp"

    n_cycles: int | None = None
    "Cycles to synthesize; None fills the scene duration"

    def __post_init__(self):
        if self.channel_count not in (1, 2):
            raise ParameterError(f"channel_count must be 1 or 2 (got {self.channel_count})")
        if len(self.mic_offsets) != self.channel_count:
            raise ParameterError(
                f"channel_count={self.channel_count} but {len(self.mic_offsets)} mic offsets given"
            )
        if not self.c > 0:
            raise ParameterError(f"c must be positive (got {self.c})")
        if self.lead_in < 0:
            raise ParameterError(f"lead_in must be >= 0 (got {self.lead_in})")
        if self.n_cycles is not None and self.n_cycles < 1:
            raise ParameterError(f"n_cycles must be >= 1 (got {self.n_cycles})")

    @classmethod
    def for_channels(cls, channel_count: int, **kwargs) -> SimConfig:
        if channel_count not in (1, 2):
            raise ParameterError(f"channel_count must be 1 or 2 (got {channel_count})")
        return cls(channel_count=channel_count, mic_offsets=MIC_OFFSETS[:channel_count], **kwargs)

    def to_dict(self):
        return asdict(self)


def _check_range(scatterer: ScattererTrajectory, distance: np.ndarray, times: np.ndarray, geometry: SensingGeometry):
    bad = np.flatnonzero((distance < geometry.d_min) | (distance > geometry.d_max))
    if bad.size:
        i = int(bad[0])
        raise SimulationError(
            f"scatterer {scatterer.name!r} at {distance[i]:.3f} m leaves "
            f"[{geometry.d_min}, {geometry.d_max}] m at t={times[i]:.4f} s"
        )


def synthesize_recording(
    scene: Scene,
    params: ChirpParams,
    geometry: SensingGeometry,
    sim: SimConfig,
    recording_id: str = "",
) -> Recording:
    report = validate_timing(geometry, params)
    if not report.passed:
        raise GeometryError(f"chirp timing does not fit the sensing range:\n{report}")

    period = params.n_cycle / params.fs
    n_cycles = sim.n_cycles or int(np.floor(scene.duration / period + 1e-9))
    if n_cycles < 1 or n_cycles * period > scene.duration + 1e-9:
        raise ParameterError(
            f"scene duration {scene.duration:.4f} s does not cover {n_cycles} cycles of {period * 1e3:.3f} ms"
        )

    length = sim.lead_in + n_cycles * params.n_cycle
    emitted = sim.lead_in + np.arange(n_cycles) * params.n_cycle
    times = np.arange(n_cycles) * period
    mics = np.asarray(sim.mic_offsets, dtype=np.float64)
    taps = np.arange(params.n_tau + 1)

    echoes = np.zeros((sim.channel_count, length))
    for scatterer in scene.all_scatterers:
        pos = scatterer.position(times)
        d_spk = np.linalg.norm(pos, axis=1)
        _check_range(scatterer, d_spk, times, geometry)
        if scatterer.reflectivity == 0:
            continue

        for ch, mic in enumerate(mics):
            d_mic = np.linalg.norm(pos - mic, axis=1)
            onset = emitted + (d_spk + d_mic) / sim.c * params.fs
            gain = scatterer.reflectivity / (d_spk * d_mic)

            idx = np.ceil(onset).astype(np.int64)[:, np.newaxis] + taps
            values = gain[:, np.newaxis] * chirp_waveform(params, (idx - onset[:, np.newaxis]) / params.fs)
            inside = idx < length
            np.add.at(echoes[ch], idx[inside], values[inside])

    direct = np.zeros(length)
    direct[sim.lead_in :] = build_excitation(params, n_cycles)
    channels = direct[np.newaxis, :] + echoes

    if sim.snr_db is not None:
        echo_power = float(np.mean(echoes**2))
        if echo_power == 0.0:
            logger.warning(f"No echo power in {recording_id or 'scene'}, skipping noise")
        else:
            sigma = math.sqrt(echo_power / 10.0 ** (sim.snr_db / 10.0))
            rng = np.random.default_rng([sim.seed, 1])
            channels = channels + sigma * rng.standard_normal(channels.shape)

    return Recording(channels=channels, fs=params.fs, params=params, geometry=geometry, recording_id=recording_id)


@dataclass(frozen=True)
class DatasetSpec:
    classes: tuple[ActionClass, ...] = tuple(ActionClass)
    subjects: int = 4
    instances: int = 10
    "Instances per class, subject and room"

    rooms: tuple[str, ...] = ("Rc",)
    sim: SimConfig = field(default_factory=SimConfig)
    seed: int = 0
    duration: float = DEFAULT_DURATION

    def __post_init__(self):
        if not self.classes:
            raise ParameterError("dataset needs at least one class")
        if self.subjects < 1 or self.instances < 1:
            raise ParameterError(f"subjects and instances must be >= 1 (got {self.subjects}, {self.instances})")
        if not self.rooms:
            raise ParameterError("dataset needs at least one room")
        for room in self.rooms:
            room_reflectors(room)

    @property
    def count(self) -> int:
        return len(self.classes) * self.subjects * self.instances * len(self.rooms)

    def instance_seed(self, room: str, subject: int, label: ActionClass, instance: int) -> int:
        sequence = np.random.SeedSequence(
            self.seed, spawn_key=(2, ROOM_NAMES.index(room), subject, int(label), instance)
        )
        return int(sequence.generate_state(1)[0])


def generate_dataset(
    spec: DatasetSpec,
    out_dir: Path,
    params: ChirpParams | None = None,
    geometry: SensingGeometry | None = None,
    workers: int = 1,
) -> DatasetManifest:
    """Writes `wav/<id>.wav` for every instance and `manifest.jsonl` listing them in a fixed order."""
    from threads.synthesizer import SynthesisTask

    params = params or ChirpParams()
    geometry = geometry or SensingGeometry()

    tasks = []
    for room in spec.rooms:
        for subject in range(1, spec.subjects + 1):
            profile = subject_profile(spec.seed, subject)
            for label in spec.classes:
                for instance in range(spec.instances):
                    tasks.append(
                        SynthesisTask(
                            label=label,
                            subject=f"s{subject}",
                            room=room,
                            instance=instance,
                            profile=profile,
                            seed=spec.instance_seed(room, subject, label, instance),
                            duration=spec.duration,
                            params=params,
                            geometry=geometry,
                            sim=spec.sim,
                            out_dir=out_dir,
                        )
                    )

    logger.info(f"Synthesizing {len(tasks)} recordings into {out_dir} ({workers} workers)")
    with ManifestWriter(out_dir / MANIFEST_NAME) as writer:
        queue = TaskQueue(worker_count=workers, on_done=lambda _task, record: writer.append(record))
        queue.extend(tasks)
        records = queue.run()

    logger.info(f"Wrote {len(records)} manifest lines to {out_dir / MANIFEST_NAME}")
    return DatasetManifest(records=records, root=out_dir)
