from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from pathlib import Path

from modules.chirp_core import ChirpParams, SensingGeometry
from modules.enums import ActionClass
from modules.manifest import ManifestRecord
from modules.scene_sim import SimConfig, SubjectProfile, make_action_scene, synthesize_recording
from modules.task import Task
from modules.wav_io import write_recording

logger = logging.getLogger()


def instance_id(room: str, subject: str, label: ActionClass, instance: int) -> str:
    return f"{room}-{subject}-{label.slug}-{instance:03d}"


@dataclass
class SynthesisTask(Task):
    label: ActionClass
    subject: str
    room: str
    instance: int
    profile: SubjectProfile
    seed: int
    duration: float
    params: ChirpParams
    geometry: SensingGeometry
    sim: SimConfig
    out_dir: Path

    @property
    def id(self) -> str:
        return instance_id(self.room, self.subject, self.label, self.instance)

    def run(self) -> ManifestRecord:
        scene = make_action_scene(self.label, self.profile, self.seed, duration=self.duration, room=self.room)
        recording = synthesize_recording(
            scene,
            self.params,
            self.geometry,
            replace(self.sim, seed=self.seed),
            recording_id=self.id,
        )
        wav = Path("wav") / f"{self.id}.wav"
        write_recording(self.out_dir / wav, recording)
        return ManifestRecord(
            id=self.id,
            label=self.label,
            subject=self.subject,
            room=self.room,
            wav=wav.as_posix(),
            seed=self.seed,
        )

    def __str__(self):
        return f"Synthesize {self.id}"
