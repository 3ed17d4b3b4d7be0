import os

import hypothesis
import numpy as np
import pytest
from modules.chirp_core import ChirpParams, SensingGeometry, build_excitation, chirp_waveform
from modules.echo_features import Recording
from modules.enums import ActionClass
from modules.manifest import DatasetManifest, ManifestRecord

np.seterr(all="warn")

hypothesis.settings.register_profile("fast", max_examples=5, deadline=None)
hypothesis.settings.register_profile("ci", max_examples=1000, deadline=None)
hypothesis.settings.register_profile("dev", max_examples=100, deadline=None)
hypothesis.settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "dev"))

LEAD_IN = 480


@pytest.fixture(scope="session")
def params():
    return ChirpParams()


@pytest.fixture(scope="session")
def geometry():
    return SensingGeometry()


@pytest.fixture(scope="session")
def make_recording(params, geometry):
    """Excitation plus echoes at fixed delays {delay_samples: amplitude}, optionally per channel."""

    def make(n_cycles=4, echoes=None, channels=1, lead_in=LEAD_IN, noise=0.0, seed=0):
        echoes = {560: 0.5} if echoes is None else echoes
        length = lead_in + n_cycles * params.n_cycle
        y = np.zeros((channels, length))
        y[:, lead_in:] = build_excitation(params, n_cycles)
        taps = np.arange(params.n_tau + 1)
        for k in range(n_cycles):
            start = lead_in + k * params.n_cycle
            for delay, amplitude in echoes.items():
                onset = start + delay
                idx = int(np.ceil(onset)) + taps
                idx = idx[idx < length]
                y[:, idx] += amplitude * chirp_waveform(params, (idx - onset) / params.fs)
        if noise:
            y += noise * np.random.default_rng(seed).standard_normal(y.shape)
        return Recording(channels=y, fs=params.fs, params=params, geometry=geometry, recording_id="synthetic")

    return make


@pytest.fixture
def make_manifest(tmp_path):
    def make(subjects=4, rooms=("Rc",), instances=10, classes=tuple(ActionClass)):
        records = []
        for room in rooms:
            for s in range(1, subjects + 1):
                for label in classes:
                    for i in range(instances):
                        rid = f"{room}-s{s}-{label.slug}-{i:03d}"
                        records.append(
                            ManifestRecord(
                                id=rid, label=label, subject=f"s{s}", room=room, wav=f"wav/{rid}.wav", seed=i
                            )
                        )
        return DatasetManifest(records=records, root=tmp_path)

    return make
