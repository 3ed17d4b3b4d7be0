"""End-to-end checks on the synthetic dataset.

The classification checks synthesize and extract a few hundred recordings and are marked slow;
run them with `pytest -m slow`.
"""

import itertools

import numpy as np
import pytest
from modules.chirp_core import cycle_indexing, design_chirp
from modules.dsp_kernels import matched_filter
from modules.echo_features import ExtractionConfig, locate_direct_waves
from modules.enums import ActionClass, FeatureKind
from modules.harness import Condition, FeatureStore, combine_reports, run_condition, run_xval
from modules.manifest import DatasetManifest
from modules.scene_sim import (
    MIC_OFFSETS,
    DatasetSpec,
    Scene,
    ScattererTrajectory,
    SimConfig,
    SubjectProfile,
    generate_dataset,
    synthesize_recording,
)

SEED = 7


def test_static_echo_delay_is_recovered(params, geometry):
    chirp = design_chirp(params)
    gate = cycle_indexing(geometry, params)
    hits = trials = 0
    for d, seed in itertools.product((0.4, 0.8, 1.2, 1.6), range(100)):
        scene = Scene(
            scatterers=(ScattererTrajectory("target", (d, 0.0, 0.0), 0.5),),
            room_reflectors=(),
            label=ActionClass.STANDING,
            subject_profile=SubjectProfile(),
            duration=0.05,
        )
        recording = synthesize_recording(scene, params, geometry, SimConfig(snr_db=20.0, seed=seed, n_cycles=2))
        start = int(locate_direct_waves(recording)[0])
        window = recording.channels[0, start + gate.n_min : start + gate.n_max + 1]
        found = gate.n_min + int(np.argmax(matched_filter(window, chirp).correlation))

        mic = np.asarray(MIC_OFFSETS[0])
        expected = (d + np.linalg.norm(np.array([d, 0.0, 0.0]) - mic)) / geometry.c * params.fs
        hits += abs(found - expected) <= 1.0
        trials += 1
    assert hits / trials >= 0.99


@pytest.fixture(scope="module")
def rooms_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance")
    spec = DatasetSpec(rooms=("Ra", "Rb", "Rc"), seed=SEED)
    manifest = generate_dataset(spec, root / "data", workers=4)
    store = FeatureStore(manifest, workers=4, cache_dir=root / "features")
    store.prefetch(manifest.records, list(FeatureKind))
    return manifest, store


def _holdout(manifest, store, kind):
    condition = Condition.from_dict("within", {"train": "room=Rc", "mode": "holdout", "test_size": "0.3"})
    return run_condition(manifest, condition, kind, store=store, seed=SEED).accuracy


def _cross_subject(manifest, store, kind):
    rc = manifest.subset(manifest.select("room=Rc"))
    reports = run_xval(rc, kind, k=4, group_by="subject", store=store, seed=SEED)
    return float(np.mean(combine_reports(reports).per_fold))


def _cross_room(manifest, store, kind):
    condition = Condition.from_dict("rooms", {"train": "room=Ra,Rb", "eval": "room=Rc"})
    return run_condition(manifest, condition, kind, store=store, seed=SEED).accuracy


@pytest.mark.slow
def test_within_room_accuracy(rooms_dataset):
    manifest, store = rooms_dataset
    accuracy = {kind: _holdout(manifest, store, kind) for kind in FeatureKind}
    assert accuracy[FeatureKind.F_RENV] >= 0.90
    assert min(accuracy.values()) >= 0.75


@pytest.mark.slow
def test_accuracy_ordering(rooms_dataset):
    manifest, store = rooms_dataset
    kind = FeatureKind.F_RENV
    within = _holdout(manifest, store, kind)
    subjects = _cross_subject(manifest, store, kind)
    rooms = _cross_room(manifest, store, kind)
    assert 0.125 < subjects < within
    assert rooms < subjects


@pytest.mark.slow
def test_results_are_reproducible(rooms_dataset, tmp_path):
    manifest, store = rooms_dataset
    again = generate_dataset(DatasetSpec(rooms=("Ra", "Rb", "Rc"), seed=SEED), tmp_path / "data", workers=2)
    assert (manifest.root / "manifest.jsonl").read_bytes() == (again.root / "manifest.jsonl").read_bytes()
    for record in manifest.records[::37]:
        assert manifest.wav_path(record).read_bytes() == again.wav_path(record).read_bytes()

    fresh = FeatureStore(DatasetManifest.load(again.root), workers=2)
    kind = FeatureKind.F_RENV
    assert _holdout(manifest, store, kind) == _holdout(again, fresh, kind)
    assert _cross_room(manifest, store, kind) == _cross_room(again, fresh, kind)


@pytest.mark.slow
def test_renv_classes_are_separable(tmp_path):
    spec = DatasetSpec(subjects=2, instances=4, rooms=("Ra",), sim=SimConfig(snr_db=None), seed=SEED)
    manifest = generate_dataset(spec, tmp_path, workers=4)
    store = FeatureStore(manifest, config=ExtractionConfig(), workers=4)
    matrices = store.matrices(manifest.records, FeatureKind.F_RENV)
    rows = np.stack([m.flatten() for m in matrices])
    labels = np.asarray([int(m.label) for m in matrices])

    centroids = np.stack([rows[labels == k].mean(axis=0) for k in range(len(ActionClass))])
    spread = np.mean(
        [np.sqrt(np.mean(np.sum((rows[labels == k] - centroids[k]) ** 2, axis=1))) for k in range(len(ActionClass))]
    )
    gaps = [np.linalg.norm(centroids[a] - centroids[b]) for a, b in itertools.combinations(range(len(ActionClass)), 2)]
    assert np.mean(gaps) > spread
