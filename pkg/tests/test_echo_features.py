import numpy as np
import pytest
from modules.chirp_core import ChirpParams, build_excitation, design_chirp
from modules.echo_features import (
    EchoFrameSeries,
    ExtractionConfig,
    FeatureMatrix,
    Recording,
    extract_all,
    extract_f_ienv,
    extract_f_ir,
    extract_f_ref,
    extract_f_renv,
    extraction_hash,
    load_feature_matrix,
    locate_direct_waves,
    save_feature_matrix,
    segment_frames,
    split_windows,
)
from modules.enums import ActionClass, FeatureKind
from modules.errors import DataError, DetectionError, ParameterError, SegmentationError
from modules.scene_sim import (
    Scene,
    ScattererTrajectory,
    SimConfig,
    SubjectProfile,
    Translation,
    make_action_scene,
    synthesize_recording,
)


LEAD_IN = 480

# Echo at 560 samples after the direct wave lands 392 samples into the gate starting at 168
ECHO_DELAY = 560
GATE_LAG = ECHO_DELAY - 168


def _plateau_start(envelope: np.ndarray, width: int) -> int:
    return int(np.argmax(np.convolve(envelope, np.ones(width), mode="valid")))


def test_direct_waves_are_one_period_apart(make_recording, params):
    recording = make_recording(n_cycles=6)
    indices = locate_direct_waves(recording)
    np.testing.assert_array_equal(indices, LEAD_IN + np.arange(6) * params.n_cycle)


def test_noisy_recording_still_locks(make_recording, params):
    recording = make_recording(n_cycles=6, noise=0.05, seed=4)
    indices = locate_direct_waves(recording)
    assert len(indices) == 6
    assert np.all(np.abs(indices - (LEAD_IN + np.arange(6) * params.n_cycle)) <= 1)


def test_recording_that_starts_mid_cycle(params, geometry):
    sim = SimConfig(snr_db=None, n_cycles=16)
    recording = synthesize_recording(make_action_scene(ActionClass.STANDING, seed=1), params, geometry, sim)
    truth = locate_direct_waves(recording)
    np.testing.assert_array_equal(truth, sim.lead_in + np.arange(16) * params.n_cycle)

    # The cut lands between the echoes of the first cycle
    cut = int(truth[0]) + 200
    trimmed = Recording(channels=recording.channels[:, cut:], fs=params.fs, params=params, geometry=geometry)
    np.testing.assert_array_equal(locate_direct_waves(trimmed), truth[1:] - cut)


def test_long_silent_lead_in(make_recording, params):
    lead_in = 3 * params.n_cycle + 17
    indices = locate_direct_waves(make_recording(n_cycles=4, lead_in=lead_in))
    np.testing.assert_array_equal(indices, lead_in + np.arange(4) * params.n_cycle)


def test_noise_only_recording_is_not_detected(params, geometry):
    noise = np.random.default_rng(0).standard_normal(5 * params.n_cycle)
    recording = Recording(channels=noise, fs=params.fs, params=params, geometry=geometry)
    with pytest.raises(DetectionError):
        locate_direct_waves(recording)


def test_too_short_recording_is_not_detected(params, geometry):
    recording = Recording(channels=np.ones(params.n_cycle), fs=params.fs, params=params, geometry=geometry)
    with pytest.raises(DetectionError):
        locate_direct_waves(recording)


def test_recording_rejects_mismatched_rate(params, geometry):
    with pytest.raises(ParameterError):
        Recording(channels=np.zeros(100), fs=48_000.0, params=params, geometry=geometry)
    with pytest.raises(ParameterError):
        Recording(channels=np.zeros((1, 2, 3)), fs=params.fs, params=params, geometry=geometry)

    recording = Recording(channels=np.zeros(100), fs=params.fs, params=params, geometry=geometry)
    with pytest.raises(ParameterError):
        recording.channel(1)


def test_segmentation_shapes(make_recording, params):
    recording = make_recording(n_cycles=5)
    frames = segment_frames(recording, 0, locate_direct_waves(recording))
    assert frames.direct_frames.shape == (5, params.n_tau)
    assert frames.reflect_frames.shape == (5, 953)
    assert frames.n == 5


def test_segment_past_the_end(make_recording, params):
    recording = make_recording(n_cycles=3)
    last = recording.length - params.n_cycle + 100
    with pytest.raises(SegmentationError) as exc:
        segment_frames(recording, 0, [LEAD_IN, last])
    assert exc.value.cycle == 1

    with pytest.raises(SegmentationError):
        segment_frames(recording, 0, [])


def test_frame_series_checks_the_period(make_recording, params):
    recording = make_recording(n_cycles=3)
    frames = segment_frames(recording, 0, locate_direct_waves(recording))
    with pytest.raises(SegmentationError) as exc:
        EchoFrameSeries(
            direct_frames=frames.direct_frames,
            reflect_frames=frames.reflect_frames,
            direct_indices=frames.direct_indices + np.array([0, 0, 5]),
            channel_id=0,
            params=params,
            indexing=frames.indexing,
        )
    assert exc.value.cycle == 2


def test_feature_shapes(make_recording):
    recording = make_recording(n_cycles=128)
    matrices = extract_all(recording, list(FeatureKind), label=ActionClass.STANDING)
    assert [m.kind for m in matrices] == list(FeatureKind)
    for matrix in matrices:
        assert matrix.values.shape == (128, 953)
        assert matrix.label is ActionClass.STANDING
        assert matrix.config_hash == extraction_hash(recording, ExtractionConfig())


def test_stereo_channels_are_concatenated(make_recording):
    recording = make_recording(n_cycles=4, channels=2)
    (matrix,) = extract_all(recording, [FeatureKind.F_IR])
    assert matrix.values.shape == (4, 2 * 953)
    assert matrix.channel == "0,1"
    np.testing.assert_allclose(matrix.values[:, :953], matrix.values[:, 953:])


def test_static_echo_is_stationary(make_recording):
    recording = make_recording(n_cycles=8, echoes={400: 0.3, 700: 0.2})
    for matrix in extract_all(recording, list(FeatureKind)):
        np.testing.assert_allclose(matrix.values, np.broadcast_to(matrix.values[0], matrix.values.shape), atol=1e-6)


def test_echo_positions(make_recording, params):
    recording = make_recording(n_cycles=3)
    frames = segment_frames(recording, 0, locate_direct_waves(recording))

    f_ref = extract_f_ref(frames).values[0]
    assert np.all(f_ref[:GATE_LAG] == 0.0)
    np.testing.assert_allclose(f_ref[GATE_LAG : GATE_LAG + params.n_tau], 0.5 * frames.direct_frames[0], atol=1e-6)

    renv = extract_f_renv(frames).values[0]
    assert abs(_plateau_start(renv, params.n_tau) - GATE_LAG) <= 2

    f_ir = extract_f_ir(frames).values[0]
    assert int(np.argmax(np.abs(f_ir))) == GATE_LAG
    assert abs(f_ir[GATE_LAG]) == pytest.approx(0.5, rel=0.1)

    ienv = extract_f_ienv(frames).values[0]
    assert abs(int(np.argmax(ienv)) - GATE_LAG) <= 2


def test_chirp_band_up_to_nyquist(geometry):
    params = ChirpParams(f1=48_000.0)
    y = np.zeros(LEAD_IN + 4 * params.n_cycle)
    y[LEAD_IN:] = build_excitation(params, 4)
    for k in range(4):
        onset = LEAD_IN + k * params.n_cycle + ECHO_DELAY
        y[onset : onset + params.n_tau] += 0.5 * design_chirp(params)
    recording = Recording(channels=y, fs=params.fs, params=params, geometry=geometry)

    f_ir, f_ienv = extract_all(recording, [FeatureKind.F_IR, FeatureKind.F_IENV])
    assert f_ir.values.shape == f_ienv.values.shape == (4, 953)
    np.testing.assert_array_equal(np.argmax(np.abs(f_ir.values), axis=1), [GATE_LAG] * 4)


def test_envelope_peak_tracks_a_moving_reflector(params, geometry):
    mover = ScattererTrajectory("p", (0.8, 0.0, 0.0), 0.2, motions=(Translation((0.5, 0.0, 0.0)),))
    scene = Scene(
        scatterers=(mover,),
        room_reflectors=(),
        label=ActionClass.WALKING,
        subject_profile=SubjectProfile(),
        duration=1.0,
    )
    sim = SimConfig(snr_db=None, n_cycles=32)
    recording = synthesize_recording(scene, params, geometry, sim)
    frames = segment_frames(recording, 0, locate_direct_waves(recording))
    assert frames.n == 32

    # Positions are frozen at the start of every cycle
    times = np.arange(frames.n) * params.n_cycle / params.fs
    position = mover.position(times)
    path = np.linalg.norm(position, axis=1) + np.linalg.norm(position - np.asarray(sim.mic_offsets[0]), axis=1)
    lag = path / sim.c * params.fs - frames.indexing.n_min
    assert lag[-1] - lag[0] > 50

    peaks = np.argmax(extract_f_ienv(frames).values, axis=1)
    assert np.all(np.abs(peaks - lag) <= 2)

    renv = extract_f_renv(frames).values
    starts = np.array([_plateau_start(row, params.n_tau) for row in renv])
    assert np.all(np.abs(starts - lag) <= 2)


def test_moving_scatterer_changes_the_features(params, geometry):
    sim = SimConfig(snr_db=None, n_cycles=32)
    standing = synthesize_recording(make_action_scene(ActionClass.STANDING, seed=1), params, geometry, sim)
    waving = synthesize_recording(make_action_scene(ActionClass.HAND_WAVING, seed=1), params, geometry, sim)

    (still,) = extract_all(standing, [FeatureKind.F_IR])
    (moving,) = extract_all(waving, [FeatureKind.F_IR])
    assert np.max(np.std(still.values, axis=0)) < 1e-6
    assert np.max(np.std(moving.values, axis=0)) > 1e-3


def test_empty_kind_list(make_recording):
    assert extract_all(make_recording(n_cycles=3), []) == []


def test_split_windows():
    matrix = FeatureMatrix(kind=FeatureKind.F_REF, values=np.arange(300.0).reshape(300, 1), recording_id="r")
    windows = split_windows(matrix, 128)
    assert [w.window for w in windows] == [0, 1]
    assert windows[1].values[0, 0] == 128.0
    assert all(w.n == 128 for w in windows)

    with pytest.raises(DataError):
        split_windows(matrix, 301)
    with pytest.raises(ParameterError):
        split_windows(matrix, 0)


def test_feature_matrix_validation():
    with pytest.raises(DataError):
        FeatureMatrix(kind=FeatureKind.F_IR, values=np.array([[0.0, np.nan]]))
    with pytest.raises(ParameterError):
        FeatureMatrix(kind=FeatureKind.F_IR, values=np.zeros(4))


def test_feature_matrix_persistence(tmp_path):
    values = np.random.default_rng(2).standard_normal((16, 953)).astype(np.float32)
    matrix = FeatureMatrix(
        kind=FeatureKind.F_IENV,
        values=values,
        label=ActionClass.KICKING,
        recording_id="Rc-s1-kicking-000",
        config_hash="abc",
        window=3,
    )
    payload = save_feature_matrix(matrix, tmp_path / "deep" / "m")
    assert payload.suffix == ".f32"
    assert payload.stat().st_size == 16 * 953 * 4

    loaded = load_feature_matrix(tmp_path / "deep" / "m")
    np.testing.assert_array_equal(loaded.values, values)
    assert loaded.kind is FeatureKind.F_IENV
    assert loaded.label is ActionClass.KICKING
    assert (loaded.recording_id, loaded.config_hash, loaded.window) == ("Rc-s1-kicking-000", "abc", 3)


def test_extracted_features_survive_persistence_bit_for_bit(make_recording, tmp_path):
    recording = make_recording(n_cycles=6, noise=0.01, seed=9)
    for matrix in extract_all(recording, list(FeatureKind), label=ActionClass.SITTING):
        assert matrix.values.dtype == np.float32
        save_feature_matrix(matrix, tmp_path / matrix.kind.value)
        loaded = load_feature_matrix(tmp_path / matrix.kind.value)
        np.testing.assert_array_equal(loaded.values, matrix.values)


def test_truncated_payload_is_a_data_error(tmp_path):
    matrix = FeatureMatrix(kind=FeatureKind.F_REF, values=np.ones((4, 8)))
    payload = save_feature_matrix(matrix, tmp_path / "m")
    payload.write_bytes(payload.read_bytes()[:-4])
    with pytest.raises(DataError):
        load_feature_matrix(tmp_path / "m")
    with pytest.raises(DataError):
        load_feature_matrix(tmp_path / "missing")
