import numpy as np
import pytest
from modules.echo_features import Recording
from modules.errors import DataError
from modules.wav_io import read_recording, read_wav_header, write_recording
from scipy.io import wavfile


def test_float_round_trip(tmp_path, params, geometry):
    channels = np.random.default_rng(1).uniform(-1, 1, size=(2, 5000))
    recording = Recording(channels=channels, fs=params.fs, params=params, geometry=geometry)
    path = write_recording(tmp_path / "nested" / "take.wav", recording)

    header = read_wav_header(path)
    assert (header.channels, header.rate, header.frames) == (2, 96_000, 5000)
    assert header.duration == pytest.approx(5000 / 96_000)

    loaded = read_recording(path, params, geometry)
    assert loaded.recording_id == "take"
    np.testing.assert_allclose(loaded.channels, channels.astype(np.float32))


def test_mono_is_written_as_one_column(tmp_path, params, geometry):
    recording = Recording(channels=np.zeros(100), fs=params.fs, params=params, geometry=geometry, recording_id="m")
    path = write_recording(tmp_path / "m.wav", recording)
    _, data = wavfile.read(path)
    assert data.shape == (100,)
    assert read_recording(path, params, geometry, recording_id="given").recording_id == "given"


def test_integer_pcm_is_scaled(tmp_path, params, geometry):
    path = tmp_path / "pcm16.wav"
    wavfile.write(path, 96_000, np.array([0, 16384, -32768, 32767], dtype=np.int16))
    loaded = read_recording(path, params, geometry)
    np.testing.assert_allclose(loaded.channels[0], [0.0, 0.5, -1.0, 32767 / 32768])

    path = tmp_path / "pcm8.wav"
    wavfile.write(path, 96_000, np.array([128, 0, 255], dtype=np.uint8))
    np.testing.assert_allclose(read_recording(path, params, geometry).channels[0], [0.0, -1.0, 127 / 128])


def test_rate_mismatch(tmp_path, params, geometry):
    path = tmp_path / "slow.wav"
    wavfile.write(path, 48_000, np.zeros(10, dtype=np.float32))
    with pytest.raises(DataError, match="48000"):
        read_recording(path, params, geometry)


def test_unreadable_files(tmp_path, params, geometry):
    with pytest.raises(DataError):
        read_recording(tmp_path / "absent.wav", params, geometry)

    junk = tmp_path / "junk.wav"
    junk.write_bytes(b"not a wav file at all")
    with pytest.raises(DataError):
        read_wav_header(junk)
