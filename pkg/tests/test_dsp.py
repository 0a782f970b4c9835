import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from replayarray.dataset import DatasetManifest, MultichannelRecording, REMASC, RecordingEntry, write_wave
from replayarray.dsp import (
    StftParams,
    average_magnitude_spectra,
    crop_first_second,
    device_spectra,
    istft,
    resample,
    stft,
    stft_frames,
    stft_params_for,
    write_spectra_csv,
)
from replayarray.errors import InsufficientAudioError, NoDataError, ParameterError


def _rec(n, rate=16000, channels=(12,), rng=None):
    rng = rng or np.random.default_rng(0)
    return MultichannelRecording(rng.uniform(-0.5, 0.5, (len(channels), n)), rate, channels)


@pytest.mark.parametrize("n, rate, expected", [(48000, 16000, 16000), (16000, 16000, 16000), (44100 * 2, 44100, 44100)])
def test_crop_first_second(n, rate, expected):
    rec = _rec(n, rate)
    out = crop_first_second(rec)
    assert out.n_frames == expected
    np.testing.assert_array_equal(out.samples, rec.samples[:, :expected])


def test_crop_rejects_short():
    with pytest.raises(InsufficientAudioError):
        crop_first_second(_rec(8000))


def _preset_oracle(ms, rate):
    win = int(math.floor(ms * rate / 1000 + 0.5))
    fft = 1
    while fft < win:
        fft *= 2
    return win, int(math.floor(win / 2 + 0.5)), fft


@pytest.mark.parametrize("rate, ms, expected", [(44100, 32, (1411, 706, 2048)), (16000, 46, (736, 368, 1024))])
def test_stft_presets(rate, ms, expected):
    p = stft_params_for(rate)
    assert (p.window_length, p.hop_length, p.fft_size) == expected == _preset_oracle(ms, rate)
    assert p.n_bins == expected[2] // 2 + 1


def test_stft_preset_unsupported_rate():
    with pytest.raises(ParameterError):
        stft_params_for(8000)


@pytest.mark.parametrize("rate, frames, bins", [(44100, 61, 1025), (16000, 42, 513)])
def test_stft_shape_one_second(rate, frames, bins):
    p = stft_params_for(rate)
    assert frames == (rate - p.window_length) // p.hop_length + 1
    spec = stft(_rec(rate, rate, channels=(2, 3) if rate == 44100 else (12, 13)), p)
    assert spec.values.shape == (2, frames, bins)


def test_stft_zero_input():
    p = stft_params_for(16000)
    rec = MultichannelRecording(np.zeros((1, 16000)), 16000, (12,))
    assert not np.any(stft(rec, p).values)


def test_stft_rate_mismatch():
    with pytest.raises(ParameterError):
        stft(_rec(44100, 44100, (2,)), stft_params_for(16000))


def test_stft_too_short():
    with pytest.raises(InsufficientAudioError):
        stft_frames(np.zeros(100), stft_params_for(16000))


def test_stft_matches_direct_dft(rng):
    p = StftParams(16, 8, 32, 1000)
    x = rng.standard_normal(60)
    X = stft_frames(x, p)
    w = p.window_array()
    t, f = 3, 5
    frame = x[t * 8:t * 8 + 16] * w
    direct = sum(frame[n] * np.exp(-2j * np.pi * f * n / 32) for n in range(16))
    assert X[t, f] == pytest.approx(direct)


@pytest.mark.parametrize("rate", [16000, 44100])
def test_stft_roundtrip_interior(rate, rng):
    p = stft_params_for(rate)
    x = rng.standard_normal(rate)
    y = istft(stft_frames(x, p), p, length=len(x))
    interior = slice(p.window_length, len(x) - 2 * p.window_length)
    err = np.linalg.norm(y[interior] - x[interior]) / np.linalg.norm(x[interior])
    assert err < 1e-6


def test_hann_cola_even_preset():
    p = stft_params_for(16000)
    w = p.window_array()
    acc = np.zeros(p.hop_length * 20 + p.window_length)
    for k in range(21):
        acc[k * p.hop_length:k * p.hop_length + p.window_length] += w
    inner = acc[p.window_length:-p.window_length]
    np.testing.assert_allclose(inner, inner[0], rtol=1e-12)


@settings(max_examples=25, deadline=None)
@given(a=st.floats(-5, 5), b=st.floats(-5, 5), seed=st.integers(0, 2**31))
def test_stft_linear(a, b, seed):
    rng = np.random.default_rng(seed)
    p = StftParams(64, 32, 64, 8000)
    x, y = rng.standard_normal((2, 400))
    lhs = stft_frames(a * x + b * y, p)
    rhs = a * stft_frames(x, p) + b * stft_frames(y, p)
    assert np.linalg.norm(lhs - rhs) <= 1e-6 * max(np.linalg.norm(rhs), 1e-12) + 1e-12


def test_resample_length_and_identity(rng):
    x = rng.standard_normal(44100)
    assert resample(x, 44100, 16000).shape == (16000,)
    assert resample(x[:1000], 16000, 44100).shape == (round(1000 * 44100 / 16000),)
    same = resample(x, 16000, 16000)
    assert same is x or np.array_equal(same, x)


def test_resample_bad_rate():
    with pytest.raises(ParameterError):
        resample(np.zeros(10), 0, 16000)


def _snr_db(ref, est):
    return 10 * np.log10(np.sum(ref**2) / np.sum((est - ref) ** 2))


def test_resample_sine_snr():
    t = np.arange(44100) / 44100
    y = resample(np.sin(2 * np.pi * 1000 * t), 44100, 16000)
    ref = np.sin(2 * np.pi * 1000 * np.arange(len(y)) / 16000)
    trim = slice(160, len(y) - 160)
    assert _snr_db(ref[trim], y[trim]) >= 60


def test_resample_roundtrip_band_limited(rng):
    t = np.arange(16000) / 16000
    freqs = rng.uniform(50, 0.4 * 8000, 12)
    x = sum(np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi)) for f in freqs)
    z = resample(resample(x, 16000, 44100), 44100, 16000)
    trim = slice(160, -160)
    assert _snr_db(x[trim], z[trim]) >= 50


def test_resample_multichannel_axis(rng):
    x = rng.standard_normal((3, 4410))
    y = resample(x, 44100, 16000)
    assert y.shape == (3, 1600)
    np.testing.assert_allclose(y[1], resample(x[1], 44100, 16000))


def _spectra_manifest(tmp_path, scales):
    entries = []
    t = np.arange(16000) / 16000
    for i, s in enumerate(scales):
        audio = np.zeros((7, 16000))
        audio[0] = s * 0.2 * np.sin(2 * np.pi * 1000 * t)
        write_wave(tmp_path / f"e{i}.wav", audio, 16000, 16)
        entries.append(RecordingEntry(tmp_path / f"e{i}.wav", REMASC["D4"], "genuine", "EnvB", "s", 1.0, "train"))
    return DatasetManifest(tuple(entries))


def test_average_spectra_arithmetic_mean(tmp_path):
    (tmp_path / "a").mkdir()
    one = _spectra_manifest(tmp_path / "a", [1.0])
    both = _spectra_manifest(tmp_path, [1.0, 3.0])
    f, s1 = average_magnitude_spectra(one, 12, "genuine")
    _, s2 = average_magnitude_spectra(both, 12, "genuine")
    k = np.argmin(np.abs(f - 1000))
    assert s2[k] == pytest.approx(2 * s1[k], rel=1e-3)


def test_average_spectra_single_frame(tmp_path):
    p = StftParams(16000, 8000, 16384, 16000)
    m = _spectra_manifest(tmp_path, [1.0])
    f, s = average_magnitude_spectra(m, 12, "genuine", p)
    from replayarray.dataset import read_recording
    x = read_recording(m.entries[0], [12]).samples[0]
    np.testing.assert_allclose(s, np.abs(stft_frames(x, p)[0]))


def test_average_spectra_empty(tmp_path):
    m = _spectra_manifest(tmp_path, [1.0])
    with pytest.raises(NoDataError):
        average_magnitude_spectra(m, 12, "replay")


def test_average_spectra_reveals_profile_peak(tmp_path):
    from replayarray.synth import MicColorationProfile, SynthSpec, generate_corpus, ReplayChainParams
    dev = REMASC["D3"]
    profiles = {m: MicColorationProfile(noise_floor_db=-70.0) for m in dev.mic_ids}
    profiles[6] = MicColorationProfile((3000.0,), (12.0,), (300.0,), 0.0, -70.0)
    spec = SynthSpec((dev,), profiles, ReplayChainParams(), 4, 4, 1.0, source_kind="filtered_noise")
    m = generate_corpus(spec, 0, tmp_path)
    f, s6 = average_magnitude_spectra(m, 6, "genuine")
    _, s7 = average_magnitude_spectra(m, 7, "genuine")
    ratio_db = 20 * np.log10(s6 / s7)
    assert abs(f[np.argmax(ratio_db)] - 3000) < 100
    assert ratio_db.max() == pytest.approx(12, abs=1.5)
    spectra = device_spectra(m, "D3")
    assert set(spectra) == {(mic, lab) for mic in dev.mic_ids for lab in ("genuine", "replay")}
    out = write_spectra_csv(tmp_path / "spectra.csv", f, spectra)
    assert out.read_text().count("\n") == len(f) + 1
