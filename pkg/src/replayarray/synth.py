"""Synthetic multichannel replay corpus.

Every utterance index owns one source signal.  Its genuine recording is the
source seen through each microphone's coloration; its replay recording is the
same source passed through a loudspeaker/room chain first.  All devices record
the same playback in parallel, so the only systematic class difference is the
replay chain and the only systematic device difference is the coloration.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy import signal

from .dataset import (
    REMASC,
    DatasetManifest,
    DeviceMap,
    DeviceSpec,
    RecordingEntry,
    write_manifest,
    write_wave,
)
from .dsp import resample
from .errors import ParameterError, RecordingIOError

SOURCE_KINDS = ("harmonic_voicelike", "filtered_noise")
SOURCE_RMS = 0.05
PEAK_LIMIT = 0.99
MAX_PEAK_GAIN_DB = 24.0
REMASC_RATIO = 45472 / 9240

# stream tags for SeedSequence spawn keys
_SOURCE, _CHAIN, _MIC, _SPLIT = 0, 1, 2, 3


@dataclass(frozen=True)
class MicColorationProfile:
    peak_frequencies: tuple[float, ...] = ()
    peak_gains_db: tuple[float, ...] = ()
    peak_bandwidths: tuple[float, ...] = ()
    broadband_tilt_db_per_octave: float = 0.0
    noise_floor_db: float = -math.inf
    seed: int = 0

    def __post_init__(self):
        for name in ("peak_frequencies", "peak_gains_db", "peak_bandwidths"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        n = len(self.peak_frequencies)
        if len(self.peak_gains_db) != n or len(self.peak_bandwidths) != n:
            raise ParameterError("peak lists must have equal length")
        if any(abs(g) > MAX_PEAK_GAIN_DB for g in self.peak_gains_db):
            raise ParameterError(f"peak gains must lie in [-{MAX_PEAK_GAIN_DB}, {MAX_PEAK_GAIN_DB}] dB")
        if any(f <= 0 for f in self.peak_frequencies) or any(b <= 0 for b in self.peak_bandwidths):
            raise ParameterError("peak frequencies and bandwidths must be positive")

    def check_rate(self, sample_rate: float) -> None:
        nyquist = sample_rate / 2
        for f in self.peak_frequencies:
            if f >= nyquist:
                raise ParameterError(f"peak at {f} Hz is not below Nyquist ({nyquist} Hz)")


@dataclass(frozen=True)
class ReplayChainParams:
    band_low: float = 200.0
    band_high: float = 5000.0
    softclip_drive: float = 2.0
    reverb_t60: float = 0.3
    replay_noise_db: float = -55.0

    def check_rate(self, sample_rate: float) -> None:
        if not 0 < self.band_low < self.band_high < sample_rate / 2:
            raise ParameterError(
                f"need 0 < band_low < band_high < Nyquist, got {self.band_low}, {self.band_high}"
                f" at {sample_rate} Hz"
            )
        if self.softclip_drive < 0:
            raise ParameterError("soft-clip drive must be non-negative")
        if self.reverb_t60 < 0:
            raise ParameterError("T60 must be non-negative")


@dataclass(frozen=True)
class SynthSpec:
    devices: tuple[DeviceSpec, ...]
    per_mic_profiles: Mapping[int, MicColorationProfile]
    replay: ReplayChainParams = field(default_factory=ReplayChainParams)
    n_genuine: int = 150
    n_replay: int = 150
    utterance_duration: float = 1.25
    source_kind: str = "harmonic_voicelike"
    test_fraction: float = 1 / 3
    environment: str = "EnvB"
    n_speakers: int = 10

    def __post_init__(self):
        object.__setattr__(self, "devices", tuple(self.devices))
        object.__setattr__(self, "per_mic_profiles", {int(k): v for k, v in self.per_mic_profiles.items()})
        if self.n_genuine < 1 or self.n_replay < 1:
            raise ParameterError("need at least one genuine and one replay utterance")
        if self.utterance_duration < 1.0:
            raise ParameterError("utterances must last at least 1 s")
        if self.source_kind not in SOURCE_KINDS:
            raise ParameterError(f"source_kind must be one of {SOURCE_KINDS}")
        if not 0 <= self.test_fraction < 1:
            raise ParameterError("test_fraction must lie in [0, 1)")
        if not self.devices:
            raise ParameterError("at least one device is required")
        DeviceMap(self.devices)  # disjointness check
        for dev in self.devices:
            for mic in dev.mic_ids:
                profile = self.per_mic_profiles.get(mic)
                if profile is None:
                    raise ParameterError(f"no coloration profile for microphone {mic}")
                profile.check_rate(dev.sample_rate)
        self.replay.check_rate(self.master_rate)

    @property
    def master_rate(self) -> int:
        return max(d.sample_rate for d in self.devices)

    @property
    def device_map(self) -> DeviceMap:
        return DeviceMap(self.devices)

    def to_dict(self) -> dict:
        return {
            "devices": [d.to_dict() for d in self.devices],
            "per_mic_profiles": {str(k): asdict(v) for k, v in sorted(self.per_mic_profiles.items())},
            "replay": asdict(self.replay),
            "n_genuine": self.n_genuine,
            "n_replay": self.n_replay,
            "utterance_duration": self.utterance_duration,
            "source_kind": self.source_kind,
            "test_fraction": self.test_fraction,
            "environment": self.environment,
            "n_speakers": self.n_speakers,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "SynthSpec":
        d = dict(d)
        devices = tuple(DeviceSpec.from_dict(x) for x in d.pop("devices"))
        profiles = {int(k): MicColorationProfile(**v) for k, v in d.pop("per_mic_profiles").items()}
        replay = ReplayChainParams(**d.pop("replay", {}))
        return cls(devices, profiles, replay, **d)


def save_spec(spec: SynthSpec, path) -> Path:
    # json has no -inf literal; allow_nan writes -Infinity which json reads back
    Path(path).write_text(json.dumps(spec.to_dict(), indent=2), encoding="utf-8")
    return Path(path)


def load_spec(path) -> SynthSpec:
    return SynthSpec.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def random_profile(rng: np.random.Generator, sample_rate: int, *, n_peaks: int = 2,
                   tilt: float = 0.0, noise_floor_db: float = -60.0,
                   max_gain_db: float = 12.0, seed: int = 0) -> MicColorationProfile:
    """A microphone response with ``n_peaks`` dominant resonances."""
    nyq = sample_rate / 2
    freqs = np.sort(rng.uniform(300.0, 0.8 * nyq, n_peaks))
    gains = rng.uniform(0.4, 1.0, n_peaks) * max_gain_db * rng.choice([-1.0, 1.0], n_peaks, p=[0.25, 0.75])
    bws = freqs / rng.uniform(2.0, 6.0, n_peaks)
    return MicColorationProfile(tuple(freqs), tuple(gains), tuple(bws), float(tilt),
                                float(noise_floor_db), seed)


def default_profiles(devices: Sequence[DeviceSpec], seed: int = 0) -> dict[int, MicColorationProfile]:
    """Randomised per-microphone profiles; each device also gets its own tilt."""
    profiles = {}
    for dev in devices:
        dev_rng = np.random.default_rng([seed, dev.mic_ids[0] if dev.mic_ids else 0])
        tilt = float(dev_rng.uniform(-2.0, 2.0))
        for mic in dev.mic_ids:
            rng = np.random.default_rng([seed, 1000 + mic])
            profiles[mic] = random_profile(rng, dev.sample_rate, tilt=tilt, seed=seed * 100 + mic)
    return profiles


def default_spec(device_ids: Sequence[str] = ("D4",), seed: int = 0, **overrides) -> SynthSpec:
    """ReMASC-layout devices with random profiles: 150 + 150 utterances, 1/3 held out."""
    devices = tuple(REMASC[d] for d in device_ids)
    return SynthSpec(devices, default_profiles(devices, seed), **overrides)


def contrast_spec(**overrides) -> SynthSpec:
    """Two 16 kHz arrays, ``SA`` (mics 2, 3) and ``SB`` (mics 12, 13), with very different mics.

    SA mics have one broad mid-band resonance and a rising tilt; SB mics have
    a sharp low resonance plus a high one, a falling tilt and a lower noise
    floor.  Handy for reproducing cross-array mismatch on a small budget.
    """
    devices = (DeviceSpec("SA", (2, 3), 16000, 16), DeviceSpec("SB", (12, 13), 16000, 16))
    profiles = {
        2: MicColorationProfile((1500.0,), (12.0,), (400.0,), 3.0, -55.0, 1),
        3: MicColorationProfile((2500.0,), (10.0,), (600.0,), 3.0, -55.0, 2),
        12: MicColorationProfile((700.0, 6000.0), (15.0, 12.0), (200.0, 1000.0), -4.0, -70.0, 3),
        13: MicColorationProfile((900.0, 6500.0), (15.0, 12.0), (250.0, 1000.0), -4.0, -70.0, 4),
    }
    overrides.setdefault("n_genuine", 90)
    overrides.setdefault("n_replay", 90)
    return SynthSpec(devices, profiles, **overrides)


def _resonator_sos(freq: float, gain_db: float, bandwidth: float, sample_rate: float) -> np.ndarray:
    # peaking equaliser biquad: exactly gain_db at freq
    a = 10 ** (gain_db / 40)
    w0 = 2 * np.pi * freq / sample_rate
    q = max(freq / bandwidth, 0.05)
    alpha = np.sin(w0) / (2 * q)
    b = np.array([1 + alpha * a, -2 * np.cos(w0), 1 - alpha * a])
    den = np.array([1 + alpha / a, -2 * np.cos(w0), 1 - alpha / a])
    return np.concatenate([b / den[0], den / den[0]])[None, :]


def _tilt(x: np.ndarray, db_per_octave: float, sample_rate: float) -> np.ndarray:
    n = x.shape[-1]
    freqs = np.fft.rfftfreq(n, 1.0 / sample_rate)
    octaves = np.log2(np.maximum(freqs, 62.5) / 1000.0)
    gain = 10 ** (db_per_octave * octaves / 20)
    return np.fft.irfft(np.fft.rfft(x) * gain, n=n)


def mic_coloration(x: np.ndarray, profile: MicColorationProfile, sample_rate: float,
                   rng: np.random.Generator | None = None) -> np.ndarray:
    """Resonant peaks, broadband tilt (0 dB at 1 kHz), then self-noise."""
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ParameterError("signal contains non-finite samples")
    profile.check_rate(sample_rate)
    y = x
    for f, g, bw in zip(profile.peak_frequencies, profile.peak_gains_db, profile.peak_bandwidths):
        y = signal.sosfilt(_resonator_sos(f, g, bw, sample_rate), y)
    if profile.broadband_tilt_db_per_octave != 0.0:
        y = _tilt(y, profile.broadband_tilt_db_per_octave, sample_rate)
    if np.isfinite(profile.noise_floor_db):
        if rng is None:
            rng = np.random.default_rng(profile.seed)
        y = y + 10 ** (profile.noise_floor_db / 20) * rng.standard_normal(y.shape)
    return y


def band_pass(x: np.ndarray, low: float, high: float, sample_rate: float) -> np.ndarray:
    sos = signal.ellip(8, 0.5, 70, [low, high], btype="bandpass", fs=sample_rate, output="sos")
    return signal.sosfilt(sos, x)


def soft_clip(x: np.ndarray, drive: float) -> np.ndarray:
    """tanh saturation normalised so full scale maps to full scale; identity at zero drive."""
    if drive == 0:
        return x
    return np.tanh(drive * x) / np.tanh(drive)


def exponential_reverb(x: np.ndarray, t60: float, sample_rate: float,
                       rng: np.random.Generator) -> np.ndarray:
    """Direct path plus a noise tail decaying 60 dB over ``t60``, tail energy equal to the direct path."""
    if t60 == 0:
        return x
    n = max(int(round(t60 * sample_rate)), 2)
    t = np.arange(1, n) / sample_rate
    tail = rng.standard_normal(n - 1) * 10 ** (-3 * t / t60)
    tail /= np.sqrt(np.sum(tail**2))
    h = np.concatenate([[1.0], tail])
    return signal.fftconvolve(x, h)[: x.shape[-1]]


def replay_chain(x: np.ndarray, params: ReplayChainParams, sample_rate: float,
                 rng: np.random.Generator | None = None) -> np.ndarray:
    """Loudspeaker band limit, saturation, room decay and playback noise."""
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ParameterError("signal contains non-finite samples")
    params.check_rate(sample_rate)
    if rng is None:
        rng = np.random.default_rng(0)
    y = band_pass(x, params.band_low, params.band_high, sample_rate)
    y = soft_clip(y, params.softclip_drive)
    y = exponential_reverb(y, params.reverb_t60, sample_rate, rng)
    if np.isfinite(params.replay_noise_db):
        y = y + 10 ** (params.replay_noise_db / 20) * rng.standard_normal(y.shape)
    return y


def _envelope(n: int, sample_rate: float, rng: np.random.Generator) -> np.ndarray:
    # syllable-rate amplitude modulation, strictly positive
    knots = max(int(n / sample_rate * 8) + 2, 3)
    env = np.interp(np.arange(n), np.linspace(0, n - 1, knots), rng.uniform(0.2, 1.0, knots))
    return signal.sosfiltfilt(signal.butter(2, 12.0, fs=sample_rate, output="sos"), env)


def _formants(x: np.ndarray, sample_rate: float, rng: np.random.Generator) -> np.ndarray:
    centres = (rng.uniform(300, 900), rng.uniform(900, 2500), rng.uniform(2500, 3500))
    y = np.zeros_like(x)
    for i, fc in enumerate(centres):
        if fc >= 0.45 * sample_rate:
            continue
        sos = signal.butter(1, [fc * 0.85, fc * 1.15], btype="bandpass", fs=sample_rate, output="sos")
        y += signal.sosfilt(sos, x) * 10 ** (-6 * i / 20)
    return 0.7 * y + 0.3 * x


def make_source(kind: str, duration: float, sample_rate: int, rng: np.random.Generator) -> np.ndarray:
    """Voice-like excitation (or shaped noise) at :data:`SOURCE_RMS`."""
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    if kind == "harmonic_voicelike":
        f0 = rng.uniform(80.0, 300.0)
        f0_t = f0 * (1 + 0.03 * np.sin(2 * np.pi * rng.uniform(3, 6) * t + rng.uniform(0, 2 * np.pi)))
        phase = 2 * np.pi * np.cumsum(f0_t) / sample_rate
        x = np.zeros(n)
        for k in range(1, int(0.45 * sample_rate / (1.03 * f0)) + 1):
            x += np.sin(k * phase + rng.uniform(0, 2 * np.pi)) / k
        x += 0.05 * rng.standard_normal(n)
    elif kind == "filtered_noise":
        x = rng.standard_normal(n)
    else:
        raise ParameterError(f"unknown source kind {kind!r}")
    x = _formants(x, sample_rate, rng) * _envelope(n, sample_rate, rng)
    return x * SOURCE_RMS / np.sqrt(np.mean(x**2))


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


def _test_indices(n_sources: int, fraction: float, seed: int) -> set[int]:
    n_test = int(round(fraction * n_sources))
    return set(_rng(seed, _SPLIT).permutation(n_sources)[:n_test].tolist())


def render_utterance(spec: SynthSpec, index: int, label: str, seed: int) -> dict[str, np.ndarray]:
    """Audio of one utterance for every device, keyed by device id ([channels, frames])."""
    rate = spec.master_rate
    source = make_source(spec.source_kind, spec.utterance_duration, rate, _rng(seed, _SOURCE, index))
    if label == "replay":
        played = replay_chain(source, spec.replay, rate, _rng(seed, _CHAIN, index))
        played *= SOURCE_RMS / np.sqrt(np.mean(played**2))
    else:
        played = source
    out = {}
    for dev in spec.devices:
        at_dev = resample(played, rate, dev.sample_rate)
        chans = [
            mic_coloration(at_dev, spec.per_mic_profiles[mic], dev.sample_rate,
                           _rng(seed, _MIC, index, mic, int(label == "replay")))
            for mic in dev.mic_ids
        ]
        audio = np.stack(chans)
        peak = np.max(np.abs(audio))
        if peak > PEAK_LIMIT:
            audio *= PEAK_LIMIT / peak
        out[dev.device_id] = audio
    return out


def generate_corpus(spec: SynthSpec, seed: int, out_dir) -> DatasetManifest:
    """Render the corpus into ``out_dir`` and write ``manifest.csv`` plus ``devices.json``."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        for dev in spec.devices:
            (out_dir / dev.device_id).mkdir(exist_ok=True)
    except OSError as exc:
        raise RecordingIOError(f"cannot create {out_dir}: {exc}") from exc
    n_sources = max(spec.n_genuine, spec.n_replay)
    test_idx = _test_indices(n_sources, spec.test_fraction, seed)
    entries = []
    for index in range(n_sources):
        split = "test" if index in test_idx else "train"
        for label, count in (("genuine", spec.n_genuine), ("replay", spec.n_replay)):
            if index >= count:
                continue
            audio = render_utterance(spec, index, label, seed)
            for dev in spec.devices:
                path = out_dir / dev.device_id / f"{label}_{index:05d}.wav"
                write_wave(path, audio[dev.device_id], dev.sample_rate, dev.bit_depth)
                entries.append(RecordingEntry(
                    path, dev, label, spec.environment, f"spk{index % spec.n_speakers:02d}",
                    audio[dev.device_id].shape[1] / dev.sample_rate, split,
                ))
    manifest = DatasetManifest(tuple(entries), out_dir.name or "synthetic", spec.device_map)
    write_manifest(manifest, out_dir / "manifest.csv")
    save_spec(spec, out_dir / "synth_spec.json")
    return manifest
