"""Cropping, resampling, multichannel STFT and average-spectrum diagnostics."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import signal

from .dataset import (
    LABELS,
    DatasetManifest,
    MultichannelRecording,
    RecordingEntry,
    check_mic_id,
    read_recording,
)
from .errors import InsufficientAudioError, NoDataError, ParameterError, ShapeError

# Analysis window per preset sample rate, in seconds.
PRESET_WINDOW_SECONDS = {44100: 0.032, 16000: 0.046}
KAISER_BETA = 8.6


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _next_pow2(n: int) -> int:
    return 1 << (int(n) - 1).bit_length()


@dataclass(frozen=True)
class StftParams:
    window_length: int
    hop_length: int
    fft_size: int
    sample_rate: int
    window: str = "hann"

    def __post_init__(self):
        if self.window_length < 1 or self.hop_length < 1:
            raise ParameterError("window and hop lengths must be positive")
        if self.fft_size < self.window_length:
            raise ParameterError("fft_size must be at least the window length")
        if self.sample_rate <= 0:
            raise ParameterError("sample rate must be positive")

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    def n_frames(self, n_samples: int) -> int:
        if n_samples < self.window_length:
            return 0
        return (n_samples - self.window_length) // self.hop_length + 1

    def frequencies(self) -> np.ndarray:
        return np.fft.rfftfreq(self.fft_size, d=1.0 / self.sample_rate)

    def window_array(self) -> np.ndarray:
        # periodic window, the usual choice for spectral analysis
        return signal.get_window(self.window, self.window_length, fftbins=True)

    def to_dict(self) -> dict:
        return {
            "window_length": self.window_length,
            "hop_length": self.hop_length,
            "fft_size": self.fft_size,
            "sample_rate": self.sample_rate,
            "window": self.window,
        }

    @classmethod
    def from_dict(cls, d) -> "StftParams":
        return cls(int(d["window_length"]), int(d["hop_length"]), int(d["fft_size"]),
                   int(d["sample_rate"]), d.get("window", "hann"))


def stft_params_for(rate: int) -> StftParams:
    """Preset analysis parameters: 32 ms (44.1 kHz) or 46 ms (16 kHz) Hann, 50% overlap.

    >>> p = stft_params_for(16000)
    >>> (p.window_length, p.hop_length, p.fft_size)
    (736, 368, 1024)
    """
    if rate not in PRESET_WINDOW_SECONDS:
        raise ParameterError(f"no STFT preset for {rate} Hz (presets: 44100, 16000)")
    win = _round_half_up(PRESET_WINDOW_SECONDS[rate] * rate)
    return StftParams(win, _round_half_up(win / 2), _next_pow2(win), rate)


@dataclass(frozen=True)
class ComplexSpectrogram:
    values: np.ndarray  # complex [N, T, F]
    params: StftParams
    channel_ids: tuple[int, ...]

    def __post_init__(self):
        if self.values.ndim != 3:
            raise ShapeError("spectrogram values must be [N, T, F]")
        if self.values.shape[0] != len(self.channel_ids):
            raise ShapeError("channel count does not match channel ids")
        if self.values.shape[2] != self.params.n_bins:
            raise ShapeError("frequency bins do not match the STFT parameters")

    @property
    def shape(self):
        return self.values.shape


def crop_first_second(rec: MultichannelRecording) -> MultichannelRecording:
    n = int(rec.sample_rate)
    if rec.n_frames < n:
        raise InsufficientAudioError(
            f"recording lasts {rec.duration:.3f} s, the first full second is required"
        )
    if rec.n_frames == n:
        return rec
    return MultichannelRecording(rec.samples[:, :n], rec.sample_rate, rec.channel_ids, rec.label)


def resample(x: np.ndarray, from_rate: float, to_rate: float, axis: int = -1) -> np.ndarray:
    """Band-limited polyphase resampling along ``axis``.

    The output has ``round(len * to_rate / from_rate)`` samples.  Equal rates
    return the input unchanged.
    """
    if from_rate <= 0 or to_rate <= 0:
        raise ParameterError("sample rates must be positive")
    x = np.asarray(x)
    if from_rate == to_rate:
        return x
    ratio = Fraction(to_rate).limit_denominator(10**6) / Fraction(from_rate).limit_denominator(10**6)
    n_in = x.shape[axis]
    n_out = _round_half_up(n_in * float(to_rate) / float(from_rate))
    y = signal.resample_poly(x, ratio.numerator, ratio.denominator, axis=axis,
                             window=("kaiser", KAISER_BETA))
    y = np.moveaxis(y, axis, -1)
    if y.shape[-1] >= n_out:
        y = y[..., :n_out]
    else:
        y = np.concatenate([y, np.zeros(y.shape[:-1] + (n_out - y.shape[-1],))], axis=-1)
    return np.moveaxis(y, -1, axis)


def resample_recording(rec: MultichannelRecording, to_rate: int) -> MultichannelRecording:
    if rec.sample_rate == to_rate:
        return rec
    return MultichannelRecording(resample(rec.samples, rec.sample_rate, to_rate), to_rate,
                                 rec.channel_ids, rec.label)


def stft_frames(x: np.ndarray, params: StftParams) -> np.ndarray:
    """One-sided STFT of the last axis: [..., L] -> [..., T, F]."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] < params.window_length:
        raise InsufficientAudioError(
            f"{x.shape[-1]} samples is shorter than one {params.window_length}-sample window"
        )
    frames = np.lib.stride_tricks.sliding_window_view(x, params.window_length, axis=-1)
    frames = frames[..., :: params.hop_length, :]
    return np.fft.rfft(frames * params.window_array(), n=params.fft_size, axis=-1)


def stft(rec: MultichannelRecording, params: StftParams) -> ComplexSpectrogram:
    if params.sample_rate != rec.sample_rate:
        raise ParameterError(
            f"STFT parameters are for {params.sample_rate} Hz, recording is {rec.sample_rate} Hz"
        )
    return ComplexSpectrogram(stft_frames(rec.samples, params), params, rec.channel_ids)


def istft(values: np.ndarray, params: StftParams, length: int | None = None) -> np.ndarray:
    """Weighted overlap-add inverse of :func:`stft_frames`.

    Samples not covered by any window are returned as zero.
    """
    values = np.asarray(values)
    n_frames = values.shape[-2]
    win = params.window_array()
    frames = np.fft.irfft(values, n=params.fft_size, axis=-1)[..., : params.window_length]
    total = (n_frames - 1) * params.hop_length + params.window_length
    out = np.zeros(values.shape[:-2] + (total,))
    norm = np.zeros(total)
    for t in range(n_frames):
        sl = slice(t * params.hop_length, t * params.hop_length + params.window_length)
        out[..., sl] += frames[..., t, :] * win
        norm[sl] += win**2
    nz = norm > 1e-10
    out[..., nz] /= norm[nz]
    if length is not None:
        if length > total:
            out = np.concatenate([out, np.zeros(out.shape[:-1] + (length - total,))], axis=-1)
        out = out[..., :length]
    return out


def entry_spectrogram(entry: RecordingEntry, channels: Sequence[int], params: StftParams) -> np.ndarray:
    """[N, T, F] spectrogram of the first second of ``entry`` at ``params.sample_rate``.

    The crop happens at the native rate; audio from a device with another
    rate is then resampled so one set of STFT parameters serves every device.
    """
    rec = crop_first_second(read_recording(entry, channels))
    rec = resample_recording(rec, params.sample_rate)
    return stft(rec, params).values


def average_magnitude_spectra(manifest: DatasetManifest, mic: int, class_label: str,
                              params: StftParams | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Mean |STFT| over entries and frames for one microphone and class.

    Returns ``(frequencies_hz, mean_magnitude)``.
    """
    mic = check_mic_id(mic)
    if class_label not in LABELS:
        raise ParameterError(f"unknown class {class_label!r}")
    device = manifest.device_map.device_of(mic)
    selected = manifest.filter(device=device.device_id, label=class_label)
    if len(selected) == 0:
        raise NoDataError(f"no {class_label} recordings for microphone {mic}")
    if params is None:
        params = stft_params_for(device.sample_rate)
    total = np.zeros(params.n_bins)
    for entry in selected:
        mag = np.abs(entry_spectrogram(entry, [mic], params)[0])
        total += mag.mean(axis=0)
    return params.frequencies(), total / len(selected)


def device_spectra(manifest: DatasetManifest, device_id: str,
                   params: StftParams | None = None) -> dict[tuple[int, str], np.ndarray]:
    """Average spectra of every microphone of a device, keyed by (mic, class)."""
    device = manifest.device_map[device_id]
    out = {}
    for label in LABELS:
        for mic in device.mic_ids:
            out[mic, label] = average_magnitude_spectra(manifest, mic, label, params)[1]
    if not out:
        raise NoDataError(f"device {device_id} has no microphones")
    return out


def write_spectra_csv(path, frequencies: np.ndarray, spectra: dict) -> Path:
    """One row per frequency; one column per (mic, class) spectrum."""
    path = Path(path)
    keys = list(spectra)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["frequency_hz"] + [f"mic{m}_{c}" for m, c in keys])
        for i, f in enumerate(frequencies):
            w.writerow([f"{f:.3f}"] + [f"{spectra[k][i]:.9g}" for k in keys])
    return path


def plot_spectra(path, frequencies: np.ndarray, spectra: dict) -> Path:
    """Genuine row above replay row, one panel per microphone."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    mics = sorted({m for m, _ in spectra})
    fig, axes = plt.subplots(2, len(mics), figsize=(2.2 * len(mics), 4), squeeze=False,
                             sharex=True, sharey=True)
    for row, label in enumerate(LABELS):
        for col, mic in enumerate(mics):
            ax = axes[row, col]
            if (mic, label) in spectra:
                ax.plot(frequencies / 1000.0, 20 * np.log10(spectra[mic, label] + 1e-12), lw=0.8)
            ax.set_title(f"mic {mic} / {label}", fontsize=8)
            if row == 1:
                ax.set_xlabel("kHz")
    axes[0, 0].set_ylabel("dB")
    axes[1, 0].set_ylabel("dB")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)
