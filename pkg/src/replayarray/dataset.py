"""Corpus manifests, the microphone/device map, and PCM recording I/O.

A manifest is a delimited text file with one row per multichannel recording::

    path,device,label,environment,speaker,split,duration_s[,sample_rate][,channels]

``sample_rate`` and ``channels`` (space separated microphone IDs) are optional
and, when present, are checked against the device map.  Relative paths are
resolved against the manifest's directory.

Devices are described by a :class:`DeviceMap`.  The default map follows the
ReMASC layout (D2 = mics 2..5, D3 = 6..11, D4 = 12..18); a ``devices.json``
file next to a manifest overrides it, which is how synthetic corpora with
custom devices are described.
"""
from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np
from scipy.io import wavfile

from .errors import (
    ChannelMismatchError,
    ConsistencyError,
    InsufficientDataError,
    InvalidMicrophoneError,
    ManifestParseError,
    ParameterError,
    RecordingIOError,
)

MIN_MIC_ID = 2
MAX_MIC_ID = 18

LABELS = ("genuine", "replay")
ENVIRONMENTS = ("EnvA", "EnvB", "EnvC", "EnvD")
SPLITS = ("train", "test")

MANIFEST_COLUMNS = ("path", "device", "label", "environment", "speaker", "split", "duration_s")
OPTIONAL_COLUMNS = ("sample_rate", "channels")
DEVICE_MAP_FILENAME = "devices.json"

# Seconds of audio the detector analyses per recording.
ANALYZED_SECONDS = 1.0


def check_mic_id(mic_id) -> int:
    """Return ``mic_id`` as int, raising if it is not a valid microphone ID."""
    try:
        value = int(mic_id)
    except (TypeError, ValueError):
        raise InvalidMicrophoneError(f"microphone id {mic_id!r} is not an integer") from None
    if value != mic_id and not isinstance(mic_id, str):
        raise InvalidMicrophoneError(f"microphone id {mic_id!r} is not an integer")
    if not MIN_MIC_ID <= value <= MAX_MIC_ID:
        raise InvalidMicrophoneError(
            f"microphone id {value} outside [{MIN_MIC_ID}, {MAX_MIC_ID}]"
        )
    return value


def label_value(label: str) -> int:
    """0 for genuine, 1 for replay."""
    try:
        return LABELS.index(label)
    except ValueError:
        raise ParameterError(f"unknown label {label!r}") from None


@dataclass(frozen=True)
class DeviceSpec:
    device_id: str
    mic_ids: tuple[int, ...]
    sample_rate: int
    bit_depth: int

    def __post_init__(self):
        object.__setattr__(self, "mic_ids", tuple(check_mic_id(m) for m in self.mic_ids))
        if len(set(self.mic_ids)) != len(self.mic_ids):
            raise ParameterError(f"{self.device_id}: duplicate microphone ids")
        if self.sample_rate <= 0:
            raise ParameterError(f"{self.device_id}: sample rate must be positive")
        if self.bit_depth not in (16, 32):
            raise ParameterError(f"{self.device_id}: bit depth must be 16 or 32")

    @property
    def n_channels(self) -> int:
        return len(self.mic_ids)

    def channel_index(self, mic_id: int) -> int:
        try:
            return self.mic_ids.index(mic_id)
        except ValueError:
            raise ChannelMismatchError(
                f"microphone {mic_id} is not part of device {self.device_id}"
            ) from None

    def to_dict(self) -> dict:
        return {
            "device_id": self.device_id,
            "mic_ids": list(self.mic_ids),
            "sample_rate": self.sample_rate,
            "bit_depth": self.bit_depth,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "DeviceSpec":
        return cls(d["device_id"], tuple(d["mic_ids"]), int(d["sample_rate"]), int(d["bit_depth"]))


class DeviceMap(Mapping[str, DeviceSpec]):
    """Set of devices whose microphone sets are pairwise disjoint."""

    def __init__(self, devices: Iterable[DeviceSpec]):
        self._devices: dict[str, DeviceSpec] = {}
        self._owner: dict[int, str] = {}
        for dev in devices:
            if dev.device_id in self._devices:
                raise ParameterError(f"duplicate device {dev.device_id}")
            for mic in dev.mic_ids:
                if mic in self._owner:
                    raise ParameterError(
                        f"microphone {mic} assigned to both {self._owner[mic]} and {dev.device_id}"
                    )
                self._owner[mic] = dev.device_id
            self._devices[dev.device_id] = dev

    def __getitem__(self, device_id: str) -> DeviceSpec:
        try:
            return self._devices[device_id]
        except KeyError:
            raise ConsistencyError(f"unknown device {device_id!r}") from None

    def __iter__(self) -> Iterator[str]:
        return iter(self._devices)

    def __len__(self) -> int:
        return len(self._devices)

    def __eq__(self, other):
        return isinstance(other, DeviceMap) and list(self.values()) == list(other.values())

    def __repr__(self):
        return f"DeviceMap({list(self._devices.values())!r})"

    def device_of(self, mic_id) -> DeviceSpec:
        mic = check_mic_id(mic_id)
        if mic not in self._owner:
            raise InvalidMicrophoneError(f"microphone {mic} belongs to no device")
        return self._devices[self._owner[mic]]

    def device_for_channels(self, channels: Sequence[int]) -> DeviceSpec:
        """The single device owning every microphone in ``channels``."""
        if len(channels) == 0:
            raise ParameterError("empty channel list")
        devs = {self.device_of(c).device_id for c in channels}
        if len(devs) != 1:
            raise ChannelMismatchError(f"channels {tuple(channels)} span devices {sorted(devs)}")
        return self._devices[devs.pop()]

    def to_json(self) -> str:
        return json.dumps({"devices": [d.to_dict() for d in self.values()]}, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "DeviceMap":
        return cls(DeviceSpec.from_dict(d) for d in json.loads(text)["devices"])


# D1 has no genuine recordings in ReMASC; it stays loadable but owns no usable IDs.
REMASC = DeviceMap(
    [
        DeviceSpec("D1", (), 44100, 16),
        DeviceSpec("D2", tuple(range(2, 6)), 44100, 16),
        DeviceSpec("D3", tuple(range(6, 12)), 44100, 32),
        DeviceSpec("D4", tuple(range(12, 19)), 16000, 16),
    ]
)
EXPERIMENT_DEVICES = ("D2", "D3", "D4")


def device_of(mic_id, device_map: DeviceMap = REMASC) -> DeviceSpec:
    """Device owning a microphone ID.

    >>> device_of(10).device_id
    'D3'
    """
    return device_map.device_of(mic_id)


@dataclass(frozen=True)
class RecordingEntry:
    path: Path
    device: DeviceSpec
    label: str
    environment: str
    speaker_id: str
    duration: float
    split: str

    @property
    def target(self) -> int:
        return label_value(self.label)

    def to_row(self, root: Path | None = None) -> dict:
        path = self.path
        if root is not None:
            try:
                path = path.relative_to(root)
            except ValueError:
                pass
        return {
            "path": path.as_posix(),
            "device": self.device.device_id,
            "label": self.label,
            "environment": self.environment,
            "speaker": self.speaker_id,
            "split": self.split,
            "duration_s": f"{self.duration:.6g}",
            "sample_rate": str(self.device.sample_rate),
            "channels": " ".join(str(m) for m in self.device.mic_ids),
        }


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple[RecordingEntry, ...]
    corpus_name: str = "corpus"
    device_map: DeviceMap = field(default=REMASC, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def channel_count_by_device(self) -> dict[str, int]:
        return {e.device.device_id: e.device.n_channels for e in self.entries}

    def filter(self, *, split=None, device=None, label=None, environment=None,
               min_duration=None) -> "DatasetManifest":
        def keep(e: RecordingEntry) -> bool:
            return (
                (split is None or e.split == split)
                and (device is None or e.device.device_id == device)
                and (label is None or e.label == label)
                and (environment is None or e.environment == environment)
                and (min_duration is None or e.duration >= min_duration)
            )

        return replace(self, entries=tuple(e for e in self.entries if keep(e)))

    def for_channels(self, channels: Sequence[int], split=None) -> "DatasetManifest":
        """Entries recorded by the device that owns ``channels``."""
        dev = self.device_map.device_for_channels(channels)
        return self.filter(device=dev.device_id, split=split)

    def labels(self) -> np.ndarray:
        return np.array([e.target for e in self.entries], dtype=np.int64)

    def total_analyzed_seconds(self, seconds_per_entry: float = ANALYZED_SECONDS) -> float:
        return len(self.entries) * seconds_per_entry


def _parse_row(row: dict, lineno: int, root: Path, device_map: DeviceMap) -> RecordingEntry:
    for col in MANIFEST_COLUMNS:
        if row.get(col) in (None, ""):
            raise ManifestParseError(f"missing value for column {col!r}", lineno)
    try:
        device = device_map[row["device"]]
    except ConsistencyError:
        raise ManifestParseError(f"unknown device {row['device']!r}", lineno) from None
    label = row["label"]
    if label not in LABELS:
        raise ManifestParseError(f"label must be one of {LABELS}, got {label!r}", lineno)
    if row["environment"] not in ENVIRONMENTS:
        raise ManifestParseError(f"unknown environment {row['environment']!r}", lineno)
    if row["split"] not in SPLITS:
        raise ManifestParseError(f"split must be one of {SPLITS}, got {row['split']!r}", lineno)
    try:
        duration = float(row["duration_s"])
    except ValueError:
        raise ManifestParseError(f"bad duration {row['duration_s']!r}", lineno) from None
    if not math.isfinite(duration) or duration <= 0:
        raise ManifestParseError(f"duration must be positive, got {duration}", lineno)

    if row.get("sample_rate"):
        try:
            rate = int(row["sample_rate"])
        except ValueError:
            raise ManifestParseError(f"bad sample rate {row['sample_rate']!r}", lineno) from None
        if rate != device.sample_rate:
            raise ConsistencyError(
                f"row {lineno}: device {device.device_id} records at {device.sample_rate} Hz, "
                f"row claims {rate} Hz"
            )
    if row.get("channels"):
        try:
            mics = tuple(check_mic_id(tok) for tok in row["channels"].split())
        except InvalidMicrophoneError as exc:
            raise InvalidMicrophoneError(f"row {lineno}: {exc}") from None
        if mics != device.mic_ids:
            raise ConsistencyError(
                f"row {lineno}: channels {mics} do not match device "
                f"{device.device_id} microphones {device.mic_ids}"
            )

    path = Path(row["path"])
    if not path.is_absolute():
        path = root / path
    return RecordingEntry(path, device, label, row["environment"], row["speaker"], duration, row["split"])


def load_device_map(manifest_path) -> DeviceMap:
    """The device map stored next to a manifest, or the ReMASC default."""
    sidecar = Path(manifest_path).parent / DEVICE_MAP_FILENAME
    if sidecar.exists():
        return DeviceMap.from_json(sidecar.read_text(encoding="utf-8"))
    return REMASC


def load_manifest(path, device_map: DeviceMap | None = None) -> DatasetManifest:
    path = Path(path)
    if device_map is None:
        device_map = load_device_map(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise RecordingIOError(f"cannot open manifest {path}: {exc}") from exc
    with fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in MANIFEST_COLUMNS if c not in header]
        if missing:
            raise ManifestParseError(f"header lacks columns {missing}", 1)
        unknown = [c for c in header if c not in MANIFEST_COLUMNS + OPTIONAL_COLUMNS]
        if unknown:
            raise ManifestParseError(f"unknown columns {unknown}", 1)
        entries = [
            _parse_row(row, lineno, path.parent, device_map)
            for lineno, row in enumerate(reader, start=2)
        ]
    return DatasetManifest(tuple(entries), path.stem, device_map)


def write_manifest(manifest: DatasetManifest, path, write_device_map: bool = True) -> Path:
    path = Path(path)
    root = path.parent
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=MANIFEST_COLUMNS + OPTIONAL_COLUMNS)
        writer.writeheader()
        for entry in manifest.entries:
            writer.writerow(entry.to_row(root))
    if write_device_map:
        (root / DEVICE_MAP_FILENAME).write_text(manifest.device_map.to_json(), encoding="utf-8")
    return path


@dataclass(frozen=True)
class MultichannelRecording:
    samples: np.ndarray  # [channels, frames]
    sample_rate: int
    channel_ids: tuple[int, ...]
    label: str | None = None

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim == 1:
            samples = samples[None, :]
        if samples.ndim != 2:
            raise ParameterError("samples must be a [channels, frames] matrix")
        if samples.shape[0] != len(self.channel_ids):
            raise ChannelMismatchError(
                f"{samples.shape[0]} channels of audio for {len(self.channel_ids)} channel ids"
            )
        if not np.all(np.isfinite(samples)):
            raise ParameterError("recording contains non-finite samples")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "channel_ids", tuple(self.channel_ids))

    @property
    def n_frames(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.n_frames / self.sample_rate


def quantize(samples: np.ndarray, bit_depth: int) -> np.ndarray:
    scale = 2 ** (bit_depth - 1)
    dtype = np.int16 if bit_depth == 16 else np.int32
    q = np.round(np.asarray(samples, dtype=np.float64) * scale)
    return np.clip(q, -scale, scale - 1).astype(dtype)


def write_wave(path, samples: np.ndarray, sample_rate: int, bit_depth: int) -> None:
    """Write a [channels, frames] float matrix as integer PCM."""
    data = quantize(samples, bit_depth).T
    try:
        wavfile.write(str(path), int(sample_rate), np.ascontiguousarray(data))
    except OSError as exc:
        raise RecordingIOError(f"cannot write {path}: {exc}") from exc


def read_wave(path) -> tuple[np.ndarray, int, int]:
    """Read integer PCM; returns ([channels, frames] in [-1, 1], rate, bit depth)."""
    try:
        rate, data = wavfile.read(str(path))
    except (OSError, ValueError, EOFError, struct.error) as exc:
        raise RecordingIOError(f"cannot read {path}: {exc}") from exc
    if data.dtype == np.int16:
        bits = 16
    elif data.dtype == np.int32:
        bits = 32
    else:
        raise RecordingIOError(f"{path}: unsupported sample format {data.dtype}")
    if data.ndim == 1:
        data = data[:, None]
    samples = data.T.astype(np.float64) / 2 ** (bits - 1)
    return samples, int(rate), bits


def read_recording(entry: RecordingEntry, channels: Sequence[int]) -> MultichannelRecording:
    """Load ``channels`` of ``entry`` in the requested order."""
    channels = tuple(check_mic_id(c) for c in channels)
    rows = [entry.device.channel_index(c) for c in channels]
    samples, rate, bits = read_wave(entry.path)
    if rate != entry.device.sample_rate:
        raise ConsistencyError(
            f"{entry.path}: file rate {rate} Hz, device {entry.device.device_id} expects "
            f"{entry.device.sample_rate} Hz"
        )
    if samples.shape[0] != entry.device.n_channels:
        raise RecordingIOError(
            f"{entry.path}: {samples.shape[0]} channels, device {entry.device.device_id} "
            f"has {entry.device.n_channels}"
        )
    if bits != entry.device.bit_depth:
        raise ConsistencyError(f"{entry.path}: {bits}-bit file for a {entry.device.bit_depth}-bit device")
    return MultichannelRecording(samples[rows], rate, channels, entry.label)


def budget_subset(manifest: DatasetManifest, minutes: float, seed: int,
                  split: str | None = "train",
                  seconds_per_entry: float = ANALYZED_SECONDS) -> DatasetManifest:
    """Seeded, class-stratified subset holding ``minutes`` of analysed audio.

    Each entry counts ``seconds_per_entry`` (the detector sees only the first
    second).  Within each class the order is a seeded permutation, and the
    classes are merged by quantile position, so a larger budget with the same
    seed always returns a superset of a smaller one.
    """
    if not minutes > 0:
        raise ParameterError("budget must be positive")
    pool = manifest.filter(split=split) if split is not None else manifest
    n = int(round(minutes * 60.0 / seconds_per_entry))
    n = max(n, 1)
    if n > len(pool):
        raise InsufficientDataError(
            f"budget of {minutes} min needs {n} entries, only {len(pool)} available"
        )
    rng = np.random.default_rng(seed)
    keyed = []
    for cls in LABELS:
        idx = [i for i, e in enumerate(pool.entries) if e.label == cls]
        if not idx:
            continue
        order = rng.permutation(len(idx))
        for rank, j in enumerate(order):
            keyed.append(((rank + 0.5) / len(idx), LABELS.index(cls), idx[j]))
    keyed.sort()
    chosen = sorted(i for _, _, i in keyed[:n])
    return replace(pool, entries=tuple(pool.entries[i] for i in chosen))
