import numpy as np
import pytest

from replayarray.dataset import (
    REMASC,
    DatasetManifest,
    DeviceMap,
    DeviceSpec,
    MultichannelRecording,
    RecordingEntry,
    budget_subset,
    check_mic_id,
    device_of,
    load_manifest,
    read_recording,
    read_wave,
    write_manifest,
    write_wave,
)
from replayarray.errors import (
    ChannelMismatchError,
    ConsistencyError,
    InsufficientDataError,
    InvalidMicrophoneError,
    ManifestParseError,
    RecordingIOError,
)

HEADER = "path,device,label,environment,speaker,split,duration_s"


@pytest.mark.parametrize("mic, device", [(2, "D2"), (10, "D3"), (13, "D4"), (5, "D2"), (6, "D3"), (11, "D3"), (12, "D4"), (18, "D4")])
def test_device_of(mic, device):
    assert device_of(mic).device_id == device


@pytest.mark.parametrize("bad", [1, 19, 0, -3, 2.5])
def test_device_of_rejects_out_of_range(bad):
    with pytest.raises(InvalidMicrophoneError):
        device_of(bad)


def test_device_map_partitions_valid_ids():
    sets = [set(REMASC[d].mic_ids) for d in ("D2", "D3", "D4")]
    assert set.union(*sets) == set(range(2, 19))
    assert sum(len(s) for s in sets) == 17
    assert [len(s) for s in sets] == [4, 6, 7]
    assert [REMASC[d].sample_rate for d in ("D2", "D3", "D4")] == [44100, 44100, 16000]
    assert [REMASC[d].bit_depth for d in ("D2", "D3", "D4")] == [16, 32, 16]
    for mic in range(2, 19):
        assert mic in device_of(mic).mic_ids


def test_device_map_rejects_shared_microphone():
    with pytest.raises(Exception):
        DeviceMap([DeviceSpec("A", (2, 3), 16000, 16), DeviceSpec("B", (3, 4), 16000, 16)])


def _write_rows(path, rows, header=HEADER):
    path.write_text(header + "\n" + "\n".join(rows) + "\n", encoding="utf-8")
    return path


def test_load_manifest_counts_rows(tmp_path):
    rows = [f"a{i}.wav,D4,{'genuine' if i % 2 else 'replay'},EnvB,s{i},train,1.5" for i in range(10)]
    m = load_manifest(_write_rows(tmp_path / "m.csv", rows))
    assert len(m) == 10
    assert m.entries[0].path == tmp_path / "a0.wav"
    assert m.channel_count_by_device == {"D4": 7}


def test_load_manifest_invalid_mic(tmp_path):
    rows = ["a.wav,D4,genuine,EnvB,s,train,1.0,16000,12 13 14 15 16 17 19"]
    with pytest.raises(InvalidMicrophoneError):
        load_manifest(_write_rows(tmp_path / "m.csv", rows, HEADER + ",sample_rate,channels"))


def test_load_manifest_rate_contradiction(tmp_path):
    rows = ["a.wav,D4,genuine,EnvB,s,train,1.0,44100"]
    with pytest.raises(ConsistencyError):
        load_manifest(_write_rows(tmp_path / "m.csv", rows, HEADER + ",sample_rate"))


@pytest.mark.parametrize("row, fragment", [
    ("a.wav,D9,genuine,EnvB,s,train,1.0", "device"),
    ("a.wav,D4,spoof,EnvB,s,train,1.0", "label"),
    ("a.wav,D4,genuine,EnvZ,s,train,1.0", "environment"),
    ("a.wav,D4,genuine,EnvB,s,dev,1.0", "split"),
    ("a.wav,D4,genuine,EnvB,s,train,abc", "duration"),
    ("a.wav,D4,genuine,EnvB,s,,1.0", "split"),
])
def test_load_manifest_names_offending_row(tmp_path, row, fragment):
    good = "b.wav,D4,genuine,EnvB,s,train,1.0"
    with pytest.raises(ManifestParseError, match=fragment) as info:
        load_manifest(_write_rows(tmp_path / "m.csv", [good, row]))
    assert info.value.row == 3


def test_load_manifest_missing_file(tmp_path):
    with pytest.raises(RecordingIOError):
        load_manifest(tmp_path / "nope.csv")


def test_manifest_roundtrip(tmp_path, tiny_corpus):
    path = write_manifest(tiny_corpus, tmp_path / "copy.csv", write_device_map=False)
    again = load_manifest(path, device_map=tiny_corpus.device_map)
    assert again.entries == tiny_corpus.entries


def test_wave_roundtrip_within_one_step(tmp_path, rng):
    for bits in (16, 32):
        x = rng.uniform(-1, 1, (3, 500))
        write_wave(tmp_path / f"x{bits}.wav", x, 16000, bits)
        y, rate, b = read_wave(tmp_path / f"x{bits}.wav")
        assert (rate, b) == (16000, bits)
        assert np.max(np.abs(x - y)) <= 1.0 / 2 ** (bits - 1)


def test_full_scale_normalisation(tmp_path):
    from scipy.io import wavfile
    wavfile.write(tmp_path / "fs.wav", 16000, np.full((10, 7), 32767, dtype=np.int16))
    entry = RecordingEntry(tmp_path / "fs.wav", REMASC["D4"], "genuine", "EnvB", "s", 10 / 16000, "train")
    rec = read_recording(entry, [12])
    assert rec.samples[0, 0] == pytest.approx(32767 / 32768)


def test_read_recording_orders_channels(tmp_path, rng):
    x = rng.uniform(-0.5, 0.5, (4, 300))
    write_wave(tmp_path / "d2.wav", x, 44100, 16)
    entry = RecordingEntry(tmp_path / "d2.wav", REMASC["D2"], "replay", "EnvB", "s", 300 / 44100, "test")
    rec = read_recording(entry, (3, 2))
    assert rec.samples.shape == (2, 300)
    assert rec.sample_rate == 44100
    assert rec.channel_ids == (3, 2)
    np.testing.assert_allclose(rec.samples[0], x[1], atol=1 / 32768)
    np.testing.assert_allclose(rec.samples[1], x[0], atol=1 / 32768)


def test_read_recording_channel_mismatch(tmp_path):
    entry = RecordingEntry(tmp_path / "d3.wav", REMASC["D3"], "genuine", "EnvB", "s", 1.0, "train")
    with pytest.raises(ChannelMismatchError):
        read_recording(entry, [12])


def test_read_recording_truncated(tmp_path, rng):
    write_wave(tmp_path / "t.wav", rng.uniform(-1, 1, (7, 1000)), 16000, 16)
    raw = (tmp_path / "t.wav").read_bytes()
    (tmp_path / "t.wav").write_bytes(raw[:30])
    entry = RecordingEntry(tmp_path / "t.wav", REMASC["D4"], "genuine", "EnvB", "s", 1.0, "train")
    with pytest.raises(RecordingIOError):
        read_recording(entry, [12])


def test_recording_rejects_nonfinite():
    with pytest.raises(ValueError):
        MultichannelRecording(np.array([[0.0, np.nan]]), 16000, (12,))


def _synthetic_manifest(n_genuine, n_replay):
    dev = REMASC["D4"]
    entries = [RecordingEntry(f"g{i}.wav", dev, "genuine", "EnvB", "s", 2.0, "train") for i in range(n_genuine)]
    entries += [RecordingEntry(f"r{i}.wav", dev, "replay", "EnvB", "s", 2.0, "train") for i in range(n_replay)]
    return DatasetManifest(tuple(entries))


def test_budget_subset_counts():
    m = _synthetic_manifest(300, 300)
    assert len(budget_subset(m, 1.0, seed=7)) == 60
    assert len(budget_subset(m, 0.5, seed=7)) == 30
    with pytest.raises(InsufficientDataError):
        budget_subset(m, 11.0, seed=7)


def test_budget_subset_deterministic_and_monotone():
    m = _synthetic_manifest(100, 493)
    prev = set()
    for minutes in (0.1, 0.5, 1.0, 2.5, 5.0, 9.0):
        a = budget_subset(m, minutes, seed=3)
        assert a == budget_subset(m, minutes, seed=3)
        cur = set(a.entries)
        assert prev <= cur
        prev = cur
        n = len(a)
        n_gen = sum(e.label == "genuine" for e in a)
        assert abs(n_gen - n * 100 / 593) <= 1


def test_budget_subset_balanced_classes():
    m = _synthetic_manifest(150, 150)
    for minutes in (0.5, 1.0, 1.5, 2.0):
        sub = budget_subset(m, minutes, seed=11)
        n_gen = sum(e.label == "genuine" for e in sub)
        assert abs(n_gen - (len(sub) - n_gen)) <= 1


def test_check_mic_id_accepts_strings():
    assert check_mic_id("14") == 14
