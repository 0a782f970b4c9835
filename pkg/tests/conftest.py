import numpy as np
import pytest
import torch

from replayarray.dataset import load_manifest
from replayarray.model import ModelConfig
from replayarray.synth import default_spec, generate_corpus

torch.set_num_threads(1)

TINY_MODEL = ModelConfig(beamformer_hidden=4, conv_widths=(4, 4, 8), pools=(4, 4, 4),
                         gru_hidden=8, gru_layers=2)


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """D4 corpus: 12 genuine + 12 replay utterances of 1.1 s, one third held out."""
    out = tmp_path_factory.mktemp("tiny")
    spec = default_spec(("D4",), seed=3, n_genuine=12, n_replay=12, utterance_duration=1.1)
    generate_corpus(spec, 5, out)
    return load_manifest(out / "manifest.csv")


@pytest.fixture(scope="session")
def two_rate_corpus(tmp_path_factory):
    """D2 (44.1 kHz) and D4 (16 kHz) recording the same 6 + 6 utterances."""
    out = tmp_path_factory.mktemp("tworate")
    spec = default_spec(("D2", "D4"), seed=1, n_genuine=6, n_replay=6, utterance_duration=1.0,
                        test_fraction=0.5)
    generate_corpus(spec, 2, out)
    return load_manifest(out / "manifest.csv")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
