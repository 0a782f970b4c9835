"""Multichannel replay-attack detection with a learned beamformer front end."""
from .dataset import (
    REMASC,
    DatasetManifest,
    DeviceMap,
    DeviceSpec,
    MultichannelRecording,
    RecordingEntry,
    budget_subset,
    device_of,
    load_manifest,
    read_recording,
    write_manifest,
)
from .dsp import ComplexSpectrogram, StftParams, istft, resample, stft, stft_params_for
from .evaluation import (
    budget_curve,
    compute_eer,
    confidence_interval,
    mismatch_matrix,
    score_set,
    validate_channel_config,
)
from .model import ModelCheckpoint, ModelConfig, ReplayDetector, init_detector
from .synth import SynthSpec, contrast_spec, default_spec, generate_corpus
from .training import FinetuneConfig, TrainConfig, cosine_lr, finetune, run_repeats, train

__version__ = "0.1.0"

__all__ = [
    "ComplexSpectrogram",
    "DatasetManifest",
    "DeviceMap",
    "DeviceSpec",
    "FinetuneConfig",
    "ModelCheckpoint",
    "ModelConfig",
    "MultichannelRecording",
    "REMASC",
    "RecordingEntry",
    "ReplayDetector",
    "StftParams",
    "SynthSpec",
    "TrainConfig",
    "budget_curve",
    "budget_subset",
    "compute_eer",
    "confidence_interval",
    "contrast_spec",
    "cosine_lr",
    "default_spec",
    "device_of",
    "finetune",
    "generate_corpus",
    "init_detector",
    "istft",
    "load_manifest",
    "mismatch_matrix",
    "read_recording",
    "resample",
    "run_repeats",
    "score_set",
    "stft",
    "stft_params_for",
    "train",
    "validate_channel_config",
    "write_manifest",
]
