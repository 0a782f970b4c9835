"""Seeded training, fine-tuning and repeated runs."""
from __future__ import annotations

import copy
import csv
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .dataset import DatasetManifest, budget_subset
from .dsp import StftParams, entry_spectrogram, stft_params_for
from .errors import DegenerateDataError, GeometryError, NoDataError, ParameterError
from .model import ModelCheckpoint, ModelConfig, init_detector, spectrogram_planes

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    train_channels: tuple[int, ...] = ()
    batch_size: int = 32
    base_lr: float = 1e-3
    epochs: int = 50
    lambda_orth: float = 0.1
    lambda_sparse: float = 0.1
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    sample_rate: int | None = None  # None: the training device's rate
    environment: str | None = None
    freeze: tuple[str, ...] = ()  # subnetworks kept fixed, e.g. ("beamformer",)

    def __post_init__(self):
        object.__setattr__(self, "train_channels", tuple(int(c) for c in self.train_channels))
        object.__setattr__(self, "freeze", tuple(self.freeze))
        if isinstance(self.model, dict):
            object.__setattr__(self, "model", ModelConfig.from_dict(self.model))
        if self.batch_size < 1:
            raise ParameterError("batch_size must be at least 1")
        if self.epochs < 1:
            raise ParameterError("epochs must be at least 1")
        if not self.base_lr > 0:
            raise ParameterError("base_lr must be positive")
        if self.lambda_orth < 0 or self.lambda_sparse < 0:
            raise ParameterError("regulariser weights must be non-negative")
        unknown = set(self.freeze) - {"beamformer", "classifier"}
        if unknown:
            raise ParameterError(f"cannot freeze {sorted(unknown)}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["train_channels"] = list(self.train_channels)
        d["freeze"] = list(self.freeze)
        return d

    @classmethod
    def from_dict(cls, d) -> "TrainConfig":
        d = dict(d)
        if "model" in d:
            d["model"] = ModelConfig.from_dict(d["model"])
        return cls(**d)

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class FinetuneConfig:
    source: ModelCheckpoint
    target_channels: tuple[int, ...]
    budget_minutes: float
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        object.__setattr__(self, "target_channels", tuple(int(c) for c in self.target_channels))
        if len(self.target_channels) != self.source.n_channels:
            raise GeometryError(
                f"source model takes {self.source.n_channels} channels, target has "
                f"{len(self.target_channels)}"
            )
        if not self.budget_minutes > 0:
            raise ParameterError("budget must be positive")


def cosine_lr(epoch: int, total_epochs: int, base_lr: float) -> float:
    """Cosine-annealed rate for ``epoch`` (0-based); no restarts."""
    if not 0 <= epoch < total_epochs:
        raise ParameterError(f"epoch {epoch} outside [0, {total_epochs})")
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * epoch / total_epochs))


def resolve_stft(config: TrainConfig, data: DatasetManifest) -> StftParams:
    rate = config.sample_rate
    if rate is None:
        rate = data.device_map.device_for_channels(config.train_channels).sample_rate
    return stft_params_for(rate)


def load_arrays(manifest: DatasetManifest, channels: Sequence[int],
                params: StftParams) -> tuple[np.ndarray, np.ndarray]:
    """Complex64 [n, N, T, F] spectrograms and int64 targets."""
    if len(manifest) == 0:
        raise NoDataError("no recordings selected")
    X = np.stack([entry_spectrogram(e, channels, params).astype(np.complex64) for e in manifest])
    return X, manifest.labels()


def _select(data: DatasetManifest, channels, split: str, environment) -> DatasetManifest:
    sel = data.for_channels(channels, split=split)
    if environment is not None:
        sel = sel.filter(environment=environment)
    return sel


def _check_classes(y: np.ndarray) -> None:
    if len(np.unique(y)) < 2:
        raise DegenerateDataError("training data must contain both genuine and replay recordings")


def fit(detector, X: np.ndarray, y: np.ndarray, config: TrainConfig) -> list[float]:
    """Train ``detector`` in place; returns the mean loss of every epoch."""
    _check_classes(y)
    dtype = next(detector.parameters()).dtype
    planes = spectrogram_planes(X, dtype)
    targets = torch.from_numpy(np.asarray(y, dtype=np.int64))
    for name in config.freeze:
        for p in getattr(detector, name).parameters():
            p.requires_grad_(False)
    params = [p for p in detector.parameters() if p.requires_grad]
    opt = torch.optim.Adam(params, lr=config.base_lr)
    rng = np.random.default_rng(config.seed)
    n = len(y)
    history = []
    detector.train()
    for epoch in range(config.epochs):
        lr = cosine_lr(epoch, config.epochs, config.base_lr)
        for group in opt.param_groups:
            group["lr"] = lr
        order = torch.from_numpy(rng.permutation(n))
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            loss = detector.loss(planes[idx], targets[idx], config.lambda_orth, config.lambda_sparse)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        history.append(total / n)
        log.debug("epoch %d lr %.3g loss %.5f", epoch, lr, history[-1])
    detector.eval()
    return history


def train_arrays(config: TrainConfig, X: np.ndarray, y: np.ndarray, params: StftParams) -> ModelCheckpoint:
    detector = init_detector(X.shape[1], params.n_bins, config.model, config.seed)
    history = fit(detector, X, y, config)
    return ModelCheckpoint(detector, params, config.train_channels, history, config.config_hash(),
                           {"n_train": int(len(y))})


def train(config: TrainConfig, data: DatasetManifest) -> ModelCheckpoint:
    """Train a detector on the ``train`` split of the device owning ``config.train_channels``."""
    if not config.train_channels:
        raise ParameterError("train_channels must name at least one microphone")
    params = resolve_stft(config, data)
    sel = _select(data, config.train_channels, "train", config.environment)
    _check_classes(sel.labels())
    X, y = load_arrays(sel, config.train_channels, params)
    return train_arrays(config, X, y, params)


def finetune(cfg: FinetuneConfig, target: DatasetManifest) -> ModelCheckpoint:
    """Continue training the source model on a budgeted subset of the target device.

    Target audio is resampled to the source model's rate, so the network
    geometry never changes.
    """
    pool = _select(target, cfg.target_channels, "train", cfg.train.environment)
    subset = budget_subset(pool, cfg.budget_minutes, cfg.train.seed)
    _check_classes(subset.labels())
    params = cfg.source.stft_params
    X, y = load_arrays(subset, cfg.target_channels, params)
    detector = copy.deepcopy(cfg.source.detector)
    tcfg = replace(cfg.train, train_channels=cfg.target_channels)
    history = fit(detector, X, y, tcfg)
    info = {"n_train": int(len(y)), "budget_minutes": cfg.budget_minutes,
            "budget_minutes_used": len(y) / 60.0, "source_channels": list(cfg.source.train_channels)}
    return ModelCheckpoint(detector, params, cfg.target_channels, history, tcfg.config_hash(), info)


def predict_scores(checkpoint: ModelCheckpoint, manifest: DatasetManifest,
                   channels: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    """p_replay for every entry, plus the labels."""
    channels = tuple(channels)
    if len(channels) != checkpoint.n_channels:
        raise GeometryError(
            f"model takes {checkpoint.n_channels} channels, {len(channels)} requested"
        )
    manifest.device_map.device_for_channels(channels)
    X, y = load_arrays(manifest, channels, checkpoint.stft_params)
    return predict_arrays(checkpoint, X), y


def predict_arrays(checkpoint: ModelCheckpoint, X: np.ndarray) -> np.ndarray:
    dtype = next(checkpoint.detector.parameters()).dtype
    return checkpoint.detector.p_replay(spectrogram_planes(X, dtype))


@dataclass
class RunResult:
    checkpoint: ModelCheckpoint
    scores: np.ndarray | None = None
    labels: np.ndarray | None = None


def run_repeats(config: TrainConfig, data: DatasetManifest, n_runs: int = 5,
                test_channels: Sequence[int] | None = None, with_interval: bool = True) -> list[RunResult]:
    """Train ``n_runs`` models with seeds ``config.seed + run`` and score the test split.

    Test audio comes from the device owning ``test_channels`` (default: the
    training channels).
    """
    if n_runs < 1 or (with_interval and n_runs < 2):
        raise ParameterError("a confidence interval needs at least two runs")
    params = resolve_stft(config, data)
    sel = _select(data, config.train_channels, "train", config.environment)
    _check_classes(sel.labels())
    X, y = load_arrays(sel, config.train_channels, params)
    test_channels = tuple(test_channels or config.train_channels)
    test = _select(data, test_channels, "test", config.environment)
    Xt, yt = load_arrays(test, test_channels, params) if len(test) else (None, None)
    results = []
    for run in range(n_runs):
        ckpt = train_arrays(replace(config, seed=config.seed + run), X, y, params)
        scores = predict_arrays(ckpt, Xt) if Xt is not None else None
        results.append(RunResult(ckpt, scores, yt))
    return results


def write_run_dir(out_dir, config: TrainConfig, checkpoint: ModelCheckpoint,
                  scores: np.ndarray | None = None, labels: np.ndarray | None = None) -> Path:
    """config.json, checkpoint.npz, loss_log.csv and (optionally) scores.csv."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(config.to_dict(), indent=2), encoding="utf-8")
    checkpoint.save(out / "checkpoint.npz")
    with open(out / "loss_log.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss"])
        for i, v in enumerate(checkpoint.history):
            w.writerow([i, f"{v:.9g}"])
    if scores is not None:
        with open(out / "scores.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["score", "label"])
            for s, lab in zip(scores, labels):
                w.writerow([f"{s:.9g}", int(lab)])
    return out
