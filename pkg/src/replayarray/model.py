"""The full detector (beamformer + classifier) and its checkpoint container."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .beamformer import BeamformerNet, combine_planes, orthogonality_loss, sparsity_loss
from .classifier import ClassifierNet, feature_planes, total_loss
from .dsp import StftParams
from .errors import GeometryError, ParameterError, RecordingIOError

CHECKPOINT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    beamformer_hidden: int = 16
    beamformer_kernel: tuple[int, int] = (3, 3)
    conv_widths: tuple[int, ...] = (32, 64, 128)
    pools: tuple[int, ...] = (4, 4, 4)
    gru_hidden: int = 128
    gru_layers: int = 2
    pool_mode: str = "sum"

    def __post_init__(self):
        object.__setattr__(self, "beamformer_kernel", tuple(self.beamformer_kernel))
        object.__setattr__(self, "conv_widths", tuple(self.conv_widths))
        object.__setattr__(self, "pools", tuple(self.pools))

    @classmethod
    def compact(cls) -> "ModelConfig":
        """Narrow convolutions for single-core runs; recurrent part unchanged."""
        return cls(beamformer_hidden=8, conv_widths=(8, 16, 32))

    @classmethod
    def from_dict(cls, d) -> "ModelConfig":
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


class ReplayDetector(nn.Module):
    """Spectrogram planes [B, 2N, T, F] -> (logits [B, 2], weight planes)."""

    def __init__(self, n_channels: int, n_bins: int, config: ModelConfig = ModelConfig()):
        super().__init__()
        self.n_channels = n_channels
        self.n_bins = n_bins
        self.config = config
        self.beamformer = BeamformerNet(n_channels, config.beamformer_hidden, config.beamformer_kernel)
        self.classifier = ClassifierNet(n_bins, config.conv_widths, config.pools,
                                        config.gru_hidden, config.gru_layers, config.pool_mode)

    def forward(self, planes: torch.Tensor):
        n = self.n_channels
        w = self.beamformer(planes)
        w_re, w_im = w[:, :n], w[:, n:]
        z_re, z_im = combine_planes(planes[:, :n], planes[:, n:], w_re, w_im)
        logits = self.classifier(feature_planes(z_re, z_im))
        return logits, (w_re, w_im)

    def loss(self, planes, targets, lambda_orth: float, lambda_sparse: float):
        logits, w = self(planes)
        # cross-entropy over the two softmax outputs is the binary cross-entropy of p_replay
        bce = nn.functional.cross_entropy(logits, targets)
        return total_loss(bce, orthogonality_loss(w), sparsity_loss(w), lambda_orth, lambda_sparse)

    @torch.no_grad()
    def p_replay(self, planes: torch.Tensor, batch_size: int = 64) -> np.ndarray:
        was_training = self.training
        self.eval()
        out = []
        for i in range(0, planes.shape[0], batch_size):
            logits, _ = self(planes[i:i + batch_size])
            out.append(torch.softmax(logits.double(), dim=-1)[:, 1])
        self.train(was_training)
        return torch.cat(out).numpy() if out else np.zeros(0)


def init_detector(n_channels: int, n_bins: int, config: ModelConfig = ModelConfig(),
                  seed: int = 0) -> ReplayDetector:
    if n_channels < 1:
        raise ParameterError("need at least one channel")
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        net = ReplayDetector(n_channels, n_bins, config)
    return net.to(memory_format=torch.channels_last)


def spectrogram_planes(X: np.ndarray, dtype=torch.float32) -> torch.Tensor:
    """Complex [B, N, T, F] numpy -> real channels-last [B, 2N, T, F] tensor."""
    planes = np.concatenate([X.real, X.imag], axis=1)
    return torch.from_numpy(np.ascontiguousarray(planes)).to(dtype).contiguous(
        memory_format=torch.channels_last)


@dataclass
class ModelCheckpoint:
    detector: ReplayDetector
    stft_params: StftParams
    train_channels: tuple[int, ...]
    history: list[float] = field(default_factory=list)
    config_hash: str = ""
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.train_channels = tuple(int(c) for c in self.train_channels)
        if self.detector.n_channels != len(self.train_channels):
            raise GeometryError(
                f"detector has {self.detector.n_channels} inputs for channels {self.train_channels}"
            )
        if self.detector.n_bins != self.stft_params.n_bins:
            raise GeometryError("detector frequency bins do not match the STFT parameters")

    @property
    def n_channels(self) -> int:
        return len(self.train_channels)

    @property
    def sample_rate(self) -> int:
        return self.stft_params.sample_rate

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.detach().cpu().numpy() for k, v in self.detector.state_dict().items()}

    def save(self, path) -> Path:
        """Write a ``.npz`` holding every tensor plus a JSON metadata record."""
        path = Path(path)
        arrays = {f"param/{k}": v for k, v in self.state_arrays().items()}
        meta = {
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "model_config": self.detector.config.to_dict(),
            "n_channels": self.detector.n_channels,
            "n_bins": self.detector.n_bins,
            "dtype": str(next(self.detector.parameters()).dtype).replace("torch.", ""),
            "stft_params": self.stft_params.to_dict(),
            "train_channels": list(self.train_channels),
            "history": [float(h) for h in self.history],
            "config_hash": self.config_hash,
            "info": self.info,
            "shapes": {k: list(v.shape) for k, v in arrays.items()},
        }
        with open(path, "wb") as fh:
            np.savez(fh, __meta__=np.array(json.dumps(meta)), **arrays)
        return path

    @classmethod
    def load(cls, path) -> "ModelCheckpoint":
        try:
            data = np.load(path, allow_pickle=False)
        except (OSError, ValueError) as exc:
            raise RecordingIOError(f"cannot read checkpoint {path}: {exc}") from exc
        with data:
            meta = json.loads(str(data["__meta__"]))
            if meta.get("format_version") != CHECKPOINT_FORMAT_VERSION:
                raise ParameterError(f"unsupported checkpoint format {meta.get('format_version')}")
            config = ModelConfig.from_dict(meta["model_config"])
            net = init_detector(meta["n_channels"], meta["n_bins"], config)
            if meta.get("dtype") == "float64":
                net = net.double()
            state = {}
            for key, shape in meta["shapes"].items():
                arr = data[key]
                if list(arr.shape) != shape:
                    raise ParameterError(f"checkpoint array {key} has shape {arr.shape}, expected {shape}")
                state[key[len("param/"):]] = torch.from_numpy(arr.copy())
        net.load_state_dict(state)
        return cls(net, StftParams.from_dict(meta["stft_params"]), tuple(meta["train_channels"]),
                   meta["history"], meta["config_hash"], meta.get("info", {}))
