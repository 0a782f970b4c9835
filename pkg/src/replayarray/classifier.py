"""Magnitude/phase features and the convolutional-recurrent replay classifier."""
from __future__ import annotations

import numpy as np
import torch
from torch import nn

from .errors import ParameterError, ShapeError

PROB_CLAMP = 1e-7


def feature_planes(re: torch.Tensor, im: torch.Tensor) -> torch.Tensor:
    """(|z|, sin arg z, cos arg z) stacked on a new axis 1: [B, T, F] -> [B, 3, T, F].

    Zero bins get phase channels (0, 1), i.e. phase 0.  Gradients stay finite there.
    """
    sq = re * re + im * im
    nz = sq > 0
    root = torch.sqrt(torch.where(nz, sq, torch.ones_like(sq)))
    mag = torch.where(nz, root, torch.zeros_like(sq))
    sin = torch.where(nz, im / root, torch.zeros_like(sq))
    cos = torch.where(nz, re / root, torch.ones_like(sq))
    return torch.stack([mag, sin, cos], dim=1)


def build_features(Xhat):
    """Beamformed spectrogram [..., T, F] -> feature tensor [..., T, F, 3].

    >>> build_features(np.array([[3 + 4j]]))[0, 0]
    array([5. , 0.8, 0.6])
    """
    if isinstance(Xhat, np.ndarray):
        re = torch.from_numpy(np.ascontiguousarray(Xhat.real))
        im = torch.from_numpy(np.ascontiguousarray(Xhat.imag))
        flat = feature_planes(re.reshape(-1), im.reshape(-1))
        return flat.numpy().reshape(Xhat.shape + (3,))
    if not torch.is_complex(Xhat):
        raise ShapeError("build_features expects a complex spectrogram")
    flat = feature_planes(Xhat.real.reshape(-1), Xhat.imag.reshape(-1))
    return flat.reshape(tuple(Xhat.shape) + (3,))


class ClassifierNet(nn.Module):
    """Three (1x3 conv, batch norm, ReLU, frequency pooling) blocks, a 2-layer
    bidirectional GRU over time, and a linear head producing two logits.

    Pooling runs max- and average-pooling in parallel and sums them
    (``pool_mode="sum"``) or stacks them on the channel axis (``"concat"``).
    """

    def __init__(self, n_bins: int, widths=(32, 64, 128), pools=(4, 4, 4),
                 gru_hidden: int = 128, gru_layers: int = 2, pool_mode: str = "sum"):
        super().__init__()
        if len(widths) != len(pools):
            raise ParameterError("one pooling factor per convolution block is required")
        if pool_mode not in ("sum", "concat"):
            raise ParameterError("pool_mode must be 'sum' or 'concat'")
        self.n_bins = n_bins
        self.pools = tuple(int(p) for p in pools)
        self.pool_mode = pool_mode
        convs, norms = [], []
        c_in, f = 3, n_bins
        for width, pool in zip(widths, self.pools):
            convs.append(nn.Conv2d(c_in, width, (1, 3), padding=(0, 1)))
            norms.append(nn.BatchNorm2d(width))
            c_in = width * (2 if pool_mode == "concat" else 1)
            f //= pool
        if f < 1:
            raise ParameterError(f"pooling {self.pools} leaves no frequency bins from {n_bins}")
        self.convs = nn.ModuleList(convs)
        self.norms = nn.ModuleList(norms)
        self.gru = nn.GRU(c_in * f, gru_hidden, num_layers=gru_layers,
                          bidirectional=True, batch_first=True)
        self.head = nn.Linear(2 * gru_hidden, 2)

    def conv_stack(self, feats: torch.Tensor) -> torch.Tensor:
        """[B, 3, T, F] -> [B, C, T, F'] with no mixing across time."""
        if feats.dim() != 4 or feats.shape[1] != 3:
            raise ShapeError(f"expected [B, 3, T, F] features, got {tuple(feats.shape)}")
        if feats.shape[-1] != self.n_bins:
            raise ShapeError(f"classifier built for {self.n_bins} frequency bins, got {feats.shape[-1]}")
        x = feats
        for conv, norm, pool in zip(self.convs, self.norms, self.pools):
            x = torch.relu(norm(conv(x)))
            if pool > 1:
                mx = nn.functional.max_pool2d(x, (1, pool))
                av = nn.functional.avg_pool2d(x, (1, pool))
                x = mx + av if self.pool_mode == "sum" else torch.cat([mx, av], dim=1)
        return x

    def forward(self, feats: torch.Tensor) -> torch.Tensor:
        x = self.conv_stack(feats)
        b, c, t, f = x.shape
        x = x.permute(0, 2, 1, 3).reshape(b, t, c * f)
        _, h = self.gru(x)
        # last forward state and last backward state of the top layer
        return self.head(torch.cat([h[-2], h[-1]], dim=-1))

    def predict_proba(self, feats: torch.Tensor) -> torch.Tensor:
        """[B, 2] class probabilities (genuine, replay)."""
        return torch.softmax(self(feats), dim=-1)


def init_classifier(n_bins: int, seed: int = 0, **kwargs) -> ClassifierNet:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return ClassifierNet(n_bins, **kwargs)


def bce_loss(p_replay, label):
    """Binary cross-entropy of replay probabilities, clamped to [1e-7, 1 - 1e-7]."""
    p = torch.as_tensor(p_replay, dtype=torch.float64) if not torch.is_tensor(p_replay) else p_replay
    y = torch.as_tensor(label, dtype=p.dtype)
    p = p.clamp(PROB_CLAMP, 1 - PROB_CLAMP)
    return -(y * torch.log(p) + (1 - y) * torch.log1p(-p)).mean()


def total_loss(bce, l_orth, l_sparse, lambda_orth: float, lambda_sparse: float):
    if lambda_orth < 0 or lambda_sparse < 0:
        raise ParameterError("regulariser weights must be non-negative")
    return bce + lambda_orth * l_orth + lambda_sparse * l_sparse
