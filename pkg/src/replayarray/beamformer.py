"""Learned adaptive beamformer, the weighted channel sum, and weight regularisers.

Complex tensors are carried as real/imaginary channel pairs inside the
network: an input with ``N`` microphones becomes ``2N`` real planes
``[re_1 .. re_N, im_1 .. im_N]`` and the network emits weights in the same
layout.  The public helpers accept complex numpy arrays or torch tensors with
the microphone axis third from the end (``[..., N, T, F]``).
"""
from __future__ import annotations

import numpy as np
import torch
from torch import nn

from .errors import ParameterError, ShapeError

ORTH_EPS = 1e-8


def split_complex(x):
    """Complex array/tensor -> (real, imag) torch tensors."""
    if isinstance(x, tuple):
        return x
    if isinstance(x, np.ndarray):
        x = torch.from_numpy(x)
    if not torch.is_complex(x):
        raise ShapeError("expected a complex tensor or a (real, imag) pair")
    return x.real, x.imag


def to_planes(x) -> torch.Tensor:
    """Complex [B, N, T, F] -> real [B, 2N, T, F]."""
    re, im = split_complex(x)
    return torch.cat([re, im], dim=1)


class BeamformerNet(nn.Module):
    """Conv2D -> BatchNorm -> ELU -> Conv2D over (time, frequency)."""

    def __init__(self, n_channels: int, hidden: int = 16, kernel=(3, 3)):
        super().__init__()
        if n_channels < 1:
            raise ParameterError("the beamformer needs at least one channel")
        kernel = (kernel, kernel) if isinstance(kernel, int) else tuple(kernel)
        if any(k % 2 == 0 for k in kernel):
            raise ParameterError("kernel sizes must be odd to preserve the input shape")
        padding = (kernel[0] // 2, kernel[1] // 2)
        self.n_channels = n_channels
        self.conv_in = nn.Conv2d(2 * n_channels, hidden, kernel, padding=padding)
        self.norm = nn.BatchNorm2d(hidden)
        self.conv_out = nn.Conv2d(hidden, 2 * n_channels, kernel, padding=padding)

    def forward(self, planes: torch.Tensor) -> torch.Tensor:
        """Real [B, 2N, T, F] spectrogram planes -> real [B, 2N, T, F] weight planes."""
        if planes.dim() != 4 or planes.shape[1] != 2 * self.n_channels:
            raise ShapeError(
                f"beamformer built for {self.n_channels} channels, got input of shape "
                f"{tuple(planes.shape)}"
            )
        return self.conv_out(nn.functional.elu(self.norm(self.conv_in(planes))))


def init_beamformer(n_channels: int, hidden: int = 16, kernel=(3, 3), seed: int = 0) -> BeamformerNet:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return BeamformerNet(n_channels, hidden, kernel)


def predict_weights(net: BeamformerNet, X) -> torch.Tensor:
    """Complex weights with the shape of ``X`` ([N, T, F] or [B, N, T, F])."""
    re, im = split_complex(X)
    single = re.dim() == 3
    if single:
        re, im = re[None], im[None]
    if re.shape[1] != net.n_channels:
        raise ShapeError(f"beamformer built for {net.n_channels} channels, input has {re.shape[1]}")
    dtype = next(net.parameters()).dtype
    out = net(torch.cat([re, im], dim=1).to(dtype))
    n = net.n_channels
    w = torch.complex(out[:, :n], out[:, n:])
    return w[0] if single else w


def combine_planes(x_re, x_im, w_re, w_im):
    """Weighted channel sum on real/imaginary parts; channel axis is -3."""
    re = (x_re * w_re - x_im * w_im).sum(dim=-3)
    im = (x_re * w_im + x_im * w_re).sum(dim=-3)
    return re, im


def apply_beamforming(X, W):
    """Beamformed spectrogram: sum over microphones of X * W at every (t, f)."""
    if tuple(X.shape) != tuple(W.shape):
        raise ShapeError(f"spectrogram shape {tuple(X.shape)} != weight shape {tuple(W.shape)}")
    if X.ndim < 3:
        raise ShapeError("expected [..., N, T, F] inputs")
    if isinstance(X, np.ndarray) and isinstance(W, np.ndarray):
        return (X * W).sum(axis=-3)
    re, im = combine_planes(*split_complex(torch.as_tensor(X)), *split_complex(torch.as_tensor(W)))
    return torch.complex(re, im)


def _power(w) -> torch.Tensor:
    re, im = split_complex(w)
    return re * re + im * im


def orthogonality_loss(W, eps: float = ORTH_EPS) -> torch.Tensor:
    """Mean over bins of sum_{i<j} |w_i w_j*|^2 / (||w||^4 + eps).

    Zero exactly when at most one microphone weight is non-zero per bin;
    invariant to rescaling the weights.
    """
    p = _power(W)
    s = p.sum(dim=-3)
    cross = 0.5 * (s * s - (p * p).sum(dim=-3))
    return (cross / (s * s + eps)).mean()


def sparsity_loss(W) -> torch.Tensor:
    """Mean modulus of the weights."""
    p = _power(W)
    nz = p > 0
    mod = torch.where(nz, torch.sqrt(torch.where(nz, p, torch.ones_like(p))), torch.zeros_like(p))
    return mod.mean()
