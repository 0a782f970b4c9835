"""
From two microphones to one feature tensor
==========================================

Walks one synthetic utterance through the front end: STFT of each
channel, beamforming weights from an untrained network, the weighted
channel sum, and the magnitude / sin / cos feature planes.
"""

import numpy as np
import torch

from replayarray.beamformer import apply_beamforming, init_beamformer, orthogonality_loss, predict_weights
from replayarray.classifier import build_features
from replayarray.dsp import stft_frames, stft_params_for
from replayarray.synth import default_spec, render_utterance

torch.set_num_threads(1)

# A genuine utterance as heard by microphones 12 and 13 of the 16 kHz array.
spec = default_spec(("D4",), seed=0)
audio = render_utterance(spec, index=0, label="genuine", seed=0)["D4"]
x = audio[:2, :16000]
print("waveform", x.shape)

# 46 ms periodic Hann window, 50% overlap: 42 frames of 513 bins per second.
params = stft_params_for(16000)
X = stft_frames(x, params)
print("spectrogram", X.shape, X.dtype)

# The beamformer maps the real/imaginary planes to one complex weight per
# microphone and time-frequency bin.
net = init_beamformer(n_channels=2, hidden=16, seed=0).eval()
with torch.no_grad():
    W = predict_weights(net, X.astype(np.complex64)).numpy()
Xhat = apply_beamforming(X, W.astype(complex))
print("beamformed", Xhat.shape, "orthogonality penalty %.3f" % orthogonality_loss(W).item())

# Selecting one microphone is a special case: weight 1 on it, 0 elsewhere.
select = np.zeros_like(X)
select[0] = 1
assert np.array_equal(apply_beamforming(X, select), X[0])

# Phase goes in as (sin, cos) so the classifier never sees the 2*pi wrap.
feats = build_features(Xhat)
print("features", feats.shape)
print("mean magnitude %.4f, sin^2 + cos^2 = %.6f" % (feats[..., 0].mean(),
                                                     (feats[..., 1] ** 2 + feats[..., 2] ** 2).mean()))
