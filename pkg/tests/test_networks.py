import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from replayarray.beamformer import (
    apply_beamforming,
    init_beamformer,
    orthogonality_loss,
    predict_weights,
    sparsity_loss,
)
from replayarray.classifier import ClassifierNet, bce_loss, build_features, init_classifier, total_loss
from replayarray.dsp import stft_params_for
from replayarray.errors import ParameterError, ShapeError
from replayarray.model import ModelCheckpoint, ModelConfig, init_detector, spectrogram_planes

from conftest import TINY_MODEL
from oracles import loop_beamform
from gradcheck import check_module_parameters, check_tensor_function

GRAD_MODEL = ModelConfig(beamformer_hidden=3, conv_widths=(3, 4, 4), pools=(2, 2, 1), gru_hidden=5, gru_layers=2)


def _complex(rng, shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def test_beamforming_matches_loop(rng):
    X, W = _complex(rng, (3, 4, 5)), _complex(rng, (3, 4, 5))
    ref = loop_beamform(X, W)
    for out in (apply_beamforming(X, W), apply_beamforming(torch.from_numpy(X), torch.from_numpy(W)).numpy()):
        assert np.max(np.abs(out - ref)) <= 1e-6 * np.max(np.abs(ref))


def test_beamforming_identity_and_selector(rng):
    X = _complex(rng, (1, 6, 7))
    np.testing.assert_array_equal(apply_beamforming(X, np.ones_like(X)), X[0])
    X2 = _complex(rng, (2, 6, 7))
    W = np.zeros_like(X2)
    W[0] = 1
    np.testing.assert_array_equal(apply_beamforming(X2, W), X2[0])


def test_beamforming_shape_mismatch(rng):
    with pytest.raises(ShapeError):
        apply_beamforming(_complex(rng, (2, 3, 4)), _complex(rng, (2, 3, 5)))


@settings(max_examples=30, deadline=None)
@given(a=st.complex_numbers(max_magnitude=10, allow_nan=False, allow_infinity=False), seed=st.integers(0, 2**31))
def test_beamforming_bilinear(a, seed):
    rng = np.random.default_rng(seed)
    X, W = _complex(rng, (2, 3, 4)), _complex(rng, (2, 3, 4))
    ref = a * apply_beamforming(X, W)
    tol = 1e-9 * (1 + np.max(np.abs(ref)))
    assert np.max(np.abs(apply_beamforming(a * X, W) - ref)) <= tol
    assert np.max(np.abs(apply_beamforming(X, a * W) - ref)) <= tol


def test_init_beamformer_deterministic():
    a = init_beamformer(4, 16, (3, 3), seed=0)
    b = init_beamformer(4, 16, (3, 3), seed=0)
    for pa, pb in zip(a.state_dict().values(), b.state_dict().values()):
        assert torch.equal(pa, pb)
    c = init_beamformer(4, 16, (3, 3), seed=1)
    assert not torch.equal(a.conv_in.weight, c.conv_in.weight)


def test_init_beamformer_channel_counts():
    assert init_beamformer(1).n_channels == 1
    with pytest.raises(ParameterError):
        init_beamformer(0)


@pytest.mark.parametrize("T, F", [(61, 1025), (5, 7), (42, 513), (1, 1)])
def test_predict_weights_shape(rng, T, F):
    net = init_beamformer(4, 16).eval()
    X = _complex(rng, (4, T, F)).astype(np.complex64)
    W = predict_weights(net, X)
    assert tuple(W.shape) == (4, T, F)
    assert torch.isfinite(torch.view_as_real(W)).all()


def test_predict_weights_channel_mismatch(rng):
    net = init_beamformer(4).eval()
    with pytest.raises(ShapeError):
        predict_weights(net, _complex(rng, (2, 5, 9)).astype(np.complex64))


def test_orthogonality_examples(rng):
    onehot = np.zeros((3, 4, 5), dtype=complex)
    idx = rng.integers(0, 3, (4, 5))
    for t in range(4):
        for f in range(5):
            onehot[idx[t, f], t, f] = _complex(rng, ())
    assert orthogonality_loss(onehot).item() == 0.0
    w = np.full((2, 3, 3), 1 / math.sqrt(2), dtype=complex)
    assert orthogonality_loss(w).item() == pytest.approx(0.25, abs=1e-7)
    W = _complex(rng, (3, 4, 5))
    base = orthogonality_loss(W).item()
    for c in (0.5, -3.0, 2 + 5j, 1e3):  # far from the epsilon floor
        assert orthogonality_loss(c * W).item() == pytest.approx(base, rel=1e-6)


def test_orthogonality_matches_pairwise_formula(rng):
    W = _complex(rng, (3, 2, 2))
    expected = []
    for t in range(2):
        for f in range(2):
            w = W[:, t, f]
            cross = sum(abs(w[i] * np.conj(w[j])) ** 2 for i in range(3) for j in range(i + 1, 3))
            expected.append(cross / (np.sum(np.abs(w) ** 2) ** 2 + 1e-8))
    assert orthogonality_loss(W).item() == pytest.approx(np.mean(expected), rel=1e-12)


def test_sparsity_examples(rng):
    assert sparsity_loss(np.zeros((2, 3, 4), dtype=complex)).item() == 0.0
    phases = np.exp(1j * rng.uniform(0, 2 * np.pi, (2, 3, 4)))
    assert sparsity_loss(phases).item() == pytest.approx(1.0)
    W = np.zeros((2, 3, 4), dtype=complex)
    W[0] = 2 * phases[0]
    assert sparsity_loss(W).item() == pytest.approx(1.0)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_loss_gradients_match_finite_differences(seed):
    # a small step keeps truncation error negligible even for weights near zero
    W = _complex(np.random.default_rng(seed), (2, 3, 4))
    re, im = torch.from_numpy(W.real), torch.from_numpy(W.imag)
    assert check_tensor_function(lambda a, b: orthogonality_loss((a, b)), [re, im], step=1e-6) <= 1e-5
    assert check_tensor_function(lambda a, b: sparsity_loss((a, b)), [re, im], step=1e-6) <= 1e-5


def test_features_examples():
    out = build_features(np.array([3 + 4j, -1 + 0j, 0j]))
    np.testing.assert_allclose(out, [[5, 0.8, 0.6], [1, 0, -1], [0, 0, 1]], atol=1e-12)


def test_features_unit_phase(rng):
    z = _complex(rng, (7, 9)).astype(np.complex64)
    z[0, 0] = 0
    f = build_features(z)
    assert f.shape == (7, 9, 3)
    assert np.all(f[..., 0] >= 0)
    assert np.all(np.abs(f[..., 1:]) <= 1 + 1e-6)
    np.testing.assert_allclose(f[..., 1] ** 2 + f[..., 2] ** 2, 1.0, atol=1e-6)
    r, phi = np.abs(z), np.angle(z)
    shifted = build_features(r * np.exp(1j * (phi + 2 * np.pi)))
    np.testing.assert_allclose(shifted, build_features(r * np.exp(1j * phi)), atol=1e-5)
    torch_out = build_features(torch.from_numpy(z))
    np.testing.assert_allclose(torch_out.numpy(), f, atol=1e-6)


def test_classifier_probabilities_sum_to_one(rng):
    net = init_classifier(33, widths=(4, 4, 4), pools=(2, 2, 2), gru_hidden=8).eval()
    feats = torch.randn(3, 3, 10, 33)
    p = net.predict_proba(feats)
    assert p.shape == (3, 2)
    np.testing.assert_allclose(p.sum(-1).detach().numpy(), 1.0, atol=1e-6)


def test_classifier_full_geometry_44k():
    p = stft_params_for(44100)
    net = init_classifier(p.n_bins).eval()
    assert net.gru.hidden_size == 128 and net.gru.num_layers == 2 and net.gru.bidirectional
    with torch.no_grad():
        prob = net.predict_proba(torch.randn(1, 3, 61, 1025))
    assert prob.shape == (1, 2)
    with pytest.raises(ShapeError):
        net(torch.randn(1, 3, 42, 513))


def test_classifier_pooling_too_deep():
    with pytest.raises(ParameterError):
        ClassifierNet(9, widths=(2, 2, 2), pools=(4, 4, 4))


def test_classifier_concat_pooling():
    net = ClassifierNet(64, widths=(2, 3, 4), pools=(2, 2, 2), gru_hidden=4, pool_mode="concat").eval()
    assert net.gru.input_size == 8 * 8
    assert net(torch.randn(2, 3, 5, 64)).shape == (2, 2)


def test_classifier_inference_deterministic():
    net = init_classifier(65, widths=(4, 4, 4), pools=(2, 2, 2), gru_hidden=8).eval()
    feats = torch.randn(2, 3, 6, 65)
    assert torch.equal(net(feats), net(feats))


def test_conv_stack_does_not_mix_time():
    net = init_classifier(64, widths=(4, 4, 4), pools=(2, 2, 2), gru_hidden=8).double().eval()
    feats = torch.randn(1, 3, 8, 64, dtype=torch.float64)
    base = net.conv_stack(feats)
    bumped = feats.clone()
    bumped[:, :, 5] += torch.randn(3, 64, dtype=torch.float64)
    diff = (net.conv_stack(bumped) - base).abs().amax(dim=(0, 1, 3))
    assert diff[5] > 0
    assert torch.all(diff[torch.arange(8) != 5] == 0)


@pytest.mark.parametrize("p, y, expected", [(0.5, 1, math.log(2)), (1 - 1e-12, 1, 0.0), (0.9, 0, -math.log(0.1))])
def test_bce_examples(p, y, expected):
    assert bce_loss(p, y).item() == pytest.approx(expected, abs=1e-6)


def test_bce_clamps():
    assert math.isfinite(bce_loss(0.0, 1).item())
    assert math.isfinite(bce_loss(1.0, 0).item())


def test_total_loss():
    assert total_loss(0.7, 0.3, 0.2, 0.0, 0.0) == 0.7
    assert total_loss(1.0, 0.5, 0.2, 0.1, 0.1) == pytest.approx(1.07)
    with pytest.raises(ParameterError):
        total_loss(1.0, 0.5, 0.2, -0.1, 0.1)


def tiny_loss_fn(rng, net):
    X = _complex(rng, (4, 2, 6, 9))
    planes = spectrogram_planes(X, torch.float64)
    y = torch.tensor([0, 1, 1, 0])
    return lambda: net.loss(planes, y, 0.1, 0.1)


def test_end_to_end_gradient_every_parameter(rng):
    # a small step stays clear of the ReLU / max-pool kinks; every parameter is checked
    net = init_detector(2, 9, GRAD_MODEL, seed=3).double().train()
    n = sum(p.numel() for p in net.parameters())
    assert check_module_parameters(net, tiny_loss_fn(rng, net), n_samples=n, step=1e-6) <= 1e-4


def test_detector_probabilities(rng):
    net = init_detector(2, 513, TINY_MODEL).eval()
    X = _complex(rng, (3, 2, 42, 513)).astype(np.complex64)
    p = net.p_replay(spectrogram_planes(X))
    assert p.shape == (3,) and np.all((p >= 0) & (p <= 1))


def test_checkpoint_roundtrip(tmp_path, rng):
    params = stft_params_for(16000)
    net = init_detector(2, params.n_bins, TINY_MODEL, seed=5).eval()
    ckpt = ModelCheckpoint(net, params, (12, 13), [0.5, 0.4], "abc", {"n_train": 3})
    path = ckpt.save(tmp_path / "m.npz")
    again = ModelCheckpoint.load(path)
    assert again.train_channels == (12, 13)
    assert again.stft_params == params
    assert again.history == [0.5, 0.4]
    X = spectrogram_planes(_complex(rng, (2, 2, 42, 513)).astype(np.complex64))
    np.testing.assert_array_equal(net.p_replay(X), again.detector.p_replay(X))
    meta = np.load(path)["__meta__"]
    assert '"format_version": 1' in str(meta)


def test_checkpoint_geometry_check():
    params = stft_params_for(16000)
    net = init_detector(2, params.n_bins, TINY_MODEL)
    with pytest.raises(ShapeError):
        ModelCheckpoint(net, params, (12, 13, 14))
