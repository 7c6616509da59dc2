"""Smoke tests for the python bindings."""

import math

import numpy as np
import pytest

import tparn


def micro_config():
    cfg = tparn.Config()
    cfg.channels = 2
    cfg.frame_size = 8
    cfg.frame_shift = 4
    cfg.chunk_size = 4
    cfg.chunk_shift = 2
    cfg.feature_dim = 6
    cfg.num_blocks = 2
    cfg.spatial_blocks = [1, 2]
    cfg.dropout_rate = 0.0
    return cfg


def test_framing_round_trip():
    rng = np.random.default_rng(1)
    x = rng.uniform(-1.0, 1.0, size=(2, 100))
    frames, pad = tparn.frame_signal(x, 16, 8)
    assert frames.shape[0] == 2
    assert frames.shape[2] == 16
    back = tparn.overlap_add_frames(frames, 8, pad, 100)
    np.testing.assert_allclose(back, x, atol=1e-12)


def test_si_sdr_values():
    assert tparn.si_sdr(np.array([1.0, 1.0]), np.array([1.0, 0.0])) == pytest.approx(0.0)
    d = np.array([0.3, -0.2, 0.9, 0.1])
    assert tparn.si_sdr(2.0 * d, d) == 100.0
    with pytest.raises(ValueError):
        tparn.si_sdr(np.array([1.0]), np.array([0.0]))


def test_losses():
    rng = np.random.default_rng(2)
    d = rng.uniform(-1, 1, size=(2, 400))
    x = d + rng.uniform(-0.3, 0.3, size=(2, 400))
    report = tparn.pcm_loss(x, d, d, fft_size=64, hop=32)
    assert report["total"] == 0.0
    report = tparn.pcm_loss(x, d, x, fft_size=64, hop=32)
    assert report["total"] == pytest.approx(
        0.5 * report["speech_term"] + 0.5 * report["interference_term"]
    )
    assert tparn.mse_loss(d, d) == 0.0
    assert tparn.sm_loss(d, x, fft_size=64, hop=32) > 0.0


def test_stft_shape():
    x = np.zeros((1, 1000))
    re, im = tparn.stft(x, fft_size=256, hop=128)
    assert re.shape == im.shape
    assert re.shape[2] == 129
    assert np.all(re == 0.0)


def test_model_forward_shape_and_determinism():
    cfg = micro_config()
    model = tparn.Model(cfg, seed=3)
    x = np.random.default_rng(4).uniform(-1, 1, size=(2, 120))
    y1 = model.forward(x)
    y2 = model.forward(x)
    assert y1.shape == (2, 120)
    np.testing.assert_array_equal(y1, y2)
    assert model.num_params() > 0
    names = dict(model.param_report())
    assert "encoder" in names and "block1" in names


def test_model_miso_output():
    cfg = micro_config()
    cfg.output_mode = "miso"
    model = tparn.Model(cfg, seed=5)
    x = np.random.default_rng(6).uniform(-1, 1, size=(2, 90))
    y = model.forward(x)
    assert y.shape == (1, 90)


def test_checkpoint_round_trip(tmp_path):
    cfg = micro_config()
    model = tparn.Model(cfg, seed=7)
    path = str(tmp_path / "model.tpnck")
    model.save(path)
    loaded = tparn.Model.load(path)
    x = np.random.default_rng(8).uniform(-1, 1, size=(2, 64))
    np.testing.assert_array_equal(model.forward(x), loaded.forward(x))


def test_rir_direct_tap():
    taps, dropped = tparn.image_source_rir(
        room=[6.0, 5.0, 3.5], source=[1.0, 2.0, 1.5], mic=[4.43, 2.0, 1.5],
        max_order=0, beta=0.8, fs=16000, rir_len=300,
    )
    assert dropped == 0
    expected = 1.0 / (4.0 * math.pi * 3.43)
    assert taps[160] == pytest.approx(expected, rel=1e-12)
    assert np.count_nonzero(taps) == 1


def test_t60_monotonic():
    room = [6.0, 5.0, 3.5]
    betas = [tparn.t60_to_beta(t, room) for t in (0.3, 0.6, 1.2)]
    assert betas == sorted(betas)
    with pytest.raises(ValueError):
        tparn.t60_to_beta(0.01, room)


def test_make_mixture_identity():
    rng = np.random.default_rng(9)
    speech = rng.uniform(-0.5, 0.5, size=(1, 3200))
    ex = tparn.make_mixture(speech, seed=10, num_mics=4, max_order=2)
    x, d, u = ex["mixture"], ex["target"], ex["interference"]
    assert x.shape == (4, 3200)
    np.testing.assert_allclose(x, d + u, atol=1e-10)
    assert -10.0 <= ex["snr_db"] <= 10.0
