import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from diarkit.audio_io import AudioSignal
from diarkit.errors import DataError, FormatError, ValidationError
from diarkit.features import (
    ENERGY_FLOOR,
    FeatureMatrix,
    FrameSpec,
    cmvn,
    compute_mfcc,
    hz_to_mel,
    mel_filterbank,
    mel_to_hz,
    read_features,
    sliding_cmn,
    write_features,
)


def _tone(seconds=1.0, f=440.0, amp=0.3, sr=16000):
    t = np.arange(int(seconds * sr)) / sr
    return AudioSignal(amp * np.sin(2 * np.pi * f * t), sr, "tone")


def test_frame_count_one_second():
    assert compute_mfcc(_tone()).num_frames == 98
    assert FrameSpec().num_frames(16000, 16000) == 98


@given(st.integers(min_value=400, max_value=6000))
def test_frame_count_closed_form(n):
    sig = AudioSignal(np.full(n, 0.01), 16000, "x")
    assert compute_mfcc(sig).num_frames == 1 + (n - 400) // 160


def test_too_short_signal():
    with pytest.raises(DataError):
        compute_mfcc(AudioSignal(np.zeros(399), 16000, "x"))


def test_silence_hits_energy_floor():
    m = compute_mfcc(AudioSignal(np.zeros(8000), 16000, "s")).values
    assert np.all(m[:, 0] == np.log(ENERGY_FLOOR))
    assert np.all(m == m[0])


def test_mfcc_deterministic():
    a = compute_mfcc(_tone()).values
    b = compute_mfcc(_tone()).values
    assert a.tobytes() == b.tobytes()
    assert a.shape[1] == 13
    assert np.all(np.isfinite(a))


def test_doubling_amplitude_adds_log4_to_c0():
    rng = np.random.default_rng(0)
    x = 0.1 * rng.standard_normal(16000)
    a = compute_mfcc(AudioSignal(x, 16000, "a")).values[:, 0]
    b = compute_mfcc(AudioSignal(2 * x, 16000, "b")).values[:, 0]
    np.testing.assert_allclose(b - a, np.log(4.0), atol=1e-6)


def _naive_mfcc_frame(frame, spec, sr):
    """Direct DFT and cosine-sum evaluation of one frame."""
    L = len(frame)
    energy = np.log(max(float(np.sum(frame**2)), ENERGY_FLOOR))
    emph = np.empty(L)
    emph[0] = frame[0] * (1 - spec.pre_emphasis)
    for i in range(1, L):
        emph[i] = frame[i] - spec.pre_emphasis * frame[i - 1]
    w = np.array([0.54 - 0.46 * np.cos(2 * np.pi * i / (L - 1)) for i in range(L)])
    x = emph * w
    N = spec.fft_size
    k = np.arange(N // 2 + 1)
    n = np.arange(L)
    re = (x[None, :] * np.cos(2 * np.pi * k[:, None] * n[None, :] / N)).sum(axis=1)
    im = (x[None, :] * np.sin(2 * np.pi * k[:, None] * n[None, :] / N)).sum(axis=1)
    power = re**2 + im**2
    fb = mel_filterbank(spec.num_mel_filters, N, sr)
    logmel = np.log(np.maximum(fb @ power, ENERGY_FLOOR))
    M = spec.num_mel_filters
    c = np.array(
        [
            np.sqrt((1 if q == 0 else 2) / M) * sum(logmel[m] * np.cos(np.pi * q * (2 * m + 1) / (2 * M)) for m in range(M))
            for q in range(spec.num_ceps)
        ]
    )
    c[0] = energy
    return c


def test_mfcc_matches_direct_evaluation():
    spec = FrameSpec()
    rng = np.random.default_rng(3)
    sig = AudioSignal(0.2 * rng.standard_normal(1200), 16000, "n")
    m = compute_mfcc(sig, spec).values
    x = sig.samples * spec.pcm_scale
    for t in (0, 3, m.shape[0] - 1):
        frame = x[t * 160 : t * 160 + 400]
        np.testing.assert_allclose(m[t], _naive_mfcc_frame(frame, spec, 16000), rtol=1e-9, atol=1e-8)


def test_mel_scale_and_filterbank():
    assert abs(hz_to_mel(700.0) - 2595 * np.log10(2)) < 1e-9
    np.testing.assert_allclose(mel_to_hz(hz_to_mel(np.array([100.0, 1000.0, 7000.0]))), [100.0, 1000.0, 7000.0])
    fb = mel_filterbank(23, 512, 16000)
    assert fb.shape == (23, 257)
    assert np.all(fb >= 0)
    assert np.all(fb.max(axis=1) > 0)
    peaks = fb.argmax(axis=1)
    assert np.all(np.diff(peaks) > 0)


def test_tone_energy_lands_in_matching_band():
    spec = FrameSpec()
    fb = mel_filterbank(23, 512, 16000)
    band = int(np.argmax(fb[:, int(round(1000 * 512 / 16000))]))
    x = _tone(f=1000.0).samples * spec.pcm_scale
    frame = x[:400] * np.hamming(400)
    power = np.abs(np.fft.rfft(frame, 512)) ** 2
    assert int(np.argmax(fb @ power)) == band


def test_frame_spec_validation():
    with pytest.raises(ValidationError):
        FrameSpec(frame_length=10, frame_shift=20)
    with pytest.raises(ValidationError):
        FrameSpec(num_ceps=30, num_mel_filters=23)
    with pytest.raises(ValidationError):
        FrameSpec(fft_size=500)


def test_cmvn_example():
    out = cmvn(FeatureMatrix(np.array([[1.0], [2.0], [3.0]]))).values[:, 0]
    np.testing.assert_allclose(out, [-1.224744871391589, 0.0, 1.224744871391589], atol=1e-12)


def test_cmvn_constant_column_and_idempotence(rng):
    x = np.column_stack([np.full(50, 4.0), rng.normal(3, 2, 50)])
    out = cmvn(FeatureMatrix(x)).values
    assert np.all(out[:, 0] == 0)
    np.testing.assert_allclose(cmvn(FeatureMatrix(out)).values, out, atol=1e-9)


@given(st.integers(2, 60), st.integers(1, 6), st.integers(0, 10_000))
def test_cmvn_moments(T, D, seed):
    x = np.random.default_rng(seed).normal(5, 3, (T, D))
    out = cmvn(FeatureMatrix(x)).values
    assert np.all(np.abs(out.mean(axis=0)) <= 1e-9)
    var = x.var(axis=0)
    ok = var >= 1e-12
    np.testing.assert_allclose(out.var(axis=0)[ok], 1.0, atol=1e-6)


def test_cmvn_needs_two_frames():
    with pytest.raises(DataError):
        cmvn(FeatureMatrix(np.ones((1, 3))))


def test_sliding_cmn_examples(rng):
    out = sliding_cmn(FeatureMatrix(np.array([[0.0], [3.0], [6.0]])), window=3).values[:, 0]
    np.testing.assert_allclose(out, [-1.5, 0.0, 1.5])
    x = rng.normal(size=(40, 3))
    np.testing.assert_allclose(sliding_cmn(FeatureMatrix(x), window=1).values, 0.0, atol=1e-12)
    np.testing.assert_allclose(sliding_cmn(FeatureMatrix(x), window=80).values, x - x.mean(axis=0), atol=1e-12)


def test_sliding_cmn_matches_loop(rng):
    x = rng.normal(size=(23, 2))
    W = 6
    expect = np.empty_like(x)
    for t in range(len(x)):
        lo = max(t - W // 2, 0)
        hi = min(t - W // 2 + W, len(x))
        expect[t] = x[t] - x[lo:hi].mean(axis=0)
    np.testing.assert_allclose(sliding_cmn(FeatureMatrix(x), window=W).values, expect, atol=1e-12)


def test_feature_archive_round_trip(tmp_path, rng):
    x = rng.normal(size=(7, 13)).astype(np.float32).astype(np.float64)
    write_features(tmp_path / "f.dkf", FeatureMatrix(x))
    raw = (tmp_path / "f.dkf").read_bytes()
    assert raw[:4] == b"DKF1"
    assert len(raw) == 12 + 4 * 7 * 13
    np.testing.assert_array_equal(read_features(tmp_path / "f.dkf").values, x)
    (tmp_path / "bad.dkf").write_bytes(raw[:-4])
    with pytest.raises(FormatError):
        read_features(tmp_path / "bad.dkf")
