import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from emoguard.audio_io import AudioClip
from emoguard.dsp import TransformSpec, apply_transform
from emoguard.errors import ClipTooShortError, ConfigError
from emoguard.features import (
    MfccConfig,
    mel_center_frequencies,
    mel_filterbank,
    mfcc,
    normalize_and_fix_length,
    raw_mfcc,
    stft_power,
)
from oracles import naive_mfcc, sine

CFG = MfccConfig()


def test_filterbank_rows_positive_and_centres_increasing():
    fb = mel_filterbank(CFG)
    assert fb.shape == (40, 1025)
    assert np.all(fb >= 0)
    assert np.all(fb.max(axis=1) > 0)
    centres = mel_center_frequencies(CFG)[1:-1]
    assert np.all(np.diff(centres) > 0)


def test_filterbank_summed_response_brute_force():
    fb = mel_filterbank(CFG)
    freqs = np.arange(fb.shape[1]) * CFG.target_rate_hz / CFG.frame_len
    for k, f in enumerate(freqs):
        if CFG.fmin_hz < f < CFG.fmax_hz:
            total = sum(fb[m, k] for m in range(fb.shape[0]))
            assert 0 < total <= 2, (k, f, total)


def test_filterbank_rejects_empty_filters():
    with pytest.raises(ConfigError):
        mel_filterbank(MfccConfig(frame_len=256, hop=128, n_mels=128, n_mfcc=20))


def test_config_validation():
    with pytest.raises(ConfigError):
        MfccConfig(n_mfcc=50)
    with pytest.raises(ConfigError):
        MfccConfig(hop=4096)
    with pytest.raises(ConfigError):
        MfccConfig(fmax_hz=20000)


def test_stft_silence_and_frame_count():
    p = stft_power(AudioClip(np.zeros(2048), 22050), CFG)
    assert p.shape == (1025, 1)
    assert not p.any()
    assert stft_power(AudioClip(np.zeros(2048 + 3 * 512 + 7), 22050), CFG).shape[1] == 4


@pytest.mark.parametrize("k", [10, 64, 300])
def test_stft_exact_bin_power(k):
    n = CFG.frame_len
    x = sine(k * 22050 / n, 0.5, 22050, amp=1.0, phase=0.3)
    p = stft_power(AudioClip(x, 22050), CFG)
    coherent_gain = 0.5
    closed_form = coherent_gain ** 2 * (n / 2) ** 2
    assert np.allclose(p[k], closed_form, rtol=1e-6)
    # Parseval: windowed power sits in bins k-1..k+1 only
    total = p.sum(axis=0)
    assert np.allclose(p[k - 1:k + 2].sum(axis=0), total, rtol=1e-6)


def test_stft_too_short():
    with pytest.raises(ClipTooShortError):
        stft_power(AudioClip(np.zeros(2047), 22050), CFG)


def test_raw_mfcc_matches_loop_oracle(rng):
    x = 0.3 * sine(440, 0.25, 22050) + 0.01 * rng.normal(size=5512)
    cfg = MfccConfig(n_mfcc=13)
    got = raw_mfcc(AudioClip(x, 22050), cfg)
    want = naive_mfcc(x, 22050, cfg.frame_len, cfg.hop, cfg.n_mels, cfg.n_mfcc,
                      cfg.fmin_hz, cfg.fmax_hz, cfg.log_floor)
    assert got.shape == want.shape
    assert np.allclose(got, want, rtol=1e-8, atol=1e-8)


def test_tone_raises_c0_above_noise_floor(rng):
    noise = 1e-4 * rng.normal(size=22050)
    floor = raw_mfcc(AudioClip(noise, 22050), CFG)
    tone = raw_mfcc(AudioClip(noise + sine(440, 1.0, 22050), 22050), CFG)
    assert np.all(tone[0] > floor[0])
    silent = raw_mfcc(AudioClip(np.zeros(22050), 22050), CFG)
    assert np.all(floor[0] > silent[0])


def test_mfcc_deterministic_and_shape(rng):
    clip = AudioClip(rng.normal(size=33000) * 0.1, 22050)
    a, b = mfcc(clip), mfcc(clip)
    assert a.values.tobytes() == b.values.tobytes()
    assert a.shape == (40, 256)
    assert a.fingerprint == CFG.fingerprint()


def test_mfcc_silence_is_zero():
    out = mfcc(AudioClip(np.zeros(22050), 22050))
    assert not out.values.any()


def test_mfcc_too_short():
    with pytest.raises(ClipTooShortError):
        mfcc(AudioClip(np.zeros(4000), 22050))


@settings(max_examples=10, deadline=None)
@given(st.floats(0.2, 30.0), st.sampled_from([16000, 22050, 24414, 48000]))
def test_shape_invariance(seconds, rate):
    x = np.sin(np.arange(int(np.ceil(seconds * rate))) * 0.05) * 0.1
    assert mfcc(AudioClip(x, rate)).shape == (40, 256)


def test_row_statistics(rng):
    x = 0.2 * rng.normal(size=int(2.0 * 22050)) + sine(300, 2.0, 22050, amp=0.2)
    raw = raw_mfcc(AudioClip(x, 22050), CFG)
    out = mfcc(AudioClip(x, 22050)).values
    T = raw.shape[1]
    prefix = out[:, :T]
    assert np.all(np.abs(prefix.mean(axis=1)) <= 1e-6)
    assert np.all((prefix.std(axis=1) >= 0.999) & (prefix.std(axis=1) <= 1.001))
    assert not out[:, T:].any()


def test_normalize_fixed_point(rng):
    raw = rng.normal(size=(5, 256))
    raw = (raw - raw.mean(1, keepdims=True)) / raw.std(1, keepdims=True)
    assert np.allclose(normalize_and_fix_length(raw, CFG).values, raw, atol=1e-12)


def test_normalize_constant_row():
    raw = np.vstack([np.full(10, 3.0), np.arange(10.0)])
    out = normalize_and_fix_length(raw, CFG).values
    assert not out[0].any()
    assert out.shape == (2, 256)


def test_normalize_centre_truncation(rng):
    raw = rng.normal(size=(3, 512))
    z = (raw - raw.mean(1, keepdims=True)) / raw.std(1, keepdims=True)
    out = normalize_and_fix_length(raw, CFG).values
    start = (512 - 256) // 2
    assert np.array_equal(out, z[:, start:start + 256])


def test_features_move_under_transform():
    clip = AudioClip(sine(220, 1.5, 22050) + sine(660, 1.5, 22050, amp=0.2), 22050)
    a = mfcc(clip).values
    b = mfcc(apply_transform(clip, TransformSpec(8, 100))).values
    assert np.linalg.norm(a - b) > 0
