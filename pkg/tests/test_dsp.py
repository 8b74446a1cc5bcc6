import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from emoguard.audio_io import AudioClip
from emoguard.dsp import (
    TransformSpec,
    WsolaConfig,
    apply_transform,
    dominant_frequency,
    invert_spec,
    rate_change,
    semitone_to_ratio,
    tempo_to_speed,
    time_stretch,
)
from emoguard.errors import ClipTooShortError, ConfigError, InvalidClipError
from oracles import dense_dft_peak, sine

SR = 22050


def tone(freq, seconds=2.0, rate=SR):
    return AudioClip(sine(freq, seconds, rate), rate)


@pytest.mark.parametrize("s, r", [(0, 1.0), (12, 2.0), (-12, 0.5)])
def test_semitone_to_ratio(s, r):
    assert semitone_to_ratio(s) == r


@given(st.floats(-48, 48))
def test_octave_law(s):
    assert semitone_to_ratio(s) * semitone_to_ratio(-s) == pytest.approx(1.0, rel=1e-14)


@pytest.mark.parametrize("t, r", [(100, 1.0), (60, 0.6), (140, 1.4)])
def test_tempo_to_speed(t, r):
    assert tempo_to_speed(t) == r


@pytest.mark.parametrize("bad", [0, -5])
def test_tempo_to_speed_rejects(bad):
    with pytest.raises(ConfigError):
        tempo_to_speed(bad)


def test_spec_validation():
    with pytest.raises(ConfigError):
        TransformSpec(30, 100)
    with pytest.raises(ConfigError):
        TransformSpec(0, 25)
    assert TransformSpec(-0.0, 100).is_identity
    assert str(TransformSpec(-0.0, 100).pitch_semitones) == "0.0"


def test_wsola_config_validation():
    with pytest.raises(ConfigError):
        WsolaConfig(synthesis_hop_fraction=0.6)
    with pytest.raises(ConfigError):
        WsolaConfig(frame_ms=10, search_ms=10)


def test_time_stretch_identity(rng):
    clip = AudioClip(rng.normal(size=5000) * 0.1, SR)
    assert time_stretch(clip, 1.0) is clip


def test_time_stretch_duration(backend):
    out = time_stretch(tone(440), 0.6)
    assert 3.27 <= out.duration_s <= 3.40


def test_time_stretch_keeps_pitch(backend):
    out = time_stretch(tone(440), 1.4)
    assert dense_dft_peak(out.samples, SR, fmax=2000) == pytest.approx(440, rel=0.01)
    assert out.duration_s == pytest.approx(2.0 / 1.4, rel=0.02)


def test_time_stretch_limits():
    with pytest.raises(ConfigError):
        time_stretch(tone(440), 5.0)
    with pytest.raises(ClipTooShortError):
        time_stretch(AudioClip(np.zeros(100), SR), 1.2)
    with pytest.raises(InvalidClipError):
        time_stretch(AudioClip(np.zeros(4000), SR, 2), 1.2)


def test_time_stretch_deterministic():
    a = time_stretch(tone(300), 0.75).samples
    b = time_stretch(tone(300), 0.75).samples
    assert a.tobytes() == b.tobytes()


def test_rate_change():
    clip = tone(440)
    assert rate_change(clip, 1.0) is clip
    up = rate_change(clip, 2.0)
    assert dense_dft_peak(up.samples, SR, fmax=3000) == pytest.approx(880, rel=0.01)
    assert up.duration_s == pytest.approx(1.0, rel=0.01)
    assert up.sample_rate_hz == SR
    assert rate_change(clip, 0.5).duration_s == pytest.approx(4.0, rel=0.01)


def test_apply_identity_bit_exact(rng):
    clip = AudioClip(rng.normal(size=8000) * 0.2, SR)
    out = apply_transform(clip, TransformSpec(0, 100))
    assert out.samples.tobytes() == clip.samples.tobytes()


def test_apply_octave_up():
    out = apply_transform(tone(440), TransformSpec(12, 100))
    assert dense_dft_peak(out.samples, SR, fmax=3000) == pytest.approx(880, rel=0.02)
    assert out.duration_s == pytest.approx(2.0, rel=0.02)


def test_apply_tempo_only():
    out = apply_transform(tone(440), TransformSpec(0, 140))
    assert dense_dft_peak(out.samples, SR, fmax=3000) == pytest.approx(440, rel=0.02)
    assert out.duration_s == pytest.approx(2.0 / 1.4, rel=0.02)


def test_apply_fractional_semitones():
    out = apply_transform(tone(440), TransformSpec(-9.4, 72))
    expected = 440 * 2 ** (-9.4 / 12)
    assert dominant_frequency(out) == pytest.approx(expected, rel=0.02)
    assert out.duration_s == pytest.approx(2.0 / 0.72, rel=0.02)


@settings(max_examples=15, deadline=None)
@given(st.floats(200, 1000), st.sampled_from([-8, -4, 0, 4, 8]), st.sampled_from([60, 80, 100, 120, 140]))
def test_pure_tone_pitch_and_duration_law(freq, s, t):
    clip = tone(freq, 1.2)
    out = apply_transform(clip, TransformSpec(s, t))
    ratio = dominant_frequency(out) / dominant_frequency(clip)
    assert 0.98 * 2 ** (s / 12) <= ratio <= 1.02 * 2 ** (s / 12)
    want = clip.n_frames * 100 / t
    assert abs(out.n_frames - want) <= 0.02 * want


@pytest.mark.parametrize("spec, inv", [((0, 100), (0, 100)), ((4, 120), (-4, 10000 / 120)),
                                       ((-8, 60), (8, 10000 / 60))])
def test_invert_spec(spec, inv):
    got = invert_spec(TransformSpec(*spec))
    assert got.pitch_semitones == inv[0]
    assert got.tempo_percent == pytest.approx(inv[1], rel=1e-12)


@pytest.mark.parametrize("spec", [(4, 120), (-8, 60), (8, 140), (-4, 80)])
def test_round_trip_restores(spec):
    clip = tone(330)
    s = TransformSpec(*spec)
    back = apply_transform(apply_transform(clip, s), invert_spec(s))
    assert abs(back.n_frames - clip.n_frames) <= 0.04 * clip.n_frames
    assert dominant_frequency(back) == pytest.approx(dominant_frequency(clip), rel=0.04)


def test_dominant_frequency_exact_bin():
    rate = 44100
    f = 327 * rate / 32768  # ~440 Hz and on the 32768-point grid
    assert dominant_frequency(AudioClip(sine(f, 1.0, rate), rate)) == pytest.approx(f, abs=rate / 32768)


def test_dominant_frequency_dc_and_mixture():
    assert dominant_frequency(AudioClip(np.full(10000, 0.3), SR)) == 0.0
    x = sine(880, 1.0, SR, amp=1.0) + sine(100, 1.0, SR, amp=0.1)
    oracle = dense_dft_peak(x, SR, fmax=2000)
    assert dominant_frequency(AudioClip(x, SR)) == pytest.approx(oracle, abs=SR / 32768)
    assert oracle == pytest.approx(880, rel=0.001)


def test_dominant_frequency_too_short():
    with pytest.raises(ClipTooShortError):
        dominant_frequency(AudioClip(np.zeros(2047), SR))


def test_transform_deterministic():
    clip = tone(250)
    s = TransformSpec(-4, 120)
    assert apply_transform(clip, s).samples.tobytes() == apply_transform(clip, s).samples.tobytes()


def test_no_output_normalisation():
    loud = AudioClip(sine(300, 1.0, SR, amp=0.99), SR)
    out = apply_transform(loud, TransformSpec(4, 100))
    assert np.max(np.abs(out.samples)) > 0.9
