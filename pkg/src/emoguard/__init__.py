"""Pitch/tempo obfuscation of emotional speech, and attackers to test it against."""
from .audio_io import AudioClip, WavInfo, downmix_mono, read_wav, resample, write_wav
from .dsp import (
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
from .features import FeatureMatrix, MfccConfig, mfcc

__version__ = "0.1.0"
