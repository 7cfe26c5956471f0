"""
Synthetic target device and test-signal generator.

The device is a static waveshaper followed by an FIR tone stage:
    out[n] = output_gain * FIR(tone_coeffs, tanh(pre_gain * x[n] + asymmetry_bias))[n]
It stands in for a recorded amplifier so the pipeline can be trained at desk scale.
"""

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, Mapping, Optional, Tuple, Union

import numpy as np
from scipy import signal as sp_signal

from managers.audio_io import DEFAULT_SAMPLE_RATE, AudioBuffer, write_wav
from managers.errors import ConfigError, DomainValueError, coerce_config_values
from managers.preemph_filters import fir_filter

logger = logging.getLogger(__name__)

INPUT_KINDS = ('sweep', 'noise_bursts', 'pluck_synth')
PEAK_LEVEL: float = 0.5
SWEEP_LOW_HZ: float = 20.0
SWEEP_HIGH_HZ: float = 10000.0


@dataclass(frozen=True)
class DeviceConfig:
    pre_gain: float = 4.0
    asymmetry_bias: float = 0.1
    tone_coeffs: Tuple[float, ...] = field(default=(0.85, 0.15))
    output_gain: float = 0.9

    def __post_init__(self):
        coeffs = tuple(float(v) for v in np.ravel(self.tone_coeffs))
        object.__setattr__(self, 'tone_coeffs', coeffs)
        values = (self.pre_gain, self.asymmetry_bias, self.output_gain) + coeffs
        if not coeffs:
            raise ConfigError("tone_coeffs must not be empty")
        if not np.all(np.isfinite(values)):
            raise ConfigError("device parameters must be finite")

    @classmethod
    def from_mapping(cls, values: Mapping) -> 'DeviceConfig':
        return replace(cls(), **coerce_config_values(cls, values, 'device'))

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc['tone_coeffs'] = list(self.tone_coeffs)
        return doc

    def output_bound(self) -> float:
        """|output| never exceeds this (tanh is bounded by 1)."""
        return abs(self.output_gain) * float(np.sum(np.abs(self.tone_coeffs)))


def process(config: DeviceConfig, audio: AudioBuffer) -> AudioBuffer:
    """Runs the input through the device; deterministic and time invariant."""
    x = np.asarray(audio.samples, dtype=np.float64)
    shaped = np.tanh(config.pre_gain * x + config.asymmetry_bias)
    toned = fir_filter(np.asarray(config.tone_coeffs), shaped)
    return audio.with_samples((config.output_gain * toned).astype(audio.samples.dtype))


# --------------------------------------------------------------------------
# 1. אותות בדיקה
# --------------------------------------------------------------------------

def _sweep(num_samples: int, sample_rate_hz: int, rng: np.random.Generator) -> np.ndarray:
    t = np.arange(num_samples) / sample_rate_hz
    duration = max(num_samples / sample_rate_hz, 1.0 / sample_rate_hz)
    return sp_signal.chirp(t, f0=SWEEP_LOW_HZ, t1=duration, f1=SWEEP_HIGH_HZ, method='logarithmic', phi=-90)


def _noise_bursts(num_samples: int, sample_rate_hz: int, rng: np.random.Generator) -> np.ndarray:
    out = np.zeros(num_samples)
    fade = max(1, int(0.005 * sample_rate_hz))
    pos = 0
    while pos < num_samples:
        burst = int(rng.uniform(0.05, 0.4) * sample_rate_hz)
        gap = int(rng.uniform(0.02, 0.2) * sample_rate_hz)
        end = min(pos + burst, num_samples)
        length = end - pos
        envelope = np.full(length, rng.uniform(0.1, 1.0))
        ramp = min(fade, length // 2)
        if ramp:
            envelope[:ramp] *= np.linspace(0.0, 1.0, ramp)
            envelope[length - ramp:] *= np.linspace(1.0, 0.0, ramp)
        out[pos:end] = envelope * rng.standard_normal(length)
        pos = end + gap
    return out


def _pluck_synth(num_samples: int, sample_rate_hz: int, rng: np.random.Generator) -> np.ndarray:
    out = np.zeros(num_samples)
    nyquist_guard = 0.45 * sample_rate_hz
    onset = 0
    while onset < num_samples:
        # E2 .. D5, semitone grid
        f0 = 82.41 * 2.0 ** (rng.integers(0, 34) / 12.0)
        decay_s = rng.uniform(0.4, 1.5)
        velocity = rng.uniform(0.3, 1.0)
        length = min(num_samples - onset, int(4 * decay_s * sample_rate_hz))
        t = np.arange(length) / sample_rate_hz
        note = np.zeros(length)
        for k in range(1, 13):
            if k * f0 >= min(nyquist_guard, SWEEP_HIGH_HZ):
                break
            amp = rng.uniform(0.5, 1.0) / k
            note += amp * np.exp(-t * k ** 0.7 / decay_s) * np.sin(2 * np.pi * k * f0 * t + rng.uniform(0, 2 * np.pi))
        out[onset:onset + length] += velocity * note
        onset += int(rng.uniform(0.15, 0.8) * sample_rate_hz)
    return out


_GENERATORS = {
    'sweep': _sweep,
    'noise_bursts': _noise_bursts,
    'pluck_synth': _pluck_synth,
}


def make_test_input(kind: str, duration_s: float, seed: int = 0,
                    sample_rate_hz: int = DEFAULT_SAMPLE_RATE) -> AudioBuffer:
    """Seeded excitation of round(duration_s * fs) samples, peak-normalised to 0.5."""
    if kind not in _GENERATORS:
        raise ConfigError(f"unknown input kind '{kind}' (expected one of {', '.join(INPUT_KINDS)})")
    if duration_s <= 0:
        raise DomainValueError(f"duration_s must be positive, got {duration_s}")
    num_samples = int(round(duration_s * sample_rate_hz))
    rng = np.random.default_rng(seed)
    raw = _GENERATORS[kind](num_samples, sample_rate_hz, rng)
    peak = np.max(np.abs(raw)) if raw.size else 0.0
    if peak > 0:
        raw = raw * (PEAK_LEVEL / peak)
    return AudioBuffer(raw.astype(np.float32), sample_rate_hz)


# --------------------------------------------------------------------------
# 2. יצירת dataset (gen-data)
# --------------------------------------------------------------------------

def generate_dataset(out_dir: Union[str, Path], device: Optional[DeviceConfig] = None,
                     kind: str = 'pluck_synth', train_s: float = 60.0, test_s: float = 10.0,
                     seed: int = 0, sample_rate_hz: int = DEFAULT_SAMPLE_RATE) -> Dict[str, str]:
    """
    Writes train/{input,target}.wav and test/{input,target}.wav (float32)
    plus manifest.json recording the device and seeds. Returns the file map.
    """
    device = device or DeviceConfig()
    out_dir = Path(out_dir)
    splits = {'train': (train_s, seed), 'test': (test_s, seed + 1)}
    files: Dict[str, str] = {}

    for split, (duration, split_seed) in splits.items():
        split_dir = out_dir / split
        split_dir.mkdir(parents=True, exist_ok=True)
        x = make_test_input(kind, duration, split_seed, sample_rate_hz)
        y = process(device, x)
        write_wav(x, split_dir / 'input.wav', 'float32')
        write_wav(y, split_dir / 'target.wav', 'float32')
        files[f'{split}_input'] = str(split_dir / 'input.wav')
        files[f'{split}_target'] = str(split_dir / 'target.wav')
        logger.info(f"✅ {split}: {duration:g}s of {kind} (seed {split_seed})")

    manifest = {
        'device': device.to_dict(),
        'kind': kind,
        'sample_rate_hz': sample_rate_hz,
        'seeds': {split: s for split, (_, s) in splits.items()},
        'durations_s': {split: d for split, (d, _) in splits.items()},
        'files': files,
    }
    (out_dir / 'manifest.json').write_text(json.dumps(manifest, indent=2), encoding='utf-8')
    return files
