"""
Audio I/O: mono WAV reading/writing and half-second segmentation.
Only the two sample formats the toolchain produces are handled:
PCM 16-bit (format code 1) and IEEE float 32-bit (format code 3).
"""

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

from managers.errors import (
    ConfigError, DomainValueError, EmptySegmentError, WavFormatError, WavIOError
)

logger = logging.getLogger(__name__)

DEFAULT_SAMPLE_RATE: int = 44100
PCM16_SCALE: float = 32768.0
WAVE_FORMAT_PCM: int = 1
WAVE_FORMAT_IEEE_FLOAT: int = 3

# format label -> (format code, bits per sample, numpy dtype on disk)
SAMPLE_FORMATS = {
    'pcm16': (WAVE_FORMAT_PCM, 16, np.dtype('<i2')),
    'float32': (WAVE_FORMAT_IEEE_FLOAT, 32, np.dtype('<f4')),
}

PathLike = Union[str, Path]


@dataclass(frozen=True)
class AudioBuffer:
    """Mono signal, full scale = ±1.0."""
    samples: np.ndarray
    sample_rate_hz: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples)
        if samples.ndim != 1:
            raise DomainValueError(f"AudioBuffer must be mono (1-D), got shape {samples.shape}")
        if not np.issubdtype(samples.dtype, np.floating):
            samples = samples.astype(np.float32)
        if not np.all(np.isfinite(samples)):
            raise DomainValueError("AudioBuffer samples must be finite (NaN/Inf found)")
        if int(self.sample_rate_hz) <= 0:
            raise DomainValueError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        object.__setattr__(self, 'samples', samples)
        object.__setattr__(self, 'sample_rate_hz', int(self.sample_rate_hz))

    def __len__(self) -> int:
        return int(self.samples.shape[0])

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate_hz

    def with_samples(self, samples: np.ndarray) -> 'AudioBuffer':
        """Same sample rate, new content."""
        return AudioBuffer(samples, self.sample_rate_hz)


@dataclass(frozen=True)
class SegmentSet:
    """Contiguous, non-overlapping equal-length windows, shape (count, segment_len)."""
    segments: np.ndarray
    segment_len: int
    dropped: int = field(default=0)

    def __len__(self) -> int:
        return int(self.segments.shape[0])


def default_segment_len(sample_rate_hz: int) -> int:
    """Half-second segment length in samples (22050 at 44.1 kHz)."""
    return int(round(0.5 * sample_rate_hz))


# --------------------------------------------------------------------------
# 1. קריאה (RIFF/WAVE parsing)
# --------------------------------------------------------------------------

def _iter_chunks(raw: bytes, path: PathLike):
    """Yields (chunk_id, payload) after the 12-byte RIFF header."""
    pos = 12
    while pos + 8 <= len(raw):
        chunk_id, size = struct.unpack_from('<4sI', raw, pos)
        start = pos + 8
        end = start + size
        if end > len(raw):
            raise WavIOError(f"truncated WAV file {path}: chunk {chunk_id!r} needs {size} bytes, "
                             f"{len(raw) - start} available")
        yield chunk_id, raw[start:end]
        # RIFF chunks are word aligned
        pos = end + (size & 1)


def read_wav(path: PathLike) -> AudioBuffer:
    """
    Reads a mono PCM16 / float32 WAV file.
    PCM is scaled by 1/32768, float samples pass through unchanged.
    """
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise WavIOError(f"cannot read {path}: {e}") from e

    if len(raw) < 12:
        raise WavIOError(f"truncated WAV file {path}: {len(raw)} bytes")
    riff, _, wave = struct.unpack_from('<4sI4s', raw, 0)
    if riff != b'RIFF' or wave != b'WAVE':
        raise WavFormatError('container', f"{path} is not a RIFF/WAVE file")

    fmt = None
    data = None
    for chunk_id, payload in _iter_chunks(raw, path):
        if chunk_id == b'fmt ':
            if len(payload) < 16:
                raise WavIOError(f"truncated fmt chunk in {path}")
            fmt = struct.unpack_from('<HHIIHH', payload, 0)
        elif chunk_id == b'data':
            data = payload
            break

    if fmt is None:
        raise WavFormatError('header', f"{path} has no 'fmt ' chunk")
    if data is None:
        raise WavIOError(f"truncated WAV file {path}: no data chunk")

    format_code, channels, sample_rate, _, _, bits = fmt
    if channels != 1:
        raise WavFormatError('channel count', f"{channels} (mono only)")
    if format_code == WAVE_FORMAT_PCM:
        if bits != 16:
            raise WavFormatError('bit depth', f"{bits}-bit PCM (16-bit only)")
        dtype = SAMPLE_FORMATS['pcm16'][2]
    elif format_code == WAVE_FORMAT_IEEE_FLOAT:
        if bits != 32:
            raise WavFormatError('bit depth', f"{bits}-bit float (32-bit only)")
        dtype = SAMPLE_FORMATS['float32'][2]
    else:
        raise WavFormatError('compression', f"format code {format_code}")

    if len(data) % dtype.itemsize:
        raise WavIOError(f"truncated WAV file {path}: partial sample frame")

    frames = np.frombuffer(data, dtype=dtype)
    if format_code == WAVE_FORMAT_PCM:
        samples = frames.astype(np.float32) / np.float32(PCM16_SCALE)
    else:
        samples = frames.astype(np.float32)

    logger.debug(f"Read {path}: {len(samples)} samples @ {sample_rate} Hz")
    return AudioBuffer(samples, sample_rate)


# --------------------------------------------------------------------------
# 2. כתיבה (canonical 44-byte header)
# --------------------------------------------------------------------------

def encode_frames(samples: np.ndarray, sample_format: str) -> bytes:
    """Sample bytes of the data chunk for the given format."""
    if sample_format == 'pcm16':
        clipped = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0 - 1.0 / PCM16_SCALE)
        return np.rint(clipped * PCM16_SCALE).astype('<i2').tobytes()
    return np.asarray(samples, dtype='<f4').tobytes()


def write_wav(buffer: AudioBuffer, path: PathLike, sample_format: str = 'pcm16') -> None:
    """Writes a mono WAV file with a 44-byte canonical header."""
    if sample_format not in SAMPLE_FORMATS:
        raise ConfigError(f"unknown sample format '{sample_format}' (pcm16 | float32)")

    format_code, bits, _ = SAMPLE_FORMATS[sample_format]
    payload = encode_frames(buffer.samples, sample_format)
    block_align = bits // 8
    header = struct.pack(
        '<4sI4s4sIHHIIHH4sI',
        b'RIFF', 36 + len(payload), b'WAVE',
        b'fmt ', 16, format_code, 1, buffer.sample_rate_hz,
        buffer.sample_rate_hz * block_align, block_align, bits,
        b'data', len(payload),
    )
    try:
        Path(path).write_bytes(header + payload)
    except OSError as e:
        raise WavIOError(f"cannot write {path}: {e}") from e
    logger.debug(f"Wrote {path} ({sample_format}, {len(buffer)} samples)")


# --------------------------------------------------------------------------
# 3. סגמנטציה
# --------------------------------------------------------------------------

def segment(buffer: AudioBuffer, segment_len: int) -> SegmentSet:
    """
    Splits the buffer into floor(len / segment_len) windows in original order.
    The partial remainder is dropped, never padded.
    """
    if segment_len < 1:
        raise ConfigError(f"segment_len must be >= 1, got {segment_len}")
    count = len(buffer) // segment_len
    if count == 0:
        raise EmptySegmentError(
            f"buffer of {len(buffer)} samples is shorter than one segment "
            f"(requires at least {segment_len} samples)"
        )
    usable = count * segment_len
    segments = buffer.samples[:usable].reshape(count, segment_len)
    return SegmentSet(segments=segments, segment_len=segment_len, dropped=len(buffer) - usable)
