"""
Loss pre-emphasis filters.

All variants are FIR filters given by their tap values:
    none : 1
    hp   : 1 - 0.85 z^-1           (first-order highpass)
    fd   : 1 - 0.85 z^-2           (folded differentiator)
    aw   : A-weighting FIR (least squares, linear phase) * (1 + 0.85 z^-1)
"""

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Optional, Union

import numpy as np
from scipy import signal as sp_signal

from managers.audio_io import DEFAULT_SAMPLE_RATE, AudioBuffer
from managers.errors import ConfigError, DomainValueError, FilterDesignError

logger = logging.getLogger(__name__)

LABELS = ('none', 'hp', 'fd', 'aw')
EMPHASIS_COEFF: float = 0.85
DEFAULT_AW_TAPS: int = 100
DESIGN_GRID_POINTS: int = 512
DESIGN_GRID_LOW_HZ: float = 20.0
MAGNITUDE_FLOOR: float = 1e-10  # -200 dB

_FIXED_COEFFS = {
    'none': (1.0,),
    'hp': (1.0, -EMPHASIS_COEFF),
    'fd': (1.0, 0.0, -EMPHASIS_COEFF),
}

ArrayLike = Union[np.ndarray, Iterable[float]]


def normalize_label(label: Optional[str]) -> str:
    """'HP', 'hp', None -> canonical lower-case label."""
    key = 'none' if label is None else str(label).strip().lower()
    if key not in LABELS:
        raise ConfigError(f"unknown pre-emphasis label '{label}' (expected one of {', '.join(LABELS)})")
    return key


@dataclass(frozen=True)
class FirFilter:
    coeffs: np.ndarray
    label: Optional[str] = None

    def __post_init__(self):
        coeffs = np.array(self.coeffs, dtype=np.float64).ravel()
        if coeffs.size == 0:
            raise DomainValueError("FIR filter needs at least one coefficient")
        if not np.all(np.isfinite(coeffs)):
            raise DomainValueError("FIR coefficients must be finite")
        label = None if self.label is None else normalize_label(self.label)
        if label in _FIXED_COEFFS and not np.array_equal(coeffs, _FIXED_COEFFS[label]):
            raise DomainValueError(f"label '{label}' requires coefficients {list(_FIXED_COEFFS[label])}")
        coeffs.setflags(write=False)
        object.__setattr__(self, 'coeffs', coeffs)
        object.__setattr__(self, 'label', label)

    @property
    def num_taps(self) -> int:
        return int(self.coeffs.size)


@dataclass(frozen=True)
class ResponseGrid:
    freqs_hz: np.ndarray
    gains_db: np.ndarray

    def __post_init__(self):
        freqs = np.asarray(self.freqs_hz, dtype=np.float64).ravel()
        gains = np.asarray(self.gains_db, dtype=np.float64).ravel()
        if freqs.shape != gains.shape:
            raise DomainValueError(f"ResponseGrid length mismatch: {freqs.size} freqs vs {gains.size} gains")
        if freqs.size and np.any(np.diff(freqs) <= 0):
            raise DomainValueError("ResponseGrid frequencies must be strictly ascending")
        object.__setattr__(self, 'freqs_hz', freqs)
        object.__setattr__(self, 'gains_db', gains)

    def __len__(self) -> int:
        return int(self.freqs_hz.size)


def _check_band(freqs_hz: np.ndarray, sample_rate_hz: int) -> None:
    nyquist = sample_rate_hz / 2.0
    if freqs_hz.size and (freqs_hz.min() <= 0 or freqs_hz.max() > nyquist):
        raise DomainValueError(f"frequencies must lie in (0, {nyquist:g}] Hz")


# --------------------------------------------------------------------------
# 1. מסננים קבועים
# --------------------------------------------------------------------------

def make_filter(label: Optional[str]) -> FirFilter:
    """Fixed-coefficient variants: none, hp, fd."""
    key = normalize_label(label)
    if key == 'aw':
        raise ConfigError("the 'aw' filter is designed, use make_lowpassed_a_weighting()")
    return FirFilter(np.array(_FIXED_COEFFS[key]), key)


def filter_for_label(label: Optional[str], num_taps: int = DEFAULT_AW_TAPS,
                     sample_rate_hz: int = DEFAULT_SAMPLE_RATE) -> FirFilter:
    """Any of the four variants by label; 'aw' is designed (and cached)."""
    key = normalize_label(label)
    if key == 'aw':
        return make_lowpassed_a_weighting(num_taps, sample_rate_hz)
    return make_filter(key)


# --------------------------------------------------------------------------
# 2. A-weighting (IEC 61672 analytic curve)
# --------------------------------------------------------------------------

def a_weighting_db(freq_hz: Union[float, ArrayLike]) -> Union[float, np.ndarray]:
    """A(f) in dB, 0 dB at 1 kHz."""
    f = np.asarray(freq_hz, dtype=np.float64)
    if np.any(f <= 0):
        raise DomainValueError("A-weighting is defined for positive frequencies only")
    f2 = f ** 2
    r_a = (12194.0 ** 2 * f2 ** 2) / (
        (f2 + 20.6 ** 2)
        * np.sqrt((f2 + 107.7 ** 2) * (f2 + 737.9 ** 2))
        * (f2 + 12194.0 ** 2)
    )
    gains = 20.0 * np.log10(r_a) + 2.00
    return float(gains) if gains.ndim == 0 else gains


def a_weighting_grid(sample_rate_hz: int = DEFAULT_SAMPLE_RATE,
                     points: int = DESIGN_GRID_POINTS,
                     low_hz: float = DESIGN_GRID_LOW_HZ) -> ResponseGrid:
    """Log-spaced A-weighting target from low_hz up to Nyquist."""
    freqs = np.geomspace(low_hz, sample_rate_hz / 2.0, points)
    return ResponseGrid(freqs, a_weighting_db(freqs))


# --------------------------------------------------------------------------
# 3. Least-squares FIR design
# --------------------------------------------------------------------------

def _amplitude_basis(omega: np.ndarray, num_taps: int) -> np.ndarray:
    """
    Columns map the unique half of a symmetric FIR onto its real amplitude
    A(w) = H(w) * exp(j w (N-1)/2).
    """
    delay = (num_taps - 1) / 2.0
    k = np.arange((num_taps + 1) // 2)
    basis = 2.0 * np.cos(np.outer(omega, delay - k))
    if num_taps % 2:
        basis[:, -1] = 1.0  # center tap
    return basis


def _mirror(half: np.ndarray, num_taps: int) -> np.ndarray:
    tail = half[::-1][1:] if num_taps % 2 else half[::-1]
    return np.concatenate([half, tail])


def design_fir_least_squares(target: ResponseGrid, num_taps: int,
                             sample_rate_hz: int = DEFAULT_SAMPLE_RATE) -> FirFilter:
    """
    Linear-phase FIR whose amplitude response minimizes the unweighted sum of
    squared errors against the linear-amplitude target on the grid.
    """
    if num_taps < 1:
        raise ConfigError(f"num_taps must be >= 1, got {num_taps}")
    _check_band(target.freqs_hz, sample_rate_hz)

    omega = 2.0 * np.pi * target.freqs_hz / sample_rate_hz
    desired = 10.0 ** (target.gains_db / 20.0)
    basis = _amplitude_basis(omega, num_taps)

    if len(target) == 0 or np.linalg.matrix_rank(basis) < basis.shape[1]:
        raise FilterDesignError(
            f"singular normal equations: {len(target)} grid points cannot determine "
            f"{basis.shape[1]} coefficients of a {num_taps}-tap design"
        )
    half, *_ = np.linalg.lstsq(basis, desired, rcond=None)
    return FirFilter(_mirror(half, num_taps))


def design_residual(fir: FirFilter, target: ResponseGrid,
                    sample_rate_hz: int = DEFAULT_SAMPLE_RATE) -> float:
    """Sum of squared linear-amplitude errors of a symmetric FIR on the grid."""
    omega = 2.0 * np.pi * target.freqs_hz / sample_rate_hz
    delay = (fir.num_taps - 1) / 2.0
    n = np.arange(fir.num_taps)
    amplitude = np.cos(np.outer(omega, delay - n)) @ fir.coeffs
    desired = 10.0 ** (target.gains_db / 20.0)
    return float(np.sum((amplitude - desired) ** 2))


@lru_cache(maxsize=8)
def make_lowpassed_a_weighting(num_taps: int = DEFAULT_AW_TAPS,
                               sample_rate_hz: int = DEFAULT_SAMPLE_RATE) -> FirFilter:
    """A-weighting FIR of num_taps taps followed by 1 + 0.85 z^-1 (num_taps + 1 taps)."""
    if num_taps < 2:
        raise ConfigError(f"A-weighting design needs num_taps >= 2, got {num_taps}")
    weighting = design_fir_least_squares(a_weighting_grid(sample_rate_hz), num_taps, sample_rate_hz)
    coeffs = np.convolve(weighting.coeffs, [1.0, EMPHASIS_COEFF])
    logger.debug(f"Designed {num_taps}-tap A-weighting FIR @ {sample_rate_hz} Hz")
    return FirFilter(coeffs, 'aw')


# --------------------------------------------------------------------------
# 4. הפעלה וניתוח
# --------------------------------------------------------------------------

def fir_filter(coeffs: np.ndarray, x: np.ndarray) -> np.ndarray:
    """y[n] = sum_k b[k] x[n-k] along the last axis, zero initial state, x dtype kept."""
    x = np.asarray(x)
    b = np.asarray(coeffs, dtype=x.dtype)
    return sp_signal.lfilter(b, np.ones(1, dtype=x.dtype), x, axis=-1)


def fir_adjoint(coeffs: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Transpose of fir_filter: d/dx of sum(g * fir_filter(b, x))."""
    g = np.asarray(g)
    return fir_filter(coeffs, g[..., ::-1])[..., ::-1]


def apply(fir: FirFilter, audio: AudioBuffer) -> AudioBuffer:
    """Filters the buffer; output length equals input length."""
    if len(audio) == 0:
        raise DomainValueError("cannot filter an empty signal")
    return audio.with_samples(fir_filter(fir.coeffs, audio.samples))


def magnitude_response(fir: FirFilter, freqs_hz: ArrayLike,
                       sample_rate_hz: int = DEFAULT_SAMPLE_RATE) -> ResponseGrid:
    """20 log10 |H(e^{j 2 pi f / fs})| on the given frequencies."""
    freqs = np.asarray(freqs_hz, dtype=np.float64).ravel()
    _check_band(freqs, sample_rate_hz)
    _, h = sp_signal.freqz(fir.coeffs, worN=freqs, fs=sample_rate_hz)
    gains = 20.0 * np.log10(np.maximum(np.abs(h), MAGNITUDE_FLOOR))
    return ResponseGrid(freqs, gains)


def response_table(fir: FirFilter, sample_rate_hz: int = DEFAULT_SAMPLE_RATE,
                   points: int = 1000, low_hz: float = DESIGN_GRID_LOW_HZ) -> ResponseGrid:
    """Log-grid response used for plotting and for the portal."""
    return magnitude_response(fir, np.geomspace(low_hz, sample_rate_hz / 2.0, points), sample_rate_hz)
