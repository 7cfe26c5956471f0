import numpy as np
import pytest

from managers.audio_io import AudioBuffer
from managers.errors import ConfigError, DomainValueError, FilterDesignError
from managers.preemph_filters import (
    FirFilter, ResponseGrid, a_weighting_db, a_weighting_grid, apply, design_fir_least_squares,
    design_residual, filter_for_label, fir_adjoint, fir_filter, magnitude_response,
    make_lowpassed_a_weighting, make_filter, normalize_label, response_table,
)


def test_fixed_coefficients():
    assert make_filter('none').coeffs.tolist() == [1.0]
    assert make_filter('hp').coeffs.tolist() == [1.0, -0.85]
    assert make_filter('FD').coeffs.tolist() == [1.0, 0.0, -0.85]
    assert make_filter(None).label == 'none'


def test_labels():
    assert normalize_label('AW') == 'aw'
    with pytest.raises(ConfigError):
        normalize_label('pink')
    with pytest.raises(ConfigError):
        make_filter('aw')
    with pytest.raises(DomainValueError):
        FirFilter(np.array([1.0, -0.9]), 'hp')


def test_coefficients_are_read_only():
    fir = make_filter('hp')
    with pytest.raises(ValueError):
        fir.coeffs[0] = 2.0


@pytest.mark.parametrize('label,freq,expected', [
    ('hp', 1.0, -16.48),
    ('hp', 22050.0, 5.34),
    ('fd', 11025.0, 5.34),
])
def test_magnitude_response_oracles(label, freq, expected):
    grid = magnitude_response(make_filter(label), [freq])
    assert grid.gains_db[0] == pytest.approx(expected, abs=0.01)


def test_none_is_flat():
    grid = response_table(make_filter('none'), points=50)
    assert len(grid) == 50
    assert np.allclose(grid.gains_db, 0.0)


def test_response_rejects_out_of_band():
    with pytest.raises(DomainValueError):
        magnitude_response(make_filter('hp'), [0.0, 1000.0])
    with pytest.raises(DomainValueError):
        magnitude_response(make_filter('hp'), [30000.0])


# --- A-weighting ---

def test_a_weighting_reference_point():
    assert isinstance(a_weighting_db(1000.0), float)
    assert a_weighting_db(1000.0) == pytest.approx(0.0, abs=0.01)


@pytest.mark.parametrize('freq,expected', [(100.0, -19.1), (10000.0, -2.5)])
def test_a_weighting_curve_values(freq, expected):
    assert a_weighting_db(freq) == pytest.approx(expected, abs=0.1)


def test_a_weighting_peak_region():
    freqs = np.geomspace(1.0, 20000.0, 5000)
    peak = freqs[np.argmax(a_weighting_db(freqs))]
    assert 2000.0 <= peak <= 4000.0


def test_a_weighting_rejects_non_positive():
    with pytest.raises(DomainValueError):
        a_weighting_db([0.0, 100.0])


def test_aw_filter_length():
    assert make_lowpassed_a_weighting(100).num_taps == 101
    assert make_lowpassed_a_weighting(31).num_taps == 32
    assert filter_for_label('aw').label == 'aw'


def test_aw_design_fidelity():
    """The 100-tap design, before the lowpass, tracks the analytic curve over 200 Hz - 16 kHz."""
    fir = design_fir_least_squares(a_weighting_grid(), 100)
    freqs = np.geomspace(200.0, 16000.0, 1000)
    deviation = magnitude_response(fir, freqs).gains_db - a_weighting_db(freqs)
    assert np.max(np.abs(deviation)) <= 2.0


def test_design_is_linear_phase():
    fir = design_fir_least_squares(a_weighting_grid(), 40)
    assert np.allclose(fir.coeffs, fir.coeffs[::-1])


@pytest.mark.parametrize('taps', [10, 31])
def test_design_residual_does_not_grow_with_taps(taps):
    target = a_weighting_grid()
    shorter = design_residual(design_fir_least_squares(target, taps), target)
    longer = design_residual(design_fir_least_squares(target, taps + 2), target)
    assert longer <= shorter + 1e-9


def test_design_on_degenerate_grid():
    tiny = ResponseGrid(np.array([100.0, 1000.0]), np.array([-19.1, 0.0]))
    with pytest.raises(FilterDesignError):
        design_fir_least_squares(tiny, 100)
    with pytest.raises(FilterDesignError):
        design_fir_least_squares(ResponseGrid(np.array([]), np.array([])), 8)


def test_response_grid_validation():
    with pytest.raises(DomainValueError):
        ResponseGrid(np.array([100.0, 50.0]), np.array([0.0, 0.0]))
    with pytest.raises(DomainValueError):
        ResponseGrid(np.array([100.0]), np.array([0.0, 1.0]))


# --- filtering ---

def test_apply_keeps_length_and_is_causal(rng):
    x = rng.standard_normal(256).astype(np.float32)
    out = apply(make_filter('fd'), AudioBuffer(x))
    assert len(out) == len(x)
    assert out.samples.dtype == np.float32
    assert out.samples[0] == x[0]
    assert out.samples[5] == pytest.approx(x[5] - 0.85 * x[3], abs=1e-5)


def test_apply_empty_signal():
    with pytest.raises(DomainValueError):
        apply(make_filter('hp'), AudioBuffer(np.zeros(0, dtype=np.float32)))


def test_adjoint_matches_transpose(rng):
    coeffs = make_lowpassed_a_weighting(20).coeffs
    x = rng.standard_normal(300)
    g = rng.standard_normal(300)
    lhs = np.dot(g, fir_filter(coeffs, x))
    rhs = np.dot(fir_adjoint(coeffs, g), x)
    assert lhs == pytest.approx(rhs, rel=1e-10)


def test_filter_runs_along_rows(rng):
    rows = rng.standard_normal((3, 50))
    coeffs = make_filter('hp').coeffs
    batched = fir_filter(coeffs, rows)
    assert np.allclose(batched[1], fir_filter(coeffs, rows[1]))


def test_fd_on_constant_input():
    out = apply(make_filter('fd'), AudioBuffer(np.ones(4)))
    assert np.allclose(out.samples, [1.0, 1.0, 0.15, 0.15])


def test_hp_response_rises_with_frequency():
    grid = magnitude_response(make_filter('hp'), np.linspace(1.0, 22050.0, 2000))
    assert np.all(np.diff(grid.gains_db) >= 0)


@pytest.mark.parametrize('label', ['none', 'hp', 'fd', 'aw'])
def test_apply_is_linear(label, rng):
    fir = filter_for_label(label, 30)
    x = rng.standard_normal(400)
    y = rng.standard_normal(400)
    a, b = 2.5, -0.75
    combined = apply(fir, AudioBuffer(a * x + b * y)).samples
    separate = a * apply(fir, AudioBuffer(x)).samples + b * apply(fir, AudioBuffer(y)).samples
    assert np.allclose(combined, separate, rtol=1e-6, atol=1e-9)


def test_flat_target_gives_flat_design():
    freqs = a_weighting_grid().freqs_hz
    fir = design_fir_least_squares(ResponseGrid(freqs, np.zeros(len(freqs))), 11)
    assert np.max(np.abs(magnitude_response(fir, freqs).gains_db)) < 1e-6


def test_lowpassed_a_weighting_response():
    gains = magnitude_response(make_lowpassed_a_weighting(100), [1000.0, 20000.0]).gains_db
    # 0 dB A-weighting times |1 + 0.85 e^-jw| at 1 kHz
    assert gains[0] == pytest.approx(5.31, abs=1.0)
    assert gains[1] - gains[0] <= -15.0
