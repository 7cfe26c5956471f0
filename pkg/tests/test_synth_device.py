import json

import numpy as np
import pytest

from managers.audio_io import AudioBuffer, read_wav
from managers.errors import ConfigError, DomainValueError
from managers.synth_device import INPUT_KINDS, DeviceConfig, generate_dataset, make_test_input, process


def test_small_signal_is_linear():
    device = DeviceConfig(pre_gain=1.0, asymmetry_bias=0.0, tone_coeffs=(1.0,), output_gain=1.0)
    t = np.arange(2000) / 44100
    x = AudioBuffer(1e-3 * np.sin(2 * np.pi * 440 * t))
    y = process(device, x)
    assert np.max(np.abs(y.samples - x.samples)) < 1e-6


def test_bias_on_silence_gives_constant():
    device = DeviceConfig(pre_gain=2.0, asymmetry_bias=0.5, tone_coeffs=(0.6, 0.3, 0.1), output_gain=0.8)
    y = process(device, AudioBuffer(np.zeros(50, dtype=np.float32)))
    expected = np.tanh(0.5) * 1.0 * 0.8
    assert np.allclose(y.samples[2:], expected, atol=1e-6)


def test_output_is_bounded(rng):
    device = DeviceConfig()
    y = process(device, AudioBuffer((5 * rng.standard_normal(5000)).astype(np.float32)))
    assert np.max(np.abs(y.samples)) <= device.output_bound() + 1e-6


def test_process_is_time_invariant(rng):
    device = DeviceConfig()
    x = (0.3 * rng.standard_normal(400)).astype(np.float32)
    shifted = np.concatenate([np.zeros(50, dtype=np.float32), x])
    y = process(device, AudioBuffer(x)).samples
    y_shifted = process(DeviceConfig(asymmetry_bias=0.0), AudioBuffer(shifted)).samples
    y_ref = process(DeviceConfig(asymmetry_bias=0.0), AudioBuffer(x)).samples
    assert np.allclose(y_shifted[50:], y_ref, atol=1e-6)
    assert y.shape == x.shape


def test_device_config_validation():
    with pytest.raises(ConfigError):
        DeviceConfig(tone_coeffs=())
    with pytest.raises(ConfigError):
        DeviceConfig.from_mapping({'drive': 3.0})
    assert DeviceConfig.from_mapping({'pre_gain': 2.0}).pre_gain == 2.0
    assert DeviceConfig.from_mapping({'tone_coeffs': [1, 0.5]}).tone_coeffs == (1.0, 0.5)
    for values in ({'pre_gain': 'loud'}, {'tone_coeffs': ['a']}, {'tone_coeffs': 0.5}, {'output_gain': None}):
        with pytest.raises(ConfigError):
            DeviceConfig.from_mapping(values)


@pytest.mark.parametrize('kind', INPUT_KINDS)
def test_inputs_are_seeded_and_normalized(kind):
    a = make_test_input(kind, 0.5, seed=3)
    b = make_test_input(kind, 0.5, seed=3)
    assert len(a) == 22050
    assert a.samples.dtype == np.float32
    assert np.array_equal(a.samples, b.samples)
    assert np.max(np.abs(a.samples)) == pytest.approx(0.5, rel=1e-6)


def test_seed_changes_noise():
    a = make_test_input('noise_bursts', 0.5, seed=1)
    b = make_test_input('noise_bursts', 0.5, seed=2)
    assert not np.array_equal(a.samples, b.samples)


def test_input_errors():
    with pytest.raises(ConfigError):
        make_test_input('guitar', 1.0)
    with pytest.raises(DomainValueError):
        make_test_input('sweep', 0.0)


def test_generate_dataset(tmp_path):
    device = DeviceConfig(pre_gain=3.0)
    files = generate_dataset(tmp_path, device, kind='sweep', train_s=1.0, test_s=0.5, seed=4)
    assert set(files) == {'train_input', 'train_target', 'test_input', 'test_target'}

    train_x = read_wav(files['train_input'])
    train_y = read_wav(files['train_target'])
    assert len(train_x) == 44100
    assert len(read_wav(files['test_input'])) == 22050
    assert np.array_equal(train_y.samples, process(device, train_x).samples)

    manifest = json.loads((tmp_path / 'manifest.json').read_text())
    assert manifest['device']['pre_gain'] == 3.0
    assert manifest['seeds'] == {'train': 4, 'test': 5}
