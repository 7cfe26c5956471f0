import json

import numpy as np
import pytest

from managers.audio_io import AudioBuffer
from managers.errors import CheckpointDimensionError, CheckpointFormatError, CheckpointVersionError, DomainValueError
from managers.preemph_filters import LABELS, filter_for_label
from managers.rnn_model import (
    LstmState, ModelParams, forward_sample, forward_sequence, init_params, load_checkpoint, params_to_dict, run_cell,
    save_checkpoint,
)
from managers.training import backward, total_loss
from tests.conftest import zero_params


# --------------------------------------------------------------------------
# init / forward
# --------------------------------------------------------------------------

def test_init_shapes_and_biases():
    p = init_params(8, seed=5)
    assert p.dtype == np.float32
    assert p.w_x.shape == (32,)
    assert p.w_h.shape == (32, 8)
    assert p.fc_b.shape == ()
    assert np.all(p.b[8:16] == 1.0)
    assert float(p.fc_b) == 0.0
    bound = 1 / np.sqrt(8)
    assert np.all(np.abs(p.w_h) <= bound)
    assert p.num_parameters() == 32 + 256 + 32 + 8 + 1


def test_init_is_seeded():
    a, b, c = init_params(6, seed=1), init_params(6, seed=1), init_params(6, seed=2)
    assert np.array_equal(a.w_h, b.w_h)
    assert not np.array_equal(a.w_h, c.w_h)


def test_params_are_immutable():
    p = init_params(3)
    with pytest.raises(ValueError):
        p.w_h[0, 0] = 1.0


def test_split_run_matches_single_run(noise_buffer):
    params = init_params(5, seed=11)
    whole, final = forward_sequence(params, noise_buffer)

    head = noise_buffer.with_samples(noise_buffer.samples[:1234])
    tail = noise_buffer.with_samples(noise_buffer.samples[1234:])
    y1, state = forward_sequence(params, head)
    y2, state = forward_sequence(params, tail, state)

    assert np.array_equal(np.concatenate([y1.samples, y2.samples]), whole.samples)
    assert np.array_equal(state.h, final.h)
    assert np.array_equal(state.c, final.c)


def test_forward_sample_fold_matches_sequence(rng):
    params = init_params(3, seed=2)
    x = (0.4 * rng.standard_normal(50)).astype(np.float32)
    state = LstmState.zeros(3)
    folded = []
    for value in x:
        y, state = forward_sample(params, value, state)
        folded.append(y)
    seq, _ = forward_sequence(params, AudioBuffer(x))
    assert np.array_equal(np.array(folded, dtype=np.float32), seq.samples)


def test_hand_evaluated_cell():
    params = ModelParams(
        hidden_size=1, w_x=np.zeros(4), w_h=np.zeros((4, 1)), b=np.array([10.0, 10.0, 0.0, 10.0]),
        fc_w=np.array([1.0]), fc_b=np.array(0.0),
    )
    y, state = forward_sample(params, 0.0, LstmState.zeros(1, np.float64))
    assert y == pytest.approx(0.0, abs=1e-12)
    assert state.c[0] == pytest.approx(0.0, abs=1e-12)

    y, _ = forward_sample(params, 0.0, LstmState(np.zeros(1), np.ones(1)))
    assert y == pytest.approx(0.7614, abs=1e-3)


def test_hidden_state_and_gates_stay_bounded(rng):
    base = init_params(4, seed=9, dtype=np.float64)
    params = base.replace(**{k: 3.0 * v for k, v in base.arrays().items()})
    x = np.clip(2.0 * rng.standard_normal((300, 2)), -8.0, 8.0)
    _, _, _, cache = run_cell(params, x, np.zeros((2, 4)), np.zeros((2, 4)), keep_cache=True)
    assert np.all(np.abs(cache.h_all) < 1.0)
    i_f = cache.gates[:, :, :8]
    o = cache.gates[:, :, 12:]
    for gate in (i_f, o):
        assert np.all((gate > 0.0) & (gate < 1.0))


def test_residual_zero_network_is_identity(noise_buffer):
    y, _ = forward_sequence(zero_params(4, residual=True), noise_buffer)
    assert np.array_equal(y.samples, noise_buffer.samples)


def test_empty_input_keeps_state():
    params = init_params(2)
    state = LstmState(np.full(2, 0.1, dtype=np.float32), np.full(2, -0.2, dtype=np.float32))
    y, out = forward_sequence(params, AudioBuffer(np.zeros(0, dtype=np.float32)), state)
    assert len(y) == 0
    assert np.array_equal(out.h, state.h)


def test_state_size_mismatch():
    with pytest.raises(DomainValueError):
        forward_sequence(init_params(3), AudioBuffer(np.zeros(4, dtype=np.float32)), LstmState.zeros(4))


# --------------------------------------------------------------------------
# checkpoints
# --------------------------------------------------------------------------

def test_checkpoint_round_trip_is_bit_exact(tmp_path, noise_buffer):
    params = init_params(7, seed=9, residual=True)
    path = tmp_path / 'model.json'
    save_checkpoint(params, path)
    loaded = load_checkpoint(path)
    assert loaded.residual is True
    assert loaded.dtype == np.float32
    assert np.array_equal(forward_sequence(loaded, noise_buffer)[0].samples,
                          forward_sequence(params, noise_buffer)[0].samples)


def test_checkpoint_version_mismatch(tmp_path):
    doc = params_to_dict(init_params(2))
    doc['format_version'] = 2
    path = tmp_path / 'v2.json'
    path.write_text(json.dumps(doc))
    with pytest.raises(CheckpointVersionError):
        load_checkpoint(path)


def test_checkpoint_dimension_mismatch(tmp_path):
    doc = params_to_dict(init_params(2))
    doc['hidden_size'] = 3
    path = tmp_path / 'bad.json'
    path.write_text(json.dumps(doc))
    with pytest.raises(CheckpointDimensionError):
        load_checkpoint(path)


def test_checkpoint_malformed(tmp_path):
    path = tmp_path / 'broken.json'
    path.write_text('{"format_version": 1, ')
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(path)


# --------------------------------------------------------------------------
# gradients (float64, central differences)
# --------------------------------------------------------------------------

def _numeric_gradient(params, x, y, state, fir, step=1e-5):
    grads = {}
    for name, value in params.arrays().items():
        flat = value.reshape(-1).copy()
        g = np.zeros_like(flat)
        for k in range(flat.size):
            losses = []
            for sign in (1.0, -1.0):
                bumped = flat.copy()
                bumped[k] += sign * step
                p = params.replace(**{name: bumped.reshape(value.shape)})
                y_hat, _ = forward_sequence(p, AudioBuffer(x), state)
                losses.append(total_loss(y, y_hat.samples, fir).total)
            g[k] = (losses[0] - losses[1]) / (2 * step)
        grads[name] = g.reshape(value.shape)
    return grads


@pytest.mark.parametrize('residual', [False, True])
@pytest.mark.parametrize('label', LABELS)
def test_backward_matches_finite_differences(label, residual):
    rng = np.random.default_rng(42)
    params = init_params(4, seed=7, residual=residual, dtype=np.float64)
    x = 0.5 * rng.standard_normal(64)
    y = 0.5 * np.tanh(2 * x) + 0.05 * rng.standard_normal(64)
    state = LstmState(0.1 * rng.standard_normal(4), 0.1 * rng.standard_normal(4))
    fir = filter_for_label(label)

    loss, analytic = backward(params, x, y, state, fir)
    numeric = _numeric_gradient(params, x, y, state, fir)

    assert loss.total == pytest.approx(total_loss(y, forward_sequence(params, AudioBuffer(x), state)[0].samples,
                                                  fir).total, rel=1e-12)
    for name, num in numeric.items():
        ana = analytic.arrays()[name]
        scale = max(np.abs(ana).max(), np.abs(num).max(), 1e-8)
        assert np.abs(ana - num).max() / scale < 1e-4, name


def test_output_bias_gradient_closed_form():
    """One sample, no pre-emphasis: total = ESR + DC, each contributing -2(t - y)/t^2."""
    params = init_params(2, seed=1, dtype=np.float64)
    x, t = np.array([0.3]), np.array([0.7])
    y_hat = forward_sequence(params, AudioBuffer(x))[0].samples[0]
    _, grads = backward(params, x, t, None, filter_for_label('none'))
    assert float(grads.fc_b) == pytest.approx(2 * (-2 * (t[0] - y_hat) / t[0] ** 2), rel=1e-10)
