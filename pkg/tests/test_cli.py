import csv
import json

import numpy as np
import pytest

from cli import run
from managers.audio_io import AudioBuffer, read_wav, write_wav

TINY_TRAIN = ['--hidden', '3', '--epochs', '1', '--copies', '1', '--segment-len', '800',
              '--warmup', '200', '--truncation', '256', '--batch-size', '4']


@pytest.fixture
def dataset(tmp_path):
    out = tmp_path / 'data'
    code = run(['gen-data', '--out', str(out), '--kind', 'noise_bursts', '--train-seconds', '1.0',
                '--test-seconds', '0.6', '--sample-rate', '8000', '--seed', '3'])
    assert code == 0
    return out


def test_no_arguments_is_usage_error(capsys):
    assert run([]) == 2
    assert 'usage' in capsys.readouterr().err


def test_unknown_flag_is_usage_error():
    assert run(['design-filter', '--colour', 'pink']) == 2


def test_design_filter_aw_has_101_coefficients(tmp_path):
    out = tmp_path / 'coeffs.json'
    response = tmp_path / 'response.csv'
    assert run(['design-filter', '--type', 'aw', '--taps', '100', '--out', str(out),
                '--response', str(response), '--points', '50']) == 0
    assert len(json.loads(out.read_text())) == 101
    rows = list(csv.reader(response.open()))
    assert rows[0] == ['freq_hz', 'gain_db']
    assert len(rows) == 51


def test_design_filter_to_stdout(capsys):
    assert run(['design-filter', '--type', 'hp']) == 0
    assert json.loads(capsys.readouterr().out) == [1.0, -0.85]


def test_gen_data_layout(dataset):
    assert (dataset / 'manifest.json').exists()
    train_x = read_wav(dataset / 'train' / 'input.wav')
    assert train_x.sample_rate_hz == 8000
    assert len(train_x) == 8000
    assert len(read_wav(dataset / 'test' / 'target.wav')) == 4800


def test_pipeline_end_to_end(tmp_path, dataset, capsys):
    runs = tmp_path / 'runs'
    assert run(['train', '--data', str(dataset), '--out-dir', str(runs), '--no-record'] + TINY_TRAIN) == 0
    checkpoint = runs / 'model_h3_none.json'
    assert checkpoint.exists()
    assert (runs / 'train_log_copy0.csv').exists()
    summary = json.loads((runs / 'summary_h3_none.json').read_text())
    assert summary['config']['segment_len'] == 800
    assert summary['config']['sample_rate_hz'] == 8000

    matrix = tmp_path / 'matrix.csv'
    assert run(['eval', '--data', str(dataset), '--model', f'none={checkpoint}',
                '--model', f'hp={checkpoint}', '--out', str(matrix), '--no-record']) == 0
    rows = list(csv.reader(matrix.open()))
    assert rows[0] == ['hidden_size', 'trained_preemph', 'loss_none', 'loss_hp', 'loss_fd', 'loss_aw']
    assert [r[1] for r in rows[1:]] == ['none', 'hp']
    assert all(float(v) >= 0 for r in rows[1:] for v in r[2:])

    spectrum = tmp_path / 'spectrum.csv'
    assert run(['spectrum', '--data', str(dataset), '--model', f'none={checkpoint}',
                '--fft-size', '1024', '--hop', '512', '--out', str(spectrum)]) == 0
    assert list(csv.reader(spectrum.open()))[0] == ['freq_hz', 'error_db']

    stimuli = tmp_path / 'stimuli'
    assert run(['stimuli', '--data', str(dataset), '--model', f'none={checkpoint}',
                '--clip', '0:0.25', '--out-dir', str(stimuli)]) == 0
    assert (stimuli / 'clip0_anchor.wav').exists()


def test_train_is_reproducible(tmp_path, dataset):
    for name in ('a', 'b'):
        assert run(['train', '--data', str(dataset), '--out-dir', str(tmp_path / name), '--seed', '7',
                    '--no-record'] + TINY_TRAIN) == 0
    first = (tmp_path / 'a' / 'model_h3_none.json').read_bytes()
    second = (tmp_path / 'b' / 'model_h3_none.json').read_bytes()
    assert first == second


def test_train_config_file_merges_under_flags(tmp_path, dataset):
    config = tmp_path / 'config.json'
    config.write_text(json.dumps({'epochs': 5, 'preemph': 'hp', 'learning_rate': 1e-3}))
    runs = tmp_path / 'runs'
    assert run(['train', '--data', str(dataset), '--out-dir', str(runs), '--config', str(config),
                '--no-record'] + TINY_TRAIN) == 0
    summary = json.loads((runs / 'summary_h3_hp.json').read_text())
    assert summary['config']['epochs'] == 1
    assert summary['config']['preemph'] == 'hp'
    assert summary['config']['learning_rate'] == 1e-3


def test_train_config_file_unknown_key(tmp_path, dataset):
    config = tmp_path / 'config.json'
    config.write_text(json.dumps({'epoch': 5}))
    assert run(['train', '--data', str(dataset), '--config', str(config)]) == 2


@pytest.mark.parametrize('values', [
    {'epochs': 'ten'},
    {'segment_len': 800.5},
    {'residual': 'false'},
    {'hidden_size': 'big'},
])
def test_train_config_file_bad_value_is_domain_error(tmp_path, dataset, capsys, values):
    config = tmp_path / 'config.json'
    config.write_text(json.dumps(values))
    assert run(['train', '--data', str(dataset), '--config', str(config), '--no-record']) == 1
    assert '❌' in capsys.readouterr().err


def test_gen_data_config_bad_value_is_domain_error(tmp_path):
    config = tmp_path / 'device.json'
    config.write_text(json.dumps({'pre_gain': 'loud'}))
    assert run(['gen-data', '--out', str(tmp_path / 'd'), '--config', str(config)]) == 1


def test_label_flags_ignore_case(capsys):
    assert run(['design-filter', '--type', 'HP']) == 0
    assert json.loads(capsys.readouterr().out) == [1.0, -0.85]


def test_eval_usage_and_domain_errors(tmp_path, dataset, capsys):
    assert run(['eval', '--model', f'none={tmp_path / "m.json"}']) == 2
    assert run(['eval', '--data', str(dataset), '--model', 'm.json']) == 2
    assert run(['eval', '--data', str(dataset), '--model', f'none={tmp_path / "missing.json"}']) == 1
    assert '❌' in capsys.readouterr().err


def test_anchor_command(tmp_path):
    src = tmp_path / 'in.wav'
    write_wav(AudioBuffer(np.array([0.0, 0.5, -0.5], dtype=np.float32)), src, 'float32')
    out = tmp_path / 'anchor.wav'
    assert run(['anchor', '--input', str(src), '--out', str(out), '--drive', '1.0']) == 0
    assert read_wav(out).samples[1] == pytest.approx(0.46211716, abs=1e-6)


def test_bench_command(capsys):
    assert run(['bench', '--hidden', '2', '--seconds', '0.02', '--repeats', '1']) == 0
    report = json.loads(capsys.readouterr().out)
    assert report['hidden_size'] == 2
    assert report['real_time_factor'] > 0
    assert report['reference_time_s'] is None
    assert report['threads'] == 1
