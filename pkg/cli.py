"""
Command-line entry point.

    gen-data       synthetic device dataset (train/test input.wav + target.wav)
    design-filter  pre-emphasis coefficients (JSON) and response grid (CSV)
    train          multi-seed training of one (hidden, preemph) configuration
    eval           cross-filter loss matrix of trained models (CSV)
    spectrum       test-set error spectrum per model (CSV)
    anchor         tanh-clipped low anchor
    stimuli        listening-test clips (reference, anchor, model outputs)
    bench          inference timing
    serve          run/report portal

Exit codes: 0 success, 1 domain or I/O error, 2 usage error.
"""

import argparse
import csv
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from config import Config
from managers.audio_io import AudioBuffer, default_segment_len, read_wav, segment, write_wav
from managers.errors import AlignmentError, ConfigError, ToolchainError
from managers.evaluation import (
    DEFAULT_ANCHOR_DRIVE, DEFAULT_FFT_SIZE, DEFAULT_HOP, DEFAULT_WARMUP, MATRIX_HEADER,
    benchmark_inference, compare_spectra, cross_loss_matrix, error_spectrum, prepare_listening_stimuli,
    tanh_anchor, write_loss_matrix_csv, write_spectrum_csv,
)
from managers.preemph_filters import DEFAULT_AW_TAPS, LABELS, filter_for_label, normalize_label, response_table
from managers.rnn_model import forward_sequence, init_params, load_checkpoint, save_checkpoint
from managers.synth_device import INPUT_KINDS, DeviceConfig, generate_dataset
from managers.training import TrainingConfig, train_multi_seed

logger = logging.getLogger(__name__)

DEFAULT_HIDDEN: int = 32
TRAIN_EXTRA_KEYS = ('hidden_size', 'residual')


class UsageError(Exception):
    """Bad flag combination or config file content (exit code 2)."""


# --------------------------------------------------------------------------
# 1. עזרי פרסור
# --------------------------------------------------------------------------

def _model_spec(text: str) -> Tuple[str, Path]:
    label, sep, path = text.partition('=')
    if not sep or not path:
        raise argparse.ArgumentTypeError(f"expected LABEL=PATH, got '{text}'")
    try:
        return normalize_label(label), Path(path)
    except ToolchainError as e:
        raise argparse.ArgumentTypeError(str(e)) from e


def _clip_spec(text: str) -> Tuple[float, float]:
    start, sep, end = text.partition(':')
    try:
        return float(start), float(end)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected START:END in seconds, got '{text}'")


def _tone_spec(text: str) -> Tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(','))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated coefficients, got '{text}'")


def _load_json_config(path: Optional[Path], allowed: Sequence[str]) -> dict:
    """--config file contents; keys outside `allowed` are a usage error."""
    if path is None:
        return {}
    try:
        values = json.loads(Path(path).read_text(encoding='utf-8'))
    except json.JSONDecodeError as e:
        raise UsageError(f"config file {path} is not valid JSON: {e}") from e
    if not isinstance(values, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    unknown = sorted(set(values) - set(allowed))
    if unknown:
        raise UsageError(f"unknown keys in {path}: {', '.join(unknown)}")
    return values


def _explicit(args: argparse.Namespace, names: Sequence[str]) -> dict:
    """Flags the user actually passed (their argparse default is None)."""
    return {name: getattr(args, name) for name in names if getattr(args, name, None) is not None}


def _data_paths(args: argparse.Namespace, split: str) -> Tuple[Path, Path]:
    explicit_in = getattr(args, f'{split}_input', None)
    explicit_tgt = getattr(args, f'{split}_target', None)
    base = Path(args.data) / split if args.data else None
    if (explicit_in is None or explicit_tgt is None) and base is None:
        raise UsageError(f"give --data DIR or both --{split}-input and --{split}-target")
    return (Path(explicit_in) if explicit_in else base / 'input.wav',
            Path(explicit_tgt) if explicit_tgt else base / 'target.wav')


def _load_pair(input_path: Path, target_path: Path) -> Tuple[AudioBuffer, AudioBuffer]:
    x = read_wav(input_path)
    y = read_wav(target_path)
    if x.sample_rate_hz != y.sample_rate_hz:
        raise AlignmentError(f"{input_path} is {x.sample_rate_hz} Hz but {target_path} is {y.sample_rate_hz} Hz")
    if len(x) != len(y):
        raise AlignmentError(f"{input_path} has {len(x)} samples but {target_path} has {len(y)}")
    return x, y


def _load_models(specs: List[Tuple[str, Path]]) -> Dict[str, object]:
    models = {}
    for label, path in specs:
        if label in models:
            raise UsageError(f"label '{label}' given more than once")
        models[label] = load_checkpoint(path)
    return models


def _open_output(path: Optional[str]):
    if path is None or path == '-':
        return sys.stdout, False
    return open(path, 'w', newline='', encoding='utf-8'), True


def _record(callback) -> None:
    """Runs callback(RunManager) inside an app context when the registry is enabled."""
    if not Config.RECORD_RUNS:
        return
    try:
        from app import create_app
        from managers.run_manager import RunManager
        portal = create_app()
        with portal.app_context():
            callback(RunManager())
    except Exception as e:
        logger.warning(f"⚠️ Run registry unavailable: {e}")

# --------------------------------------------------------------------------
# 2. פקודות
# --------------------------------------------------------------------------

def cmd_gen_data(args: argparse.Namespace) -> int:
    names = [f.name for f in fields(DeviceConfig)]
    values = _load_json_config(args.config, names)
    values.update(_explicit(args, names))
    device = DeviceConfig.from_mapping(values)
    files = generate_dataset(args.out, device, args.kind, args.train_seconds, args.test_seconds,
                             args.seed, args.sample_rate)
    logger.info(f"✅ Dataset written to {args.out} ({len(files)} files)")
    return 0


def cmd_design_filter(args: argparse.Namespace) -> int:
    fir = filter_for_label(args.type, args.taps, args.sample_rate)
    stream, owned = _open_output(args.out)
    try:
        json.dump(fir.coeffs.tolist(), stream)
        stream.write('\n')
    finally:
        if owned:
            stream.close()

    if args.response:
        grid = response_table(fir, args.sample_rate, args.points)
        with open(args.response, 'w', newline='', encoding='utf-8') as f:
            writer = csv.writer(f)
            writer.writerow(('freq_hz', 'gain_db'))
            for freq, gain in zip(grid.freqs_hz, grid.gains_db):
                writer.writerow((f"{freq:.6g}", f"{gain:.6g}"))
    logger.info(f"✅ {fir.label} filter: {fir.num_taps} coefficients")
    return 0


def _training_config(args: argparse.Namespace, sample_rate_hz: int) -> Tuple[TrainingConfig, int, bool]:
    names = [f.name for f in fields(TrainingConfig) if f.name != 'sample_rate_hz']
    values = _load_json_config(args.config, list(names) + list(TRAIN_EXTRA_KEYS))
    values.update(_explicit(args, list(names) + list(TRAIN_EXTRA_KEYS)))
    hidden_size = values.pop('hidden_size', DEFAULT_HIDDEN)
    residual = values.pop('residual', False)
    if isinstance(hidden_size, bool) or not isinstance(hidden_size, int) or hidden_size < 1:
        raise ConfigError(f"hidden_size must be a positive integer, got {hidden_size!r}")
    if not isinstance(residual, bool):
        raise ConfigError(f"residual must be true or false, got {residual!r}")
    values.setdefault('segment_len', default_segment_len(sample_rate_hz))
    values['sample_rate_hz'] = sample_rate_hz
    return TrainingConfig.from_mapping(values), hidden_size, residual


def cmd_train(args: argparse.Namespace) -> int:
    train_x, train_y = _load_pair(*_data_paths(args, 'train'))
    test_x, test_y = _load_pair(*_data_paths(args, 'test'))
    if train_x.sample_rate_hz != test_x.sample_rate_hz:
        raise AlignmentError("train and test data use different sample rates")

    config, hidden_size, residual = _training_config(args, train_x.sample_rate_hz)
    inputs = segment(train_x, config.segment_len)
    targets = segment(train_y, config.segment_len)
    if inputs.dropped:
        logger.info(f"Dropped {inputs.dropped} trailing samples (partial segment)")

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    result = train_multi_seed(inputs, targets, test_x, test_y, config, hidden_size, residual, log_dir=out_dir)

    checkpoint = Path(args.out) if args.out else out_dir / f"model_h{hidden_size}_{config.preemph}.json"
    save_checkpoint(result.best_params, checkpoint)
    summary = {
        'config': config.to_dict(),
        'hidden_size': hidden_size,
        'residual': residual,
        'seeds': result.seeds,
        'test_losses': result.scores,
        'best_index': result.best_index,
        'checkpoint': str(checkpoint),
    }
    (out_dir / f"summary_h{hidden_size}_{config.preemph}.json").write_text(json.dumps(summary, indent=2),
                                                                              encoding='utf-8')
    if not args.no_record:
        _record(lambda manager: manager.record_training(result, config, hidden_size, residual, checkpoint))
    logger.info(f"✅ Best copy: seed {result.seeds[result.best_index]} "
                f"(test loss {result.scores[result.best_index]:.6f}) -> {checkpoint}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    test_in_path, test_tgt_path = _data_paths(args, 'test')
    test_x, test_y = _load_pair(test_in_path, test_tgt_path)
    models = _load_models(args.model)
    matrix = cross_loss_matrix(models, test_x, test_y, args.warmup, args.aw_taps)

    if args.out:
        write_loss_matrix_csv(matrix, args.out)
        logger.info(f"✅ Loss matrix written to {args.out}")
    else:
        writer = csv.writer(sys.stdout)
        writer.writerow(MATRIX_HEADER)
        writer.writerows(matrix.csv_rows())

    if not args.no_record:
        _record(lambda manager: manager.record_loss_matrix(matrix, str(test_in_path), str(test_tgt_path)))
    return 0


def cmd_spectrum(args: argparse.Namespace) -> int:
    test_x, test_y = _load_pair(*_data_paths(args, 'test'))
    models = _load_models(args.model)
    y = test_y.with_samples(test_y.samples[args.warmup:])
    spectra = {}

    out = Path(args.out)
    for label, params in models.items():
        y_hat, _ = forward_sequence(params, test_x)
        spectra[label] = error_spectrum(y, y_hat.with_samples(y_hat.samples[args.warmup:]), args.fft_size, args.hop)
        path = out if len(models) == 1 else out.with_name(f"{out.stem}_{label}{out.suffix or '.csv'}")
        write_spectrum_csv(spectra[label], path)
        logger.info(f"✅ {label}: spectrum written to {path}")

    if 'none' in spectra and len(spectra) > 1:
        for label, delta in compare_spectra(spectra, args.band_low, args.band_high).items():
            logger.info(f"📊 {label}: {delta:+.2f} dB vs none over {args.band_low:g}-{args.band_high:g} Hz")
    return 0


def cmd_anchor(args: argparse.Namespace) -> int:
    audio = read_wav(args.input)
    reference = read_wav(args.reference) if args.reference else None
    write_wav(tanh_anchor(audio, args.drive, reference), args.out, 'float32')
    logger.info(f"✅ Anchor (drive {args.drive:g}) written to {args.out}")
    return 0


def cmd_stimuli(args: argparse.Namespace) -> int:
    test_x, test_y = _load_pair(*_data_paths(args, 'test'))
    models = _load_models(args.model)
    outputs = {label: forward_sequence(params, test_x)[0] for label, params in models.items()}
    clips = args.clip or [(0.0, 3.0)]
    prepare_listening_stimuli(test_x, test_y, outputs, clips, args.out_dir, args.drive)
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    if args.model:
        params = load_checkpoint(args.model)
    else:
        params = init_params(args.hidden, args.seed)
    result = benchmark_inference(params, args.seconds, args.sample_rate, args.seed, args.repeats)
    print(json.dumps({
        'hidden_size': result.hidden_size,
        'seconds': result.seconds,
        'process_time_s': result.process_time_s,
        'real_time_factor': result.real_time_factor,
        'reference_time_s': result.reference_time_s,
        'threads': result.threads,
    }))
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    from app import create_app
    portal = create_app()
    logger.info(f"🚀 Portal listening on port {args.port}")
    portal.run(debug=Config.DEBUG, host=args.host, port=args.port, use_reloader=False)
    return 0

# --------------------------------------------------------------------------
# 3. Parser
# --------------------------------------------------------------------------

def _add_data_flags(parser: argparse.ArgumentParser, splits: Sequence[str]) -> None:
    parser.add_argument('--data', help='dataset directory written by gen-data')
    for split in splits:
        parser.add_argument(f'--{split}-input', help=f'{split} input WAV (default: DATA/{split}/input.wav)')
        parser.add_argument(f'--{split}-target', help=f'{split} target WAV (default: DATA/{split}/target.wav)')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='cli.py', description='Pre-emphasis filtered LSTM training toolchain')
    sub = parser.add_subparsers(dest='command', metavar='COMMAND')
    defaults = TrainingConfig()

    p = sub.add_parser('gen-data', help='generate a synthetic device dataset')
    p.add_argument('--out', default=str(Config.DATA_DIR / 'dataset'), help='output directory')
    p.add_argument('--kind', choices=INPUT_KINDS, default='pluck_synth')
    p.add_argument('--train-seconds', type=float, default=60.0)
    p.add_argument('--test-seconds', type=float, default=10.0)
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--sample-rate', type=int, default=Config.SAMPLE_RATE)
    p.add_argument('--pre-gain', dest='pre_gain', type=float, help='default 4.0')
    p.add_argument('--bias', dest='asymmetry_bias', type=float, help='default 0.1')
    p.add_argument('--tone', dest='tone_coeffs', type=_tone_spec, help='default 0.85,0.15')
    p.add_argument('--output-gain', dest='output_gain', type=float, help='default 0.9')
    p.add_argument('--config', type=Path, help='JSON file with DeviceConfig fields')
    p.set_defaults(handler=cmd_gen_data)

    p = sub.add_parser('design-filter', help='pre-emphasis filter coefficients')
    p.add_argument('--type', type=str.lower, choices=LABELS, default='aw')
    p.add_argument('--taps', type=int, default=DEFAULT_AW_TAPS, help='A-weighting FIR length before the lowpass')
    p.add_argument('--sample-rate', type=int, default=Config.SAMPLE_RATE)
    p.add_argument('--out', help='coefficients JSON (default: stdout)')
    p.add_argument('--response', help='also write the magnitude response CSV (freq_hz,gain_db)')
    p.add_argument('--points', type=int, default=1000, help='response grid size')
    p.set_defaults(handler=cmd_design_filter)

    p = sub.add_parser('train', help='train copies of one configuration and keep the best')
    _add_data_flags(p, ('train', 'test'))
    p.add_argument('--preemph', type=str.lower, choices=LABELS, help=f"default {defaults.preemph}")
    p.add_argument('--hidden', dest='hidden_size', type=int, help=f"default {DEFAULT_HIDDEN}")
    p.add_argument('--residual', action='store_const', const=True, default=None, help='add the input to the output')
    p.add_argument('--epochs', type=int, help=f"default {defaults.epochs}")
    p.add_argument('--copies', type=int, help=f"default {defaults.copies}")
    p.add_argument('--batch-size', dest='batch_size', type=int, help=f"default {defaults.batch_size}")
    p.add_argument('--lr', dest='learning_rate', type=float, help=f"default {defaults.learning_rate}")
    p.add_argument('--segment-len', dest='segment_len', type=int, help='default 0.5 s of samples')
    p.add_argument('--warmup', dest='warmup_len', type=int, help=f"default {defaults.warmup_len}")
    p.add_argument('--truncation', dest='truncation_len', type=int, help=f"default {defaults.truncation_len}")
    p.add_argument('--aw-taps', dest='aw_taps', type=int, help=f"default {defaults.aw_taps}")
    p.add_argument('--seed', type=int, help=f"default {defaults.seed}")
    p.add_argument('--parallel-copies', dest='parallel_copies', action='store_const', const=True, default=None,
                   help='train copies in worker processes')
    p.add_argument('--config', type=Path, help='JSON file with TrainingConfig fields (flags win)')
    p.add_argument('--out-dir', default=str(Config.DATA_DIR / 'runs'), help='logs and checkpoint directory')
    p.add_argument('--out', help='checkpoint path (default: OUT_DIR/model_h<H>_<preemph>.json)')
    p.add_argument('--no-record', action='store_true', help='do not write to the run registry')
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser('eval', help='cross-filter test loss matrix')
    _add_data_flags(p, ('test',))
    p.add_argument('--model', type=_model_spec, action='append', required=True, metavar='LABEL=PATH',
                   help='checkpoint trained with pre-emphasis LABEL (repeatable)')
    p.add_argument('--warmup', type=int, default=DEFAULT_WARMUP)
    p.add_argument('--aw-taps', type=int, default=DEFAULT_AW_TAPS)
    p.add_argument('--out', help='CSV path (default: stdout)')
    p.add_argument('--no-record', action='store_true', help='do not write to the run registry')
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser('spectrum', help='test-set error spectrum')
    _add_data_flags(p, ('test',))
    p.add_argument('--model', type=_model_spec, action='append', required=True, metavar='LABEL=PATH')
    p.add_argument('--fft-size', type=int, default=DEFAULT_FFT_SIZE)
    p.add_argument('--hop', type=int, default=DEFAULT_HOP)
    p.add_argument('--warmup', type=int, default=DEFAULT_WARMUP)
    p.add_argument('--band-low', type=float, default=1000.0)
    p.add_argument('--band-high', type=float, default=2000.0)
    p.add_argument('--out', default='spectrum.csv', help='CSV path; suffixed with the label for several models')
    p.set_defaults(handler=cmd_spectrum)

    p = sub.add_parser('anchor', help='tanh low anchor')
    p.add_argument('--input', required=True)
    p.add_argument('--out', required=True)
    p.add_argument('--drive', type=float, default=DEFAULT_ANCHOR_DRIVE)
    p.add_argument('--reference', help='peak-match the anchor to this WAV')
    p.set_defaults(handler=cmd_anchor)

    p = sub.add_parser('stimuli', help='listening-test clips')
    _add_data_flags(p, ('test',))
    p.add_argument('--model', type=_model_spec, action='append', required=True, metavar='LABEL=PATH')
    p.add_argument('--clip', type=_clip_spec, action='append', metavar='START:END', help='seconds (default 0:3)')
    p.add_argument('--drive', type=float, default=DEFAULT_ANCHOR_DRIVE)
    p.add_argument('--out-dir', default=str(Config.DATA_DIR / 'stimuli'))
    p.set_defaults(handler=cmd_stimuli)

    p = sub.add_parser('bench', help='inference timing')
    p.add_argument('--model', help='checkpoint (default: fresh model of --hidden)')
    p.add_argument('--hidden', type=int, default=DEFAULT_HIDDEN)
    p.add_argument('--seconds', type=float, default=1.0)
    p.add_argument('--repeats', type=int, default=3)
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--sample-rate', type=int, default=Config.SAMPLE_RATE)
    p.set_defaults(handler=cmd_bench)

    p = sub.add_parser('serve', help='run/report portal')
    p.add_argument('--host', default='0.0.0.0')
    p.add_argument('--port', type=int, default=Config.PORTAL_PORT)
    p.set_defaults(handler=cmd_serve)

    return parser

# --------------------------------------------------------------------------
# 4. Entry point
# --------------------------------------------------------------------------

def run(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=getattr(logging, Config.LOG_LEVEL, logging.INFO), format='%(message)s',
                        stream=sys.stderr)
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return 2

    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    if getattr(args, 'handler', None) is None:
        parser.print_usage(sys.stderr)
        return 2

    try:
        return args.handler(args)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog}: error: {e}", file=sys.stderr)
        return 2
    except (ToolchainError, OSError) as e:
        print(f"❌ {e}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == '__main__':
    main()
