"""
Training: pre-emphasised ESR + DC loss, exact BPTT gradients, Adam, and the
segment / warmup / truncated-chunk schedule with multi-seed model selection.
"""

import csv
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Tuple, Union

import numpy as np

from managers.audio_io import DEFAULT_SAMPLE_RATE, AudioBuffer, SegmentSet
from managers.errors import (
    AlignmentError, ConfigError, DegenerateTargetError, SignalLengthError, coerce_config_values
)
from managers.preemph_filters import (
    DEFAULT_AW_TAPS, FirFilter, filter_for_label, fir_adjoint, fir_filter, normalize_label
)
from managers.rnn_model import (
    PARAM_FIELDS, LstmState, ModelParams, backward_through_time, forward_sequence, init_params, run_cell
)

logger = logging.getLogger(__name__)

ADAM_BETA1: float = 0.9
ADAM_BETA2: float = 0.999
ADAM_EPS: float = 1e-8
EPOCH_LOG_HEADER = ('epoch', 'esr', 'dc', 'total', 'seconds')


# --------------------------------------------------------------------------
# 1. טיפוסים
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class LossBreakdown:
    esr: float
    dc: float
    total: float

    @classmethod
    def from_terms(cls, esr: float, dc: float) -> 'LossBreakdown':
        esr, dc = float(esr), float(dc)
        return cls(esr=esr, dc=dc, total=esr + dc)

    @classmethod
    def mean(cls, items: List['LossBreakdown']) -> 'LossBreakdown':
        return cls.from_terms(np.mean([i.esr for i in items]), np.mean([i.dc for i in items]))


@dataclass(frozen=True)
class TrainingConfig:
    """Schedule hyperparameters; defaults follow the half-second / 1000 / 2048 / 750 / 5 recipe."""
    segment_len: int = 22050
    warmup_len: int = 1000
    truncation_len: int = 2048
    epochs: int = 750
    batch_size: int = 32
    learning_rate: float = 5e-4
    preemph: str = 'none'
    seed: int = 0
    copies: int = 5
    aw_taps: int = DEFAULT_AW_TAPS
    sample_rate_hz: int = DEFAULT_SAMPLE_RATE
    parallel_copies: bool = False

    def __post_init__(self):
        object.__setattr__(self, 'preemph', normalize_label(self.preemph))
        checks = {
            'segment_len': self.segment_len >= 1,
            'warmup_len': 0 <= self.warmup_len < self.segment_len,
            'truncation_len': self.truncation_len >= 1,
            'epochs': self.epochs >= 1,
            'batch_size': self.batch_size >= 1,
            'learning_rate': self.learning_rate > 0,
            'copies': self.copies >= 1,
            'aw_taps': self.aw_taps >= 2,
            'sample_rate_hz': self.sample_rate_hz > 0,
        }
        bad = [name for name, ok in checks.items() if not ok]
        if bad:
            raise ConfigError(
                "invalid training config: " + ', '.join(f"{name}={getattr(self, name)!r}" for name in bad)
            )

    @classmethod
    def from_mapping(cls, values: Mapping, base: Optional['TrainingConfig'] = None) -> 'TrainingConfig':
        """Overlay a mapping (e.g. a JSON config file) on base; unknown keys are rejected."""
        return replace(base or cls(), **coerce_config_values(cls, values, 'training'))

    def to_dict(self) -> dict:
        return asdict(self)

    def preemph_filter(self) -> FirFilter:
        return filter_for_label(self.preemph, self.aw_taps, self.sample_rate_hz)


@dataclass(frozen=True)
class GradientSet:
    """dLoss/dtheta, one array per ModelParams field."""
    w_x: np.ndarray
    w_h: np.ndarray
    b: np.ndarray
    fc_w: np.ndarray
    fc_b: np.ndarray

    @classmethod
    def from_dict(cls, arrays: Mapping[str, np.ndarray]) -> 'GradientSet':
        return cls(**{name: np.asarray(arrays[name]) for name in PARAM_FIELDS})

    def arrays(self) -> Dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_FIELDS}

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.arrays().values())


@dataclass(frozen=True)
class AdamState:
    step: int
    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]

    @classmethod
    def zeros_like(cls, params: ModelParams) -> 'AdamState':
        zeros = {k: np.zeros_like(a) for k, a in params.arrays().items()}
        return cls(0, zeros, {k: np.zeros_like(a) for k, a in params.arrays().items()})


@dataclass
class BatchStep:
    """Result of one truncated chunk over a batch."""
    esr: np.ndarray
    dc: np.ndarray
    valid: np.ndarray
    grads: Optional[GradientSet]
    final_state: LstmState

    def mean_loss(self) -> LossBreakdown:
        return LossBreakdown.from_terms(self.esr[self.valid].mean(), self.dc[self.valid].mean())


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    loss: LossBreakdown
    seconds: float


@dataclass
class MultiSeedResult:
    best_params: ModelParams
    scores: List[float]
    best_index: int
    seeds: List[int]
    histories: List[List[EpochRecord]] = field(default_factory=list)
    test_losses: List[LossBreakdown] = field(default_factory=list)


# --------------------------------------------------------------------------
# 2. פונקציות הפסד (ESR + DC)
# --------------------------------------------------------------------------

def _as_rows(y, y_hat) -> Tuple[np.ndarray, np.ndarray]:
    y = y.samples if isinstance(y, AudioBuffer) else y
    y_hat = y_hat.samples if isinstance(y_hat, AudioBuffer) else y_hat
    y = np.asarray(y)
    y_hat = np.asarray(y_hat)
    dtype = np.result_type(y, y_hat, np.float32)
    y = np.ascontiguousarray(np.atleast_2d(y), dtype=dtype)
    y_hat = np.ascontiguousarray(np.atleast_2d(y_hat), dtype=dtype)
    if y.shape != y_hat.shape or y.shape[-1] < 1:
        raise AlignmentError(f"target and prediction windows differ: {y.shape} vs {y_hat.shape}")
    return y, y_hat


def _loss_terms(y: np.ndarray, y_hat: np.ndarray, coeffs: np.ndarray, with_grad: bool = False):
    """
    Per-row ESR (pre-emphasised) and DC terms of (B, N) windows.
    Rows whose target carries no energy are flagged invalid and contribute nothing.
    """
    n = y.shape[-1]
    y_p = fir_filter(coeffs, y)
    err_p = y_p - fir_filter(coeffs, y_hat)
    energy_p = np.sum(y_p * y_p, axis=-1)
    power = np.sum(y * y, axis=-1) / n
    valid = (energy_p > 0) & (power > 0)
    safe_energy_p = np.where(valid, energy_p, 1)
    safe_power = np.where(valid, power, 1)

    esr = np.where(valid, np.sum(err_p * err_p, axis=-1) / safe_energy_p, 0)
    mean_err = np.sum(y - y_hat, axis=-1) / n
    dc = np.where(valid, mean_err * mean_err / safe_power, 0)
    if not with_grad:
        return esr, dc, valid, None

    d_yhat = fir_adjoint(coeffs, -2 * err_p / safe_energy_p[:, None])
    d_yhat = d_yhat + (-2 * mean_err / (n * safe_power))[:, None]
    d_yhat[~valid] = 0
    return esr, dc, valid, d_yhat


def esr_loss(y, y_hat, preemph: FirFilter) -> float:
    """Pre-emphasised error energy over pre-emphasised target energy."""
    y, y_hat = _as_rows(y, y_hat)
    esr, _, valid, _ = _loss_terms(y, y_hat, preemph.coeffs)
    if not valid.all():
        raise DegenerateTargetError("target window has zero energy after pre-emphasis")
    return float(esr[0])


def dc_loss(y, y_hat) -> float:
    """Squared mean difference over mean target power, on the raw signals."""
    y, y_hat = _as_rows(y, y_hat)
    n = y.shape[-1]
    power = np.sum(y * y, axis=-1) / n
    if not np.all(power > 0):
        raise DegenerateTargetError("target window has zero energy")
    mean_err = np.sum(y - y_hat, axis=-1) / n
    return float((mean_err * mean_err / power)[0])


def total_loss(y, y_hat, preemph: FirFilter) -> LossBreakdown:
    y, y_hat = _as_rows(y, y_hat)
    esr, dc, valid, _ = _loss_terms(y, y_hat, preemph.coeffs)
    if not valid.all():
        raise DegenerateTargetError("target window has zero energy after pre-emphasis")
    return LossBreakdown.from_terms(esr[0], dc[0])


# --------------------------------------------------------------------------
# 3. Backward
# --------------------------------------------------------------------------

def backward_batch(params: ModelParams, x: np.ndarray, y: np.ndarray,
                   state: LstmState, preemph: FirFilter) -> BatchStep:
    """
    Loss and parameter gradients of a (B, T) chunk from the given state.
    Gradients are averaged over the valid rows; the state is a truncation
    boundary and receives no gradient.
    """
    dtype = params.dtype
    x = np.asarray(x, dtype=dtype)
    y = np.asarray(y, dtype=dtype)
    if x.shape != y.shape:
        raise AlignmentError(f"input chunk {x.shape} and target chunk {y.shape} differ")

    y_hat, h, c, cache = run_cell(params, x.T, state.h, state.c, keep_cache=True)
    y_rows, y_hat_rows = _as_rows(y, y_hat.T)
    esr, dc, valid, d_yhat = _loss_terms(y_rows, y_hat_rows, preemph.coeffs, with_grad=True)

    grads = None
    n_valid = int(valid.sum())
    if n_valid:
        d_y = np.ascontiguousarray((d_yhat / n_valid).T, dtype=dtype)
        grads = GradientSet.from_dict(backward_through_time(params, cache, d_y))
    return BatchStep(esr=esr, dc=dc, valid=valid, grads=grads, final_state=LstmState(h, c))


def backward(params: ModelParams, x_window, y_window, state: Optional[LstmState],
             preemph: FirFilter) -> Tuple[LossBreakdown, GradientSet]:
    """Single-window loss and exact gradient w.r.t. every parameter."""
    x = x_window.samples if isinstance(x_window, AudioBuffer) else np.asarray(x_window)
    y = y_window.samples if isinstance(y_window, AudioBuffer) else np.asarray(y_window)
    if state is None:
        state = LstmState.zeros(params.hidden_size, params.dtype)
    h = np.atleast_2d(state.h)
    c = np.atleast_2d(state.c)
    step = backward_batch(params, x[None, :], y[None, :], LstmState(h, c), preemph)
    if not step.valid.all():
        raise DegenerateTargetError("target window has zero energy after pre-emphasis")
    return LossBreakdown.from_terms(step.esr[0], step.dc[0]), step.grads


# --------------------------------------------------------------------------
# 4. Adam
# --------------------------------------------------------------------------

def adam_step(params: ModelParams, grads: GradientSet, state: AdamState,
              learning_rate: float) -> Tuple[ModelParams, AdamState]:
    """Bias-corrected Adam update (beta1 0.9, beta2 0.999, eps 1e-8)."""
    step = state.step + 1
    correction1 = 1.0 - ADAM_BETA1 ** step
    correction2 = 1.0 - ADAM_BETA2 ** step
    new_arrays, new_m, new_v = {}, {}, {}

    for name, value in params.arrays().items():
        g = np.asarray(getattr(grads, name), dtype=value.dtype)
        if g.shape != value.shape:
            raise AlignmentError(f"gradient {name} has shape {g.shape}, parameter has {value.shape}")
        m = ADAM_BETA1 * state.m[name] + (1.0 - ADAM_BETA1) * g
        v = ADAM_BETA2 * state.v[name] + (1.0 - ADAM_BETA2) * g * g
        update = learning_rate * (m / correction1) / (np.sqrt(v / correction2) + ADAM_EPS)
        new_arrays[name] = (value - update).astype(value.dtype)
        new_m[name] = m.astype(value.dtype)
        new_v[name] = v.astype(value.dtype)

    return params.replace(**new_arrays), AdamState(step, new_m, new_v)


# --------------------------------------------------------------------------
# 5. לולאת אימון (TBPTT)
# --------------------------------------------------------------------------

def chunk_bounds(config: TrainingConfig) -> List[Tuple[int, int]]:
    """Truncation chunks after the warmup; the last may be shorter."""
    return [(start, min(start + config.truncation_len, config.segment_len))
            for start in range(config.warmup_len, config.segment_len, config.truncation_len)]


def train_epoch(params: ModelParams, opt_state: AdamState, inputs: SegmentSet, targets: SegmentSet,
                config: TrainingConfig, epoch: int = 0) -> Tuple[ModelParams, AdamState, LossBreakdown]:
    """
    One pass over shuffled segments. Per mini-batch: zero state, forward-only
    warmup, then one Adam update per truncation chunk with the state carried
    (detached) into the next chunk.
    """
    if len(inputs) != len(targets) or inputs.segment_len != targets.segment_len:
        raise AlignmentError(
            f"input segments ({len(inputs)} x {inputs.segment_len}) and target segments "
            f"({len(targets)} x {targets.segment_len}) are not aligned"
        )
    if inputs.segment_len != config.segment_len:
        raise AlignmentError(f"segments have {inputs.segment_len} samples, config expects {config.segment_len}")

    preemph = config.preemph_filter()
    dtype = params.dtype
    order = np.random.default_rng([config.seed, epoch]).permutation(len(inputs))
    bounds = chunk_bounds(config)
    chunk_losses: List[LossBreakdown] = []
    skipped = 0

    for start in range(0, len(order), config.batch_size):
        idx = order[start:start + config.batch_size]
        x = inputs.segments[idx].astype(dtype)
        y = targets.segments[idx].astype(dtype)
        h = np.zeros((len(idx), params.hidden_size), dtype=dtype)
        c = np.zeros_like(h)

        # חימום ללא גרדיאנטים
        if config.warmup_len:
            _, h, c, _ = run_cell(params, x[:, :config.warmup_len].T, h, c)

        for lo, hi in bounds:
            step = backward_batch(params, x[:, lo:hi], y[:, lo:hi], LstmState(h, c), preemph)
            skipped += int((~step.valid).sum())
            if step.grads is not None:
                params, opt_state = adam_step(params, step.grads, opt_state, config.learning_rate)
                chunk_losses.append(step.mean_loss())
            carried = step.final_state.detached()
            h, c = carried.h, carried.c

    if skipped:
        logger.warning(f"⚠️ Epoch {epoch}: skipped {skipped} silent target chunk(s)")
    if not chunk_losses:
        raise DegenerateTargetError("every training chunk has a silent target")
    return params, opt_state, LossBreakdown.mean(chunk_losses)


def _write_epoch_row(path: Path, record: EpochRecord) -> None:
    with open(path, 'a', newline='', encoding='utf-8') as f:
        csv.writer(f).writerow([record.epoch, f"{record.loss.esr:.9g}", f"{record.loss.dc:.9g}",
                                f"{record.loss.total:.9g}", f"{record.seconds:.3f}"])


def train_model(inputs: SegmentSet, targets: SegmentSet, config: TrainingConfig, hidden_size: int,
                residual: bool = False, seed: Optional[int] = None,
                epoch_log_path: Optional[Union[str, Path]] = None,
                on_epoch: Optional[Callable[[EpochRecord], None]] = None) -> Tuple[ModelParams, List[EpochRecord]]:
    """Trains one copy for config.epochs epochs; seed drives both init and shuffling."""
    seed = config.seed if seed is None else seed
    config = replace(config, seed=seed)
    params = init_params(hidden_size, seed, residual)
    opt_state = AdamState.zeros_like(params)
    history: List[EpochRecord] = []

    if epoch_log_path is not None:
        epoch_log_path = Path(epoch_log_path)
        with open(epoch_log_path, 'w', newline='', encoding='utf-8') as f:
            csv.writer(f).writerow(EPOCH_LOG_HEADER)

    logger.info(f"🚀 Training H={hidden_size} preemph={config.preemph} seed={seed} "
                f"({len(inputs)} segments, {config.epochs} epochs)")
    for epoch in range(1, config.epochs + 1):
        started = time.perf_counter()
        params, opt_state, loss = train_epoch(params, opt_state, inputs, targets, config, epoch)
        record = EpochRecord(epoch, loss, time.perf_counter() - started)
        history.append(record)
        if epoch_log_path is not None:
            _write_epoch_row(epoch_log_path, record)
        if on_epoch is not None:
            on_epoch(record)
        logger.info(f"🔄 [seed {seed}] epoch {epoch}/{config.epochs} "
                    f"ESR={loss.esr:.5f} DC={loss.dc:.5f} ({record.seconds:.1f}s)")
    return params, history


# --------------------------------------------------------------------------
# 6. Multi-seed selection
# --------------------------------------------------------------------------

def evaluate_test_loss(params: ModelParams, test_input: AudioBuffer, test_target: AudioBuffer,
                       preemph: FirFilter, warmup_len: int = 1000) -> LossBreakdown:
    """Full-signal loss from zero state, the first warmup_len outputs excluded."""
    if len(test_input) != len(test_target):
        raise AlignmentError(f"test input ({len(test_input)}) and target ({len(test_target)}) lengths differ")
    if len(test_input) <= warmup_len:
        raise SignalLengthError(f"test signal of {len(test_input)} samples is not longer than warmup {warmup_len}")
    y_hat, _ = forward_sequence(params, test_input)
    return total_loss(test_target.samples[warmup_len:], y_hat.samples[warmup_len:], preemph)


def _train_copy(job: tuple) -> Tuple[ModelParams, List[EpochRecord]]:
    inputs, targets, config, hidden_size, residual, seed, log_path = job
    return train_model(inputs, targets, config, hidden_size, residual, seed, log_path)


def train_multi_seed(inputs: SegmentSet, targets: SegmentSet, test_input: AudioBuffer, test_target: AudioBuffer,
                     config: TrainingConfig, hidden_size: int, residual: bool = False,
                     log_dir: Optional[Union[str, Path]] = None) -> MultiSeedResult:
    """
    Trains config.copies models with seeds seed .. seed+copies-1 and keeps the one
    with the lowest test loss under the training pre-emphasis.
    """
    seeds = [config.seed + k for k in range(config.copies)]
    jobs = []
    for k, seed in enumerate(seeds):
        log_path = Path(log_dir) / f"train_log_copy{k}.csv" if log_dir is not None else None
        jobs.append((inputs, targets, config, hidden_size, residual, seed, log_path))

    if config.parallel_copies and len(jobs) > 1:
        logger.info(f"🚀 Training {len(jobs)} copies in parallel")
        with ProcessPoolExecutor(max_workers=len(jobs)) as pool:
            trained = list(pool.map(_train_copy, jobs))
    else:
        trained = [_train_copy(job) for job in jobs]

    preemph = config.preemph_filter()
    losses = [evaluate_test_loss(params, test_input, test_target, preemph, config.warmup_len) for params, _ in trained]
    scores = [loss.total for loss in losses]
    best = int(np.argmin(scores))
    for seed, score in zip(seeds, scores):
        marker = '✅' if seed == seeds[best] else '  '
        logger.info(f"{marker} seed {seed}: test loss {score:.6f}")

    return MultiSeedResult(
        best_params=trained[best][0], scores=scores, best_index=best, seeds=seeds,
        histories=[history for _, history in trained], test_losses=losses,
    )
