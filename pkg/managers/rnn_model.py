"""
Sample-level recurrent model: one LSTM cell followed by a fully connected layer.

    y_hat[n] = fc_w . h[n] + fc_b (+ x[n] when residual)

Gate packing order inside w_x, w_h and b is (i, f, g, o); every array is
stored in the model's compute dtype (float32 for training and inference,
float64 for gradient checking).
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np
from scipy.special import expit

from managers.audio_io import AudioBuffer
from managers.errors import (
    CheckpointDimensionError, CheckpointFormatError, CheckpointVersionError, ConfigError, DomainValueError
)

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION: int = 1
GATE_ORDER = ('i', 'f', 'g', 'o')
PARAM_FIELDS = ('w_x', 'w_h', 'b', 'fc_w', 'fc_b')


def param_shapes(hidden_size: int) -> Dict[str, Tuple[int, ...]]:
    h = hidden_size
    return {'w_x': (4 * h,), 'w_h': (4 * h, h), 'b': (4 * h,), 'fc_w': (h,), 'fc_b': ()}


@dataclass(frozen=True)
class ModelParams:
    """Learnable parameters; w_x is the 4H x 1 input column stored flat."""
    hidden_size: int
    w_x: np.ndarray
    w_h: np.ndarray
    b: np.ndarray
    fc_w: np.ndarray
    fc_b: np.ndarray
    residual: bool = False

    def __post_init__(self):
        if self.hidden_size < 1:
            raise ConfigError(f"hidden_size must be >= 1, got {self.hidden_size}")
        dtype = np.asarray(self.w_h).dtype
        if not np.issubdtype(dtype, np.floating):
            dtype = np.dtype(np.float32)
        for name, shape in param_shapes(self.hidden_size).items():
            arr = np.array(getattr(self, name), dtype=dtype)
            if arr.shape != shape:
                raise DomainValueError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise DomainValueError(f"{name} contains non-finite values")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, 'residual', bool(self.residual))

    @property
    def dtype(self) -> np.dtype:
        return self.w_h.dtype

    def arrays(self) -> Dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_FIELDS}

    def replace(self, **arrays: np.ndarray) -> 'ModelParams':
        values = self.arrays()
        values.update(arrays)
        return ModelParams(self.hidden_size, residual=self.residual, **values)

    def astype(self, dtype) -> 'ModelParams':
        """Copy in another precision (float64 is used for gradient checking)."""
        return self.replace(**{k: v.astype(dtype) for k, v in self.arrays().items()})

    def num_parameters(self) -> int:
        return int(sum(v.size for v in self.arrays().values()))


@dataclass(frozen=True)
class LstmState:
    """Hidden and cell state, shape (H,) for one stream or (B, H) for a batch."""
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, hidden_size: int, dtype=np.float32, batch: Optional[int] = None) -> 'LstmState':
        shape = (hidden_size,) if batch is None else (batch, hidden_size)
        return cls(np.zeros(shape, dtype=dtype), np.zeros(shape, dtype=dtype))

    def detached(self) -> 'LstmState':
        """Copy that shares no buffers with the run that produced it."""
        return LstmState(self.h.copy(), self.c.copy())


@dataclass
class SequenceCache:
    """Activations kept by a forward pass for backpropagation."""
    x: np.ndarray           # (T, B)
    h_all: np.ndarray       # (T+1, B, H), h_all[0] is the initial state
    c_all: np.ndarray       # (T+1, B, H)
    gates: np.ndarray       # (T, B, 4H) activated i, f, g, o
    tanh_c: np.ndarray      # (T, B, H)


# --------------------------------------------------------------------------
# 1. אתחול
# --------------------------------------------------------------------------

def init_params(hidden_size: int, seed: int = 0, residual: bool = False,
                dtype=np.float32) -> ModelParams:
    """
    Uniform(-1/sqrt(H), 1/sqrt(H)) weights from a seeded generator,
    forget-gate bias 1.0, output bias 0.
    """
    if hidden_size < 1:
        raise ConfigError(f"hidden_size must be >= 1, got {hidden_size}")
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(hidden_size)
    shapes = param_shapes(hidden_size)

    w_x = rng.uniform(-bound, bound, shapes['w_x'])
    w_h = rng.uniform(-bound, bound, shapes['w_h'])
    b = rng.uniform(-bound, bound, shapes['b'])
    b[hidden_size:2 * hidden_size] = 1.0
    fc_w = rng.uniform(-bound, bound, shapes['fc_w'])

    return ModelParams(
        hidden_size=hidden_size,
        w_x=w_x.astype(dtype), w_h=w_h.astype(dtype), b=b.astype(dtype),
        fc_w=fc_w.astype(dtype), fc_b=np.zeros((), dtype=dtype),
        residual=residual,
    )


# --------------------------------------------------------------------------
# 2. Forward
# --------------------------------------------------------------------------

def run_cell(params: ModelParams, x: np.ndarray, h: np.ndarray, c: np.ndarray,
             keep_cache: bool = False) -> Tuple[np.ndarray, np.ndarray, np.ndarray, Optional[SequenceCache]]:
    """
    Batched recurrence over x of shape (T, B) from state (B, H).
    Returns (y_hat (T, B), h_T, c_T, cache). Every public forward path goes
    through this loop, so split and unsplit runs agree bit for bit.
    """
    hs = params.hidden_size
    dtype = params.dtype
    x = np.asarray(x, dtype=dtype)
    steps, batch = x.shape
    h = np.asarray(h, dtype=dtype)
    c = np.asarray(c, dtype=dtype)

    w_h_t = np.ascontiguousarray(params.w_h.T)
    pre_x = x[:, :, None] * params.w_x + params.b
    y = np.empty((steps, batch), dtype=dtype)

    if keep_cache:
        h_all = np.empty((steps + 1, batch, hs), dtype=dtype)
        c_all = np.empty((steps + 1, batch, hs), dtype=dtype)
        gates = np.empty((steps, batch, 4 * hs), dtype=dtype)
        tanh_c = np.empty((steps, batch, hs), dtype=dtype)
        h_all[0] = h
        c_all[0] = c

    for t in range(steps):
        z = pre_x[t] + h @ w_h_t
        i = expit(z[:, :hs])
        f = expit(z[:, hs:2 * hs])
        g = np.tanh(z[:, 2 * hs:3 * hs])
        o = expit(z[:, 3 * hs:])
        c = f * c + i * g
        tc = np.tanh(c)
        h = o * tc
        y[t] = h @ params.fc_w
        if keep_cache:
            gates[t, :, :hs] = i
            gates[t, :, hs:2 * hs] = f
            gates[t, :, 2 * hs:3 * hs] = g
            gates[t, :, 3 * hs:] = o
            tanh_c[t] = tc
            h_all[t + 1] = h
            c_all[t + 1] = c

    y += params.fc_b
    if params.residual:
        y += x

    cache = SequenceCache(x, h_all, c_all, gates, tanh_c) if keep_cache else None
    return y, h, c, cache


def _as_batch(state: LstmState, hidden_size: int) -> Tuple[np.ndarray, np.ndarray, bool]:
    h = np.asarray(state.h)
    single = h.ndim == 1
    if h.shape[-1] != hidden_size or np.asarray(state.c).shape != h.shape:
        raise DomainValueError(f"state shape {h.shape} does not match hidden_size {hidden_size}")
    if single:
        return h[None, :], np.asarray(state.c)[None, :], True
    return h, np.asarray(state.c), False


def forward_sample(params: ModelParams, x: float, state: LstmState) -> Tuple[float, LstmState]:
    """One step of y_hat[n] = f(x[n], s[n-1], theta)."""
    h, c, _ = _as_batch(state, params.hidden_size)
    if h.shape[0] != 1:
        raise DomainValueError("forward_sample takes a single-stream state")
    y, h_new, c_new, _ = run_cell(params, np.array([[x]]), h, c)
    return y[0, 0].item(), LstmState(h_new[0], c_new[0])


def forward_sequence(params: ModelParams, audio: AudioBuffer,
                     state: Optional[LstmState] = None) -> Tuple[AudioBuffer, LstmState]:
    """Folds forward_sample over the signal; returns outputs and final state."""
    if state is None:
        state = LstmState.zeros(params.hidden_size, params.dtype)
    h, c, _ = _as_batch(state, params.hidden_size)
    if len(audio) == 0:
        return audio.with_samples(np.zeros(0, dtype=params.dtype)), state
    y, h_new, c_new, _ = run_cell(params, audio.samples[:, None], h, c)
    return audio.with_samples(y[:, 0]), LstmState(h_new[0], c_new[0])


# --------------------------------------------------------------------------
# 3. Backpropagation through time
# --------------------------------------------------------------------------

def backward_through_time(params: ModelParams, cache: SequenceCache, d_y: np.ndarray) -> Dict[str, np.ndarray]:
    """
    Gradients of a loss w.r.t. every parameter given dLoss/dy_hat of shape (T, B).
    No gradient flows into the initial state (truncation boundary).
    """
    hs = params.hidden_size
    dtype = params.dtype
    d_y = np.asarray(d_y, dtype=dtype)
    steps, batch = d_y.shape

    gates = cache.gates
    d_z = np.empty_like(gates)
    dh_next = np.zeros((batch, hs), dtype=dtype)
    dc_next = np.zeros((batch, hs), dtype=dtype)
    fc_w = params.fc_w

    for t in range(steps - 1, -1, -1):
        i = gates[t, :, :hs]
        f = gates[t, :, hs:2 * hs]
        g = gates[t, :, 2 * hs:3 * hs]
        o = gates[t, :, 3 * hs:]
        tc = cache.tanh_c[t]

        dh = d_y[t][:, None] * fc_w + dh_next
        dc = dh * o * (1 - tc * tc) + dc_next
        d_z[t, :, :hs] = dc * g * i * (1 - i)
        d_z[t, :, hs:2 * hs] = dc * cache.c_all[t] * f * (1 - f)
        d_z[t, :, 2 * hs:3 * hs] = dc * i * (1 - g * g)
        d_z[t, :, 3 * hs:] = dh * tc * o * (1 - o)
        dc_next = dc * f
        dh_next = d_z[t] @ params.w_h

    flat_dz = d_z.reshape(steps * batch, 4 * hs)
    return {
        'w_x': flat_dz.T @ cache.x.reshape(-1),
        'w_h': flat_dz.T @ cache.h_all[:-1].reshape(steps * batch, hs),
        'b': flat_dz.sum(axis=0),
        'fc_w': cache.h_all[1:].reshape(steps * batch, hs).T @ d_y.reshape(-1),
        'fc_b': np.asarray(d_y.sum(), dtype=dtype),
    }


# --------------------------------------------------------------------------
# 4. Checkpoints (JSON, format_version 1)
# --------------------------------------------------------------------------

def params_to_dict(params: ModelParams) -> dict:
    return {
        'format_version': CHECKPOINT_VERSION,
        'hidden_size': params.hidden_size,
        'residual': params.residual,
        'dtype': params.dtype.name,
        'w_x': params.w_x.tolist(),
        'w_h': params.w_h.reshape(-1).tolist(),
        'b': params.b.tolist(),
        'fc_w': params.fc_w.tolist(),
        'fc_b': float(params.fc_b),
    }


def params_from_dict(doc: dict) -> ModelParams:
    if not isinstance(doc, dict):
        raise CheckpointFormatError("checkpoint root must be a JSON object")
    if 'format_version' not in doc:
        raise CheckpointVersionError("checkpoint has no format_version")
    if doc['format_version'] != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"unsupported checkpoint format_version {doc['format_version']!r} (expected {CHECKPOINT_VERSION})"
        )
    missing = [k for k in ('hidden_size', 'residual') + PARAM_FIELDS if k not in doc]
    if missing:
        raise CheckpointFormatError(f"checkpoint is missing fields: {', '.join(missing)}")

    hidden_size = doc['hidden_size']
    if not isinstance(hidden_size, int) or hidden_size < 1:
        raise CheckpointDimensionError(f"invalid hidden_size {hidden_size!r}")
    try:
        dtype = np.dtype(doc.get('dtype', 'float32'))
    except TypeError as e:
        raise CheckpointFormatError(f"invalid dtype {doc.get('dtype')!r}") from e

    arrays = {}
    for name, shape in param_shapes(hidden_size).items():
        try:
            values = np.asarray(doc[name], dtype=np.float64)
        except (TypeError, ValueError) as e:
            raise CheckpointFormatError(f"field {name} is not numeric") from e
        expected = int(np.prod(shape))
        if values.size != expected:
            raise CheckpointDimensionError(
                f"field {name} has {values.size} values, hidden_size {hidden_size} requires {expected}"
            )
        arrays[name] = values.reshape(shape).astype(dtype)
    return ModelParams(hidden_size, residual=bool(doc['residual']), **arrays)


def save_checkpoint(params: ModelParams, path: Union[str, Path]) -> None:
    Path(path).write_text(json.dumps(params_to_dict(params)), encoding='utf-8')
    logger.info(f"💾 Checkpoint saved: {path} (H={params.hidden_size}, {params.num_parameters()} params)")


def load_checkpoint(path: Union[str, Path]) -> ModelParams:
    try:
        doc = json.loads(Path(path).read_text(encoding='utf-8'))
    except json.JSONDecodeError as e:
        raise CheckpointFormatError(f"malformed checkpoint {path}: {e}") from e
    return params_from_dict(doc)
