"""The acoustic event detection network.

    spectrogram columns -> recurrent(30) -> recurrent(20)
        -> last hidden state -> dense(16, ReLU) -> classifier

Float mode returns logits and softmax probabilities; Q15 mode runs the
integer engine and classifies by argmax over the raw accumulator logits.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import cells, quantizer
from ._kernels import backend as _kernel
from .cells import ShapeError
from .fixedpoint import ACC_CLIP, Q15_MAX, Q15_MIN, Q15_ONE, to_q15


@dataclass(frozen=True)
class ModelConfig:
    input_bins: int = 64
    recurrent_sizes: tuple[int, int] = (30, 20)
    dense_size: int = 16
    num_classes: int = 3
    cell_kind: str = "egru"
    activation: str | None = None

    def __post_init__(self):
        if self.cell_kind not in cells.CELL_KINDS:
            raise ValueError(f"unknown cell kind {self.cell_kind!r}")
        if self.activation is None:
            object.__setattr__(self, "activation", cells.DEFAULT_ACTIVATION[self.cell_kind])
        if self.activation not in cells.ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        object.__setattr__(self, "recurrent_sizes", tuple(int(s) for s in self.recurrent_sizes))
        if len(self.recurrent_sizes) != 2:
            raise ValueError("exactly two recurrent layers are supported")
        if self.num_classes < 2:
            raise ValueError("num_classes must be at least 2")
        if min(self.input_bins, self.dense_size, *self.recurrent_sizes) < 1:
            raise ValueError("layer sizes must be positive")

    def to_dict(self) -> dict:
        return {
            "input_bins": self.input_bins,
            "recurrent_sizes": list(self.recurrent_sizes),
            "dense_size": self.dense_size,
            "num_classes": self.num_classes,
            "cell_kind": self.cell_kind,
            "activation": self.activation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**{**d, "recurrent_sizes": tuple(d["recurrent_sizes"])})


COUGH_CONFIG = ModelConfig(num_classes=3)
DIGITS_CONFIG = ModelConfig(num_classes=10)
URBAN_CONFIG = ModelConfig(num_classes=10)


@dataclass
class ModelParams:
    layers: list
    dense_W: np.ndarray
    dense_b: np.ndarray
    cls_W: np.ndarray
    cls_b: np.ndarray

    def named_tensors(self) -> list[tuple[str, np.ndarray]]:
        """All tensors in serialization order."""
        out = []
        for i, layer in enumerate(self.layers, start=1):
            out.extend((f"layer{i}.{n}", a) for n, a in layer.tensors())
        out += [("dense.W", self.dense_W), ("dense.b", self.dense_b),
                ("classifier.W", self.cls_W), ("classifier.b", self.cls_b)]
        return out

    def arrays(self) -> list[np.ndarray]:
        return [a for _, a in self.named_tensors()]

    def with_arrays(self, arrays) -> "ModelParams":
        arrays = list(arrays)
        layers = []
        pos = 0
        for layer in self.layers:
            n = len(layer.tensors())
            layers.append(type(layer)(*arrays[pos:pos + n]))
            pos += n
        return ModelParams(layers, *arrays[pos:pos + 4])

    def map(self, fn) -> "ModelParams":
        return self.with_arrays(fn(a) for a in self.arrays())

    def copy(self) -> "ModelParams":
        return self.map(np.array)

    @property
    def deployed(self) -> bool:
        return all(a.dtype == np.uint8 for a in self.arrays())

    def deploy(self) -> "ModelParams":
        return self if self.deployed else self.map(quantizer.to_codes)

    def decode(self) -> "ModelParams":
        return self.map(quantizer.decode) if self.deployed else self


def param_count(config: ModelConfig) -> int:
    n_mats = {"egru": 2, "gru": 3, "rnn": 1}[config.cell_kind]
    total = 0
    n_in = config.input_bins
    for h in config.recurrent_sizes:
        total += n_mats * h * (h + n_in + 1)
        n_in = h
    total += config.dense_size * (n_in + 1)
    total += config.num_classes * (config.dense_size + 1)
    return total


def init_params(config: ModelConfig, rng: np.random.Generator, min_range: float = 0.0) -> ModelParams:
    """Uniform(-r, r) weights with r = sqrt(6 / (fan_in + fan_out)), zero biases.

    ``min_range`` floors r.  Quantized training needs it: below 0.25 every
    weight lands on the zero level and no gradient can flow.
    """
    layers = []
    n_in = config.input_bins
    for h in config.recurrent_sizes:
        layers.append(cells.init_layer(config.cell_kind, n_in, h, rng, min_range))
        n_in = h

    def dense(n_out, n_in):
        r = min(1.0, max(min_range, np.sqrt(6.0 / (n_in + n_out))))
        return rng.uniform(-r, r, size=(n_out, n_in)), np.zeros(n_out)

    dW, db = dense(config.dense_size, n_in)
    cW, cb = dense(config.num_classes, config.dense_size)
    return ModelParams(layers, dW, db, cW, cb)


def zero_params(config: ModelConfig) -> ModelParams:
    return init_params(config, np.random.default_rng(0)).map(np.zeros_like)


def check_params(params: ModelParams, config: ModelConfig) -> None:
    n_in = config.input_bins
    for layer, h in zip(params.layers, config.recurrent_sizes):
        if not isinstance(layer, cells.LAYER_TYPES[config.cell_kind]):
            raise ShapeError(f"layer type {type(layer).__name__} does not match {config.cell_kind}")
        layer.check()
        if layer.hidden_size != h or layer.input_size != n_in:
            raise ShapeError(
                f"layer expects {layer.input_size}->{layer.hidden_size}, config says {n_in}->{h}"
            )
        n_in = h
    if params.dense_W.shape != (config.dense_size, n_in) or params.dense_b.shape != (config.dense_size,):
        raise ShapeError(f"dense layer shape {params.dense_W.shape} does not match config")
    if params.cls_W.shape != (config.num_classes, config.dense_size) or params.cls_b.shape != (config.num_classes,):
        raise ShapeError(f"classifier shape {params.cls_W.shape} does not match config")


def _as_batch(spec, bins):
    spec = np.asarray(spec)
    single = spec.ndim == 2
    batch = spec[None] if single else spec
    if batch.ndim != 3 or batch.shape[1] != bins:
        raise ShapeError(f"expected spectrogram of shape ({bins}, T), got {spec.shape}")
    if batch.shape[2] < 1:
        raise ShapeError("spectrogram has no frames")
    return batch, single


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


# pre-activation bounds used when the float model mirrors the integer engine
Q15_PREACT_CLIP = ACC_CLIP / Q15_ONE
Q15_DENSE_RANGE = (Q15_MIN / Q15_ONE, Q15_MAX / Q15_ONE)


@dataclass
class FloatTrace:
    """Intermediate values of a batched float forward pass."""
    effective: ModelParams
    caches: list = field(default_factory=list)
    states: list = field(default_factory=list)
    h_last: np.ndarray | None = None
    dense_pre: np.ndarray | None = None
    dense_mask: np.ndarray | None = None
    dense_out: np.ndarray | None = None


def run_float(params: ModelParams, config: ModelConfig, batch: np.ndarray, *,
              quantize: bool = False, clip: bool = False, emulate_q15: bool = False,
              keep_cache: bool = False):
    """Batched float forward.  ``batch`` has shape (B, bins, T).

    ``clip`` applies the training-time (-1, 1] bound to every
    pre-activation.  ``emulate_q15`` instead mirrors the integer engine:
    recurrent pre-activations bounded by the accumulator clip and the dense
    pre-activation saturated to the Q15 range.
    Returns (logits, trace).
    """
    eff = params.decode()
    if quantize:
        eff = eff.map(quantizer.quantize)
    if emulate_q15:
        rec_clip, dense_range = Q15_PREACT_CLIP, Q15_DENSE_RANGE
    elif clip:
        rec_clip, dense_range = 1.0, (-1.0, 1.0)
    else:
        rec_clip, dense_range = None, None

    fwd = cells.FORWARD[config.cell_kind]
    trace = FloatTrace(eff)
    seq = np.transpose(np.asarray(batch, dtype=np.float64), (0, 2, 1))
    B, T, _ = seq.shape
    for layer in eff.layers:
        h = np.zeros((B, layer.hidden_size))
        outs = np.empty((B, T, layer.hidden_size))
        layer_caches = []
        for t in range(T):
            h, cache = fwd(layer, seq[:, t, :], h, rec_clip, config.activation)
            outs[:, t, :] = h
            if keep_cache:
                layer_caches.append(cache)
        trace.caches.append(layer_caches)
        trace.states.append(outs)
        seq = outs
    h_last = seq[:, -1, :]
    pre = h_last @ eff.dense_W.T + eff.dense_b
    mask = None
    if dense_range is not None:
        lo, hi = dense_range
        mask = (pre > lo) & (pre <= hi)
        pre = np.clip(pre, lo, hi)
    d = np.maximum(pre, 0.0)
    logits = d @ eff.cls_W.T + eff.cls_b
    trace.h_last, trace.dense_pre, trace.dense_mask, trace.dense_out = h_last, pre, mask, d
    return logits, trace


def forward_float(params: ModelParams, config: ModelConfig, spec, quantize_in_forward=False,
                  clip=False, emulate_q15=False, return_states=False):
    """Float forward on one spectrogram (bins x T) or a batch (B x bins x T).

    Returns ``(logits, probabilities)``, plus the per-layer hidden state
    sequences when ``return_states`` is set.
    """
    check_params(params, config)
    batch, single = _as_batch(spec, config.input_bins)
    logits, trace = run_float(params, config, batch, quantize=quantize_in_forward, clip=clip,
                              emulate_q15=emulate_q15)
    probs = softmax(logits)
    states = trace.states
    if single:
        logits, probs, states = logits[0], probs[0], [s[0] for s in states]
    if return_states:
        return logits, probs, states
    return logits, probs


def quantize_input(spec) -> np.ndarray:
    """Spectrogram in [0, 1) -> Q15 raw values (int16)."""
    return np.clip(to_q15(np.asarray(spec, dtype=np.float64)), 0, Q15_MAX).astype(np.int16)


def forward_q15_logits(params: ModelParams, config: ModelConfig, spec_q15, kernel=None,
                       return_states=False):
    """Integer forward.  Returns raw Acc32 logits (B x classes, or a vector)."""
    if config.cell_kind != "egru" or config.activation != "softsign":
        raise ValueError("the Q15 engine runs softsign eGRU models only")
    if not params.deployed:
        raise TypeError("forward_q15 needs deployed (septenary) parameters")
    check_params(params, config)
    k = kernel or _kernel
    batch, single = _as_batch(spec_q15, config.input_bins)
    if batch.dtype.kind not in "iu":
        raise TypeError("Q15 input must be integer; use quantize_input() first")
    seq = np.ascontiguousarray(np.transpose(batch, (0, 2, 1)), dtype=np.int16)
    states = []
    for layer in params.layers:
        seq = cells.egru_sequence_q15(layer, seq, kernel=k)
        states.append(seq)
    h_last = np.ascontiguousarray(seq[:, -1, :])
    B = h_last.shape[0]
    dense = np.empty((B, config.dense_size), dtype=np.int32)
    k.linear(h_last, np.ascontiguousarray(params.dense_W), cells.bias_q15(params.dense_b), dense)
    d = np.maximum(np.clip(dense, Q15_MIN, Q15_MAX), 0).astype(np.int16)
    logits = np.empty((B, config.num_classes), dtype=np.int32)
    k.linear(d, np.ascontiguousarray(params.cls_W), cells.bias_q15(params.cls_b), logits)
    logits = logits.astype(np.int64)
    if single:
        logits, states = logits[0], [s[0] for s in states]
    return (logits, states) if return_states else logits


def forward_q15(params: ModelParams, config: ModelConfig, spec_q15, kernel=None):
    """Predicted class index (or array of indices); ties go to the lowest index."""
    logits = forward_q15_logits(params, config, spec_q15, kernel=kernel)
    return int(np.argmax(logits)) if logits.ndim == 1 else np.argmax(logits, axis=1)


def with_config(config: ModelConfig, **changes) -> ModelConfig:
    return replace(config, **changes)
