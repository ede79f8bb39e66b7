"""Quantization-aware training.

Full backpropagation through time over the fixed network.  With
``quantize_mode`` the forward pass sees septenary weights while gradients
land on the stored full-precision weights (straight-through).  With
``clip_mode`` every pre-activation is clipped to (-1, 1] and the gradient
is zeroed where the clip was active.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import cells
from .network import ModelConfig, ModelParams, check_params, init_params, run_float, softmax

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 128
    max_epochs: int = 200
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_mode: bool = False
    quantize_mode: bool = False
    seed: int = 0
    weight_clip: float = 1.0
    patience: int | None = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")

    def to_dict(self):
        return asdict(self)


QUANT_INIT_RANGE = 0.5


class TrainingError(RuntimeError):
    pass


# --- splits ---------------------------------------------------------------

@dataclass
class Partition:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray


@dataclass
class SplitPlan:
    scheme: str
    folds: list[Partition]
    assignment: np.ndarray  # kfold: test fold per example; holdout: 0 train, 1 val, 2 test


def _labels_of(data) -> np.ndarray:
    return np.asarray(getattr(data, "labels", data), dtype=np.int64)


def _carve(indices: np.ndarray, labels: np.ndarray, frac: float, rng) -> tuple[np.ndarray, np.ndarray]:
    """Stratified split of ``indices`` into (rest, carved) with ~frac carved per class."""
    carved = []
    for c in np.unique(labels[indices]):
        idx = rng.permutation(indices[labels[indices] == c])
        n = int(round(frac * idx.size))
        if idx.size > 1:
            n = min(max(n, 1), idx.size - 1)
        else:
            n = 0
        carved.extend(idx[:n].tolist())
    carved = np.array(sorted(carved), dtype=np.int64)
    rest = np.setdiff1d(indices, carved)
    return rest, carved


def kfold_split(data, k: int = 10, seed: int = 0, val_frac: float = 0.25) -> SplitPlan:
    """Stratified k-fold plan.  Each fold's validation set is carved from its training folds."""
    labels = _labels_of(data)
    n = labels.size
    if k < 2:
        raise ValueError("k must be at least 2")
    if k > n:
        raise ValueError(f"k={k} exceeds dataset size {n}")
    rng = np.random.default_rng(seed)
    fold_of = np.empty(n, dtype=np.int64)
    counter = 0
    for c in np.unique(labels):
        for i in rng.permutation(np.flatnonzero(labels == c)):
            fold_of[i] = counter % k
            counter += 1
    folds = []
    for f in range(k):
        test = np.flatnonzero(fold_of == f)
        train, val = _carve(np.flatnonzero(fold_of != f), labels, val_frac, rng)
        folds.append(Partition(train, val, test))
    return SplitPlan("kfold", folds, fold_of)


def holdout_split(data, seed: int = 0, test_frac: float = 0.3, val_frac: float = 0.25) -> SplitPlan:
    """Stratified 70/30 train/test split with 25% of train held out for validation."""
    labels = _labels_of(data)
    if labels.size < 3:
        raise ValueError("holdout split needs at least 3 examples")
    rng = np.random.default_rng(seed)
    rest, test = _carve(np.arange(labels.size), labels, test_frac, rng)
    train, val = _carve(rest, labels, val_frac, rng)
    role = np.zeros(labels.size, dtype=np.int64)
    role[val] = 1
    role[test] = 2
    return SplitPlan("holdout", [Partition(train, val, test)], role)


# --- gradients ------------------------------------------------------------

def backward(params: ModelParams, config: ModelConfig, X, y, quantize=False, clip=False):
    """Mean cross-entropy loss and its gradient for every parameter array.

    ``X`` is (B, bins, T), ``y`` integer labels.  Gradients are returned in
    ``params.arrays()`` order.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if np.any(y < 0) or np.any(y >= config.num_classes):
        raise ValueError(f"labels must lie in [0, {config.num_classes})")
    logits, tr = run_float(params, config, X, quantize=quantize, clip=clip, keep_cache=True)
    B = X.shape[0]
    probs = softmax(logits)
    loss = float(-np.mean(np.log(np.maximum(probs[np.arange(B), y], 1e-300))))
    if not math.isfinite(loss):
        raise TrainingError(f"non-finite loss {loss} (max |logit| {np.abs(logits).max():.3g})")

    eff = tr.effective
    dlogits = probs.copy()
    dlogits[np.arange(B), y] -= 1.0
    dlogits /= B
    g_clsW = dlogits.T @ tr.dense_out
    g_clsb = dlogits.sum(axis=0)
    dpre = (dlogits @ eff.cls_W) * (tr.dense_pre > 0)
    if tr.dense_mask is not None:
        dpre = dpre * tr.dense_mask
    g_dW = dpre.T @ tr.h_last
    g_db = dpre.sum(axis=0)

    bwd = cells.BACKWARD[config.cell_kind]
    T = X.shape[2]
    d_out = np.zeros((B, T, eff.layers[-1].hidden_size))
    d_out[:, -1, :] = dpre @ eff.dense_W
    layer_grads = [None] * len(eff.layers)
    for li in range(len(eff.layers) - 1, -1, -1):
        layer = eff.layers[li]
        grads = {name: np.zeros_like(a) for name, a in layer.tensors()}
        caches = tr.caches[li]
        dh = np.zeros((B, layer.hidden_size))
        d_in = np.zeros((B, T, layer.input_size))
        for t in range(T - 1, -1, -1):
            dh, dx = bwd(layer, caches[t], dh + d_out[:, t, :], grads)
            d_in[:, t, :] = dx
        layer_grads[li] = [grads[name] for name, _ in layer.tensors()]
        d_out = d_in
    flat = [g for lg in layer_grads for g in lg] + [g_dW, g_db, g_clsW, g_clsb]
    return flat, loss


def loss_only(params, config, X, y, quantize=False, clip=False) -> float:
    logits, _ = run_float(params, config, np.asarray(X, dtype=np.float64), quantize=quantize, clip=clip)
    probs = softmax(logits)
    y = np.asarray(y)
    return float(-np.mean(np.log(np.maximum(probs[np.arange(len(y)), y], 1e-300))))


# --- optimizer ------------------------------------------------------------

@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0

    @classmethod
    def zeros_like(cls, params: ModelParams) -> "AdamState":
        arrays = params.arrays()
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays])


def adam_update(params: ModelParams, grads, state: AdamState, config: TrainConfig) -> ModelParams:
    """One ADAM step with bias correction, then weights clipped to [-c, c]."""
    state.step += 1
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    out = []
    for i, (p, g) in enumerate(zip(params.arrays(), grads)):
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g
        p = p - config.learning_rate * (state.m[i] / c1) / (np.sqrt(state.v[i] / c2) + config.eps)
        if config.weight_clip is not None:
            p = np.clip(p, -config.weight_clip, config.weight_clip)
        out.append(p)
    return params.with_arrays(out)


# --- training loop --------------------------------------------------------

@dataclass
class Checkpoint:
    params: ModelParams
    epoch: int
    val_loss: float
    val_acc: float


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list[dict] = field(default_factory=list)
    final_params: ModelParams | None = None


def predict_float(params, config, X, quantize=False, clip=False, chunk=512) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    out = []
    for s in range(0, X.shape[0], chunk):
        logits, _ = run_float(params, config, X[s:s + chunk], quantize=quantize, clip=clip)
        out.append(np.argmax(logits, axis=1))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def _xy(dataset):
    if hasattr(dataset, "features"):
        return np.asarray(dataset.features(), dtype=np.float64), np.asarray(dataset.labels, dtype=np.int64)
    X, y = dataset
    return np.asarray(X, dtype=np.float64), np.asarray(y, dtype=np.int64)


def train(dataset, model_config: ModelConfig, train_config: TrainConfig, partition: Partition,
          on_epoch=None) -> TrainResult:
    """Train on ``partition.train``, checkpointing on ``partition.val`` loss.

    ``dataset`` is a LabeledDataset or an ``(X, y)`` pair.  Deterministic for
    a fixed seed.
    """
    X, y = _xy(dataset)
    if X.shape[0] == 0:
        raise ValueError("empty dataset")
    tr_idx = np.asarray(partition.train, dtype=np.int64)
    va_idx = np.asarray(partition.val, dtype=np.int64)
    if tr_idx.size == 0 or va_idx.size == 0:
        raise ValueError("train and validation partitions must be non-empty")
    missing = set(np.unique(y).tolist()) - set(np.unique(y[tr_idx]).tolist())
    if missing:
        raise ValueError(f"classes {sorted(missing)} have no training examples")

    tc = train_config
    rng = np.random.default_rng(tc.seed)
    params = init_params(model_config, rng, QUANT_INIT_RANGE if tc.quantize_mode else 0.0)
    check_params(params, model_config)
    state = AdamState.zeros_like(params)
    Xv, yv = X[va_idx], y[va_idx]

    best: Checkpoint | None = None
    history = []
    stale = 0
    for epoch in range(1, tc.max_epochs + 1):
        order = rng.permutation(tr_idx)
        losses = []
        for s in range(0, order.size, tc.batch_size):
            b = order[s:s + tc.batch_size]
            grads, loss = backward(params, model_config, X[b], y[b], tc.quantize_mode, tc.clip_mode)
            params = adam_update(params, grads, state, tc)
            losses.append(loss * b.size)
        train_loss = float(np.sum(losses) / order.size)
        val_loss = loss_only(params, model_config, Xv, yv, tc.quantize_mode, tc.clip_mode)
        val_acc = float(np.mean(predict_float(params, model_config, Xv, tc.quantize_mode, tc.clip_mode) == yv))
        if best is None or val_loss < best.val_loss:
            best = Checkpoint(params.copy(), epoch, val_loss, val_acc)
            stale = 0
        else:
            stale += 1
        row = {"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss, "val_acc": val_acc,
               "best_val_loss": best.val_loss}
        history.append(row)
        log.debug("epoch %d train %.4f val %.4f acc %.3f", epoch, train_loss, val_loss, val_acc)
        if on_epoch is not None:
            on_epoch(row)
        if tc.patience is not None and stale >= tc.patience:
            break
    return TrainResult(best, history, params)
