"""Recurrent cells: eGRU (float and Q15), GRU and vanilla RNN.

Weight matrices act on the concatenation ``[h_prev, x]`` (hidden first),
so a layer with ``H`` units and ``N`` inputs has ``H x (H + N)`` matrices.

Float steps work on single vectors or on batches (leading axis).  The
``*_forward`` helpers also return a cache consumed by the matching
``*_backward`` function during backpropagation through time.
"""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import quantizer
from ._kernels import backend as _kernel
from .fixedpoint import Q15_MAX

CELL_KINDS = ("egru", "gru", "rnn")
ACTIVATIONS = ("softsign", "standard")


class ShapeError(ValueError):
    pass


# --- layer parameter blocks -------------------------------------------------

class _LayerParams:
    """Shared behaviour; subclasses are dataclasses of weight/bias arrays."""

    WEIGHTS: tuple[str, ...] = ()

    def tensors(self) -> list[tuple[str, np.ndarray]]:
        return [(f.name, getattr(self, f.name)) for f in fields(self)]

    @property
    def hidden_size(self) -> int:
        return getattr(self, self.WEIGHTS[0]).shape[0]

    @property
    def input_size(self) -> int:
        w = getattr(self, self.WEIGHTS[0])
        return w.shape[1] - w.shape[0]

    @property
    def deployed(self) -> bool:
        return all(a.dtype == np.uint8 for _, a in self.tensors())

    def map(self, fn):
        return type(self)(**{name: fn(a) for name, a in self.tensors()})

    def check(self):
        H = self.hidden_size
        for name, a in self.tensors():
            if name.startswith("W"):
                if a.ndim != 2 or a.shape[0] != H or a.shape[1] <= H:
                    raise ShapeError(f"{name} has shape {a.shape}, expected ({H}, {H}+N)")
                if a.shape != getattr(self, self.WEIGHTS[0]).shape:
                    raise ShapeError(f"{name} shape {a.shape} differs from {self.WEIGHTS[0]}")
            elif a.shape != (H,):
                raise ShapeError(f"{name} has shape {a.shape}, expected ({H},)")
        return self

    def deploy(self):
        """Quantize to septenary codes."""
        return self.map(lambda a: quantizer.to_codes(a))

    def decode(self):
        """Septenary codes back to float levels."""
        return self.map(lambda a: quantizer.decode(a))


@dataclass
class EgruLayerParams(_LayerParams):
    Wz: np.ndarray
    bz: np.ndarray
    Wh: np.ndarray
    bh: np.ndarray
    WEIGHTS = ("Wz", "Wh")


@dataclass
class GruLayerParams(_LayerParams):
    Wz: np.ndarray
    bz: np.ndarray
    Wr: np.ndarray
    br: np.ndarray
    Wh: np.ndarray
    bh: np.ndarray
    WEIGHTS = ("Wz", "Wr", "Wh")


@dataclass
class RnnLayerParams(_LayerParams):
    W: np.ndarray
    b: np.ndarray
    WEIGHTS = ("W",)


LAYER_TYPES = {"egru": EgruLayerParams, "gru": GruLayerParams, "rnn": RnnLayerParams}


def init_layer(kind: str, n_in: int, n_hidden: int, rng: np.random.Generator,
               min_range: float = 0.0):
    """Scaled-uniform weights, zero biases."""
    cls = LAYER_TYPES[kind]
    r = min(1.0, max(min_range, np.sqrt(6.0 / (n_in + 2 * n_hidden))))
    kw = {}
    for f in fields(cls):
        if f.name.startswith("W"):
            kw[f.name] = rng.uniform(-r, r, size=(n_hidden, n_hidden + n_in))
        else:
            kw[f.name] = np.zeros(n_hidden)
    return cls(**kw)


# --- activations ----------------------------------------------------------

def softsign(v):
    return v / (1.0 + np.abs(v))


def _softsign_grad(v):
    return 1.0 / (1.0 + np.abs(v)) ** 2


def _sigmoid(v):
    return 0.5 * (1.0 + np.tanh(0.5 * v))


def candidate_fn(activation: str):
    """(f, f') for the candidate / RNN nonlinearity."""
    if activation == "softsign":
        return softsign, _softsign_grad
    return np.tanh, lambda v: 1.0 - np.tanh(v) ** 2


def gate_fn(activation: str):
    """(g, g') for gates: shifted softsign ``(s(v)+1)/2`` or the sigmoid."""
    if activation == "softsign":
        return (lambda v: 0.5 * (softsign(v) + 1.0)), (lambda v: 0.5 * _softsign_grad(v))

    def d_sig(v):
        s = _sigmoid(v)
        return s * (1.0 - s)

    return _sigmoid, d_sig


def _clip(a, bound):
    """Clip a pre-activation to (-bound, bound]; returns (clipped, pass-through mask)."""
    if bound is None:
        return a, None
    mask = (a > -bound) & (a <= bound)
    return np.clip(a, -bound, bound), mask


def _masked(g, mask):
    return g if mask is None else g * mask


def _concat(h, x, p):
    h = np.asarray(h, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    H, N = p.hidden_size, p.input_size
    if h.shape[-1] != H or x.shape[-1] != N or h.shape[:-1] != x.shape[:-1]:
        raise ShapeError(f"expected h[..., {H}] and x[..., {N}], got {h.shape} and {x.shape}")
    return np.concatenate([h, x], axis=-1)


# --- eGRU -----------------------------------------------------------------

def egru_forward(p: EgruLayerParams, x, h_prev, clip=None, activation="softsign"):
    v = _concat(h_prev, x, p)
    h = v[..., : p.hidden_size]
    g, _ = gate_fn(activation)
    f, _ = candidate_fn(activation)
    az, mz = _clip(v @ p.Wz.T + p.bz, clip)
    ah, mh = _clip(v @ p.Wh.T + p.bh, clip)
    z = g(az)
    ht = f(ah)
    h_new = (1.0 - z) * h + z * ht
    return h_new, (v, az, mz, ah, mh, z, ht, activation)


def egru_backward(p: EgruLayerParams, cache, dh_new, grads: dict):
    v, az, mz, ah, mh, z, ht, activation = cache
    H = p.hidden_size
    h = v[..., :H]
    _, dg = gate_fn(activation)
    _, df = candidate_fn(activation)
    daz = _masked(dh_new * (ht - h) * dg(az), mz)
    dah = _masked(dh_new * z * df(ah), mh)
    grads["Wz"] += daz.T @ v
    grads["bz"] += daz.sum(axis=0)
    grads["Wh"] += dah.T @ v
    grads["bh"] += dah.sum(axis=0)
    dv = daz @ p.Wz + dah @ p.Wh
    return dv[..., :H] + dh_new * (1.0 - z), dv[..., H:]


def egru_step_float(p: EgruLayerParams, x, h_prev, quantize_in_forward=False, clip=None,
                    activation="softsign"):
    """One float eGRU step.

    ``clip`` bounds every pre-activation to (-clip, clip] before the
    activation (training uses 1.0).  With ``quantize_in_forward`` the
    weights are first mapped onto the septenary levels.
    """
    p.check()
    if quantize_in_forward:
        p = p.map(quantizer.quantize)
    return egru_forward(p, x, h_prev, clip, activation)[0]


def bias_q15(codes) -> np.ndarray:
    """Bias codes applied to the Q15 constant for 1.0 (32767)."""
    return quantizer.apply_weight(Q15_MAX, np.asarray(codes)).astype(np.int32)


def egru_step_q15(p: EgruLayerParams, x, h_prev, kernel=None) -> np.ndarray:
    """One integer eGRU step on Q15 vectors (or a batch of them)."""
    if not p.deployed:
        raise TypeError("egru_step_q15 needs deployed (septenary) parameters")
    p.check()
    x = np.asarray(x)
    h_prev = np.asarray(h_prev)
    single = x.ndim == 1
    xb = np.atleast_2d(x)
    hb = np.atleast_2d(h_prev)
    if xb.shape[1] != p.input_size or hb.shape[1] != p.hidden_size or xb.shape[0] != hb.shape[0]:
        raise ShapeError(
            f"expected x[{p.input_size}] and h[{p.hidden_size}], got {x.shape} and {h_prev.shape}"
        )
    out = egru_sequence_q15(p, xb[:, None, :], hb, kernel=kernel)[:, 0, :]
    return out[0] if single else out


def egru_sequence_q15(p: EgruLayerParams, x, h0=None, kernel=None) -> np.ndarray:
    """Run a deployed eGRU layer over Q15 input of shape (batch, time, inputs)."""
    k = kernel or _kernel
    x = np.ascontiguousarray(x, dtype=np.int16)
    B, T, _ = x.shape
    H = p.hidden_size
    if h0 is None:
        h0 = np.zeros((B, H), dtype=np.int16)
    out = np.empty((B, T, H), dtype=np.int16)
    k.egru_layer(
        x,
        np.ascontiguousarray(p.Wz, dtype=np.uint8),
        np.ascontiguousarray(bias_q15(p.bz)),
        np.ascontiguousarray(p.Wh, dtype=np.uint8),
        np.ascontiguousarray(bias_q15(p.bh)),
        np.ascontiguousarray(h0, dtype=np.int16),
        out,
    )
    return out


# --- GRU ------------------------------------------------------------------

def gru_forward(p: GruLayerParams, x, h_prev, clip=None, activation="standard"):
    v = _concat(h_prev, x, p)
    H = p.hidden_size
    h = v[..., :H]
    g, _ = gate_fn(activation)
    f, _ = candidate_fn(activation)
    az, mz = _clip(v @ p.Wz.T + p.bz, clip)
    ar, mr = _clip(v @ p.Wr.T + p.br, clip)
    z = g(az)
    r = g(ar)
    u = np.concatenate([r * h, v[..., H:]], axis=-1)
    ah, mh = _clip(u @ p.Wh.T + p.bh, clip)
    ht = f(ah)
    h_new = (1.0 - z) * h + z * ht
    return h_new, (v, u, az, mz, ar, mr, ah, mh, z, r, ht, activation)


def gru_backward(p: GruLayerParams, cache, dh_new, grads: dict):
    v, u, az, mz, ar, mr, ah, mh, z, r, ht, activation = cache
    H = p.hidden_size
    h = v[..., :H]
    _, dg = gate_fn(activation)
    _, df = candidate_fn(activation)
    daz = _masked(dh_new * (ht - h) * dg(az), mz)
    dah = _masked(dh_new * z * df(ah), mh)
    grads["Wh"] += dah.T @ u
    grads["bh"] += dah.sum(axis=0)
    du = dah @ p.Wh
    drh = du[..., :H]
    dar = _masked(drh * h * dg(ar), mr)
    grads["Wz"] += daz.T @ v
    grads["bz"] += daz.sum(axis=0)
    grads["Wr"] += dar.T @ v
    grads["br"] += dar.sum(axis=0)
    dv = daz @ p.Wz + dar @ p.Wr
    dh = dv[..., :H] + dh_new * (1.0 - z) + drh * r
    dx = dv[..., H:] + du[..., H:]
    return dh, dx


def gru_step_float(p: GruLayerParams, x, h_prev, quantize_in_forward=False, clip=None,
                   activation="standard"):
    """One float GRU step with update and reset gates."""
    p.check()
    if quantize_in_forward:
        p = p.map(quantizer.quantize)
    return gru_forward(p, x, h_prev, clip, activation)[0]


# --- vanilla RNN ----------------------------------------------------------

def rnn_forward(p: RnnLayerParams, x, h_prev, clip=None, activation="standard"):
    v = _concat(h_prev, x, p)
    f, _ = candidate_fn(activation)
    a, m = _clip(v @ p.W.T + p.b, clip)
    return f(a), (v, a, m, activation)


def rnn_backward(p: RnnLayerParams, cache, dh_new, grads: dict):
    v, a, m, activation = cache
    _, df = candidate_fn(activation)
    da = _masked(dh_new * df(a), m)
    grads["W"] += da.T @ v
    grads["b"] += da.sum(axis=0)
    dv = da @ p.W
    H = p.hidden_size
    return dv[..., :H], dv[..., H:]


def rnn_step_float(p: RnnLayerParams, x, h_prev, quantize_in_forward=False, clip=None,
                   activation="standard"):
    p.check()
    if quantize_in_forward:
        p = p.map(quantizer.quantize)
    return rnn_forward(p, x, h_prev, clip, activation)[0]


FORWARD = {"egru": egru_forward, "gru": gru_forward, "rnn": rnn_forward}
BACKWARD = {"egru": egru_backward, "gru": gru_backward, "rnn": rnn_backward}
DEFAULT_ACTIVATION = {"egru": "softsign", "gru": "standard", "rnn": "standard"}
