"""Numpy / pure-Python implementation of the Q15 kernels.

The layer kernels are vectorized over the batch.  Shift-only weight
application is rewritten as three exact float64 matrix products, one per
shift amount: ``sum_i apply_weight(v_i, c_ji) = sum_s (P_s - N_s) @ (v >> s)``
where ``P_s``/``N_s`` are 0/1 masks of the positive/negative codes with
shift ``s``.  All partial sums stay far below 2**53, so the products are
exact integers.

The scalar benchmark kernels are plain Python loops, written the way the
firmware would step one unit at a time.
"""
from __future__ import annotations

import math

import numpy as np

ACC_CLIP = 2097151


def _shift_masks(codes: np.ndarray) -> list[tuple[int, np.ndarray]]:
    codes = np.asarray(codes)
    out = []
    for s in range(3):
        m = (codes == s).astype(np.float64) - (codes == (4 | s)).astype(np.float64)
        if np.any(m):
            out.append((s, np.ascontiguousarray(m.T)))
    return out


def _accumulate(v: np.ndarray, masks) -> np.ndarray:
    acc = np.zeros((v.shape[0], masks[0][1].shape[1] if masks else 0), dtype=np.float64)
    for s, m in masks:
        acc += (v >> s).astype(np.float64) @ m
    return acc.astype(np.int64)


def _softsign(x: np.ndarray) -> np.ndarray:
    den = (np.abs(x) + 32768) >> 5
    q = np.abs(x << 10) // den
    return np.where(x < 0, -q, q)


def egru_layer(x, wz, bz, wh, bh, h0, out):
    x = np.asarray(x, dtype=np.int64)
    B, T, _ = x.shape
    H = wz.shape[0]
    mz = _shift_masks(wz)
    mh = _shift_masks(wh)
    bz = np.asarray(bz, dtype=np.int64)
    bh = np.asarray(bh, dtype=np.int64)
    h = np.asarray(h0, dtype=np.int64).copy()
    for t in range(T):
        v = np.concatenate([h, x[:, t, :]], axis=1)
        az = _accumulate(v, mz) if mz else np.zeros((B, H), dtype=np.int64)
        ah = _accumulate(v, mh) if mh else np.zeros((B, H), dtype=np.int64)
        z = (_softsign(np.clip(az + bz, -ACC_CLIP, ACC_CLIP)) + 32768) >> 1
        ht = _softsign(np.clip(ah + bh, -ACC_CLIP, ACC_CLIP))
        h = np.clip(h + ((z * (ht - h)) >> 15), -32768, 32767)
        out[:, t, :] = h


def linear(x, w, bias, out):
    x = np.asarray(x, dtype=np.int64)
    masks = _shift_masks(w)
    acc = _accumulate(x, masks) if masks else np.zeros((x.shape[0], w.shape[0]), dtype=np.int64)
    out[...] = acc + np.asarray(bias, dtype=np.int64)


# --- scalar benchmark kernels ---------------------------------------------

def _aw(x, c):
    if c == 7:
        return 0
    y = x >> (c & 3)
    return -y if c & 4 else y


def _ss(x):
    if x > ACC_CLIP:
        x = ACC_CLIP
    elif x < -ACC_CLIP:
        x = -ACC_CLIP
    den = ((x if x >= 0 else -x) + 32768) >> 5
    q = (x if x >= 0 else -x) * 1024 // den
    return q if x >= 0 else -q


def softsign_q15_array(x, out):
    for i in range(len(x)):
        out[i] = _ss(int(x[i]))


def tanh_array(x, out):
    for i in range(len(x)):
        out[i] = math.tanh(x[i])


def sigmoid_array(x, out):
    for i in range(len(x)):
        out[i] = 1.0 / (1.0 + math.exp(-x[i]))


def relu_array(x, out):
    for i in range(len(x)):
        v = x[i]
        out[i] = v if v > 0.0 else 0.0


def softsign_array(x, out):
    for i in range(len(x)):
        v = x[i]
        out[i] = v / (1.0 + abs(v))


def egru_scalar_run(x, codes, bz, bh, h0, out):
    czh, czx, chh, chx = (int(c) for c in codes)
    h = int(h0)
    for t in range(len(x)):
        xt = int(x[t])
        z = (_ss(_aw(h, czh) + _aw(xt, czx) + bz) + 32768) >> 1
        ht = _ss(_aw(h, chh) + _aw(xt, chx) + bh)
        h = min(32767, max(-32768, h + ((z * (ht - h)) >> 15)))
        out[t] = h


def gru_scalar_run(x, p, h0, out):
    wzh, wzx, bz, wrh, wrx, br, whh, whx, bh = (float(v) for v in p)
    h = float(h0)
    for t in range(len(x)):
        xt = x[t]
        z = 1.0 / (1.0 + math.exp(-(wzh * h + wzx * xt + bz)))
        r = 1.0 / (1.0 + math.exp(-(wrh * h + wrx * xt + br)))
        ht = math.tanh(whh * (r * h) + whx * xt + bh)
        h = (1.0 - z) * h + z * ht
        out[t] = h


def rnn_scalar_run(x, p, h0, out):
    wh, wx, b = (float(v) for v in p)
    h = float(h0)
    for t in range(len(x)):
        h = math.tanh(wh * h + wx * x[t] + b)
        out[t] = h
