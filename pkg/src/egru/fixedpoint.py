"""Q15 fixed-point arithmetic.

Values are plain integers (or integer numpy arrays) holding the raw
representation; a Q15 raw ``r`` stands for ``r / 32768``.  Accumulators
(Acc32) use the same scale in a 32-bit register.

Every function accepts Python ints or integer arrays and returns the same
kind.  Division truncates toward zero like C, shifts are arithmetic.
"""
from __future__ import annotations

import numpy as np

Q15_ONE = 1 << 15
Q15_MIN = -32768
Q15_MAX = 32767
ACC_MIN = -(1 << 31)
ACC_MAX = (1 << 31) - 1

# |x| < 64.0 keeps (x << 10) inside a signed 32-bit register
ACC_CLIP = (1 << 21) - 1


def _ret(value):
    if isinstance(value, np.ndarray) and value.ndim == 0:
        return int(value)
    return value


def _arr(x):
    return np.asarray(x, dtype=np.int64)


def tdiv(a, b):
    """Integer division truncating toward zero (C semantics)."""
    a = _arr(a)
    b = _arr(b)
    q = np.abs(a) // np.abs(b)
    return _ret(np.where((a < 0) != (b < 0), -q, q))


def saturate_q15(x):
    return _ret(np.clip(_arr(x), Q15_MIN, Q15_MAX))


def saturate_acc(x):
    return _ret(np.clip(_arr(x), ACC_MIN, ACC_MAX))


def to_q15(value):
    """Round a real value (or array) to the nearest Q15 raw, saturating."""
    raw = np.rint(np.asarray(value, dtype=np.float64) * Q15_ONE)
    return _ret(np.clip(raw, Q15_MIN, Q15_MAX).astype(np.int64))


def to_real(raw):
    r = np.asarray(raw, dtype=np.float64) / Q15_ONE
    return float(r) if r.ndim == 0 else r


def sat_add(a, b):
    return saturate_q15(_arr(a) + _arr(b))


def q15_mul(a, b):
    return saturate_q15((_arr(a) * _arr(b)) >> 15)


def q15_div(a, b):
    b = _arr(b)
    if np.any(b == 0):
        raise ZeroDivisionError("Q15 division by zero")
    return saturate_q15(tdiv(_arr(a) << 15, b))


def clip_acc(x):
    return _ret(np.clip(_arr(x), -ACC_CLIP, ACC_CLIP))


def softsign_q15(x):
    """Integer softsign ``x / (1 + |x|)`` for a clipped accumulator.

    The denominator is pre-shifted right by 5 so that the quotient of
    ``x << 10`` lands in Q15.  ``x`` must already be within ``clip_acc``.
    """
    x = _arr(x)
    num = x << 10
    den = (np.abs(x) + Q15_ONE) >> 5
    return tdiv(num, den)


def gate_softsign_q15(x):
    """Gate activation ``(softsign(x) + 1) / 2`` in [0, 32767]."""
    return _ret((_arr(softsign_q15(x)) + Q15_ONE) >> 1)


def relu_q15(x):
    return _ret(np.maximum(_arr(x), 0))
