"""Host benchmarks and operation audits.

Latencies are host measurements of the kernels in ``egru._kernels``.  They
show relative cost only; they say nothing about absolute microcontroller
timings.  Operation counts come from running the scalar cell equations over
an instrumented number type, so they are exact and platform-independent.
"""
from __future__ import annotations

import csv
import io
import math
import time
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import quantizer
from ._kernels import BACKEND_NAME, BACKENDS, backend as _default_backend
from .fixedpoint import Q15_ONE, softsign_q15, to_q15

N_INPUTS = 1000
DEFAULT_REPS = 1000
WARMUP = 10
HOST_NOTE = "host timings: relative comparisons only, not comparable to microcontroller figures"


@dataclass
class BenchReport:
    title: str
    rows: list[dict] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    def row(self, item: str) -> dict:
        for r in self.rows:
            if r["item"] == item:
                return r
        raise KeyError(item)

    def to_csv(self) -> str:
        keys = []
        for r in self.rows:
            keys.extend(k for k in r if k not in keys)
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n")
        w.writeheader()
        w.writerows(self.rows)
        return buf.getvalue()

    def to_text(self) -> str:
        lines = [self.title, "=" * len(self.title)]
        for r in self.rows:
            parts = [f"{k}={_fmt(v)}" for k, v in r.items() if k != "item"]
            lines.append(f"{r['item']:<22} " + "  ".join(parts))
        lines.extend(f"note: {n}" for n in self.notes)
        return "\n".join(lines) + "\n"


def _fmt(v):
    return f"{v:.2f}" if isinstance(v, float) else str(v)


def _resolve(backend):
    if backend is None:
        return _default_backend, BACKEND_NAME
    if isinstance(backend, str):
        return BACKENDS[backend], backend
    name = next((k for k, v in BACKENDS.items() if v is backend), "custom")
    return backend, name


def time_call(fn, reps: int, per: int = 1, warmup: int = WARMUP) -> dict:
    """Median and p95 latency of ``fn()`` in ns, divided by ``per`` items."""
    if reps < 100:
        raise ValueError("at least 100 repetitions are required")
    for _ in range(warmup):
        fn()
    samples = np.empty(reps)
    clock = time.perf_counter_ns
    for i in range(reps):
        t0 = clock()
        fn()
        samples[i] = clock() - t0
    samples /= per
    return {"median_ns": float(np.median(samples)), "p95_ns": float(np.percentile(samples, 95)), "reps": reps}


# --- activations -----------------------------------------------------------

def activation_inputs(n: int = N_INPUTS) -> np.ndarray:
    return np.linspace(-1.0, 1.0, n)


def bench_activations(reps: int = DEFAULT_REPS, backend=None) -> BenchReport:
    """Per-element latency of each activation over 1000 inputs in [-1, 1]."""
    k, name = _resolve(backend)
    x = activation_inputs()
    xq = np.ascontiguousarray(to_q15(x), dtype=np.int32)
    out_f = np.empty_like(x)
    out_q = np.empty(x.size, dtype=np.int16)
    cases = [
        ("tanh", lambda: k.tanh_array(x, out_f)),
        ("sigmoid", lambda: k.sigmoid_array(x, out_f)),
        ("relu", lambda: k.relu_array(x, out_f)),
        ("softsign", lambda: k.softsign_array(x, out_f)),
        ("softsign_q15", lambda: k.softsign_q15_array(xq, out_q)),
    ]
    report = BenchReport(f"activation latency per element ({name} backend)", notes=[HOST_NOTE])
    for item, fn in cases:
        report.rows.append({"item": item, "backend": name, **time_call(fn, reps, per=x.size)})
    return report


# --- cells -----------------------------------------------------------------

@dataclass(frozen=True)
class ScalarCells:
    """One-unit, one-input cells used by the cell benchmark and the op audit."""
    egru_codes: tuple  # (wz_h, wz_x, wh_h, wh_x)
    egru_bias: tuple  # (bz, bh) codes
    gru: tuple  # (wz_h, wz_x, bz, wr_h, wr_x, br, wh_h, wh_x, bh)
    rnn: tuple  # (w_h, w_x, b)


def scalar_cells(seed: int = 0) -> ScalarCells:
    rng = np.random.default_rng(seed)
    nonzero = [c for c in quantizer.VALID_CODES if c != quantizer.CODE_ZERO]
    codes = tuple(int(c) for c in rng.choice(nonzero, size=6))
    return ScalarCells(codes[:4], codes[4:], tuple(rng.uniform(-1, 1, 9)), tuple(rng.uniform(-1, 1, 3)))


def memory_bytes(kind: str) -> int:
    """Parameter storage of one scalar cell: 3-bit codes for eGRU, float32 otherwise."""
    n = PARAMS[kind]
    return quantizer.packed_size(n) if kind == "egru" else 4 * n


PARAMS = {"egru": 6, "gru": 9, "rnn": 3}


def bench_cells(reps: int = DEFAULT_REPS, backend=None, seed: int = 0) -> BenchReport:
    """Per-step latency of scalar cells fed 1000 inputs in [-1, 1]."""
    k, name = _resolve(backend)
    cells_ = scalar_cells(seed)
    x = activation_inputs()
    xq = np.ascontiguousarray(to_q15(x), dtype=np.int16)
    codes = np.array(cells_.egru_codes, dtype=np.uint8)
    bz, bh = (int(quantizer.apply_weight(32767, c)) for c in cells_.egru_bias)
    out_q = np.empty(x.size, dtype=np.int16)
    out_f = np.empty_like(x)
    p_gru = np.array(cells_.gru)
    p_rnn = np.array(cells_.rnn)
    cases = [
        ("egru_q15", lambda: k.egru_scalar_run(xq, codes, bz, bh, 0, out_q)),
        ("gru_float", lambda: k.gru_scalar_run(x, p_gru, 0.0, out_f)),
        ("rnn_float", lambda: k.rnn_scalar_run(x, p_rnn, 0.0, out_f)),
    ]
    report = BenchReport(f"scalar cell step latency ({name} backend)", notes=[HOST_NOTE])
    for item, fn in cases:
        kind = item.split("_")[0]
        report.rows.append({"item": item, "backend": name, **time_call(fn, reps, per=x.size),
                            "params": PARAMS[kind], "memory_bytes": memory_bytes(kind)})
    return report


# --- op audit --------------------------------------------------------------

class Counted:
    """A number that records every arithmetic operation applied to it.

    Additions and subtractions count as ``add``; ``>>`` counts as ``shift``
    (on floats it scales by a power of two).  Operations between two plain
    numbers are not recorded, so constants folded ahead of time cost nothing.
    """
    __slots__ = ("v", "tally")

    def __init__(self, v, tally: Counter):
        self.v = v
        self.tally = tally

    def _wrap(self, op, v):
        self.tally[op] += 1
        return Counted(v, self.tally)

    @staticmethod
    def _val(o):
        return o.v if isinstance(o, Counted) else o

    def __add__(self, o):
        return self._wrap("add", self.v + self._val(o))

    __radd__ = __add__

    def __sub__(self, o):
        return self._wrap("add", self.v - self._val(o))

    def __rsub__(self, o):
        return self._wrap("add", self._val(o) - self.v)

    def __mul__(self, o):
        return self._wrap("mul", self.v * self._val(o))

    __rmul__ = __mul__

    def __rshift__(self, s):
        s = self._val(s)
        v = self.v >> s if isinstance(self.v, int) else self.v / (1 << s)
        return self._wrap("shift", v)


def _act(tally, fn, a: Counted) -> Counted:
    tally["activation"] += 1
    return Counted(fn(a.v), tally)


def _shift_term(acc, v, code):
    """``acc + apply_weight(v, code)`` with the sign folded into add/subtract."""
    if code == quantizer.CODE_ZERO:
        return acc
    term = v >> (code & 3)
    return acc - term if code & 4 else acc + term


def egru_step_counted(cells_: ScalarCells, h, x, tally: Counter, canonical: bool = True):
    """One scalar eGRU step over Counted values.

    ``canonical`` evaluates ``(1 - z) h + z h~`` on reals.  Otherwise the
    step runs in Q15 exactly as the kernel does, with the difference form
    ``h + ((z (h~ - h)) >> 15)``.
    """
    czh, czx, chh, chx = cells_.egru_codes
    bz_c, bh_c = cells_.egru_bias
    if canonical:
        bz, bh = quantizer.decode(bz_c), quantizer.decode(bh_c)
        gate = lambda a: (a / (1 + abs(a)) + 1) / 2
        cand = lambda a: a / (1 + abs(a))
    else:
        bz, bh = (int(quantizer.apply_weight(32767, c)) for c in (bz_c, bh_c))
        gate = lambda a: int((softsign_q15(a) + Q15_ONE) >> 1)
        cand = lambda a: int(softsign_q15(a))
    az = _shift_term(_shift_term(Counted(bz, tally), h, czh), x, czx)
    ah = _shift_term(_shift_term(Counted(bh, tally), h, chh), x, chx)
    z = _act(tally, gate, az)
    ht = _act(tally, cand, ah)
    if canonical:
        return (1 - z) * h + z * ht
    new = h + ((z * (ht - h)) >> 15)
    return Counted(min(32767, max(-32768, new.v)), tally)


def gru_step_counted(cells_: ScalarCells, h, x, tally: Counter):
    wzh, wzx, bz, wrh, wrx, br, whh, whx, bh = cells_.gru
    sig = lambda a: 1.0 / (1.0 + math.exp(-a))
    z = _act(tally, sig, wzh * h + wzx * x + bz)
    r = _act(tally, sig, wrh * h + wrx * x + br)
    ht = _act(tally, math.tanh, whh * (r * h) + whx * x + bh)
    return (1 - z) * h + z * ht


def rnn_step_counted(cells_: ScalarCells, h, x, tally: Counter):
    wh, wx, b = cells_.rnn
    return _act(tally, math.tanh, wh * h + wx * x + b)


def audit_ops(kind: str, canonical: bool = True, seed: int = 0) -> dict:
    """Count additions, multiplications and shifts of one scalar cell step.

    Activation evaluations are tallied under ``activation`` and are not part
    of the arithmetic totals.
    """
    cells_ = scalar_cells(seed)
    tally = Counter()
    if kind == "egru":
        if canonical:
            h, x = Counted(0.25, tally), Counted(0.5, tally)
        else:
            h, x = Counted(8192, tally), Counted(16384, tally)
        egru_step_counted(cells_, h, x, tally, canonical)
    elif kind == "gru":
        gru_step_counted(cells_, Counted(0.25, tally), Counted(0.5, tally), tally)
    elif kind == "rnn":
        rnn_step_counted(cells_, Counted(0.25, tally), Counted(0.5, tally), tally)
    else:
        raise ValueError(f"unknown cell kind {kind!r}")
    counts = {op: tally.get(op, 0) for op in ("add", "mul", "shift")}
    return {"params": PARAMS[kind], **counts, "total": sum(counts.values()),
            "activation": tally.get("activation", 0), "memory_bytes": memory_bytes(kind)}


def ops_report(seed: int = 0) -> BenchReport:
    report = BenchReport("scalar cell operation audit")
    report.rows.append({"item": "egru (canonical)", **audit_ops("egru", True, seed)})
    report.rows.append({"item": "egru (as implemented)", **audit_ops("egru", False, seed)})
    report.rows.append({"item": "gru", **audit_ops("gru", seed=seed)})
    report.rows.append({"item": "rnn", **audit_ops("rnn", seed=seed)})
    report.notes.append("the Q15 interpolation uses one multiply plus a rescaling shift")
    return report


# --- backend comparison ----------------------------------------------------

def bench_backends(reps: int = 100, batch: int = 16, steps: int = 250, seed: int = 0) -> BenchReport:
    """Compiled vs numpy fallback on a full-width eGRU layer sequence."""
    rng = np.random.default_rng(seed)
    n_in, hidden = 64, 30
    x = rng.integers(0, 8192, size=(batch, steps, n_in)).astype(np.int16)
    wz = rng.choice(quantizer.VALID_CODES, size=(hidden, hidden + n_in)).astype(np.uint8)
    wh = rng.choice(quantizer.VALID_CODES, size=(hidden, hidden + n_in)).astype(np.uint8)
    bz = quantizer.apply_weight(32767, rng.choice(quantizer.VALID_CODES, hidden)).astype(np.int32)
    bh = quantizer.apply_weight(32767, rng.choice(quantizer.VALID_CODES, hidden)).astype(np.int32)
    h0 = np.zeros((batch, hidden), dtype=np.int16)
    report = BenchReport(f"eGRU layer kernel, {batch} x {steps} steps, 64 -> 30", notes=[HOST_NOTE])
    outputs = {}
    for name, k in BACKENDS.items():
        out = np.empty((batch, steps, hidden), dtype=np.int16)
        stats = time_call(lambda: k.egru_layer(x, wz, bz, wh, bh, h0, out), reps, per=batch * steps, warmup=2)
        outputs[name] = out
        report.rows.append({"item": f"egru_layer[{name}]", "backend": name, **stats})
    if len(outputs) > 1:
        ref = outputs["python"]
        same = all(np.array_equal(ref, o) for o in outputs.values())
        py = report.row("egru_layer[python]")["median_ns"]
        for r in report.rows:
            r["speedup_vs_python"] = py / r["median_ns"]
        report.notes.append(f"outputs bit-identical across backends: {same}")
    else:
        report.notes.append("compiled extension not built; only the fallback was measured")
    return report


SUITES = {
    "activations": bench_activations,
    "cells": bench_cells,
    "ops": ops_report,
    "backends": bench_backends,
}
