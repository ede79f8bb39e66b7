"""Audio ingestion and spectral features.

Clips are decoded to 16-bit mono PCM, resampled to 8 kHz and cut into
128-sample rectangular frames with no overlap.  Each frame contributes the
magnitudes of DFT bins 0..63 divided by 128 and clamped to [0, 1 - 2**-15],
so every feature is a non-negative Q15 value.

Dataset container (little-endian)::

    magic      4s   b"EGDS"
    version    u8   1
    reserved   u8   0
    n_classes  u16
    n_examples u32
    bins       u16
    frames     u16
    class names: n_classes x (u16 byte length, utf-8 bytes)
    examples:    n_examples x (u16 label, bins*frames i16 row-major by bin)
    crc32      u32  over everything above
"""
from __future__ import annotations

import csv
import io
import os
import struct
import wave
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .fixedpoint import Q15_MAX, Q15_ONE

SAMPLE_RATE = 8000
FRAME = 128
BINS = 64
MAX_FEATURE = 1.0 - 2.0 ** -15
TASK_FRAMES = {"cough": 24, "digits": 64, "urban": 250}


class DataError(ValueError):
    pass


@dataclass
class AudioClip:
    samples: np.ndarray  # int16 mono
    sample_rate: int

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise DataError("sample rate must be positive")
        self.samples = np.asarray(self.samples, dtype=np.int16)


# --- WAV ------------------------------------------------------------------



def decode_wav(data: bytes) -> AudioClip:
    """Decode an 8- or 16-bit PCM RIFF/WAVE file to 16-bit mono."""
    try:
        with wave.open(io.BytesIO(bytes(data))) as w:
            channels, width, rate = w.getnchannels(), w.getsampwidth(), w.getframerate()
            n = w.getnframes()
            payload = w.readframes(n)
    except wave.Error as exc:
        if str(exc).startswith("unknown format"):
            raise DataError(f"unsupported codec ({exc}); only PCM is supported") from None
        raise DataError(f"not a readable WAV file: {exc}") from None
    except (EOFError, struct.error) as exc:
        raise DataError(f"not a readable WAV file: {exc}") from None
    if width not in (1, 2):
        raise DataError(f"unsupported sample width {8 * width} bits; expected 8 or 16")
    if channels < 1 or rate <= 0:
        raise DataError("malformed fmt chunk")
    want = n * width * channels
    if len(payload) < want:
        raise DataError(f"truncated data chunk: expected {want} bytes, got {len(payload)}")
    if width == 1:
        pcm = (np.frombuffer(payload, dtype=np.uint8).astype(np.int32) - 128) << 8
    else:
        pcm = np.frombuffer(payload, dtype="<i2").astype(np.int32)
    pcm = pcm.reshape(-1, channels)
    mono = pcm[:, 0] if channels == 1 else np.rint(pcm.mean(axis=1))
    return AudioClip(np.clip(mono, -32768, 32767).astype(np.int16), rate)


def encode_wav(clip: AudioClip) -> bytes:
    """16-bit mono PCM WAV bytes."""
    buf = io.BytesIO()
    with wave.open(buf, "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(clip.sample_rate)
        w.writeframes(np.asarray(clip.samples, dtype="<i2").tobytes())
    return buf.getvalue()


# --- resampling -----------------------------------------------------------

def resample_8k(clip: AudioClip) -> AudioClip:
    """Downsample to 8 kHz.

    A moving average of ``floor(rate / 8000)`` taps suppresses aliasing,
    then the filtered signal is linearly interpolated at multiples of the
    rate ratio.  Output sample ``k`` corresponds to input time
    ``k * ratio + (taps - 1) / 2``: the prefilter's group delay is kept, not
    compensated, so integer ratios reduce to plain block averaging.
    """
    rate = clip.sample_rate
    if rate < SAMPLE_RATE:
        raise DataError(f"cannot upsample from {rate} Hz to {SAMPLE_RATE} Hz")
    if rate == SAMPLE_RATE:
        return AudioClip(clip.samples.copy(), SAMPLE_RATE)
    x = clip.samples.astype(np.float64)
    if x.size == 0:
        return AudioClip(np.zeros(0, dtype=np.int16), SAMPLE_RATE)
    ratio = rate / SAMPLE_RATE
    taps = max(1, int(ratio))
    padded = np.concatenate([x, np.full(taps - 1, x[-1])])
    filtered = np.convolve(padded, np.ones(taps) / taps, mode="valid")
    n_out = (x.size * SAMPLE_RATE) // rate
    pos = np.arange(n_out) * ratio
    y = np.interp(pos, np.arange(filtered.size), filtered)
    return AudioClip(np.clip(np.rint(y), -32768, 32767).astype(np.int16), SAMPLE_RATE)


# --- STFT -----------------------------------------------------------------

def stft_features(clip: AudioClip, frames: int) -> np.ndarray:
    """64 x frames magnitude spectrogram in [0, 1)."""
    if frames <= 0:
        raise DataError("frame count must be positive")
    if clip.sample_rate != SAMPLE_RATE:
        raise DataError(f"expected {SAMPLE_RATE} Hz audio, got {clip.sample_rate} Hz")
    x = clip.samples.astype(np.float64) / Q15_ONE
    n = FRAME * frames
    x = np.concatenate([x[:n], np.zeros(max(0, n - x.size))])
    mag = np.abs(np.fft.rfft(x.reshape(frames, FRAME), axis=1))[:, :BINS] / FRAME
    return np.clip(mag, 0.0, MAX_FEATURE).T


def featurize(clip: AudioClip, frames: int) -> np.ndarray:
    return stft_features(resample_8k(clip), frames)


# --- datasets -------------------------------------------------------------

@dataclass
class LabeledDataset:
    """Spectrograms held as Q15 raw values, shape (n, bins, frames)."""
    grids: np.ndarray
    labels: np.ndarray
    class_names: list[str]
    source_ids: list[str] = field(default_factory=list)
    errors: list[tuple[str, str]] = field(default_factory=list)

    def __post_init__(self):
        self.grids = np.asarray(self.grids, dtype=np.int16)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.grids.ndim != 3 or self.grids.shape[0] != self.labels.size:
            raise DataError("grids must be (n, bins, frames) with one label per example")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= len(self.class_names)):
            raise DataError("labels must be dense in [0, num_classes)")
        if not self.source_ids:
            self.source_ids = [f"#{i}" for i in range(self.labels.size)]

    @classmethod
    def from_features(cls, specs, labels, class_names, source_ids=None):
        q = np.clip(np.rint(np.asarray(specs, dtype=np.float64) * Q15_ONE), 0, Q15_MAX)
        return cls(q.astype(np.int16), labels, list(class_names), list(source_ids or []))

    def __len__(self):
        return int(self.labels.size)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def frames(self) -> int:
        return int(self.grids.shape[2])

    def features(self) -> np.ndarray:
        return self.grids.astype(np.float64) / Q15_ONE

    def subset(self, idx) -> "LabeledDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return LabeledDataset(self.grids[idx], self.labels[idx], list(self.class_names),
                              [self.source_ids[i] for i in idx])


_DS_HEADER = struct.Struct("<4sBBHIHH")


def save_dataset(ds: LabeledDataset) -> bytes:
    n, bins, frames = ds.grids.shape
    out = bytearray(_DS_HEADER.pack(b"EGDS", 1, 0, ds.num_classes, n, bins, frames))
    for name in ds.class_names:
        raw = name.encode("utf-8")
        out += struct.pack("<H", len(raw)) + raw
    labels = ds.labels.astype("<u2")
    grids = ds.grids.astype("<i2").reshape(n, -1)
    for i in range(n):
        out += labels[i].tobytes() + grids[i].tobytes()
    out += struct.pack("<I", zlib.crc32(out))
    return bytes(out)


def load_dataset(data: bytes) -> LabeledDataset:
    data = bytes(data)
    if len(data) < _DS_HEADER.size + 4:
        raise DataError("dataset file too short")
    magic, version, _, n_classes, n, bins, frames = _DS_HEADER.unpack_from(data)
    if magic != b"EGDS":
        raise DataError("bad dataset magic")
    if version != 1:
        raise DataError(f"unsupported dataset version {version}")
    if zlib.crc32(data[:-4]) != struct.unpack("<I", data[-4:])[0]:
        raise DataError("dataset checksum mismatch")
    pos = _DS_HEADER.size
    names = []
    try:
        for _ in range(n_classes):
            (ln,) = struct.unpack_from("<H", data, pos)
            names.append(data[pos + 2:pos + 2 + ln].decode("utf-8"))
            pos += 2 + ln
    except (struct.error, UnicodeDecodeError) as exc:
        raise DataError(f"malformed class-name block: {exc}") from None
    rec = 2 + 2 * bins * frames
    if len(data) - 4 - pos != n * rec:
        raise DataError(f"dataset payload: expected {n * rec} bytes, got {len(data) - 4 - pos}")
    body = np.frombuffer(data[pos:len(data) - 4], dtype=np.uint8).reshape(n, rec)
    labels = body[:, :2].copy().view("<u2").ravel().astype(np.int64)
    grids = body[:, 2:].copy().view("<i2").reshape(n, bins, frames)
    return LabeledDataset(grids, labels, names)


# --- synthetic task -------------------------------------------------------

SYNTH_CLASSES = ("tone_burst", "chirp", "noise_burst")
SYNTH_FRAMES = 24


def _synth_clip(kind: int, rng: np.random.Generator) -> np.ndarray:
    n = FRAME * SYNTH_FRAMES
    t = np.arange(n) / SAMPLE_RATE
    amp = rng.uniform(0.3, 1.0)
    onset = rng.uniform(0.0, 0.08)
    dur = rng.uniform(0.1, 0.16)
    rel = t - onset
    active = (rel >= 0) & (rel < dur)
    if kind == 0:
        f = rng.uniform(300.0, 3000.0)
        env = np.exp(-np.maximum(rel, 0) / rng.uniform(0.08, 0.3))
        sig = np.sin(2 * np.pi * f * rel + rng.uniform(0, 2 * np.pi)) * env
    elif kind == 1:
        lo = rng.uniform(300.0, 1000.0)
        hi = rng.uniform(lo + 2500.0, 3900.0)
        f0, f1 = (lo, hi) if rng.random() < 0.5 else (hi, lo)
        k = (f1 - f0) / dur
        sig = np.sin(2 * np.pi * (f0 * rel + 0.5 * k * rel * rel))
    else:
        white = rng.standard_normal(n)
        a = rng.uniform(0.5, 0.95)
        sig = np.empty(n)
        acc = 0.0
        for i in range(n):
            acc = a * acc + white[i]
            sig[i] = acc
        sig /= np.max(np.abs(sig)) + 1e-12
    ramp = int(0.005 * SAMPLE_RATE)
    edge = np.clip(np.minimum(rel, dur - rel) * SAMPLE_RATE / ramp, 0.0, 1.0)
    sig = amp * np.where(active, sig, 0.0) * (0.5 - 0.5 * np.cos(np.pi * edge))
    sig += rng.uniform(0.002, 0.01) * rng.standard_normal(n)
    return np.clip(np.rint(sig * 32767), -32768, 32767).astype(np.int16)


def synth_dataset(n_per_class: int, seed: int = 0) -> LabeledDataset:
    """Synthetic 3-class event task: damped tone bursts, linear chirps and
    colored-noise bursts, 384 ms at 8 kHz (24 frames), random amplitude,
    onset and frequency over a faint noise floor."""
    if n_per_class < 1:
        raise DataError("n_per_class must be >= 1")
    specs, labels, ids = [], [], []
    for c in range(len(SYNTH_CLASSES)):
        for i in range(n_per_class):
            rng = np.random.default_rng([seed, c, i])
            clip = AudioClip(_synth_clip(c, rng), SAMPLE_RATE)
            specs.append(stft_features(clip, SYNTH_FRAMES))
            labels.append(c)
            ids.append(f"synth/{SYNTH_CLASSES[c]}/{i:05d}")
    return LabeledDataset.from_features(np.stack(specs), labels, SYNTH_CLASSES, ids)


# --- directory ingestion --------------------------------------------------

def worker_count() -> int:
    env = os.environ.get("EGRU_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def _load_one(path: Path, frames: int):
    try:
        return featurize(decode_wav(path.read_bytes()), frames), None
    except (OSError, DataError) as exc:
        return None, str(exc)


def load_dir(root, manifest=None, frames: int = 64) -> LabeledDataset:
    """Featurize WAV files laid out as ``root/<class>/*.wav`` or listed in a
    CSV manifest with ``path,label`` columns (paths relative to ``root``).

    Class labels follow sorted class names.  Files that fail to decode are
    skipped and reported in ``dataset.errors``.
    """
    root = Path(root)
    if manifest is not None:
        with open(manifest, newline="") as fh:
            rows = [(root / r["path"], r["label"]) for r in csv.DictReader(fh)]
    else:
        rows = []
        if root.is_dir():
            for cdir in sorted(p for p in root.iterdir() if p.is_dir()):
                rows += [(f, cdir.name) for f in sorted(cdir.glob("*.wav"))]
    if not rows:
        raise DataError(f"no audio files found under {root}")
    names = sorted({label for _, label in rows})
    index = {n: i for i, n in enumerate(names)}
    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        results = list(pool.map(lambda r: _load_one(r[0], frames), rows))
    specs, labels, ids, errors = [], [], [], []
    for (path, label), (spec, err) in zip(rows, results):
        if err is not None:
            errors.append((str(path), err))
            continue
        specs.append(spec)
        labels.append(index[label])
        ids.append(str(path))
    if not specs:
        raise DataError(f"no decodable audio under {root}: " + "; ".join(f"{p}: {e}" for p, e in errors))
    ds = LabeledDataset.from_features(np.stack(specs), labels, names, ids)
    ds.errors = errors
    return ds
