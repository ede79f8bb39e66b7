"""Command-line driver: ``egru <command> ...``.

Commands: synth, ingest, train, export, infer, eval, bench.  Each run writes
a JSON manifest (command, arguments, seed, input and output hashes, wall
time) next to its outputs.

Exit codes: 0 success, 1 I/O failure, 2 usage error, 3 data error, 4 model
error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, bench, features, modelio, network, training
from ._kernels import BACKEND_NAME

EXIT_OK = 0
EXIT_IO = 1
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_MODEL = 4

log = logging.getLogger("egru")


class UsageError(Exception):
    pass


class ModelError(Exception):
    pass


# --- manifests -------------------------------------------------------------

def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int | None = None
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    wall_time_s: float = 0.0
    version: str = __version__
    backend: str = BACKEND_NAME

    def add_input(self, path):
        self.inputs[str(path)] = sha256_file(path)

    def add_output(self, path):
        self.outputs[str(path)] = sha256_file(path)

    def write(self, path):
        Path(path).write_text(json.dumps(self.__dict__, indent=2, sort_keys=True) + "\n")


def _config_snapshot(args) -> dict:
    return {k: v for k, v in vars(args).items() if k != "func" and not callable(v)}


def _write_bytes(path, data: bytes, manifest: RunManifest):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data)
    manifest.add_output(path)


def _write_text(path, text: str, manifest: RunManifest):
    _write_bytes(path, text.encode("utf-8"), manifest)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _read_dataset(path, manifest: RunManifest) -> features.LabeledDataset:
    path = Path(path)
    if not path.is_file():
        raise features.DataError(f"dataset file not found: {path}")
    manifest.add_input(path)
    return features.load_dataset(path.read_bytes())


def _read_model(path, manifest: RunManifest):
    path = Path(path)
    if not path.is_file():
        raise ModelError(f"model file not found: {path}")
    manifest.add_input(path)
    return modelio.read_any(path.read_bytes())


# --- synth / ingest --------------------------------------------------------

def cmd_synth(args, manifest):
    if args.per_class < 1:
        raise UsageError("--per-class must be at least 1")
    manifest.seed = args.seed
    ds = features.synth_dataset(args.per_class, seed=args.seed)
    _write_bytes(args.out, features.save_dataset(ds), manifest)
    print(f"wrote {len(ds)} examples ({ds.num_classes} classes, 64x{ds.frames}) to {args.out}")
    return Path(str(args.out) + ".manifest.json")


def cmd_ingest(args, manifest):
    if args.frames < 1:
        raise UsageError("--frames must be at least 1")
    ds = features.load_dir(args.root, args.manifest, frames=args.frames)
    if args.manifest:
        manifest.add_input(args.manifest)
    _write_bytes(args.out, features.save_dataset(ds), manifest)
    print(f"wrote {len(ds)} examples from {args.root} to {args.out}")
    for path, err in ds.errors:
        print(f"skipped {path}: {err}", file=sys.stderr)
    return Path(str(args.out) + ".manifest.json")


# --- train -----------------------------------------------------------------

def _train_configs(args, ds):
    model_config = network.ModelConfig(
        input_bins=ds.grids.shape[1], num_classes=ds.num_classes, cell_kind=args.cell,
        activation=args.activation,
    )
    train_config = training.TrainConfig(
        batch_size=args.batch, max_epochs=args.epochs, learning_rate=args.lr,
        clip_mode=args.clip, quantize_mode=args.quantize, seed=args.seed, patience=args.patience,
    )
    return model_config, train_config


def cmd_train(args, manifest):
    if args.epochs < 1 or args.batch < 1 or args.lr <= 0:
        raise UsageError("--epochs, --batch and --lr must be positive")
    ds = _read_dataset(args.data, manifest)
    manifest.seed = args.seed
    model_config, train_config = _train_configs(args, ds)
    if args.split == "kfold10":
        plan = training.kfold_split(ds, k=10, seed=args.seed)
    else:
        plan = training.holdout_split(ds, seed=args.seed)
    out = Path(args.out)
    X, y = ds.features(), ds.labels
    rows = []
    for f, part in enumerate(plan.folds):
        fold_dir = out / f"fold{f:02d}"
        result = training.train(ds, model_config, train_config, part)
        ck = result.checkpoint
        pred = training.predict_float(ck.params, model_config, X[part.test], args.quantize, args.clip)
        acc = float(np.mean(pred == y[part.test]))
        rows.append([f, len(part.train), len(part.val), len(part.test), ck.epoch, f"{ck.val_loss:.6f}", f"{acc:.6f}"])
        meta = {"train": train_config.to_dict(), "epoch": ck.epoch, "val_loss": ck.val_loss,
                "val_acc": ck.val_acc, "test_acc": acc, "fold": f, "split": args.split}
        _write_bytes(fold_dir / "checkpoint.egrf", modelio.save_float(ck.params, model_config, meta), manifest)
        hist = result.history
        _write_text(fold_dir / "curves.csv",
                    _csv_text(list(hist[0]), [[f"{v:.6f}" if isinstance(v, float) else v for v in r.values()]
                                               for r in hist]), manifest)
        _write_text(fold_dir / "test_indices.txt", "".join(f"{i}\n" for i in part.test), manifest)
        print(f"fold {f}: test accuracy {100 * acc:.2f}% (best epoch {ck.epoch})")
    accs = np.array([float(r[-1]) for r in rows])
    summary = [["mean", "", "", "", "", "", f"{accs.mean():.6f}"],
               ["std", "", "", "", "", "", f"{accs.std():.6f}"]]
    header = ["fold", "n_train", "n_val", "n_test", "best_epoch", "val_loss", "test_acc"]
    _write_text(out / "accuracy.csv", _csv_text(header, rows + summary), manifest)
    label = f"{args.cell}{' quantized' if args.quantize else ''}{' clipped' if args.clip else ''}"
    print(f"{label}: {100 * accs.mean():.2f}% +/- {100 * accs.std():.2f}% over {len(rows)} split(s)")
    return out / "manifest.json"


# --- export ----------------------------------------------------------------

def cmd_export(args, manifest):
    params, config, meta = _read_model(args.checkpoint, manifest)
    deployed = params.deploy()
    data = modelio.save(deployed, config)
    _write_bytes(args.out, data, manifest)
    print(f"wrote {args.out}: {len(data)} bytes, {network.param_count(config)} parameters")
    return Path(str(args.out) + ".manifest.json")


# --- inference / evaluation -----------------------------------------------

def _uses_q15(params, config) -> bool:
    return params.deployed and config.cell_kind == "egru" and config.activation == "softsign"


def _predictor(params, config, meta):
    """Return (mode name, function mapping Q15 grids (B, bins, T) to logits)."""
    if _uses_q15(params, config):
        return "q15", lambda g: network.forward_q15_logits(params, config, g).astype(np.float64)
    if params.deployed:
        decoded = params.decode()
        return "float-septenary", lambda g: network.forward_float(decoded, config, g / 32768.0)[0]
    tc = (meta or {}).get("train", {})
    q, c = bool(tc.get("quantize_mode", False)), bool(tc.get("clip_mode", False))
    mode = "float" + ("-quantized" if q else "") + ("-clipped" if c else "")
    return mode, lambda g: network.forward_float(params, config, g / 32768.0, quantize_in_forward=q, clip=c)[0]


def _check_task(config, bins, num_classes=None):
    if bins != config.input_bins:
        raise ModelError(f"model expects {config.input_bins} input bins, data has {bins}")
    if num_classes is not None and num_classes != config.num_classes:
        raise ModelError(f"model has {config.num_classes} classes but the dataset has {num_classes} classes")


def cmd_infer(args, manifest):
    params, config, meta = _read_model(args.model, manifest)
    wav = Path(args.wav)
    if not wav.is_file():
        raise features.DataError(f"audio file not found: {wav}")
    manifest.add_input(wav)
    spec = features.featurize(features.decode_wav(wav.read_bytes()), args.frames)
    grid = np.clip(np.rint(spec * 32768), 0, 32767).astype(np.int16)
    _check_task(config, grid.shape[0])
    mode, predict = _predictor(params, config, meta)
    logits = predict(grid[None])[0]
    cls = int(np.argmax(logits))
    print(json.dumps({"class": cls, "mode": mode, "logits": [float(v) for v in logits]}))
    return Path(args.manifest) if args.manifest else None


def _confusion(y, pred, k):
    cm = np.zeros((k, k), dtype=np.int64)
    np.add.at(cm, (y, pred), 1)
    return cm


def cmd_eval(args, manifest):
    ds = _read_dataset(args.data, manifest)
    if args.indices:
        manifest.add_input(args.indices)
        idx = np.loadtxt(args.indices, dtype=np.int64, ndmin=1)
        if idx.size and (idx.min() < 0 or idx.max() >= len(ds)):
            raise features.DataError(f"indices out of range for {len(ds)} examples")
        ds = ds.subset(idx)
    if len(ds) == 0:
        raise features.DataError("no examples to evaluate")
    out = Path(args.out)
    rows, lat_rows, accs = [], [], []
    for m, path in enumerate(args.model):
        params, config, meta = _read_model(path, manifest)
        _check_task(config, ds.grids.shape[1], ds.num_classes)
        mode, predict = _predictor(params, config, meta)
        preds = np.empty(len(ds), dtype=np.int64)
        times = np.empty(len(ds))
        for i in range(len(ds)):
            t0 = time.perf_counter()
            preds[i] = int(np.argmax(predict(ds.grids[i:i + 1])[0]))
            times[i] = time.perf_counter() - t0
        acc = float(np.mean(preds == ds.labels))
        accs.append(acc)
        cm = _confusion(ds.labels, preds, ds.num_classes)
        _write_text(out / f"confusion_{m}.csv",
                    _csv_text(["true\\pred"] + ds.class_names,
                              [[name] + row.tolist() for name, row in zip(ds.class_names, cm)]), manifest)
        rows.append([m, Path(path).name, config.cell_kind, mode, len(ds), f"{acc:.6f}"])
        lat_rows.append([m, Path(path).name, f"{1e3 * times.mean():.4f}"])
        print(f"[{m}] {path}: {mode} accuracy {100 * acc:.2f}% "
              f"({len(ds)} clips, {1e3 * times.mean():.3f} ms/clip)")
    _write_text(out / "eval.csv", _csv_text(["model", "file", "cell", "mode", "n", "accuracy"], rows), manifest)
    # Latencies vary run to run, so they stay out of eval.csv.
    _write_text(out / "latency.csv", _csv_text(["model", "file", "ms_per_clip"], lat_rows), manifest)
    for m in range(1, len(accs)):
        print(f"gap [0] - [{m}]: {100 * (accs[0] - accs[m]):+.2f} points")
    return out / "manifest.json"


# --- bench -----------------------------------------------------------------

def cmd_bench(args, manifest):
    suites = list(bench.SUITES) if args.suite == "all" else [args.suite]
    out = Path(args.out)
    for name in suites:
        fn = bench.SUITES[name]
        if name in ("activations", "cells"):
            report = fn(reps=args.reps, backend=args.backend)
        elif name == "backends":
            report = fn(reps=max(100, args.reps // 10))
        else:
            report = fn()
        text = report.to_text()
        print(text)
        _write_text(out / f"{name}.csv", report.to_csv(), manifest)
        _write_text(out / f"{name}.txt", text, manifest)
    return out / "manifest.json"


# --- parser ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="egru", description="Quantized recurrent audio event classifier.")
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write the synthetic 3-class dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--per-class", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("ingest", help="featurize a WAV directory into a dataset file")
    s.add_argument("--root", required=True, help="directory with one sub-directory per class")
    s.add_argument("--manifest", help="CSV with path,label columns, relative to --root")
    s.add_argument("--frames", type=int, default=64)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("train", help="train one model per split")
    s.add_argument("--data", required=True)
    s.add_argument("--cell", choices=("egru", "gru", "rnn"), default="egru")
    s.add_argument("--activation", choices=("softsign", "standard"),
                   help="override the cell's default activation family")
    s.add_argument("--quantize", action="store_true", help="septenary weights in the forward pass")
    s.add_argument("--clip", action="store_true", help="clip pre-activations to (-1, 1]")
    s.add_argument("--split", choices=("holdout", "kfold10"), default="holdout")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--epochs", type=int, default=150)
    s.add_argument("--lr", type=float, default=0.005)
    s.add_argument("--batch", type=int, default=32)
    s.add_argument("--patience", type=int, help="stop after this many epochs without improvement")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("export", help="quantize a checkpoint into a model file")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_export)

    s = sub.add_parser("infer", help="classify one WAV clip")
    s.add_argument("--model", required=True)
    s.add_argument("--wav", required=True)
    s.add_argument("--frames", type=int, default=features.SYNTH_FRAMES)
    s.add_argument("--manifest", help="where to write the run manifest (default: none)")
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("eval", help="evaluate one or more models on a dataset")
    s.add_argument("--model", required=True, action="append", help="repeat to compare models")
    s.add_argument("--data", required=True)
    s.add_argument("--indices", help="file of example indices to evaluate (one per line)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("bench", help="latency benchmarks and op audits")
    s.add_argument("--suite", choices=("activations", "cells", "ops", "backends", "all"), default="all")
    s.add_argument("--reps", type=int, default=bench.DEFAULT_REPS)
    s.add_argument("--backend", choices=("compiled", "python"))
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(message)s")
    manifest = RunManifest(args.command, _config_snapshot(args))
    t0 = time.perf_counter()
    try:
        if getattr(args, "backend", None) and args.backend not in bench.BACKENDS:
            raise UsageError(f"backend {args.backend!r} is not available")
        if getattr(args, "reps", 100) < 100:
            raise UsageError("--reps must be at least 100")
        target = args.func(args, manifest)
    except UsageError as exc:
        parser.error(str(exc))  # exits with EXIT_USAGE
    except (features.DataError, training.TrainingError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ModelError, modelio.ModelFormatError, modelio.ModelMismatchError, network.ShapeError) as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except ValueError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    manifest.wall_time_s = round(time.perf_counter() - t0, 3)
    if target is not None:
        Path(target).parent.mkdir(parents=True, exist_ok=True)
        manifest.write(target)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
