import csv
import hashlib
import json

import numpy as np
import pytest

from egru import cli, features, modelio, network


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture
def small_data(tmp_path):
    path = tmp_path / "d.egds"
    assert cli.main(["synth", "--out", str(path), "--per-class", "8", "--seed", "1"]) == 0
    return path


def test_synth_writes_dataset_and_manifest(tmp_path):
    out = tmp_path / "a.egds"
    assert cli.main(["synth", "--out", str(out), "--per-class", "100"]) == 0
    assert len(features.load_dataset(out.read_bytes())) == 300
    manifest = json.loads((tmp_path / "a.egds.manifest.json").read_text())
    assert manifest["command"] == "synth" and manifest["seed"] == 0
    assert manifest["outputs"][str(out)] == sha(out)


def test_synth_same_seed_same_hash(tmp_path):
    a, b = tmp_path / "a.egds", tmp_path / "b.egds"
    cli.main(["synth", "--out", str(a), "--per-class", "4", "--seed", "9"])
    cli.main(["synth", "--out", str(b), "--per-class", "4", "--seed", "9"])
    assert sha(a) == sha(b)


def test_synth_per_class_zero_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as exc:
        cli.main(["synth", "--out", str(tmp_path / "x"), "--per-class", "0"])
    assert exc.value.code == cli.EXIT_USAGE


def test_unknown_flag_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        cli.main(["train", "--bogus"])
    assert exc.value.code == cli.EXIT_USAGE


def test_train_export_eval_infer(tmp_path, small_data, capsys):
    run = tmp_path / "run"
    assert cli.main(["train", "--data", str(small_data), "--cell", "egru", "--quantize", "--clip",
                     "--epochs", "3", "--out", str(run)]) == 0
    rows = list(csv.DictReader((run / "accuracy.csv").open()))
    assert [r["fold"] for r in rows] == ["0", "mean", "std"]
    curves = list(csv.DictReader((run / "fold00" / "curves.csv").open()))
    assert len(curves) == 3 and "val_loss" in curves[0]
    assert (run / "manifest.json").exists()

    model = tmp_path / "m.egru"
    assert cli.main(["export", "--checkpoint", str(run / "fold00" / "checkpoint.egrf"), "--out", str(model)]) == 0
    assert "3072 bytes, 8127 parameters" in capsys.readouterr().out
    again = tmp_path / "m2.egru"
    assert cli.main(["export", "--checkpoint", str(model), "--out", str(again)]) == 0
    assert model.read_bytes() == again.read_bytes()

    ev = tmp_path / "ev"
    assert cli.main(["eval", "--model", str(model), "--model", str(run / "fold00" / "checkpoint.egrf"),
                     "--data", str(small_data), "--indices", str(run / "fold00" / "test_indices.txt"),
                     "--out", str(ev)]) == 0
    out = capsys.readouterr().out
    assert "gap [0] - [1]" in out
    table = list(csv.DictReader((ev / "eval.csv").open()))
    assert [r["mode"] for r in table] == ["q15", "float-quantized-clipped"]
    cm = list(csv.reader((ev / "confusion_0.csv").open()))
    assert cm[0][1:] == list(features.SYNTH_CLASSES)

    # exported file predicts like the in-memory quantized checkpoint
    params, cfg, _ = modelio.read_any((run / "fold00" / "checkpoint.egrf").read_bytes())
    ds = features.load_dataset(small_data.read_bytes())
    q15 = network.forward_q15(params.deploy(), cfg, ds.grids)
    loaded, cfg2 = modelio.load(model.read_bytes())
    np.testing.assert_array_equal(network.forward_q15(loaded, cfg2, ds.grids), q15)

    silence = tmp_path / "s.wav"
    silence.write_bytes(features.encode_wav(features.AudioClip(np.zeros(3072, np.int16), 8000)))
    for _ in range(2):
        assert cli.main(["infer", "--model", str(model), "--wav", str(silence)]) == 0
    first, second = capsys.readouterr().out.strip().splitlines()
    assert first == second
    assert set(json.loads(first)) == {"class", "mode", "logits"}


def test_gru_quantized_ablation_arm(tmp_path, small_data):
    run = tmp_path / "gq"
    assert cli.main(["train", "--data", str(small_data), "--cell", "gru", "--quantize",
                     "--epochs", "2", "--out", str(run)]) == 0
    _, cfg, meta = modelio.read_any((run / "fold00" / "checkpoint.egrf").read_bytes())
    assert cfg.cell_kind == "gru" and meta["train"]["quantize_mode"] is True


def test_kfold_table(tmp_path):
    data = tmp_path / "d.egds"
    cli.main(["synth", "--out", str(data), "--per-class", "10"])
    run = tmp_path / "k"
    assert cli.main(["train", "--data", str(data), "--cell", "rnn", "--split", "kfold10",
                     "--epochs", "1", "--out", str(run)]) == 0
    rows = list(csv.DictReader((run / "accuracy.csv").open()))
    assert [r["fold"] for r in rows] == [str(i) for i in range(10)] + ["mean", "std"]


def test_eval_class_mismatch_names_both(tmp_path, small_data, capsys):
    cfg = network.with_config(network.COUGH_CONFIG, num_classes=5)
    model = tmp_path / "five.egru"
    model.write_bytes(modelio.save(network.zero_params(cfg).deploy(), cfg))
    code = cli.main(["eval", "--model", str(model), "--data", str(small_data), "--out", str(tmp_path / "e")])
    assert code == cli.EXIT_MODEL
    err = capsys.readouterr().err
    assert "5 classes" in err and "3 classes" in err


def test_exit_codes_for_bad_inputs(tmp_path, small_data):
    corrupt = tmp_path / "bad.egru"
    corrupt.write_bytes(b"EGRU" + bytes(40))
    assert cli.main(["export", "--checkpoint", str(corrupt), "--out", str(tmp_path / "o")]) == cli.EXIT_MODEL
    assert cli.main(["eval", "--model", str(corrupt), "--data", str(tmp_path / "none.egds"),
                     "--out", str(tmp_path / "e")]) == cli.EXIT_DATA
    bad_data = tmp_path / "bad.egds"
    bad_data.write_bytes(small_data.read_bytes()[:-1])
    assert cli.main(["train", "--data", str(bad_data), "--out", str(tmp_path / "r")]) == cli.EXIT_DATA


def test_bench_ops_suite(tmp_path, capsys):
    assert cli.main(["bench", "--suite", "ops", "--out", str(tmp_path / "b")]) == 0
    rows = list(csv.DictReader((tmp_path / "b" / "ops.csv").open()))
    assert rows[0]["item"] == "egru (canonical)" and rows[0]["total"] == "12"
    assert (tmp_path / "b" / "manifest.json").exists()
