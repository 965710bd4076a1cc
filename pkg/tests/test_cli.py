import json
import subprocess
import sys
import xml.etree.ElementTree as ET
import zipfile

import pytest

from ecd_peakformer.cli import main

TINY = ["--set", "embedding_dim=16", "--set", "gnn_iterations=2", "--set", "transformer_layers=1",
        "--set", "n_heads=2", "--set", "split_fractions=[1.0, 0.0, 0.0]"]


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["synth-data", "--n", "12", "--seed", "0", "--out", str(d / "data.jsonl")]) == 0
    return d


@pytest.fixture(scope="module")
def checkpoint(workdir):
    ck = workdir / "ck.zip"
    assert main(["train", str(workdir / "data.jsonl"), "--epochs", "2", "--batch-size", "4", *TINY,
                 "--out", str(ck)]) == 0
    return ck


def test_synth_data(workdir):
    lines = (workdir / "data.jsonl").read_text().splitlines()
    assert len(lines) == 12
    obj = json.loads(lines[0])
    assert {"id", "smiles", "spectrum", "peaks"} <= set(obj) and len(obj["spectrum"]) == 371


def test_ingest_fixed_point(workdir, capsys):
    a, b = workdir / "a.jsonl", workdir / "b.jsonl"
    assert main(["ingest", str(workdir / "data.jsonl"), "--out", str(a)]) == 0
    assert main(["ingest", str(a), "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    summary = json.loads(capsys.readouterr().out.splitlines()[-1])
    assert summary == {"read": 12, "valid": 12, "rejected": 0, "errors": []}


def test_ingest_strict_and_lenient(workdir, capsys):
    bad = workdir / "bad.jsonl"
    good = (workdir / "data.jsonl").read_text().splitlines()[0]
    bad.write_text(good + "\n" + json.dumps({"id": "x", "smiles": "C1CC"}) + "\n")
    assert main(["ingest", str(bad)]) == 2
    assert "line 2" in capsys.readouterr().err
    assert main(["ingest", str(bad), "--lenient"]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["valid"] == 1 and summary["rejected"] == 1 and summary["errors"][0]["line"] == 2


def test_usage_errors(workdir, capsys):
    assert main(["ingest", str(workdir / "data.jsonl"), "--no-such-flag"]) == 1
    assert main([]) == 1
    assert main(["train", str(workdir / "data.jsonl"), "--out", "x", "--set", "bogus=1"]) == 1
    assert main(["predict", "--checkpoint", "x"]) == 1


def test_missing_file_is_data_error(tmp_path):
    assert main(["ingest", str(tmp_path / "nope.jsonl")]) == 2


def test_train_writes_checkpoint_and_log(checkpoint):
    with zipfile.ZipFile(checkpoint) as zf:
        names = zf.namelist()
        manifest = json.loads(zf.read("manifest.json"))
    assert names == sorted(names) and "manifest.json" in names
    assert any(n.startswith("tensors/model/") for n in names)
    assert manifest["config"]["embedding_dim"] == 16 and manifest["config"]["epochs"] == 2
    log = [json.loads(l) for l in open(f"{checkpoint}.log.jsonl")]
    assert [r["epoch"] for r in log] == [0, 1]


def test_config_file_and_flag_precedence(workdir, tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text("epochs = 3\nbatch_size = 6\nembedding_dim = 16\ngnn_iterations = 1\n"
                   "transformer_layers = 1\nn_heads = 2\nsplit_fractions = [1.0, 0.0, 0.0]\n")
    out = tmp_path / "ck.zip"
    assert main(["train", str(workdir / "data.jsonl"), "--config", str(cfg), "--epochs", "1",
                 "--out", str(out)]) == 0
    manifest = json.loads(zipfile.ZipFile(out).read("manifest.json"))
    assert manifest["config"]["epochs"] == 1 and manifest["config"]["batch_size"] == 6


def test_predict_smiles(checkpoint, tmp_path):
    out = tmp_path / "pred.jsonl"
    assert main(["predict", "--smiles", "N[C@H](C)C(=O)O", "--checkpoint", str(checkpoint),
                 "--out", str(out)]) == 0
    (line,) = out.read_text().splitlines()
    obj = json.loads(line)
    assert len(obj["spectrum"]) == 371 and isinstance(obj["peaks"], list)
    assert obj["coordinates"] == "embedded" and obj["embedding_seed"] == 0


def test_predict_is_reproducible(checkpoint, workdir, tmp_path):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    for p in (a, b):
        assert main(["predict", str(workdir / "data.jsonl"), "--checkpoint", str(checkpoint), "--out", str(p)]) == 0
    assert a.read_bytes() == b.read_bytes() and len(a.read_text().splitlines()) == 12


def test_evaluate_identity(workdir, capsys):
    assert main(["evaluate", str(workdir / "data.jsonl"), "--predictions", str(workdir / "data.jsonl")]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[-2].split() == ["0.00", "0.00", "100.0"]


def test_evaluate_checkpoint(workdir, checkpoint, tmp_path, capsys):
    report = tmp_path / "r.json"
    assert main(["evaluate", str(workdir / "data.jsonl"), "--checkpoint", str(checkpoint),
                 "--out", str(report)]) == 0
    assert json.loads(report.read_text())["n_molecules"] == 12
    assert "Symbol-Acc" in capsys.readouterr().out


def test_render_plot(workdir, tmp_path):
    out = tmp_path / "svg"
    assert main(["render-plot", str(workdir / "data.jsonl"), "--out", str(out)]) == 0
    files = sorted(out.glob("*.svg"))
    assert len(files) == 12
    root = ET.parse(files[0]).getroot()
    ns = "{http://www.w3.org/2000/svg}"
    assert root.get("version") == "1.1"
    assert len(root.findall(f"{ns}polyline")) == 1 and len(root.findall(f"{ns}line")) == 1
    assert "href" not in files[0].read_text()


def test_numeric_failure_exit_code(workdir):
    assert main(["train", str(workdir / "data.jsonl"), "--epochs", "2", "--learning-rate", "1e308",
                 *TINY, "--out", str(workdir / "nan.zip")]) == 3


def test_module_entry_point_and_threads_env(tmp_path):
    env = {"ECD_PEAKFORMER_THREADS": "1", "PATH": ""}
    res = subprocess.run([sys.executable, "-m", "ecd_peakformer", "synth-data", "--n", "2",
                          "--out", str(tmp_path / "d.jsonl")], env=env, capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    res = subprocess.run([sys.executable, "-m", "ecd_peakformer", "train"], env=env,
                         capture_output=True, text=True)
    assert res.returncode == 1 and "usage" in res.stderr
    res = subprocess.run([sys.executable, "-m", "ecd_peakformer", "synth-data", "--out", "x"],
                         env={**env, "ECD_PEAKFORMER_THREADS": "many"}, capture_output=True, text=True)
    assert res.returncode == 1
