import csv
import json

import numpy as np
import pytest

from impactgraph import __version__
from impactgraph.cli import main
from impactgraph.dataset import HEADER, load_csv, records_to_arrays, split_masks
from impactgraph.estimator import GraphRegressor
from impactgraph.models import FAMILIES
from impactgraph.training import r_squared

FAST = ["--epochs", "40", "--hidden", "8,8"]


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    path = d / "data.csv"
    assert main(["generate", "--n", "60", "--seed", "7", "--out", str(path)]) == 0
    return path


@pytest.fixture(scope="module")
def gat_run(dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert main(["train", "--data", str(dataset), "--family", "gat", "--target", "max_peeq", "--out", str(out), *FAST]) == 0
    return out


def test_generate(tmp_path):
    path = tmp_path / "d.csv"
    assert main(["generate", "--n", "100", "--seed", "7", "--out", str(path)]) == 0
    records = load_csv(path)
    assert len(records) == 100 and all(not r.range_flags() for r in records)
    assert read_csv(path)[0] == list(HEADER)
    sidecar = json.loads((tmp_path / "d.csv.json").read_text())
    assert sidecar["oracle_config"]["seed"] == 7
    manifest = json.loads((tmp_path / "d.csv.manifest.json").read_text())
    assert manifest["command"] == "generate" and manifest["version"] == __version__
    import hashlib

    assert manifest["outputs"][str(path)] == hashlib.sha256(path.read_bytes()).hexdigest()
    again = tmp_path / "e.csv"
    main(["generate", "--n", "100", "--seed", "7", "--out", str(again)])
    assert path.read_bytes() == again.read_bytes()


def test_generate_rejects_zero_rows(tmp_path, capsys):
    assert main(["generate", "--n", "0", "--out", str(tmp_path / "x.csv")]) == 2
    assert "--n" in capsys.readouterr().err


def test_unknown_family_lists_choices(dataset, tmp_path, capsys):
    assert main(["train", "--data", str(dataset), "--family", "mlp", "--out", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert all(f in err for f in FAMILIES)


def test_missing_data_file(tmp_path):
    assert main(["train", "--data", str(tmp_path / "nope.csv"), "--out", str(tmp_path)]) == 2


def test_missing_required_flag(tmp_path, capsys):
    assert main(["train", "--out", str(tmp_path)]) == 2
    assert "--data" in capsys.readouterr().err


def test_divergence_exits_3(dataset, tmp_path):
    code = main(["train", "--data", str(dataset), "--family", "tdamlp", "--lr", "1e300", "--out", str(tmp_path), *FAST])
    assert code == 3


def test_train_outputs_and_round_trip(gat_run, dataset):
    ckpt_path = gat_run / "gat__max_peeq.ckpt.json"
    ckpt = json.loads(ckpt_path.read_text())
    for key in ("config", "params", "norm_stats", "graph_file", "target"):
        assert key in ckpt
    assert (gat_run / ckpt["graph_file"]).exists()
    assert read_csv(gat_run / "gat__max_peeq.history.csv")[0] == ["epoch", "loss"]
    est = GraphRegressor.load(ckpt_path)
    metrics = json.loads((gat_run / "metrics.json").read_text())
    X, Y = records_to_arrays(load_csv(dataset))
    masks = split_masks(len(X), 0.2, 7)
    row = next(r for r in metrics["rows"] if r["split"] == "test")
    assert abs(row["r2"] - r_squared(Y["max_peeq"], est.predict_nodes(), masks.test_mask)) < 1e-12


def test_evaluate_reproduces_training_report(gat_run, dataset, tmp_path, capsys):
    ev = tmp_path / "ev"
    code = main(["evaluate", "--checkpoints", str(gat_run / "gat__max_peeq.ckpt.json"), "--data", str(dataset),
                 "--out", str(ev), "--json"])
    assert code == 0
    printed = json.loads(capsys.readouterr().out)
    trained = json.loads((gat_run / "metrics.json").read_text())["rows"]
    for a, b in zip(sorted(printed["rows"], key=lambda r: r["split"]), sorted(trained, key=lambda r: r["split"])):
        for m in ("mse", "mae", "r2"):
            assert abs(a[m] - b[m]) < 1e-12
    rows = read_csv(ev / "gat__max_peeq.predictions.csv")
    assert rows[0] == ["actual", "predicted"]
    test_n = next(r["n"] for r in printed["rows"] if r["split"] == "test")
    assert len(rows) - 1 == test_n == 12
    vals = np.array(rows[1:], dtype=float)
    r2 = next(r["r2"] for r in printed["rows"] if r["split"] == "test")
    assert abs(r_squared(vals[:, 0], vals[:, 1]) - r2) < 1e-12


def test_evaluate_mask_mismatch(gat_run, tmp_path):
    other = tmp_path / "other.csv"
    main(["generate", "--n", "50", "--seed", "1", "--out", str(other)])
    code = main(["evaluate", "--checkpoints", str(gat_run / "gat__max_peeq.ckpt.json"), "--data", str(other),
                 "--out", str(tmp_path / "ev")])
    assert code == 2


def test_surface_minimal_grid(gat_run, tmp_path):
    out = tmp_path / "s.csv"
    assert main(["surface", "--checkpoint", str(gat_run / "gat__max_peeq.ckpt.json"), "--fix", "friction=median",
                 "--grid", "2", "--out", str(out)]) == 0
    rows = read_csv(out)
    assert rows[0] == ["velocity_ms", "particle_temp_K", "prediction"]
    corners = {(float(a), float(b)) for a, b, _ in rows[1:]}
    assert corners == {(400.0, 300.0), (400.0, 600.0), (900.0, 300.0), (900.0, 600.0)}


def test_surface_default_grid_and_unknown_parameter(gat_run, tmp_path):
    ckpt = str(gat_run / "gat__max_peeq.ckpt.json")
    out = tmp_path / "s.csv"
    assert main(["surface", "--checkpoint", ckpt, "--fix", "velocity=650", "--out", str(out)]) == 0
    rows = read_csv(out)
    assert rows[0][:2] == ["particle_temp_K", "friction"] and len(rows) == 1 + 50 * 50
    assert main(["surface", "--checkpoint", ckpt, "--fix", "pressure=1", "--out", str(out)]) == 2


def test_surface_point_consistency(tmp_path):
    # One sample sits exactly on a 3x3 grid node when friction is fixed at its value.
    rng = np.random.default_rng(0)
    rows = [[rng.uniform(400, 900), rng.uniform(300, 600), rng.uniform(0.1, 0.5)] for _ in range(24)]
    rows.append([650.0, 450.0, 0.27])
    data = tmp_path / "d.csv"
    with open(data, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HEADER)
        for v, t, m in rows:
            w.writerow([repr(v), repr(t), repr(m), repr(v / 300), "", "", "", ""])
    run = tmp_path / "run"
    assert main(["train", "--data", str(data), "--family", "graphsage", "--out", str(run), *FAST]) == 0
    ckpt = run / "graphsage__max_peeq.ckpt.json"
    out = tmp_path / "s.csv"
    assert main(["surface", "--checkpoint", str(ckpt), "--fix", "friction=0.27", "--grid", "3", "--out", str(out)]) == 0
    grid = {(float(a), float(b)): float(p) for a, b, p in read_csv(out)[1:]}
    node = GraphRegressor.load(ckpt).predict_nodes()[24]
    assert abs(grid[(650.0, 450.0)] - node) < 1e-12


def test_predict(gat_run, capsys):
    args = ["predict", "--checkpoint", str(gat_run / "gat__max_peeq.ckpt.json"), "--velocity", "700", "--temp", "450",
            "--friction", "0.3"]
    outs = []
    for _ in range(3):
        assert main(args) == 0
        outs.append(capsys.readouterr().out)
    assert outs[0] == outs[1] == outs[2]
    name, value = outs[0].split()
    assert name == "max_peeq" and np.isfinite(float(value))
    assert main(["predict", "--checkpoint", "x", "--velocity", "fast", "--temp", "1", "--friction", "0"]) == 2


def test_predict_coincident_tdamlp(dataset, tmp_path, capsys):
    run = tmp_path / "run"
    main(["train", "--data", str(dataset), "--family", "tdamlp", "--out", str(run), *FAST])
    capsys.readouterr()
    ckpt = run / "tdamlp__max_peeq.ckpt.json"
    x = load_csv(dataset)[3]
    main(["predict", "--checkpoint", str(ckpt), "--velocity", repr(x.velocity), "--temp", repr(x.particle_temp),
          "--friction", repr(x.friction)])
    value = float(capsys.readouterr().out.split()[1])
    assert abs(value - GraphRegressor.load(ckpt).predict_nodes()[3]) < 1e-10


def test_full_grid(dataset, tmp_path):
    run = tmp_path / "grid"
    assert main(["train", "--data", str(dataset), "--family", "all", "--target", "all", "--out", str(run),
                 "--epochs", "5", "--hidden", "4"]) == 0
    assert len(list(run.glob("*.ckpt.json"))) == 20
    report = json.loads((run / "metrics.json").read_text())
    assert len([r for r in report["rows"] if r["split"] == "test"]) == 20
    assert "Prediction performance for deformation_ratio" in (run / "metrics.txt").read_text()


def test_config_file_and_manifest_replay(dataset, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"data": str(dataset), "family": "tdamlp", "epochs": 30, "hidden": [8]}))
    a = tmp_path / "a"
    assert main(["train", "--config", str(cfg), "--out", str(a)]) == 0
    ckpt = json.loads((a / "tdamlp__max_peeq.ckpt.json").read_text())
    assert ckpt["estimator"]["max_epochs"] == 30 and ckpt["estimator"]["hidden_dims"] == [8]
    b = tmp_path / "b"
    assert main(["train", "--config", str(a / "manifest.json"), "--out", str(b)]) == 0
    assert (a / "tdamlp__max_peeq.ckpt.json").read_bytes() == (b / "tdamlp__max_peeq.ckpt.json").read_bytes()
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"colour": "red"}))
    assert main(["train", "--config", str(bad)]) == 2


def test_version(capsys):
    assert main(["--version"]) == 0
    assert __version__ in capsys.readouterr().out
