import csv
import json
import shutil

import numpy as np
import pytest

from metroflow import cli
from metroflow import tensor as T
from metroflow.checkpoint import Checkpoint
from metroflow.model import VARIANTS
from metroflow.tensor import parameter

TINY = {"days": 12, "epochs_max": 2, "patience": None, "filters": [4, 8], "exo_hidden": 6, "trunk_hidden": 6}


def write_config(path, **extra):
    path.write_text(json.dumps({**TINY, **extra}))
    return str(path)


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    cfg = root / "cfg.json"
    cfg.write_text(json.dumps(TINY))
    assert cli.main(["synth", "--config", str(cfg), "--out", str(root / "data")]) == 0
    return root / "data"


@pytest.fixture
def config(tmp_path, data_dir):
    return write_config(tmp_path / "cfg.json", data_dir=str(data_dir))


def read_rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_synth_is_reproducible(tmp_path, capsys, data_dir):
    cfg = write_config(tmp_path / "cfg.json")
    assert run(capsys, "synth", "--config", cfg, "--out", tmp_path / "again")[0] == 0
    for name in sorted(p.name for p in data_dir.iterdir()):
        a, b = data_dir / name, tmp_path / "again" / name
        if name == "truth.json":
            strip = lambda p: {k: v for k, v in json.loads(p.read_text()).items() if k != "config"}
            assert strip(a) == strip(b)
        else:
            assert a.read_bytes() == b.read_bytes(), name
    assert {"afc.csv", "weather.csv", "air_quality.csv", "inflow_30.csv", "topology_edges.csv"} <= {
        p.name for p in data_dir.iterdir()}


def test_synth_rejects_empty_calendar(tmp_path, capsys):
    code, _, err = run(capsys, "synth", "--config", write_config(tmp_path / "c.json", days=0), "--out", tmp_path)
    assert code == 2 and "days" in err


def test_train_without_graph_branch(tmp_path, capsys, config):
    out = tmp_path / "run"
    code, stdout, _ = run(capsys, "train", "--config", config, "--variant", "no_graph", "--out", out)
    assert code == 0 and "no_graph" in stdout
    ck = Checkpoint.load(out / "checkpoint.npz")
    assert ck.spec["graph"] is False
    assert not [k for k in ck.params if k.startswith(("branches.graph", "fusion.graph"))]
    assert read_rows(out / "loss.csv")[-1]["epoch"] == "2"


def test_evaluate_outputs_agree(tmp_path, capsys, config):
    out = tmp_path / "run"
    assert run(capsys, "train", "--config", config, "--out", out)[0] == 0
    assert run(capsys, "evaluate", "--config", config, "--out", out)[0] == 0
    metrics = json.loads((out / "metrics.json").read_text())
    csvs = sorted((out / "stations").glob("*.csv"))
    assert len(csvs) == 8  # two lines of five sharing two transfer stations
    actual, predicted = [], []
    for path in csvs:
        rows = read_rows(path)
        assert len(rows) == 5 * 31  # test week, 31 target slots a day at 30 min
        actual += [float(r["actual"]) for r in rows]
        predicted += [float(r["predicted"]) for r in rows]
    actual, predicted = np.array(actual), np.array(predicted)
    assert metrics["wmape"] == pytest.approx(np.abs(actual - predicted).sum() / actual.sum(), rel=1e-12)
    assert metrics["n_test_points"] == actual.size
    assert {"rmse", "mae", "seed", "build_id", "created", "config"} <= set(metrics)


def test_baseline_variant_trains_and_evaluates(tmp_path, capsys, config):
    out = tmp_path / "bp"
    assert run(capsys, "train", "--config", config, "--variant", "bpnn", "--out", out)[0] == 0
    assert run(capsys, "evaluate", "--config", config, "--out", out)[0] == 0
    assert json.loads((out / "metrics.json").read_text())["kind"] == "bpnn"


def test_ablate_writes_six_rows(tmp_path, capsys, config):
    out = tmp_path / "ab"
    code, stdout, _ = run(capsys, "ablate", "--config", config, "--seed", 7, "--out", out)
    rows = read_rows(out / "ablation.csv")
    assert code == 0 and [r["model"] for r in rows] == list(VARIANTS)
    assert {r["seed"] for r in rows} == {"7"} and not any(r["error"] for r in rows)
    assert len(stdout.splitlines()) == 6


def test_tg_rows_and_missing_checkpoint(tmp_path, capsys, config):
    out = tmp_path / "tg"
    assert run(capsys, "tg", "--config", config, "--out", out)[0] == 0
    rows = read_rows(out / "tg.csv")
    assert [r["tg"] for r in rows] == ["10*3", "15*2", "30"]
    assert len({r["n_points"] for r in rows}) == 1
    shutil.rmtree(out / "tg_15")
    strict = write_config(tmp_path / "strict.json", data_dir=json.loads(open(config).read())["data_dir"],
                          tg_train_missing=False)
    code, _, err = run(capsys, "tg", "--config", strict, "--out", out)
    assert code == 2 and "15-min" in err and str(out / "tg_15" / "checkpoint.npz") in err


def test_gradcheck_passes(capsys):
    code, stdout, _ = run(capsys, "gradcheck")
    assert code == 0
    lines = stdout.splitlines()
    assert len(lines) == len(cli.SUITE) and all(line.endswith("ok") for line in lines)
    assert {"conv2d", "batch_norm", "dense", "lstm_cell", "residual_block", "attention_lstm", "fuse",
            "full_forward"} <= {line.split()[0] for line in lines}


def test_gradcheck_flags_wrong_gradient(capsys, monkeypatch):
    def broken(rng):
        a = parameter(rng.normal(size=(3, 3)))
        return (lambda: T.tsum(T._result(a.data**2, (a,), lambda g: ((a, g * a.data),)))), [a]

    monkeypatch.setattr(cli, "SUITE", {"broken_square": broken})
    code, stdout, _ = run(capsys, "gradcheck")
    assert code == 4 and "broken_square" in stdout and "FAIL" in stdout


@pytest.mark.parametrize("content,needle", [
    (None, "not found"),
    ("{", "not valid JSON"),
    ("[1]", "flat JSON object"),
    ('{"epochz": 3}', "unknown config keys"),
    ('{"filters": {"a": 1}}', "must be flat"),
    ('{"tg": 20}', "tg must be one of"),
])
def test_bad_configs_exit_2(tmp_path, capsys, content, needle):
    path = tmp_path / "c.json"
    if content is not None:
        path.write_text(content)
    code, _, err = run(capsys, "train", "--config", path)
    assert code == 2 and needle in err


def test_missing_data_exits_3(tmp_path, capsys):
    code, _, err = run(capsys, "train", "--out", tmp_path / "empty")
    assert code == 3 and "topology" in err


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_exits_4(tmp_path, capsys, data_dir):
    cfg = write_config(tmp_path / "c.json", data_dir=str(data_dir), lr=1e150)
    code, _, err = run(capsys, "train", "--config", cfg, "--out", tmp_path / "o")
    assert code == 4 and "non-finite" in err


def test_unknown_variant_exits_2(tmp_path, capsys, config):
    code, _, err = run(capsys, "train", "--config", config, "--variant", "arima", "--out", tmp_path)
    assert code == 2 and "arima" in err


def test_unwritable_output_exits_5(tmp_path, capsys, config):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    code, _, _ = run(capsys, "train", "--config", config, "--out", blocker)
    assert code == 5
