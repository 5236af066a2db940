import subprocess
import sys

import pytest

from rfdg.datastore import load_container
from rfdg.harness import cli
from rfdg.harness.report import read_csv

SMALL = """\
sim: {n_domains: 3, samples_per_class: 3}
model: {hidden_dim: 64}
train: {max_epochs: 1, batch_size: 12}
experiment: {n_runs: 2}
"""


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "cfg.yaml").write_text(SMALL)
    assert cli.main(["simulate", "--config", str(d / "cfg.yaml"), "--out", str(d / "data")]) == 0
    return d


def run(work, *args):
    return cli.main([*args, "--config", str(work / "cfg.yaml")])


def test_simulate_container(work):
    c = load_container(work / "data")
    assert c.shape == (30, 100) and len(c) == 3 * 6 * 3


def test_seed_flag_is_reproducible(work, tmp_path):
    for name in ("a", "b"):
        assert run(work, "simulate", "--seed", "7", "--out", str(tmp_path / name)) == 0
    for f in ("data.blob", "index.bin"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_train_eval_bench(work):
    out = work / "train"
    assert run(work, "train", "--data", str(work / "data"), "--fold", "T-2", "--out", str(out), "--dtype", "f64") == 0
    for f in ("history.csv", "history_steps.csv", "history.png", "checkpoint/checkpoint.json"):
        assert (out / f).exists()
    assert run(work, "eval", "--data", str(work / "data"), "--checkpoint", str(out / "checkpoint"),
               "--fold", "T-2", "--out", str(work / "eval")) == 0
    acc = float(read_csv(work / "eval" / "eval.csv")[0]["accuracy"])
    assert run(work, "bench", "--data", str(work / "data"), "--checkpoint", f"DGAR={out / 'checkpoint'}",
               "--fold", "T-2", "--out", str(work / "bench")) == 0
    row = read_csv(work / "bench" / "bench.csv")[0]
    assert list(row) == ["method", "avg_time_s", "throughput", "accuracy"]
    assert float(row["accuracy"]) == pytest.approx(acc, abs=1e-5)
    assert (work / "bench" / "bench.png").exists()


def test_erm_t_train(work):
    out = work / "ermt"
    assert run(work, "train", "--data", str(work / "data"), "--fold", "T-1", "--method", "erm-t", "--out", str(out)) == 0
    assert read_csv(out / "metrics.csv")[0]["method"] == "ERM-T"


def test_lodo_and_report(work, capsys):
    out = work / "lodo"
    assert run(work, "lodo", "--data", str(work / "data"), "--out", str(out)) == 0
    rows = read_csv(out / "lodo.csv")
    assert {r["method"] for r in rows} == {"DGAR", "ERM"} and len(rows) == 8
    assert (out / "lodo_f1.png").exists()
    capsys.readouterr()
    assert cli.main(["report", str(out / "lodo.csv"), "--out", str(work / "rep")]) == 0
    assert "Average" in capsys.readouterr().out
    for f in ("summary.csv", "summary.txt", "summary.png"):
        assert (work / "rep" / f).exists()


def test_sweep_and_ablate(work):
    assert run(work, "sweep", "--data", str(work / "data"), "--lambdas", "0,1", "--gammas", "0",
               "--out", str(work / "sw")) == 0
    assert len(read_csv(work / "sw" / "sweep.csv")) == 2
    assert run(work, "ablate", "--data", str(work / "data"), "--no-swaps", "--out", str(work / "ab")) == 0
    methods = [r["method"] for r in read_csv(work / "ab" / "ablation.csv")]
    assert sorted(set(methods)) == sorted(["L_cls", "L_cls+L_adapt", "L_cls+L_align", "DGAR"])


def test_gradcheck_command(tmp_path):
    assert cli.main(["gradcheck", "--seeds", "1", "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "gradcheck.csv")
    assert all(float(r["max_rel_error"]) < 1e-5 for r in rows)


def test_gradcheck_failure_exit_code(tmp_path, monkeypatch):
    monkeypatch.setattr(cli, "run_suite", lambda seeds: [{"check": "x", "seeds": 1, "max_rel_error": 1.0,
                                                          "seconds": 0.0}])
    assert cli.main(["gradcheck", "--out", str(tmp_path)]) == cli.EXIT_NUMERICAL


def test_exit_codes(work, tmp_path, capsys):
    assert cli.main(["nonsense"]) == cli.EXIT_USAGE
    assert cli.main(["train"]) == cli.EXIT_USAGE
    bad = tmp_path / "bad.yaml"
    bad.write_text("sim: {bogus: 1}\n")
    assert cli.main(["simulate", "--config", str(bad), "--out", str(tmp_path)]) == cli.EXIT_USAGE
    assert "valid keys" in capsys.readouterr().err
    assert cli.main(["eval", "--data", str(tmp_path / "none"), "--checkpoint", "x", "--out", str(tmp_path)]) == \
        cli.EXIT_DATA
    assert run(work, "eval", "--data", str(work / "data"), "--checkpoint", str(work / "train" / "checkpoint"),
               "--fold", "T-9", "--out", str(tmp_path)) == cli.EXIT_USAGE


def test_console_entry_point():
    r = subprocess.run([sys.executable, "-m", "rfdg", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    for c in ("simulate", "train", "eval", "lodo", "ablate", "sweep", "gradcheck", "bench", "report"):
        assert c in r.stdout
