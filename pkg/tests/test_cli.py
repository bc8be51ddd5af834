import json
import os

import pytest

from nastl.cli import main


@pytest.fixture()
def bench_path(tmp_path):
    path = str(tmp_path / "bench.json")
    spec = {"tasks": [
        {"name": "alpha", "family": "smooth"},
        {"name": "segmentsemantic", "family": "skewed"},
    ]}
    spec_path = str(tmp_path / "spec.json")
    json.dump(spec, open(spec_path, "w"))
    assert main(["bench", "gen", "--seed", "3", "--out", path,
                 "--spec", spec_path]) == 0
    return path


def test_bench_gen_deterministic(tmp_path):
    p1, p2 = str(tmp_path / "one.json"), str(tmp_path / "two.json")
    assert main(["bench", "gen", "--seed", "1", "--out", p1]) == 0
    assert main(["bench", "gen", "--seed", "1", "--out", p2]) == 0
    assert open(p1, "rb").read() == open(p2, "rb").read()


def test_bench_validate(bench_path, capsys):
    assert main(["bench", "validate", "--bench", bench_path]) == 0
    assert "OK" in capsys.readouterr().out


def test_bench_validate_rejects_garbage(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{}")
    assert main(["bench", "validate", "--bench", str(bad)]) == 1
    assert "error" in capsys.readouterr().err


def test_bench_correlate_csv(bench_path, tmp_path):
    out = str(tmp_path / "corr.csv")
    assert main(["bench", "correlate", "--bench", bench_path, "--out", out]) == 0
    lines = open(out).read().strip().splitlines()
    assert lines[0] == "task_a,task_b,kendall_tau"
    assert len(lines) == 1 + 4  # 2x2 matrix


def test_sweep_gamma_flags_argmax(bench_path, tmp_path):
    out = str(tmp_path / "sweep.csv")
    assert main(["sweep-gamma", "--bench", bench_path, "--task", "segmentsemantic",
                 "--grid-points", "50", "--values", "raw", "--out", out]) == 0
    lines = open(out).read().strip().splitlines()
    assert lines[0] == "exponent,spread,is_best"
    flags = [int(l.rsplit(",", 1)[1]) for l in lines[1:]]
    assert sum(flags) == 1
    best_row = lines[1 + flags.index(1)]
    assert float(best_row.split(",")[0]) < 1.0  # narrow low band lifts


def test_train_missing_task_exits_1(bench_path, tmp_path, capsys):
    code = main(["train", "--bench", bench_path, "--task", "missing",
                 "--out", str(tmp_path / "run")])
    assert code == 1
    assert "does not cover task" in capsys.readouterr().err


def test_train_eval_roundtrip(bench_path, tmp_path, capsys):
    out = str(tmp_path / "run")
    code = main(["--config", _cfg_file(tmp_path), "train", "--bench", bench_path,
                 "--task", "alpha", "--out", out, "--steps", "512",
                 "--eval-interval", "256"])
    assert code == 0
    ckpts = sorted(p for p in os.listdir(out) if p.endswith(".nt"))
    assert ckpts
    eval_out = str(tmp_path / "eval.json")
    code = main(["eval", "--bench", bench_path, "--ckpt", os.path.join(out, ckpts[-1]),
                 "--task", "alpha", "--episodes", "4", "--out", eval_out])
    assert code == 0
    doc = json.load(open(eval_out))
    assert len(doc["values"]) == 4


def _cfg_file(tmp_path):
    path = str(tmp_path / "cli.json")
    json.dump({"seed": 9}, open(path, "w"))
    return path


def test_print_config_layers(bench_path, tmp_path, capsys, monkeypatch):
    cfg = _cfg_file(tmp_path)
    monkeypatch.setenv("NASTL_STEPS", "4096")
    code = main(["--config", cfg, "--print-config", "train", "--bench", bench_path,
                 "--task", "alpha", "--out", str(tmp_path / "o"), "--preset", "desk"])
    assert code == 0
    out = capsys.readouterr().out
    assert "seed = 9  (config-file)" in out
    assert "steps = 4096  (env)" in out
    assert "preset = 'desk'  (flag)" in out
    assert "mode = 'deterministic'  (default)" in out


def test_usage_error_exit_2():
    with pytest.raises(SystemExit) as exc:
        main(["definitely-not-a-command"])
    assert exc.value.code == 2


def test_shaping_auto_rule(bench_path, tmp_path):
    out = str(tmp_path / "seg")
    assert main(["train", "--bench", bench_path, "--task", "segmentsemantic",
                 "--out", out, "--steps", "256", "--eval-interval", "256"]) == 0
    doc = json.load(open(os.path.join(out, "config.json")))
    assert doc["shaping_exponent"] == 0.478
    out2 = str(tmp_path / "alpha")
    assert main(["train", "--bench", bench_path, "--task", "alpha",
                 "--out", out2, "--steps", "256", "--eval-interval", "256"]) == 0
    doc2 = json.load(open(os.path.join(out2, "config.json")))
    assert doc2["shaping_exponent"] is None


def test_transfer_and_analyze_pipeline(bench_path, tmp_path):
    root = str(tmp_path / "matrix")
    assert main(["transfer", "matrix", "--bench", bench_path,
                 "--tasks", "alpha,segmentsemantic", "--seeds", "0",
                 "--pretrain-steps", "512", "--eval-interval", "256",
                 "--steps", "512", "--out", root]) == 0
    assert os.path.exists(os.path.join(root, "manifest.json"))

    matrix_csv = str(tmp_path / "retrain.csv")
    assert main(["analyze", "matrix", "--dir", root, "--regime", "retrain",
                 "--out", matrix_csv]) == 0
    lines = open(matrix_csv).read().strip().splitlines()
    assert lines[0] == "source,target,mean,std,ci_low,ci_high,n"
    assert len(lines) == 1 + 4

    curves_csv = str(tmp_path / "curves.csv")
    assert main(["analyze", "curves", "--dir", root, "--kernel", "2",
                 "--out", curves_csv]) == 0
    assert open(curves_csv).readline().startswith("target,source,step")

    cross_csv = str(tmp_path / "cross.csv")
    assert main(["analyze", "crossover", "--dir", root, "--kernel", "2",
                 "--out", cross_csv]) == 0
    lines = open(cross_csv).read().strip().splitlines()
    assert lines[0].startswith("source,target,pair_count,crossed_count,mean_steps")
    assert len(lines) >= 3

    pytest.importorskip("matplotlib")
    fig = str(tmp_path / "retrain.svg")
    assert main(["analyze", "matrix", "--dir", root, "--regime", "retrain",
                 "--out", matrix_csv, "--figure", fig]) == 0
    assert os.path.getsize(fig) > 0
