import csv
import subprocess
import sys

import numpy as np
import pytest

from lccd.cli import main
from lccd.libsvm import read_model


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_topology_outputs(tmp_path):
    code = main(["topology", "--preset", "synth-tiny", "--topologies", "ring,clique",
                 "--seeds", "3", "--iters", "3000", "--out", str(tmp_path)])
    assert code == 0
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names == sorted([f"trace_{t}_seed{s}.csv" for t in ("ring", "clique") for s in range(3)]
                           + ["summary.csv"])
    rows = read_csv(tmp_path / "summary.csv")
    assert len(rows) == 6 and all(r["iters_to_target"] for r in rows)
    trace = read_csv(tmp_path / "trace_ring_seed0.csv")
    assert list(trace[0]) == ["k", "wall_s", "objective", "feas_residual"]
    assert trace[0]["k"] == "0" and trace[-1]["k"] == "3000"
    assert float(trace[0]["objective"]) == pytest.approx(1000.0)


def test_reproducible_runs_are_byte_identical(tmp_path):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["topology", "--preset", "synth-tiny", "--iters", "1000", "--seed", "4",
                     "--reproducible", "--out", str(out)]) in (0, 1)
        outs.append({p.name: p.read_bytes() for p in out.iterdir()})
    assert outs[0] == outs[1] and len(outs[0]) == 5


def test_toml_config_and_env_seed(tmp_path, monkeypatch):
    cfg = tmp_path / "run.toml"
    cfg.write_text('reproducible = true\n[topology]\npreset = "synth-tiny"\n'
                   'topologies = "star-ring"\niters = 500\ntrace-every = 50\n')
    monkeypatch.setenv("LCCD_SEED", "7")
    out = tmp_path / "o"
    main(["topology", "--config", str(cfg), "--out", str(out)])
    trace = read_csv(out / "trace_star-ring_seed7.csv")
    assert [int(r["k"]) for r in trace] == list(range(0, 501, 50))
    assert all(r["wall_s"] == "0" for r in trace)
    # flags override the file
    main(["topology", "--config", str(cfg), "--iters", "100", "--seed", "1", "--out", str(out)])
    assert read_csv(out / "trace_star-ring_seed1.csv")[-1]["k"] == "100"


@pytest.mark.parametrize("argv", [
    ["topology", "--topologies", "hypercube", "--preset", "synth-tiny"],
    ["topology", "--preset", "nope"],
    ["svm", "--data", "/nonexistent/file.svm"],
    ["stochastic", "--preset", "svm-toy"],
])
def test_input_errors_exit_2(tmp_path, argv, capsys):
    assert main(argv + ["--out", str(tmp_path)]) == 2
    assert "lccd: error" in capsys.readouterr().err


def test_bad_config_files_exit_2(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("iters = [\n")
    assert main(["topology", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    unknown = tmp_path / "unknown.toml"
    unknown.write_text("[topology]\nspeed = 3\n")
    assert main(["topology", "--config", str(unknown), "--out", str(tmp_path / "o")]) == 2


def test_parse_error_cleans_partial_outputs(tmp_path):
    data = tmp_path / "d.svm"
    data.write_text("+1 1:1\n-1 2:1\n+3 1:1\n")
    out = tmp_path / "o"
    assert main(["svm", "--data", str(data), "--out", str(out)]) == 2
    assert not out.exists() or not any(out.iterdir())


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergent_async_run_exits_3(tmp_path, capsys):
    code = main(["async", "--preset", "synth-tiny", "--topology", "ring", "--threads", "1",
                 "--lock-mode", "free", "--alpha", "50", "--delay-us", "0",
                 "--monitor-interval", "0.01", "--max-wall-s", "20", "--out", str(tmp_path)])
    assert code == 3
    assert "numerical failure" in capsys.readouterr().err
    assert not (tmp_path / "async.csv").exists()


def test_async_table(tmp_path):
    code = main(["async", "--preset", "synth-tiny", "--topology", "clique", "--threads", "2",
                 "--lock-mode", "double,free", "--delay-us", "0", "--monitor-interval", "0.01",
                 "--out", str(tmp_path)])
    assert code == 0
    rows = read_csv(tmp_path / "async.csv")
    assert [(r["threads"], r["lock_mode"]) for r in rows] == [
        ("1", "double"), ("2", "double"), ("1", "free"), ("2", "free")]
    assert all(float(r["wall_s"]) > 0 for r in rows)
    assert rows[0]["tau_hat"] == "0" and float(rows[0]["speedup"]) == 1.0


def test_svm_toy_model(tmp_path):
    code = main(["svm", "--preset", "svm-toy", "--svm-c", "10", "--f-star", "-0.5",
                 "--stop-frac", "0.999999", "--iters", "20000", "--trace-every", "10",
                 "--out", str(tmp_path)])
    assert code == 0
    w = read_model(tmp_path / "model.txt")
    assert np.allclose(w, [1.0, 0.0], atol=1e-5)
    trace = read_csv(tmp_path / "svm_trace.csv")
    assert float(trace[-1]["objective"]) <= -0.5 + 1e-6


def test_svm_toy_threads(tmp_path):
    code = main(["svm", "--preset", "svm-toy", "--svm-c", "10", "--threads", "2",
                 "--lock-mode", "double", "--f-star", "-0.5", "--stop-frac", "0.999",
                 "--monitor-interval", "0.01", "--out", str(tmp_path)])
    assert code == 0
    assert np.allclose(read_model(tmp_path / "model.txt"), [1.0, 0.0], atol=1e-2)


def test_stochastic_best_column(tmp_path):
    assert main(["stochastic", "--iters", "5000", "--trace-every", "100",
                 "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "stochastic.csv")
    best = [float(r["best_objective"]) for r in rows]
    assert len(rows) == 51
    assert all(a >= b for a, b in zip(best, best[1:]))


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "lccd", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("topology", "async", "svm", "stochastic"):
        assert cmd in res.stdout
