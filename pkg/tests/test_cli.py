import subprocess
import sys

import numpy as np
import pytest

from romco.cli import derive_seed, main, parse_synthetic
from romco.data import load_dataset, numerical_rank

SYNTH = "d=20,m=5,T=200,k=2,outliers=1,noise=0.05"
RUN = ["run", "--synthetic", SYNTH, "--algo", "nucl", "--eta1", "0.1", "--eta2", "0.1",
       "--lambda1", "0.01", "--lambda2", "0.01", "--shuffles", "3", "--seed", "7"]


def read_csv(path):
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "# schema=1"
    return lines[1].split(","), [ln.split(",") for ln in lines[2:]]


def test_run_writes_curves_and_summary(tmp_path):
    assert main(RUN + ["--out", str(tmp_path / "o")]) == 0
    files = sorted(p.name for p in (tmp_path / "o").iterdir())
    assert files == ["curve_0.csv", "curve_1.csv", "curve_2.csv", "summary.csv"]
    header, rows = read_csv(tmp_path / "o" / "curve_0.csv")
    assert header == "round,instances_seen,task_id,truth,pred,loss,cum_err_rate".split(",")
    assert len(rows) == 1000 and rows[-1][1] == "1000"
    errs = sum(r[3] != r[4] for r in rows)
    assert float(rows[-1][6]) * 1000 == pytest.approx(errs)
    header, rows = read_csv(tmp_path / "o" / "summary.csv")
    assert header[0] == "variant" and header[-1] == "runtime_sec"
    assert [r[1] for r in rows] == ["0", "1", "2", "3", "4", "macro"]
    assert all(r[0] == "nucl" and r[-1] == "nan" for r in rows)


def test_run_is_byte_identical(tmp_path):
    assert main(RUN + ["--out", str(tmp_path / "a")]) == 0
    assert main(RUN + ["--out", str(tmp_path / "b")]) == 0
    for f in (tmp_path / "a").iterdir():
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


def test_thread_count_does_not_change_output(tmp_path, monkeypatch):
    monkeypatch.setenv("ROMCO_THREADS", "1")
    assert main(RUN + ["--out", str(tmp_path / "a")]) == 0
    monkeypatch.setenv("ROMCO_THREADS", "3")
    assert main(RUN + ["--out", str(tmp_path / "b")]) == 0
    for f in (tmp_path / "a").iterdir():
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


def test_timing_flag_fills_runtime(tmp_path):
    assert main(RUN + ["--out", str(tmp_path / "o"), "--timing", "--shuffles", "1"]) == 0
    _, rows = read_csv(tmp_path / "o" / "summary.csv")
    assert float(rows[-1][-1]) > 0


def test_regret_output(tmp_path):
    args = ["run", "--synthetic", "d=10,m=4,T=80,k=2,outliers=1,noise=0.05", "--eta-schedule", "theory",
            "--horizon", "80", "--lambda1", "0.001", "--lambda2", "0.001", "--shuffles", "1", "--regret",
            "--out", str(tmp_path / "o")]
    assert main(args) == 0
    header, rows = read_csv(tmp_path / "o" / "regret.csv")
    assert header == ["T", "regret", "ratio"]
    assert [r[0] for r in rows] == ["10", "20", "40", "80"]
    assert rows[0][2] == "nan"


def test_missing_data_file_exit_2_and_no_output(tmp_path):
    out = tmp_path / "o"
    rc = main(["run", "--data", str(tmp_path / "missing.svm"), "--out", str(out)])
    assert rc == 2
    assert not out.exists()
    assert list(tmp_path.iterdir()) == []


def test_malformed_data_exit_2(tmp_path):
    (tmp_path / "bad.svm").write_text("0\t0\t0:1\n")
    assert main(["run", "--data", str(tmp_path / "bad.svm"), "--out", str(tmp_path / "o")]) == 2


@pytest.mark.parametrize("extra", [
    ["--shuffles", "0"],
    ["--eta1", "-1"],
    ["--algo", "svm"],
    ["--eta-schedule", "theory"],
    ["--no-such-flag"],
])
def test_config_errors_exit_1(tmp_path, extra):
    assert main(RUN + ["--out", str(tmp_path / "o")] + extra) == 1
    assert not (tmp_path / "o").exists()


def test_bad_synthetic_spec_exit_1(tmp_path):
    assert main(["run", "--synthetic", "d=3,m=2", "--out", str(tmp_path / "o")]) == 1
    assert main(["run", "--synthetic", "d=3,m=2,T=5,k=4", "--out", str(tmp_path / "o")]) == 1


def test_numeric_failure_exit_3(tmp_path):
    (tmp_path / "big.svm").write_text("0\t+1\t0:1e300\n0\t+1\t0:1e300\n")
    rc = main(["run", "--data", str(tmp_path / "big.svm"), "--eta1", "1e300", "--eta2", "1e300",
               "--lambda1", "0", "--lambda2", "0", "--shuffles", "1", "--out", str(tmp_path / "o")])
    assert rc == 3
    assert not (tmp_path / "o").exists()


def test_pa_baselines_run(tmp_path):
    for algo in ("pa-global", "pa-unique", "logd"):
        assert main(RUN + ["--algo", algo, "--shuffles", "1", "--out", str(tmp_path / algo)]) == 0
        _, rows = read_csv(tmp_path / algo / "summary.csv")
        assert rows[0][0] == algo


def test_sweep(tmp_path):
    args = ["sweep", "--synthetic", "d=10,m=3,T=60,k=1", "--shuffles", "2", "--out", str(tmp_path / "s"),
            "--lambda1-grid", "1e-6,1e-5,1e-4,1e-3,1e-2,1e-1,1", "--lambda2-grid", "0.01"]
    assert main(args) == 0
    header, rows = read_csv(tmp_path / "s" / "sweep.csv")
    assert len(rows) == 7
    err = [float(r[header.index("error_rate_mean")]) for r in rows]
    best = [r[-1] for r in rows]
    assert best.count("1") == 1
    assert err[best.index("1")] == min(err)


def test_sweep_cells_share_shuffles(tmp_path):
    # two identical cells must give identical rows: only hyperparameters differ between cells
    args = ["sweep", "--synthetic", "d=6,m=3,T=40,k=1", "--shuffles", "2", "--out", str(tmp_path / "s"),
            "--lambda1-grid", "0.01,0.01", "--lambda2-grid", "0.1"]
    assert main(args) == 0
    _, rows = read_csv(tmp_path / "s" / "sweep.csv")
    assert rows[0][:-1] == rows[1][:-1]


def test_gen_then_run(tmp_path):
    spec = "d=8,m=4,T=30,k=2,outliers=0,noise=0"
    assert main(["gen", "--synthetic", spec, "--seed", "3", "--out", str(tmp_path / "g")]) == 0
    assert main(["gen", "--synthetic", spec, "--seed", "3", "--out", str(tmp_path / "h")]) == 0
    for name in ("data.svm", "ground_truth.csv"):
        assert (tmp_path / "g" / name).read_bytes() == (tmp_path / "h" / name).read_bytes()
    data = load_dataset(tmp_path / "g" / "data.svm")
    assert (data.dim, data.num_tasks, data.counts) == (8, 4, [30] * 4)
    header, rows = read_csv(tmp_path / "g" / "ground_truth.csv")
    U = np.zeros((8, 4))
    for comp, r, c, v in rows:
        if comp == "U":
            U[int(r), int(c)] = float(v)
    assert numerical_rank(U) == 2
    assert main(["run", "--data", str(tmp_path / "g" / "data.svm"), "--shuffles", "2",
                 "--out", str(tmp_path / "r")]) == 0


def test_gen_unwritable_path_exit_2(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["gen", "--synthetic", "d=3,m=2,T=2", "--out", str(blocker / "sub")]) == 2


def test_seed_splitting_is_stable_and_distinct():
    assert derive_seed(7, 2, 0) == derive_seed(7, 2, 0)
    assert len({derive_seed(7, tag, k) for tag in (1, 2) for k in range(5)}) == 10
    assert parse_synthetic(SYNTH, 7).seed == derive_seed(7, 1)


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "romco", "gen", "--synthetic", "d=3,m=2,T=2",
                           "--out", str(tmp_path / "g")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "g" / "data.svm").exists()
