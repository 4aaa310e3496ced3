import json
import math
import os
import re
import signal
import socket
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from onestep_glm.cli import EXIT_BIND, EXIT_CONFIG, EXIT_OK, EXIT_PARSE, EXIT_UNREACHABLE, main
from onestep_glm.dataio import load_csv, write_csv
from onestep_glm.runtime import wire
from onestep_glm.runtime.transport import TcpTransport, recv_frame


def run_cli(*argv):
    return subprocess.run([sys.executable, "-m", "onestep_glm.cli", *argv],
                          capture_output=True, text=True, timeout=120)


def run_json(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr().out
    assert code == EXIT_OK, out
    return json.loads(out)


@pytest.fixture(scope="module")
def logistic_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "logit.csv"
    assert main(["generate", "--preset", "table1", "--rows", "20000", "--seed", "3", "--out", str(path)]) == 0
    return path


@pytest.fixture(scope="module")
def airline_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("air") / "airline.csv"
    assert main(["generate", "--synthetic-airline", "100000", "--seed", "1", "--out", str(path)]) == 0
    return path


# ---------------------------------------------------------------- simulate


def test_simulate_smoke(tmp_path):
    t0 = time.perf_counter()
    r = run_cli("simulate", "--preset", "table1", "--cell", "N=2000,K=5,p=0.1", "--reps", "3",
                "--seed", "1", "--threads", "1", "--out", str(tmp_path))
    assert r.returncode == 0, r.stderr
    assert time.perf_counter() - t0 < 5.0
    header, row = (tmp_path / "table.csv").read_text().splitlines()
    cols = header.split(",")
    for label in ("GO", "OS", "CSL", "Pilot", "One-Step"):
        assert math.isfinite(float(row.split(",")[cols.index(label)]))
    assert json.loads((tmp_path / "raw.json").read_text())[0]["config"]["replications"] == 3


def test_simulate_rerun_is_byte_identical(tmp_path):
    args = ["simulate", "--preset", "table2", "--cell", "N=2000,K=4,p=0.1,sharding=nonrandom",
            "--reps", "4", "--seed", "9"]
    assert main([*args, "--threads", "1", "--out", str(tmp_path / "a")]) == 0
    assert main([*args, "--threads", "2", "--out", str(tmp_path / "b")]) == 0
    for name in ("report.csv", "table.csv", "raw.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_simulate_from_config_file(tmp_path):
    cfg = {"mode": "testing", "preset": "table3", "cells": [{"N": 3000, "K": 3, "p": 0.1}],
           "replications": 2, "base_seed": 1, "out": str(tmp_path / "out"), "threads": 1}
    path = tmp_path / "run.json"
    path.write_text(json.dumps(cfg))
    assert main(["simulate", "--config", str(path)]) == 0
    head = (tmp_path / "out" / "table.csv").read_text().splitlines()[0]
    assert "GlobalLRT size" in head and "OneStepLRT power" in head


def test_simulate_config_errors(tmp_path, capsys):
    assert main(["simulate", "--config", str(tmp_path / "missing.json")]) == EXIT_CONFIG
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"preset": "table1", "colour": "blue"}))
    assert main(["simulate", "--config", str(bad)]) == EXIT_CONFIG
    assert "colour" in capsys.readouterr().err


def test_print_schema(capsys):
    assert main(["simulate", "--print-schema"]) == 0
    schema = json.loads(capsys.readouterr().out)
    assert schema["additionalProperties"] is False


# ---------------------------------------------------------------- data files


def test_generated_csv_round_trips(tmp_path, logistic_csv):
    ds = load_csv(str(logistic_csv), "y", family="logistic")
    copy = tmp_path / "copy.csv"
    write_csv(str(copy), ["y", *ds.columns], np.column_stack([ds.y, ds.X]))
    again = load_csv(str(copy), "y")
    assert np.array_equal(ds.X, again.X) and np.array_equal(ds.y, again.y)


def test_generate_shards(tmp_path):
    out = tmp_path / "sim.csv"
    assert main(["generate", "--preset", "table2", "--rows", "1000", "--shards", "4",
                 "--sharding", "nonrandom", "--out", str(out)]) == 0
    parts = [load_csv(str(tmp_path / f"sim.shard{k}.csv"), "y") for k in range(4)]
    assert sum(p.y.size for p in parts) == 1000
    sums = [p.X.sum(axis=1) for p in parts]
    assert all(a.max() <= b.min() for a, b in zip(sums, sums[1:]))


def test_parse_error_names_the_line(tmp_path, capsys):
    path = tmp_path / "bad.csv"
    path.write_text("y,x1\n1,0.5\n0,abc\n")
    assert main(["estimate", "--data", str(path)]) == EXIT_PARSE
    assert "line 3" in capsys.readouterr().err
    path.write_text("y,x1\n1,0.5\n2,0.1\n")
    assert main(["estimate", "--data", str(path), "--family", "logistic"]) == EXIT_PARSE
    assert "line 3" in capsys.readouterr().err


def test_missing_data_file(tmp_path):
    assert main(["estimate", "--data", str(tmp_path / "nope.csv")]) != 0


# ---------------------------------------------------------------- estimate


def test_one_step_matches_global_within_three_se(capsys, logistic_csv):
    common = ["--data", str(logistic_csv), "--shards", "5", "--sharding", "random", "--seed", "2"]
    go = run_json(capsys, "estimate", "--method", "global", *common)
    os_ = run_json(capsys, "estimate", "--method", "one-step", "--pilot-fraction", "0.2", *common)
    se = np.array([go["std_errors"][c] for c in go["columns"]])
    assert np.all(np.abs(np.array(os_["beta"]) - np.array(go["beta"])) <= 3 * se)
    assert os_["rounds"] == 2 and go["rounds"] > os_["rounds"]
    assert go["columns"] == ["x1", "x2", "x3"]


def test_surrogate_ordering_under_year_sharding(capsys, airline_csv):
    common = ["--data", str(airline_csv), "--response", "Delayed",
              "--covariates", "DepTime,CRSArrTime,ActualElapsedTime,Distance", "--add-intercept",
              "--shards", "7"]
    ll = {m: run_json(capsys, "estimate", "--method", m, *common)["log_lik"]
          for m in ("global", "one-step", "one-shot")}
    assert ll["one-shot"] <= ll["one-step"] <= ll["global"]


def test_synthetic_surrogate_is_labelled(capsys):
    res = run_json(capsys, "estimate", "--synthetic-airline", "20000", "--shards", "3")
    assert "SYNTHETIC" in res["data"]
    assert res["columns"][0] == "(Intercept)"


# ---------------------------------------------------------------- test


def test_fixing_every_coefficient_at_the_estimate_gives_zero(capsys, logistic_csv):
    common = ["--data", str(logistic_csv), "--shards", "4", "--sharding", "random", "--seed", "5"]
    est = run_json(capsys, "estimate", *common)
    fixes = ",".join(f"{c}={b!r}" for c, b in zip(est["columns"], est["beta"]))
    res = run_json(capsys, "test", *common, "--fix", fixes)
    assert res["statistic"] == pytest.approx(0.0, abs=1e-6)
    assert res["df"] == 3 and not res["rejects"]


def test_df_counts_fixed_coefficients(capsys, logistic_csv):
    common = ["--data", str(logistic_csv), "--shards", "4"]
    res = run_json(capsys, "test", *common, "--fix", "x2=0", "--fix", "x3=1")
    assert res["df"] == 2 and res["fixed"] == {"x2": 0.0, "x3": 1.0}


def test_unknown_fix_column(capsys, logistic_csv):
    assert main(["test", "--data", str(logistic_csv), "--fix", "x9=0"]) == EXIT_CONFIG
    assert "x9" in capsys.readouterr().err


def test_cli_test_size_under_the_null(tmp_path, capsys):
    # 100 null datasets; the one-step LRT should reject about 5% of them
    rejects = 0
    for seed in range(100):
        path = tmp_path / f"null{seed}.csv"
        main(["generate", "--preset", "table3", "--rows", "2000", "--seed", str(seed), "--out", str(path)])
        res = run_json(capsys, "test", "--data", str(path), "--shards", "4", "--sharding", "random",
                       "--seed", str(seed), "--pilot-fraction", "0.2", "--fix", "x2=0")
        rejects += res["rejects"]
    assert 0.01 <= rejects / 100 <= 0.10


# ---------------------------------------------------------------- worker


def _start_worker(path, listen="127.0.0.1:0", extra=()):
    proc = subprocess.Popen([sys.executable, "-m", "onestep_glm.cli", "worker", "--listen", listen,
                             "--data", str(path), "--family", "logistic", *extra],
                            stderr=subprocess.PIPE, text=True)
    line = proc.stderr.readline()
    m = re.search(r"on ([\d.]+):(\d+)", line)
    assert m, line
    return proc, m.group(1), int(m.group(2))


def test_worker_process_lifecycle(tmp_path, capsys, logistic_csv):
    proc, host, port = _start_worker(logistic_csv)
    try:
        t = TcpTransport(host, port, timeout=10)
        info = wire.decode_frame(t.exchange(wire.encode_frame(wire.ShardInfoRequest())))
        assert info.count == 20000 and info.d == 3
        t.close()
        with socket.create_connection((host, port), timeout=10) as sock:
            sock.sendall(b"not a frame at all")
            reply = wire.decode_frame(recv_frame(sock))
            assert reply.code == wire.ERR_MALFORMED
        res = run_json(capsys, "estimate", "--workers", f"{host}:{port}", "--method", "global")
        local = run_json(capsys, "estimate", "--data", str(logistic_csv), "--method", "global")
        assert res["beta"] == local["beta"]

        busy = run_cli("worker", "--listen", f"{host}:{port}", "--data", str(logistic_csv),
                       "--family", "logistic")
        assert busy.returncode == EXIT_BIND
    finally:
        proc.send_signal(signal.SIGTERM)
        assert proc.wait(timeout=10) == 0
        proc.stderr.close()
    assert main(["estimate", "--workers", f"{host}:{port}", "--timeout", "2"]) == EXIT_UNREACHABLE
