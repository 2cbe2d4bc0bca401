"""End-to-end checks of the command line driver and its artifacts."""

import json

import numpy as np
import pytest

from immlab.cli import SCHEMA, cli_run, main


def read_report(out):
    with open(out / "report.json") as fh:
        return json.load(fh)


def run(cmd, out, **cfg):
    rc = cli_run(cmd, {"out": str(out), "L": 8, **cfg})
    return rc, read_report(out)


def test_check_gauss(tmp_path):
    rc, rep = run("check-gauss", tmp_path, shape="ellipsoid:1,1.1,0.9")
    assert rc == 0
    assert rep["schema"] == SCHEMA
    assert rep["command"] == "check-gauss"
    assert rep["max_discrepancy"] <= 1e-3


def test_check_darboux(tmp_path):
    rc, rep = run("check-darboux", tmp_path, shape="ellipsoid:1,1.1,0.9",
                  seed=3)
    assert rc == 0
    assert len(rep["checks"]) == 3
    for chk in rep["checks"]:
        assert chk["max_residual"] <= 1e-3
        assert len(chk["direction"]) == 3


def test_uniformize_writes_geometry(tmp_path):
    rc, rep = run("uniformize", tmp_path, shape="sphere:1.2")
    assert rc == 0
    assert abs(rep["lambda2_min"] - 1.44) <= 1e-8
    assert abs(rep["lambda2_max"] - 1.44) <= 1e-8
    assert rep["strong_residual"] <= 1e-9
    lines = (tmp_path / "geometry.csv").read_text().splitlines()
    assert lines[0] == "theta,phi,H,K,lambda2"
    assert len(lines) == 1 + 162  # (L+1)(2L+2) nodes at L=8


def test_symbol_elliptic(tmp_path):
    rc, rep = run("symbol", tmp_path, shape="sphere:1", epsilon=0.25)
    assert rc == 0
    assert rep["min_singular_value"] > 0.1
    assert rep["characteristic"] is False
    assert rep["directions"] == 36


def test_symbol_degenerate_endpoint(tmp_path, capsys):
    rc, rep = run("symbol", tmp_path, shape="sphere:1", epsilon=0.0)
    assert rc == 0
    assert rep["characteristic"] is True
    assert rep["min_singular_value"] <= 1e-12
    assert "characteristic in all sampled directions" in capsys.readouterr().out


def test_index_report(tmp_path):
    rc, rep = run("index", tmp_path, shape="sphere:1", epsilon=1.0)
    assert rc == 0
    r = rep["report"]
    assert (r["kernel_dim"], r["cokernel_dim"], r["index"]) == (9, 3, 6)
    assert r["reliable"] is True
    assert len(r["smallest_singular_values"]) == 12


def test_kernel_sweep(tmp_path):
    rc, rep = run("kernel-sweep", tmp_path, shape="sphere:1")
    assert rc == 0
    assert rep["epsilons"] == [1.0, 0.5, 0.25, 0.1]
    for r in rep["reports"]:
        assert r["index"] == 6
        assert r["kernel_dim"] >= 6


def test_solve_recovers_shape(tmp_path):
    rc, rep = run("solve", tmp_path, shape="ellipsoid:1,1.05,0.95",
                  epsilon=1.0)
    assert rc == 0
    assert rep["procrustes_error"] <= 1e-4
    assert rep["residual_history"][-1] <= 1e-9
    assert (tmp_path / "solution.json").exists()
    lines = (tmp_path / "geometry.csv").read_text().splitlines()
    assert lines[0] == "theta,phi,H,K,lambda2"


def test_continue_trace(tmp_path):
    rc, rep = run("continue", tmp_path, shape="sphere:1")
    assert rc == 0
    assert rep["status"] == "reached eps_min"
    assert rep["epsilons"][0] == 1.0
    assert rep["epsilons"][-1] == 0.05
    assert rep["final_defect"] <= 1e-9
    lines = (tmp_path / "trace.csv").read_text().splitlines()
    assert lines[0] == ("epsilon,iters,residual," +
                        ",".join(f"sv{i}" for i in range(1, 13)))
    assert len(lines) == 1 + len(rep["epsilons"])
    assert (tmp_path / "solution.json").exists()


def test_continue_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    a.mkdir(), b.mkdir()
    run("continue", a, shape="sphere:1")
    run("continue", b, shape="sphere:1")
    assert (a / "trace.csv").read_text() == (b / "trace.csv").read_text()


def test_solver_failure_exit_code(tmp_path, capsys):
    rc, rep = run("solve", tmp_path, shape="ellipsoid:1,1.3,0.7",
                  epsilon=1.0, tol=1e-16)
    assert rc == 1
    assert rep["status"] == "error"
    assert rep["error"]["type"] == "ConvergenceError"
    err = capsys.readouterr().err
    assert json.loads(err.strip())["error"]["type"] == "ConvergenceError"


def test_bad_shape_exit_code(tmp_path, capsys):
    rc, rep = run("index", tmp_path, shape="blob:1")
    assert rc == 2
    assert rep["error"]["type"] == "ShapeSpecError"
    capsys.readouterr()


def test_unknown_command(tmp_path):
    rc = cli_run("frobnicate", {"out": str(tmp_path)})
    assert rc == 2
    assert read_report(tmp_path)["status"] == "error"


def test_main_merges_config_and_flags(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"L": 8, "shape": "sphere:1.3",
                               "epsilon": 0.5}))
    out = tmp_path / "out"
    out.mkdir()
    rc = main(["symbol", "--config", str(cfg), "--out", str(out),
               "--epsilon", "0.25"])
    assert rc == 0
    rep = read_report(out)
    assert rep["shape"] == "sphere:1.3"  # from config
    assert rep["epsilon"] == 0.25        # flag wins
    assert rep["L"] == 8


def test_main_rejects_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"L": 8, "banana": 3}))
    out = tmp_path / "out"
    out.mkdir()
    rc = main(["symbol", "--config", str(cfg), "--out", str(out)])
    assert rc == 2
    assert json.loads(capsys.readouterr().err.strip())["status"] == "error"


def test_main_rejects_non_dict_config(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps([1, 2]))
    out = tmp_path / "out"
    out.mkdir()
    rc = main(["symbol", "--config", str(cfg), "--out", str(out)])
    assert rc == 2
    capsys.readouterr()


def test_main_rejects_unknown_subcommand(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["warp", "--out", str(tmp_path)])
    assert exc.value.code == 2
