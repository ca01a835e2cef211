import json
import subprocess
import sys

import pytest

from nodalfrac.cli import main, read_config, resolve, ValidationError


def _manifest(out):
    return json.loads((out / "manifest.json").read_text())


def test_constants_json(tmp_path, capsys):
    out = tmp_path / "c"
    assert main(["constants", "--n", "3", "--s", "0.5", "--out", str(out)]) == 0
    d = json.loads((out / "constants.json").read_text())
    assert abs(d["c_ns"] - 0.1013211836) < 1e-10
    assert json.loads(capsys.readouterr().out)["c_ns"] == d["c_ns"]
    m = _manifest(out)
    assert m["status"] == "ok" and m["config"]["n"] == 3
    assert {"numpy", "scipy", "python", "backend"} <= set(m["versions"])
    assert "total" in m["wall_times"]


def test_module_entry_point(tmp_path):
    out = tmp_path / "m"
    res = subprocess.run([sys.executable, "-m", "nodalfrac", "constants", "--n", "3", "--s", "0.5",
                          "--out", str(out)], capture_output=True, text=True)
    assert res.returncode == 0
    assert json.loads(res.stdout)["d_s"] == pytest.approx(1.0, abs=1e-12)


def test_missing_config(tmp_path, capsys):
    out = tmp_path / "x"
    code = main(["solve", "--config", str(tmp_path / "nope.cfg"), "--out", str(out)])
    assert code == 2
    assert "not found" in capsys.readouterr().err
    m = _manifest(out)
    assert m["status"] == "invalid" and "not found" in m["error"]


def test_unknown_keys_listed(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("n = 7\nfoo = 1\nbar-baz = 2\n")
    assert main(["constants", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "bar_baz" in err and "foo" in err


def test_dimension_precondition(tmp_path, capsys):
    assert main(["solve", "--n", "4", "--s", "0.75", "--out", str(tmp_path / "o")]) == 2
    assert "n > 6s" in capsys.readouterr().err
    # constants has no such precondition
    assert main(["constants", "--n", "4", "--s", "0.75", "--out", str(tmp_path / "o")]) == 0


@pytest.mark.parametrize("argv", [
    ["sweep-lambda", "--lambda-fracs", "0.1,0.2"],
    ["sweep-s", "--s-list", "0.9,0.8"],
    ["solve", "--lambda-frac", "1.5"],
    ["solve", "--s", "1.0"],
    ["solve", "--init", "spiral"],
    ["solve", "--N", "8"],
])
def test_invalid_configurations(tmp_path, argv):
    assert main(argv + ["--out", str(tmp_path / "o")]) == 2
    assert _manifest(tmp_path / "o")["status"] == "invalid"


def test_config_file_and_flag_override(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\nn = 7\ns = 0.6   # trailing\nN = 64\n")
    c = resolve("solve", read_config(cfg), {"s": 0.8})
    assert c["n"] == 7 and c["s"] == 0.8 and c["N"] == 64 and c["gamma_inner"] == 6.0
    bad = tmp_path / "bad.cfg"
    bad.write_text("n 7\n")
    with pytest.raises(ValidationError):
        read_config(bad)
    with pytest.raises(ValidationError):
        resolve("solve", {"N": "many"}, {})


def test_non_convergence_exit(tmp_path):
    out = tmp_path / "nc"
    code = main(["solve", "--N", "64", "--max-iters", "2", "--init", "oscillatory", "--out", str(out)])
    assert code == 3
    m = _manifest(out)
    assert m["status"] == "not_converged"
    assert (out / "solution.csv").is_file()


def test_solve_one_node_and_determinism(tmp_path):
    args = ["solve", "--n", "7", "--s", "0.9", "--lambda-frac", "0.1", "--init", "tower"]
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(args + ["--out", str(a)]) == 0
    assert main(args + ["--out", str(b)]) == 0
    rep = json.loads((a / "report.json").read_text())
    assert rep["sign_count"] == 1 and rep["converged"]
    raw = (a / "solution.csv").read_bytes()
    assert raw.startswith(b"r,u\n") and b"\r" not in raw
    assert raw == (b / "solution.csv").read_bytes()
    assert main(["report", "--out", str(a)]) == 0
    assert "sign changes 1" in (a / "report.txt").read_text()


def test_report_needs_artifacts(tmp_path):
    assert main(["report", "--out", str(tmp_path / "empty")]) == 2


def test_extend_from_solution(tmp_path):
    a = tmp_path / "a"
    assert main(["solve", "--N", "128", "--out", str(a)]) == 0
    e = tmp_path / "e"
    assert main(["extend", "--solution", str(a / "solution.csv"), "--out", str(e)]) == 0
    d = json.loads((e / "extension.json").read_text())
    assert abs(d["relative_gap"]) < 0.02
    assert d["nodal_regions"] == 2
    head = (e / "extension.csv").read_text().splitlines()[0]
    assert head == "r,y,W"
