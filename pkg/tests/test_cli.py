import json
import subprocess
import sys

import pytest

from multibin.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_analyze_uniform(capsys):
    code, out, _ = run(capsys, "analyze", "--k-max", "5", "--lambda", "10", "--epsilon", "1.0")
    assert code == 0
    assert "c_max=12.190476" in out
    assert "min bins for c_max - 1: 10" in out
    assert "6.447481" in out and "26.202" in out


def test_analyze_exponential(capsys, tmp_path):
    out_csv = tmp_path / "a.csv"
    code, out, _ = run(capsys, "analyze", "--B", "200", "--mu", "1", "--k-max", "2", "--out", str(out_csv))
    assert code == 0 and "H_B=5.878031" in out
    assert out_csv.read_text().splitlines()[0] == "k,service_upper_bound,throughput_lower_bound"


def test_simulate_json(capsys, tmp_path):
    rec = tmp_path / "r.jsonl"
    code, out, _ = run(capsys, "--seed", "3", "simulate", "--n", "256", "--B", "8", "--k", "2",
                       "--records", str(rec))
    assert code == 0
    doc = json.loads(out)
    assert doc["seed"] == 3 and doc["metrics"]["n_completed"] == 256
    assert len(rec.read_text().splitlines()) == 256


def test_simulate_same_seed_same_bytes(capsys, tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for path in (a, b):
        assert run(capsys, "simulate", "--n", "300", "--B", "8", "--k", "3", "--lambda", "2",
                   "--seed", "9", "--out", str(path))[0] == 0
    assert a.read_bytes() == b.read_bytes()


def test_simulate_config_file_with_override(capsys, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"B": 4, "k": 2, "n_requests": 100, "lambda": 1.0}))
    code, out, _ = run(capsys, "simulate", "--config", str(cfg), "--k", "1")
    doc = json.loads(out)
    assert code == 0 and doc["params"]["k"] == 1 and doc["params"]["B"] == 4


def test_scale_multiplies_requests(capsys):
    code, out, _ = run(capsys, "simulate", "--n", "100", "--B", "4", "--scale", "2")
    assert json.loads(out)["params"]["n_requests"] == 200
    code, out, _ = run(capsys, "simulate", "--n", "100", "--B", "4", "--scale", "full")
    assert json.loads(out)["params"]["n_requests"] == 1000


def test_sweep_and_compare(capsys, tmp_path):
    spec = tmp_path / "s.json"
    spec.write_text(json.dumps({
        "name": "mini", "base": {"B": 8, "n_requests": 800, "flush_partial": False},
        "axes": [["k", [1, 2]]], "replications": 2,
    }))
    out_csv, raw_csv = tmp_path / "o.csv", tmp_path / "raw.csv"
    code, out, _ = run(capsys, "sweep", "--spec", str(spec), "--out", str(out_csv), "--raw", str(raw_csv))
    assert code == 0 and "wrote 2 rows" in out
    assert len(raw_csv.read_text().splitlines()) == 5
    code, out, _ = run(capsys, "compare", str(out_csv), "--tolerance", "0.1")
    assert code == 0 and "2/2" in out
    # an impossible tolerance must fail with the check-failed code
    code, out, _ = run(capsys, "compare", str(out_csv), "--tolerance", "1e-9")
    assert code == 2 and "FAIL" in out


def test_sweep_output_env(capsys, tmp_path, monkeypatch):
    spec = tmp_path / "s.json"
    spec.write_text(json.dumps({"name": "envy", "base": {"B": 4, "n_requests": 40}, "axes": [["k", [1]]],
                                "replications": 1}))
    monkeypatch.setenv("MULTIBIN_OUTPUT_DIR", str(tmp_path / "outdir"))
    assert run(capsys, "sweep", "--spec", str(spec))[0] == 0
    assert (tmp_path / "outdir" / "envy.csv").exists()


def test_fit(capsys, tmp_path):
    tr = tmp_path / "t.csv"
    tr.write_text("a,10,1.2\nb,20,2.2\nc,30,3.2\n")
    model = tmp_path / "m.json"
    code, out, _ = run(capsys, "fit", str(tr), "--out", str(model))
    assert code == 0
    d = json.loads(model.read_text())
    assert d["slope"] == pytest.approx(0.1) and d["intercept"] == pytest.approx(0.2)


@pytest.mark.parametrize("argv", [
    [], ["bogus"], ["analyze", "--B", "x"], ["sweep"], ["simulate", "--scale", "-1"],
])
def test_usage_errors_exit_1(capsys, argv):
    with pytest.raises(SystemExit) as info:
        code = main(argv)
        raise SystemExit(code)
    assert info.value.code == 1


def test_input_errors_exit_1(capsys, tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("a,ten\n")
    code, _, err = run(capsys, "fit", str(bad))
    assert code == 1 and f"{bad}:1:col 2" in err
    code, _, err = run(capsys, "simulate", "--B", "0")
    assert code == 1 and "error" in err


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "multibin", "analyze", "--k-max", "1"],
                         capture_output=True, text=True)
    assert res.returncode == 0 and "c_max" in res.stdout
