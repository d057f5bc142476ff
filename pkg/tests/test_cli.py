import hashlib
import json
import subprocess
import sys

import pytest

from aodisloc.cli import ConfigError, csv_text, main, resolve_config


def _files(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


def _run(tmp_path, name, *args):
    out = tmp_path / name
    code = main([*args, "--out", str(out)])
    return code, out


def test_dipole_scan_outputs(tmp_path):
    code, out = _run(tmp_path, "a", "dipole-scan", "--n-list", "1")
    assert code == 0
    lines = (out / "dipole.csv").read_bytes().split(b"\r\n")
    assert lines[0] == b"n,E_dip,err,within_tol"
    n, e, err, ok = lines[1].decode().split(",")
    assert n == "1" and float(e) > 0 and float(err) >= 0 and ok == "true"
    fit = json.loads((out / "fit.json").read_text())
    assert "slope" not in fit and fit["reference_slope"] == pytest.approx(0.0918881, abs=1e-7)


def test_dipole_fit_json(tmp_path):
    code, out = _run(tmp_path, "a", "dipole-scan", "--n-list", "32,64,128")
    assert code == 0
    fit = json.loads((out / "fit.json").read_text())
    lo, hi = fit["ci95"]
    assert lo <= fit["slope"] <= hi


@pytest.mark.parametrize("cmd", [
    ["dipole-scan", "--n-list", "8,16,32"],
    ["rs-scan", "--m-list", "2,4"],
    ["rs-scan", "--m-list", "4", "--capacitor", "--n", "64"],
    ["grain-demo", "--N", "12", "--radius", "3"],
    ["mc", "--kind", "TRI2D", "--N", "4", "--sweeps", "30", "--burn-in", "5", "--seed", "3",
     "--beta", "2", "--batches", "5"],
])
def test_byte_identical_reruns(tmp_path, cmd):
    c1, a = _run(tmp_path, "a", *cmd)
    c2, b = _run(tmp_path, "b", *cmd)
    assert c1 == c2 == 0
    fa, fb = _files(a), _files(b)
    assert fa == fb
    assert any(k.endswith(".csv") for k in fa)


def test_manifest_checksums(tmp_path):
    code, out = _run(tmp_path, "a", "rs-scan", "--m-list", "2,3")
    assert code == 0
    m = json.loads((out / "manifest.json").read_text())
    assert m["command"] == "rs-scan" and m["tool"] == "aodisloc"
    assert m["config"]["m_list"] == [2, 3]
    assert set(m["outputs"]) == {"rs.csv", "fit.json"}
    for name, digest in m["outputs"].items():
        assert hashlib.sha256((out / name).read_bytes()).hexdigest() == digest
    assert len(m["config_sha256"]) == 64


def test_config_file_and_override(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"m_list": [5, 6], "orders": [6, 8]}))
    code, out = _run(tmp_path, "a", "rs-scan", "--config", str(cfg), "--m-list", "7")
    assert code == 0
    m = json.loads((out / "manifest.json").read_text())
    assert m["config"]["m_list"] == [7] and m["config"]["orders"] == [6, 8]


@pytest.mark.parametrize("args", [
    ["rs-scan", "--m-list", ""],
    ["dipole-scan", "--n-list", "0,4"],
    ["mc", "--beta", "0"],
    ["mc", "--beta", "-2"],
    ["mc", "--kind", "TRI2D", "--x", "0,0,0"],
    ["mc", "--v0", "7"],
    ["mc", "--kind", "TRI2D", "--N", "4", "--x", "0,0", "--y", "0,0", "--sweeps", "2"],
    ["mc", "--kind", "TRI2D", "--N", "4", "--x", "0,0", "--y", "9,9", "--sweeps", "2"],
    ["grain-demo", "--N", "8", "--radius", "6"],
    ["grain-demo", "--bc", "periodic"],
    ["nonsense"],
])
def test_config_errors_exit_2(tmp_path, args):
    code, _ = _run(tmp_path, "a", *args)
    assert code == 2


def test_unknown_config_key(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"m_lst": [4]}))
    code, _ = _run(tmp_path, "a", "rs-scan", "--config", str(cfg))
    assert code == 2
    cfg.write_text("[1, 2]")
    assert _run(tmp_path, "b", "rs-scan", "--config", str(cfg))[0] == 2
    cfg.write_text("{not json")
    assert _run(tmp_path, "c", "rs-scan", "--config", str(cfg))[0] == 2


def test_empty_list_message():
    with pytest.raises(ConfigError, match="m_list must not be empty"):
        resolve_config("rs-scan", {"m_list": []}, {})


def test_numerical_failure_exit_3(tmp_path):
    code, out = _run(tmp_path, "a", "dipole-scan", "--n-list", "64,128", "--orders", "2,3",
                     "--max-error", "1e-14")
    assert code == 3
    # the rows are still written, marked as failing
    rows = (out / "dipole.csv").read_text().splitlines()[1:]
    assert all(r.endswith("false") for r in rows)
    assert not (out / "manifest.json").exists()


def test_capacitor_mode_columns(tmp_path):
    code, out = _run(tmp_path, "a", "rs-scan", "--m-list", "4", "--capacitor", "--n", "128")
    assert code == 0
    head, row = (out / "capacitor.csv").read_text().splitlines()[:2]
    assert head == "m,n,E_per_n,err,reference_sqrt3_over_2m2,continuum_limit,within_tol"
    vals = row.split(",")
    assert float(vals[4]) == pytest.approx(0.0541266, abs=1e-7)


def test_grain_demo_files(tmp_path):
    code, out = _run(tmp_path, "a", "grain-demo", "--N", "12", "--radius", "3")
    assert code == 0
    names = set(json.loads((out / "manifest.json").read_text())["outputs"])
    assert names == {"displacement_before.csv", "displacement_after.csv", "charges.csv", "energy.csv"}
    head, row = (out / "energy.csv").read_text().splitlines()
    rec = dict(zip(head.split(","), row.split(",")))
    assert float(rec["energy_relaxed"]) <= float(rec["energy_before"]) <= float(rec["bound_6E1b"])
    assert rec["bound_holds"] == "true"


def test_mc_outputs(tmp_path):
    code, out = _run(tmp_path, "a", "mc", "--kind", "TRI2D", "--N", "4", "--sweeps", "100",
                     "--burn-in", "10", "--beta", "3", "--batches", "5")
    assert code == 0
    est = (out / "estimate.csv").read_text().splitlines()
    assert est[0].startswith("estimator,mean,stderr,samples,flagged")
    assert [r.split(",")[0] for r in est[1:]] == ["raw", "rao_blackwell"]
    ts = (out / "timeseries.csv").read_text().splitlines()
    assert ts[0] == "sweep,H_AO,W,observable" and len(ts) == 101
    chain = json.loads((out / "chain.json").read_text())
    assert chain["seed"] == 0 and len(chain["complex_sha256"]) == 64


def test_csv_quoting():
    text = csv_text(["a", "b"], [("x,y", 'q"t'), (1.5, True)])
    assert text == 'a,b\r\n"x,y","q""t"\r\n1.5,true\r\n'


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "aodisloc.cli", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and "aodisloc" in r.stdout
    r = subprocess.run([sys.executable, "-m", "aodisloc.cli", "rs-scan"], capture_output=True, text=True)
    assert r.returncode == 2 and "--out" in r.stderr
