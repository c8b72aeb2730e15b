import csv
import json

import pytest

from bergman_lab.cli import ConfigError, main, parse_config, parse_real


def run(tmp_path, sub, text, *extra, name="run.cfg"):
    cfg = tmp_path / name
    cfg.write_text(text, encoding="utf-8")
    out = tmp_path / "out"
    return main([sub, "--config", str(cfg), "--out", str(out), *extra]), out


@pytest.mark.parametrize("text,value", [("2pi", 6.283185307179586), ("-pi", -3.141592653589793),
                                        ("8*pi", 25.132741228718345), ("0.5", 0.5), ("4π", 12.566370614359172)])
def test_parse_real(text, value):
    assert parse_real(text) == pytest.approx(value, rel=1e-15)


def test_parse_config_rules():
    assert parse_config("# comment\nmodel = fs\n\np_range = 8, 16\n", "diag") == {"model": "fs", "p_range": "8, 16"}
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config("colour = red\n", "diag")
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config("p = 8\np = 16\n", "offdiag")


def test_diag_fs_default(tmp_path):
    code, out = run(tmp_path, "diag", "model = fs\n")
    assert code == 0
    report = json.loads((out / "diag.json").read_text())
    assert report["schema_version"] and len(report["config_hash"]) == 64
    assert all(c["pass"] for c in report["checks"])
    assert {"name", "target", "measured", "tolerance", "pass"} <= set(report["checks"][0])
    b1 = [c for c in report["checks"] if c["name"].startswith("b1")]
    assert b1 and all(abs(c["measured"] - 1) < 1e-4 for c in b1)
    rows = list(csv.DictReader((out / "diag.csv").open()))
    assert "schema_version" in rows[0]
    assert {r["p"] for r in rows} >= {"8", "128"}


def test_diag_torus(tmp_path):
    code, out = run(tmp_path, "diag", "model = torus\ntau = 1j\np_range = 16, 24, 32, 48, 64\nfit_degree = 2\n")
    assert code == 0
    b1 = [c for c in json.loads((out / "diag.json").read_text())["checks"] if c["name"].startswith("b1")]
    assert all(abs(c["measured"]) < 1e-4 for c in b1)


def test_diag_single_p(tmp_path, capsys):
    code, out = run(tmp_path, "diag", "model = fs\np_range = 8\n")
    assert code == 2
    assert "need >=" in capsys.readouterr().err
    assert not (out / "diag.json").exists()


def test_diag_failure_exit_one(tmp_path):
    # an absurdly tight tolerance on the perturbed sphere has to fail
    code, _ = run(tmp_path, "diag", "model = perturbed\nperturbation = 0.2\npoints = 0.5\ntol_b1 = 1e-12\n")
    assert code == 1


@pytest.mark.parametrize("sub,text", [("diag", "colour = red\n"), ("diag", "tol_b1 = -1\n"),
                                      ("diag", "model = perturbed\nperturbation = 1e3\n"),
                                      ("model-check", "u_values = -1\n"), ("heat", "curvatures = 8pi\n"),
                                      ("offdiag", "p = x\n")])
def test_config_errors(tmp_path, sub, text):
    assert run(tmp_path, sub, text)[0] == 2


def test_missing_config(tmp_path):
    assert main(["diag", "--config", str(tmp_path / "nope.cfg")]) == 2
    assert main(["nonsense", "--config", "x"]) == 2


def test_offdiag(tmp_path):
    code, out = run(tmp_path, "offdiag", "model = fs\np = 64\n", "--plots")
    assert code == 0
    assert (out / "offdiag.svg").read_text().startswith("<svg")


def test_orbifold(tmp_path):
    code, out = run(tmp_path, "orbifold", "k = 2\n")
    assert code == 0
    report = json.loads((out / "orbifold.json").read_text())
    assert all(c["pass"] for c in report["checks"])


def test_model_check_default_and_zero(tmp_path):
    code, out = run(tmp_path, "model-check", "")
    assert code == 0
    code, out = run(tmp_path, "model-check", "curvatures = 0:0\n", name="zero.cfg")
    assert code == 0
    rows = list(csv.DictReader((out / "model_check.csv").open()))
    for r in rows:
        for key, val in r.items():
            if key.startswith("j2u"):
                assert float(val) == 0.0


def test_heat(tmp_path):
    code, out = run(tmp_path, "heat", "")
    assert code == 0
    rows = list(csv.DictReader((out / "heat.csv").open()))
    for tag in {(r["rX"], r["rE"]) for r in rows}:
        dev = [float(r["abs_deviation"]) for r in rows if (r["rX"], r["rE"]) == tag]
        assert all(a > b for a, b in zip(dev, dev[1:]))


@pytest.mark.parametrize("sub,text", [("diag", "model = perturbed\nperturbation = 0.1\np_range = 8,12,16,24,32,48,64\n"),
                                      ("model-check", ""), ("orbifold", "k = 3\n")])
def test_byte_identical(tmp_path, sub, text):
    a = tmp_path / "a"
    b = tmp_path / "b"
    a.mkdir()
    b.mkdir()
    (a / "c.cfg").write_text(text)
    (b / "c.cfg").write_text(text)
    stem = sub.replace("-", "_")
    assert main([sub, "--config", str(a / "c.cfg"), "--out", str(a), "--plots"]) in (0, 1)
    assert main([sub, "--config", str(b / "c.cfg"), "--out", str(b), "--plots"]) in (0, 1)
    for ext in ("csv", "json", "svg"):
        if ext == "svg" and not (a / f"{stem}.svg").exists():
            continue
        assert (a / f"{stem}.{ext}").read_bytes() == (b / f"{stem}.{ext}").read_bytes()


def test_threads_env_is_deterministic(tmp_path, monkeypatch):
    text = "model = fs\np_range = 8,12,16,24,32,48\n"
    monkeypatch.setenv("BERGMAN_THREADS", "1")
    _, out1 = run(tmp_path, "diag", text, name="a.cfg")
    one = (out1 / "diag.csv").read_bytes()
    monkeypatch.setenv("BERGMAN_THREADS", "4")
    _, out2 = run(tmp_path, "diag", text, name="b.cfg")
    assert (out2 / "diag.csv").read_bytes() == one
