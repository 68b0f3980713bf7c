import csv
import json

import pytest

from fleetmdp.cli import main


@pytest.fixture(scope="module")
def inst_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli") / "inst"
    rc = main(["generate", "--out", str(d), "--rows", "3", "--cols", "3", "--fleet-size", "3",
               "--requests", "120", "--n-train", "2", "--n-test", "2", "--arc-time", "120", "--seed", "4"])
    assert rc == 0
    return d


def test_generate_writes_instance(inst_dir):
    assert (inst_dir / "meta.json").exists() and (inst_dir / "network.json").exists()
    assert len(list((inst_dir / "paths").glob("*.jsonl"))) == 4
    man = json.loads((inst_dir / "manifest_generate.json").read_text())
    assert man["seed"] == 4 and len(man["instance_hash"]) == 64


def test_train_writes_tables_curve_and_manifest(inst_dir, tmp_path):
    args = ["train", "--instance", str(inst_dir), "-N", "1", "--fleet", "DCFC", "--checkpoint-every", "0"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert files == ["curve_DCFC_pool.csv", "manifest_train.json", "tables_DCFC_pool.bin"]
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    ha = json.loads((tmp_path / "a" / "manifest_train.json").read_text())["outputs"]
    hb = json.loads((tmp_path / "b" / "manifest_train.json").read_text())["outputs"]
    assert ha == hb
    rows = list(csv.DictReader(open(tmp_path / "a" / "curve_DCFC_pool.csv")))
    assert len(rows) == 1 and rows[0]["iteration"] == "1"


def test_inspect_tables_reports_monotone(inst_dir, tmp_path, capsys):
    main(["train", "--instance", str(inst_dir), "-N", "2", "--out", str(tmp_path), "--checkpoint-every", "0"])
    capsys.readouterr()
    assert main(["inspect", str(tmp_path / "tables_DCFC_pool.bin")]) == 0
    assert "monotone: true" in capsys.readouterr().out


def test_inspect_instance_and_lp_dump(inst_dir, tmp_path, capsys):
    assert main(["inspect", str(inst_dir), "--dump-lp", str(tmp_path / "e1.lp")]) == 0
    out = capsys.readouterr().out
    assert "nodes: 9" in out and "requests by hour" in out
    assert "Subject To" in (tmp_path / "e1.lp").read_text()


def test_factorial_eval_and_telemetry(inst_dir, tmp_path):
    out = tmp_path / "summary.csv"
    rc = main(["eval", "--instance", str(inst_dir), "--policy", "pm", "--fleet", "ICE,DCFC,L2C",
               "--pooling", "both", "--out", str(out), "--emit-telemetry", str(tmp_path / "tel")])
    assert rc == 0
    rows = list(csv.DictReader(open(out)))
    assert len(rows) == 6
    assert {(r["fleet"], r["pooling"]) for r in rows} == {(f, p) for f in ("ICE", "DCFC", "L2C") for p in ("True", "False")}
    assert all(r["n"] == "2" for r in rows)
    tel = sorted((tmp_path / "tel").glob("*.jsonl"))
    assert len(tel) == 12
    lines = tel[0].read_text().splitlines()
    assert len(lines) == 720 and json.loads(lines[0])["t"] == 1


def test_eval_with_trained_tables(inst_dir, tmp_path):
    main(["train", "--instance", str(inst_dir), "-N", "1", "--out", str(tmp_path / "t"), "--checkpoint-every", "0"])
    out = tmp_path / "s.csv"
    assert main(["eval", "--instance", str(inst_dir), "--policy", "vfa,pm", "--tables", str(tmp_path / "t"),
                 "--out", str(out)]) == 0
    assert [r["policy"] for r in csv.DictReader(open(out))] == ["vfa", "pm"]


def test_config_file_and_flag_precedence(inst_dir, tmp_path):
    cfgf = tmp_path / "run.toml"
    cfgf.write_text('seed = 9\n[eval]\npolicy = "myopic"\ntheta = 0.2\n')
    out = tmp_path / "s.csv"
    assert main(["eval", "--config", str(cfgf), "--instance", str(inst_dir), "--out", str(out), "--theta", "0.3"]) == 0
    man = json.loads((tmp_path / "manifest_eval.json").read_text())
    assert man["config"]["seed"] == 9 and man["config"]["policy"] == "myopic" and man["config"]["theta"] == 0.3


def test_exit_codes(inst_dir, tmp_path, capsys):
    assert main(["train", "--instance", str(tmp_path / "nope"), "--out", str(tmp_path)]) == 2
    assert main(["train", "--instance", str(inst_dir), "-N", "0", "--out", str(tmp_path)]) == 2
    assert main(["eval", "--instance", str(inst_dir), "--policy", "vfa", "--out", str(tmp_path / "x.csv")]) == 2
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"FMDPVT01garbage" + bytes(40))
    assert main(["inspect", str(bad)]) == 3
    assert main(["eval", "--instance", str(inst_dir), "--policy", "vfa", "--tables", str(bad),
                 "--out", str(tmp_path / "y.csv")]) == 3
    with pytest.raises(SystemExit) as exc:
        main(["bogus"])
    assert exc.value.code == 2
