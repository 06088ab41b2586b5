import csv
import json
import os
import subprocess
import sys

import pytest

from mecsim.cli import main
from mecsim.optimizer import CacheDecisionInstance, random_instance, save_instance

MINIMAL = {"n_clients": 4, "total_periods": 20, "n_rbs": 25, "catalog": {"n_videos": 4}}


@pytest.fixture
def config(tmp_path):
    p = tmp_path / "scenario.json"
    p.write_text(json.dumps(MINIMAL))
    return p


def test_run_writes_three_files(config, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["run", "--config", str(config), "--seed", "2", "--out", str(out)]) == 0
    assert sorted(os.listdir(out)) == ["config.json", "metrics.csv", "summary.json"]
    resolved = json.loads((out / "config.json").read_text())
    assert resolved["seed"] == 2 and resolved["n_clients"] == 4
    summary = json.loads((out / "summary.json").read_text())
    assert summary["periods"] == 20 and summary["seed"] == 2


def test_run_is_reproducible(config, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert main(["run", "--config", str(config), "--out", str(d)]) == 0
    for name in ("metrics.csv", "summary.json", "config.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_run_rejects_bad_config(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"catalog_path": str(tmp_path / "missing.csv")}))
    assert main(["run", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
    assert "catalog_path" in capsys.readouterr().err
    p.write_text(json.dumps({"n_client": 3}))
    assert main(["run", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
    assert "n_client" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_out_from_environment(config, tmp_path, monkeypatch):
    monkeypatch.setenv("MECSIM_OUT", str(tmp_path / "env"))
    assert main(["run", "--config", str(config)]) == 0
    assert (tmp_path / "env" / "metrics.csv").exists()


def test_sweep_grid_and_combined(config, tmp_path):
    out = tmp_path / "sw"
    rc = main(["sweep", "--config", str(config), "--axis", "total_cache_bytes",
               "--values", "0,2000000,8000000", "--policies", "ctra,lru-rr", "--out", str(out)])
    assert rc == 0
    points = [d for p in ("ctra", "lru-rr") for d in (out / p).iterdir()]
    assert len(points) == 6
    with open(out / "combined.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert {r["policy"] for r in rows} == {"ctra", "lru-rr"}
    assert {r["value"] for r in rows} == {"0", "2000000", "8000000"}
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["completed"] == 6 and manifest["failures"] == []


def test_sweep_single_point_equals_run(config, tmp_path):
    out = tmp_path / "sw"
    assert main(["sweep", "--config", str(config), "--axis", "client_count", "--values", "4",
                 "--policies", "ctra", "--out", str(out)]) == 0
    run_out = tmp_path / "run"
    assert main(["run", "--config", str(config), "--out", str(run_out)]) == 0
    point = out / "ctra" / "client_count=4" / "seed=0"
    for name in ("metrics.csv", "summary.json", "config.json"):
        assert (point / name).read_bytes() == (run_out / name).read_bytes()


def test_sweep_records_failures(config, tmp_path, monkeypatch):
    import mecsim.cli as cli
    real = cli.run_to_dir

    def flaky(cfg, out, dump_instances=0):
        if cfg.n_clients == 2:
            raise RuntimeError("simulated crash")
        return real(cfg, out, dump_instances)
    monkeypatch.setattr(cli, "run_to_dir", flaky)
    out = tmp_path / "sw"
    rc = main(["sweep", "--config", str(config), "--axis", "client_count", "--values", "2,4",
               "--policies", "lru-rr", "--out", str(out)])
    assert rc == 1
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["completed"] == 1
    assert manifest["failures"][0]["value"] == 2 and "simulated crash" in manifest["failures"][0]["error"]


def test_sweep_rejects_duplicate_values(config, tmp_path):
    assert main(["sweep", "--config", str(config), "--axis", "client_count", "--values", "4,4",
                 "--out", str(tmp_path / "x")]) == 2


def test_verify(tmp_path, capsys):
    p = tmp_path / "i.json"
    save_instance(random_instance(42, 6), p)
    assert main(["verify", "--instance", str(p)]) == 0
    out = capsys.readouterr().out
    assert "PASS" in out and "brute-force objective" in out
    save_instance(CacheDecisionInstance(0, [], 0, {}, 0, 0), p)
    assert main(["verify", "--instance", str(p)]) == 0
    assert "objective: 0.0" in capsys.readouterr().out
    save_instance(random_instance(1, 13), p)
    assert main(["verify", "--instance", str(p)]) == 0
    assert "skipped" in capsys.readouterr().out
    p.write_text("{broken")
    assert main(["verify", "--instance", str(p)]) == 2


def test_run_dumps_verifiable_instances(config, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["run", "--config", str(config), "--out", str(out), "--dump-instances", "3"]) == 0
    dumps = sorted((out / "instances").iterdir())
    assert dumps
    for d in dumps:
        assert main(["verify", "--instance", str(d)]) == 0


def test_gen_catalog(tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"n_videos": 3, "levels": 4}))
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["gen-catalog", "--spec", str(spec), "--seed", "5", "--out", str(a)]) == 0
    assert main(["gen-catalog", "--spec", str(spec), "--seed", "5", "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    spec.write_text(json.dumps({"n_vids": 3}))
    assert main(["gen-catalog", "--spec", str(spec), "--out", str(a)]) == 2


def test_help_mentions_commands_and_env():
    r = subprocess.run([sys.executable, "-m", "mecsim", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    for word in ("run", "sweep", "verify", "gen-catalog", "MECSIM_OUT", "MECSIM_WORKERS"):
        assert word in r.stdout
