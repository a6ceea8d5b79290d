import csv
import json
from pathlib import Path

import pytest

from netlab import __version__
from netlab.cli import EXPERIMENTS, main, read_config_file
from netlab.errors import ConfigError

SMALL = {
    "duality": ["--replicas", "2000"],
    "invariance": ["--replicas", "200", "--L", "128", "--T", "8", "--dual-T", "8"],
    "density": ["--replicas", "300", "--Ts", "16,64"],
    "pdec": ["--replicas", "4", "--Ts", "16", "--core", "500"],
    "sticky": ["--replicas", "500", "--eps-list", "0.2", "--points", "4"],
    "hopcheck": ["--replicas", "20", "--horizon", "5"],
    "rbp": ["--replicas", "300", "--Ts", "16,32", "--eps-list", "0.05", "--K", "2"],
    "rbp-graph": ["--T", "8"],
    "tightness": ["--replicas", "50", "--eps", "0.1", "--deltas", "0.2,0.1"],
    "excursion": ["--replicas", "300", "--T", "50", "--ells", "0,5,10"],
    "net-density": ["--replicas", "2", "--eps-list", "0.2,0.1"],
    "denbc": ["--replicas", "50", "--eps", "0.02", "--Ls", "64,128", "--R0", "0.25"],
    "dump-arrows": ["--window=-2,2,0,2", "--mode", "coupled"],
}
OUTPUT = {
    "duality": "duality.csv",
    "invariance": "invariance.csv",
    "density": "density.csv",
    "pdec": "pdec.csv",
    "sticky": "sticky.csv",
    "hopcheck": "hopcheck.json",
    "rbp": "rbp_tail.csv",
    "rbp-graph": "rbp_graph.json",
    "tightness": "tightness.csv",
    "excursion": "excursion.csv",
    "net-density": "net_density.csv",
    "denbc": "denbc.csv",
    "dump-arrows": "arrows.txt",
}


def rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


@pytest.mark.parametrize("name", EXPERIMENTS)
def test_every_experiment_runs(tmp_path, name):
    assert main([name, "--outdir", str(tmp_path), *SMALL[name]]) == 0
    out = tmp_path / OUTPUT[name]
    assert out.is_file() and out.stat().st_size > 0
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert {"version", "experiment", "config", "seed0", "replica_count", "started_at", "elapsed_s", "outputs"} <= set(man)
    assert man["experiment"] == name and man["version"] == __version__
    assert [o["path"] for o in man["outputs"]] == [OUTPUT[name]]


def test_duality_example(tmp_path):
    code = main(["duality", "--eps", "0.2", "--kernel", "lazy", "--T", "3", "--replicas", "100000", "--assert", "--outdir", str(tmp_path)])
    assert code == 0
    (row,) = rows(tmp_path / "duality.csv")
    assert row["agree"] == row["replicas"] == "100000"


def test_density_rows(tmp_path):
    assert main(["density", "--eps", "0.01", "--Ts", "64,256,1024,4096", "--replicas", "200", "--outdir", str(tmp_path)]) == 0
    r = rows(tmp_path / "density.csv")
    assert [int(x["T"]) for x in r] == [64, 256, 1024, 4096]
    assert list(r[0]) == ["epsilon", "T", "p_hat", "se", "replicas", "seed0"]


def test_sticky_columns(tmp_path):
    assert main(["sticky", "--outdir", str(tmp_path), *SMALL["sticky"]]) == 0
    header = (tmp_path / "sticky.csv").read_text().splitlines()[0]
    assert header == "epsilon,t,mean_R_product,se,mean_R_potential,se,mean_Z,se"


def test_unknown_experiment(capsys):
    assert main(["bogus"]) == 1
    assert "usage" in capsys.readouterr().err


def test_assert_violation_exit_code(tmp_path):
    # the strict hop rule misses net paths on some realizations
    args = ["hopcheck", "--rule", "strict", "--eps", "0.5", "--replicas", "50", "--outdir", str(tmp_path)]
    assert main(args + ["--assert"]) == 2
    assert main(args) == 0


def test_execution_error_cleans_up(tmp_path):
    # T beyond delta0 / eps^2 fails inside the run
    code = main(["rbp", "--eps-list", "0.5", "--Ts", "16", "--replicas", "10", "--outdir", str(tmp_path)])
    assert code == 1
    assert list(tmp_path.iterdir()) == []


def test_invalid_fields(tmp_path, capsys):
    assert main(["duality", "--eps", "2", "--outdir", str(tmp_path)]) == 1
    assert "eps" in capsys.readouterr().err
    assert main(["density", "--Ts", "a,b", "--outdir", str(tmp_path)]) == 1
    assert main(["duality", "--kernel", "nope", "--outdir", str(tmp_path)]) == 1
    assert main(["hopcheck", "--rule", "loose", "--outdir", str(tmp_path)]) == 1
    assert not (tmp_path / "manifest.json").exists()


def test_config_file_precedence(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# duality sweep\neps=0.1\nT=2\nreplicas = 300\n")
    out = tmp_path / "out"
    assert main(["duality", "--config", str(cfg), "--T", "4", "--outdir", str(out)]) == 0
    (row,) = rows(out / "duality.csv")
    assert (row["epsilon"], row["T"], row["replicas"]) == ("0.1", "4", "300")


def test_config_file_diagnostics(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("eps=0.1\nfoo=3\n")
    assert main(["duality", "--config", str(cfg), "--outdir", str(tmp_path / "o")]) == 1
    assert "bad.cfg:2: unknown field 'foo'" in capsys.readouterr().err
    cfg.write_text("T=three\n")
    with pytest.raises(ConfigError, match=":1: field 'T'"):
        read_config_file(cfg, "duality")
    cfg.write_text("T\n")
    with pytest.raises(ConfigError, match="flag=value"):
        read_config_file(cfg, "duality")
    assert not (tmp_path / "o").exists() or not any((tmp_path / "o").iterdir())


def test_jobs_do_not_change_outputs(tmp_path):
    base = ["rbp", "--replicas", "1200", "--Ts", "16,32", "--eps-list", "0.05"]
    assert main(base + ["--outdir", str(tmp_path / "a"), "--jobs", "1"]) == 0
    assert main(base + ["--outdir", str(tmp_path / "b"), "--jobs", "2"]) == 0
    assert (tmp_path / "a" / "rbp_tail.csv").read_bytes() == (tmp_path / "b" / "rbp_tail.csv").read_bytes()


def test_replay(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["excursion", "--replicas", "300", "--T", "50", "--ells", "0,5,10", "--outdir", str(out)]) == 0
    man = out / "manifest.json"
    assert main(["replay", str(man)]) == 0
    assert main(["replay", str(man), "--jobs", "2"]) == 0
    assert "identical" in capsys.readouterr().out

    data = json.loads(man.read_text())
    data["seed0"] += 1
    tampered = tmp_path / "tampered.json"
    tampered.write_text(json.dumps(data))
    assert main(["replay", str(tampered)]) == 2

    data["seed0"] -= 1
    data["version"] = "0.0.0"
    old = tmp_path / "old.json"
    old.write_text(json.dumps(data))
    capsys.readouterr()
    assert main(["replay", str(old)]) == 0
    assert "VersionMismatch" in capsys.readouterr().err

    assert main(["replay", str(tmp_path / "missing.json")]) == 1
    (tmp_path / "junk.json").write_text("{")
    assert main(["replay", str(tmp_path / "junk.json")]) == 1


def test_dump_arrows_format(tmp_path):
    assert main(["dump-arrows", "--outdir", str(tmp_path), "--window", "0,1,0,0"]) == 0
    lines = (tmp_path / "arrows.txt").read_text().splitlines()
    assert lines[0].startswith("#") and len(lines) == 3
    assert all(len(line.split()) == 4 for line in lines[1:])


def test_console_script_entry_point():
    from importlib.metadata import entry_points

    eps = entry_points(group="console_scripts")
    assert any(e.name == "netlab" and e.value == "netlab.cli:main" for e in eps)
