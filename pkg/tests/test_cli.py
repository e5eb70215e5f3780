import json

import pytest

from simdmimo.cli import main, validate_file
from simdmimo.phy import default_mcs_table_path


def run(capsys, *argv):
    rc = main(list(argv))
    out = capsys.readouterr()
    return rc, out.out, out.err


def test_help(capsys):
    rc, out, _ = run(capsys, "--help")
    assert rc == 0 and "bench" in out


@pytest.mark.parametrize("layers,bits,rate", [(2, 139376, "139.4"), (4, 278776, "278.8")])
def test_tbs(capsys, layers, bits, rate):
    rc, out, _ = run(capsys, "tbs", "--mcs", "27", "--rb", "60", "--layers", str(layers))
    assert rc == 0
    assert f"TBS: {bits} bits per slot" in out
    assert f"peak rate: {rate} Mbps" in out


def test_tbs_json(capsys):
    rc, out, _ = run(capsys, "tbs", "--mcs", "27", "--rb", "60", "--layers", "2", "--json")
    doc = json.loads(out)
    assert rc == 0 and doc["qm"] == 8


def test_caps(capsys):
    rc, out, _ = run(capsys, "caps")
    assert rc == 0 and "width:" in out and "mode:" in out
    rc, out, _ = run(capsys, "caps", "--json")
    assert "width_bits" in json.loads(out)


@pytest.mark.parametrize(
    "argv",
    [["sim", "--config", "missing.file"], ["sim", "--bogus"], ["frobnicate"], ["sim", "--mimo", "2x4"],
     ["tbs", "--mcs", "99", "--rb", "60", "--layers", "2"], ["bench", "--warmup", "0"]],
)  # fmt: skip
def test_config_errors_exit_1(capsys, argv):
    rc, _, err = run(capsys, *argv)
    assert rc == 1 and err


def test_sim_writes(capsys, tmp_path):
    rc, out, _ = run(capsys, "sim", "--mimo", "2x2", "--snr", "0", "10", "--ttis", "2", "--rb", "2", "--out", str(tmp_path))
    assert rc == 0 and "wrote" in out
    assert (tmp_path / "report.json").exists() and (tmp_path / "report.csv").exists()
    assert validate_file(tmp_path / "report.json")


def test_compare_writes(capsys, tmp_path):
    rc, _, _ = run(capsys, "compare-precision", "--mimo", "2x2", "--snr", "10", "--ttis", "2", "--rb", "2",
                   "--out", str(tmp_path))  # fmt: skip
    assert rc == 0
    assert json.loads((tmp_path / "report.json").read_text())["kind"] == "compare-precision"


def test_bench_uses_env_out(capsys, tmp_path, monkeypatch):
    monkeypatch.setenv("SIMDMIMO_OUT", str(tmp_path / "env"))
    rc, out, _ = run(capsys, "bench", "--mimo", "2x2", "--ttis", "3", "--warmup", "1", "--rb", "2")
    assert rc == 0 and "dominance" not in out
    assert sorted(p.name for p in (tmp_path / "env").iterdir()) == ["breakdown_plotdata.csv", "report.csv", "report.json"]


def test_bench_unwritable_is_runtime_error(capsys, tmp_path):
    blocker = tmp_path / "f"
    blocker.write_text("")
    rc, _, err = run(capsys, "bench", "--mimo", "2x2", "--ttis", "2", "--warmup", "1", "--rb", "1",
                     "--out", str(blocker / "x"))  # fmt: skip
    assert rc == 2 and "error" in err


def test_validate(capsys, tmp_path):
    rc, out, _ = run(capsys, "validate")
    assert rc == 0 and "27" in out
    cfg = tmp_path / "c.yaml"
    cfg.write_text("mimo: [4, 4]\nbench:\n  n_ttis: 3\n")
    prof = tmp_path / "p.yaml"
    prof.write_text("name: two\ntaps:\n  - [0.0, 0.0]\n  - [1.0e-7, -3.0]\n")
    rc, _, _ = run(capsys, "validate", str(cfg), str(prof), str(default_mcs_table_path()))
    assert rc == 0
    cfg.write_text("mimo: [4, 4]\nnope: 1\n")
    rc, _, err = run(capsys, "validate", str(cfg))
    assert rc == 1 and "nope" in err
