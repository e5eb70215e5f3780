import csv
import json

import pytest

from simdmimo.bench import (
    CELL_CSV_COLUMNS,
    CELL_TIMING_COLUMNS,
    OUT_ENV,
    BenchConfig,
    emit_breakdown,
    output_dir,
    plot_rows,
    run_bench,
)
from simdmimo.detector import STAGES
from simdmimo.kernels import ExecPath
from simdmimo.phy import NrNumerology
from simdmimo.schema import validate_document
from simdmimo.sim import ConfigError
from simdmimo.tensor import PrecisionMode


@pytest.fixture(scope="module")
def report():
    cfg = BenchConfig(mimo_sizes=((2, 2), (4, 4), (8, 8)), n_ttis=12, warmup_ttis=3, numerology=NrNumerology(n_rb=10))
    return run_bench(cfg)


def read_rows(path):
    lines = [l for l in path.read_text().splitlines() if not l.startswith("#")]
    return list(csv.DictReader(lines))


def test_config_defaults_and_validation():
    cfg = BenchConfig()
    assert cfg.mimo_sizes == ((2, 2), (4, 4), (8, 8)) and cfg.warmup_ttis >= 1
    for kw in ({"warmup_ttis": 0}, {"n_ttis": 0}, {"mimo_sizes": ((2, 4),)}, {"mimo_sizes": ()}, {"paths": ()}):
        with pytest.raises(ConfigError):
            BenchConfig(**kw)


def test_shared_config_file(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("mimo: [4, 4]\nmaster_seed: 5\nbench:\n  mimo_sizes: [[4, 4]]\n  n_ttis: 7\n  paths: [vector]\n")
    cfg = BenchConfig.from_file(p)
    assert cfg.mimo_sizes == ((4, 4),) and cfg.n_ttis == 7 and cfg.master_seed == 5
    assert cfg.paths == (ExecPath.VECTOR,)
    p.write_text("bench:\n  bogus: 1\n")
    with pytest.raises(ConfigError):
        BenchConfig.from_file(p)


def test_output_dir_resolution(monkeypatch, tmp_path):
    monkeypatch.setenv(OUT_ENV, str(tmp_path / "env"))
    assert output_dir() == tmp_path / "env"
    assert output_dir(tmp_path / "x") == tmp_path / "x"
    monkeypatch.delenv(OUT_ENV)
    assert str(output_dir()) == "simdmimo_out"


def test_cells_complete(report):
    assert len(report.cells) == 3 * 2 * 2
    for c in report.cells:
        assert c.n_ttis == 12 and len(c.totals_us) == 12
        assert c.min_us <= c.median_us <= c.p95_us
        assert all(v >= 0 for v in c.stage_means_us.values())


def test_stage_accounting(report):
    for c in report.cells:
        assert c.accounting_error_pct <= 5.0, c.label


def test_speedup_reference(report):
    for c in report.cells:
        if c.path is ExecPath.SCALAR:
            assert c.speedup_vs_scalar == 1.0
        if (c.precision, c.path) == (PrecisionMode.PD, ExecPath.SCALAR):
            assert c.speedup_vs_scalar_pd == 1.0
        assert c.speedup_vs_scalar > 0


def test_vector_ps_faster_than_scalar_pd(report):
    assert report.cell(4, 4, "ps", "vector").mean_us < report.cell(4, 4, "pd", "scalar").mean_us


def test_plot_rows(report):
    cols, rows = plot_rows(report)
    assert len(rows) == 3 * len(STAGES)
    assert cols[:4] == ["mimo", "nr", "nt", "stage"]
    assert set(cols[4:]) == {"ps_scalar_us", "ps_vector_us", "pd_scalar_us", "pd_vector_us"}


def test_emit_all(report, tmp_path):
    paths = emit_breakdown(report, "all", tmp_path)
    names = sorted(p.name for p in paths)
    assert names == ["breakdown_plotdata.csv", "report.csv", "report.json"]
    doc = json.loads((tmp_path / "report.json").read_text())
    validate_document(doc)
    assert set(doc["workload_digests"]) == {"2x2", "4x4", "8x8"}
    rows = read_rows(tmp_path / "report.csv")
    assert list(rows[0]) == list(CELL_CSV_COLUMNS)
    assert len(rows) == 12
    for row, cell in zip(rows, report.cells):
        assert float(row["mean_us"]) == cell.mean_us
        assert row["output_digest"] == cell.output_digest
    assert (tmp_path / "report.csv").read_text().startswith("# simdmimo bench v")


@pytest.mark.parametrize("fmt,name", [("csv", "report.csv"), ("json", "report.json"), ("plot-data", "breakdown_plotdata.csv")])
def test_emit_single_format(report, tmp_path, fmt, name):
    assert [p.name for p in emit_breakdown(report, fmt, tmp_path)] == [name]


def test_emit_errors(report, tmp_path):
    with pytest.raises(ValueError):
        emit_breakdown(report, "xml", tmp_path)
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        emit_breakdown(report, "csv", blocker / "sub")


def test_bench_repeatable(tmp_path):
    cfg = BenchConfig(mimo_sizes=((2, 2),), n_ttis=5, warmup_ttis=1, numerology=NrNumerology(n_rb=2))
    a, b = run_bench(cfg), run_bench(cfg)
    assert a.workload_digests == b.workload_digests
    assert [c.output_digest for c in a.cells] == [c.output_digest for c in b.cells]
    ra = read_rows(emit_breakdown(a, "csv", tmp_path / "a")[0])
    rb = read_rows(emit_breakdown(b, "csv", tmp_path / "b")[0])
    strip = lambda rows: [{k: v for k, v in r.items() if k not in CELL_TIMING_COLUMNS} for r in rows]
    assert strip(ra) == strip(rb)


@pytest.fixture(scope="module")
def report_60rb():
    return run_bench(BenchConfig(mimo_sizes=((4, 4), (8, 8)), n_ttis=300, warmup_ttis=50))


@pytest.mark.parametrize("path", ["scalar", "vector"])
@pytest.mark.parametrize("precision", ["ps", "pd"])
@pytest.mark.parametrize("mimo", [(4, 4), (8, 8)], ids=["4x4", "8x8"])
def test_inversion_stages_dominate(report_60rb, mimo, precision, path):
    """lu + forward_sub + backward_sub exceed every other single stage for nt >= 4."""
    c = report_60rb.cell(*mimo, precision, path)
    inv = c.inversion_us
    others = {s: c.stage_means_us[s] for s in ("covariance", "equalize")}
    assert all(inv > v for v in others.values()), f"{c.label}: inversion {inv:.1f} us vs {others}"
