"""Benchmark harness: per-stage timing of the detector across MIMO sizes, precisions and paths."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import platform
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numba
import numpy as np

from .detector import STAGES, DetectionConfig, StageTimings, Workspace, prepare_slot, run_prepared
from .kernels import ExecPath, active_capabilities
from .phy.channel import noise_var_from_snr_db
from .phy.mcs import NrNumerology
from .schema import validate_document
from .sim import (
    SCHEMA_VERSION,
    SHARED_SECTIONS,
    ConfigError,
    TtiData,
    _mimo_from,
    generate_tti,
    json_safe,
    numerology_from,
    read_config_file,
    resolve_mcs,
    resolve_profile,
    write_rows_csv,
)
from .tensor import PrecisionMode

OUT_ENV = "SIMDMIMO_OUT"
DEFAULT_OUT = "simdmimo_out"
REFERENCE_TARGETS = {
    "time_reduction_pct": 50.0,  # vector vs scalar, percent of scalar time
    "latency_4x4_ms": 0.03,
    "budget_share_4x4_pct": 3.0,
}
LATENCY_BUDGET_SHARE = 0.10
ACCOUNTING_TOLERANCE = 0.05
WORKLOAD_POOL = 256  # distinct pre-generated TTIs; longer runs cycle through them
CLOCK_RESOLUTION_FACTOR = 100

_BENCH_KEYS = {
    "mimo_sizes", "n_ttis", "warmup_ttis", "precisions", "paths", "snr_db", "output_dir",
}  # fmt: skip
_SHARED_KEYS = {"numerology", "master_seed", "channel_profile", "mcs_index", "mcs_table"}
# sim-only keys tolerated when a shared file is read for benchmarking
_SIM_ONLY_KEYS = {"mimo", "snr_db_points", "n_ttis", "precision", "path"}

CELL_CSV_COLUMNS = (
    "nr", "nt", "precision", "path", "path_used", "n_ttis", "output_digest",
    "mean_us", "median_us", "p95_us", "min_us",
    "covariance_us", "lu_us", "forward_sub_us", "backward_sub_us", "equalize_us", "inversion_us",
    "accounting_error_pct", "speedup_vs_scalar", "time_reduction_pct", "speedup_vs_scalar_pd",
)  # fmt: skip
CELL_TIMING_COLUMNS = CELL_CSV_COLUMNS[CELL_CSV_COLUMNS.index("mean_us") :]
PLOT_COLUMNS_FIXED = ("mimo", "nr", "nt", "stage")
INVERSION_STAGES = ("lu", "forward_sub", "backward_sub")
OTHER_STAGES = tuple(s for s in STAGES if s not in INVERSION_STAGES)


def output_dir(explicit: str | Path | None = None) -> Path:
    """Explicit argument, else ``$SIMDMIMO_OUT``, else ``./simdmimo_out``."""
    if explicit is not None:
        return Path(explicit)
    return Path(os.environ.get(OUT_ENV, DEFAULT_OUT))


@dataclass(frozen=True)
class BenchConfig:
    mimo_sizes: tuple[tuple[int, int], ...] = ((2, 2), (4, 4), (8, 8))
    n_ttis: int = 100
    numerology: NrNumerology = field(default_factory=NrNumerology)
    precisions: tuple[PrecisionMode, ...] = (PrecisionMode.PS, PrecisionMode.PD)
    paths: tuple[ExecPath, ...] = (ExecPath.SCALAR, ExecPath.VECTOR)
    warmup_ttis: int = 100
    output_dir: str | None = None
    master_seed: int = 0
    snr_db: float = 20.0
    channel_profile: str = "tdl-c"
    mcs_index: int = 9
    mcs_table: str | None = None

    def __post_init__(self):
        set_ = object.__setattr__
        set_(self, "mimo_sizes", tuple((int(a), int(b)) for a, b in self.mimo_sizes))
        set_(self, "precisions", tuple(dict.fromkeys(PrecisionMode.parse(p) for p in self.precisions)))
        set_(self, "paths", tuple(dict.fromkeys(ExecPath.parse(p) for p in self.paths)))
        if not self.mimo_sizes:
            raise ConfigError("mimo_sizes must not be empty")
        for nr, nt in self.mimo_sizes:
            try:
                DetectionConfig(nr, nt)
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
        if self.n_ttis < 1:
            raise ConfigError(f"n_ttis must be >= 1, got {self.n_ttis}")
        if self.warmup_ttis < 1:
            raise ConfigError(f"warmup_ttis must be >= 1, got {self.warmup_ttis}")
        if not self.precisions:
            raise ConfigError("precisions must not be empty")
        if not self.paths:
            raise ConfigError("paths must not be empty")
        if self.master_seed < 0:
            raise ConfigError(f"master_seed must be >= 0, got {self.master_seed}")

    def replace(self, **changes) -> "BenchConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_mapping(cls, data: dict, origin: str = "<config>") -> "BenchConfig":
        unknown = set(data) - _SHARED_KEYS - _SIM_ONLY_KEYS - SHARED_SECTIONS
        if unknown:
            raise ConfigError(f"{origin}: unknown config keys {sorted(unknown)}")
        section = data.get("bench") or {}
        if not isinstance(section, dict):
            raise ConfigError(f"{origin}: 'bench' must be a mapping")
        unknown = set(section) - _BENCH_KEYS
        if unknown:
            raise ConfigError(f"{origin}: unknown bench keys {sorted(unknown)}")
        kw: dict = {}
        if "numerology" in data:
            kw["numerology"] = numerology_from(data["numerology"], origin)
        try:
            for key, conv in (("master_seed", int), ("channel_profile", str), ("mcs_index", int)):
                if key in data:
                    kw[key] = conv(data[key])
            if data.get("mcs_table") is not None:
                kw["mcs_table"] = str(data["mcs_table"])
            if "mimo_sizes" in section:
                kw["mimo_sizes"] = tuple(_mimo_from(m, origin) for m in section["mimo_sizes"])
            for key in ("n_ttis", "warmup_ttis"):
                if key in section:
                    kw[key] = int(section[key])
            if "snr_db" in section:
                kw["snr_db"] = float(section["snr_db"])
            if "precisions" in section:
                kw["precisions"] = tuple(PrecisionMode.parse(p) for p in section["precisions"])
            if "paths" in section:
                kw["paths"] = tuple(ExecPath.parse(p) for p in section["paths"])
            if section.get("output_dir") is not None:
                kw["output_dir"] = str(section["output_dir"])
            return cls(**kw)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{origin}: {exc}") from None

    @classmethod
    def from_file(cls, path: str | Path) -> "BenchConfig":
        return cls.from_mapping(read_config_file(path), str(path))

    def to_mapping(self) -> dict:
        return {
            "numerology": asdict(self.numerology),
            "master_seed": self.master_seed,
            "channel_profile": self.channel_profile,
            "mcs_index": self.mcs_index,
            "mcs_table": self.mcs_table,
            "bench": {
                "mimo_sizes": [list(m) for m in self.mimo_sizes],
                "n_ttis": self.n_ttis,
                "warmup_ttis": self.warmup_ttis,
                "precisions": [p.value for p in self.precisions],
                "paths": [p.value for p in self.paths],
                "snr_db": self.snr_db,
            },
        }


@dataclass
class BenchCell:
    nr: int
    nt: int
    precision: PrecisionMode
    path: ExecPath
    path_used: ExecPath
    n_ttis: int
    output_digest: str
    totals_us: np.ndarray = field(repr=False)
    stage_means_us: dict[str, float]
    speedup_vs_scalar: float | None = None
    speedup_vs_scalar_pd: float | None = None

    @property
    def mean_us(self) -> float:
        return float(np.mean(self.totals_us))

    @property
    def median_us(self) -> float:
        return float(np.median(self.totals_us))

    @property
    def p95_us(self) -> float:
        return float(np.percentile(self.totals_us, 95))

    @property
    def min_us(self) -> float:
        return float(np.min(self.totals_us))

    @property
    def inversion_us(self) -> float:
        return self.stage_means_us["lu"] + self.stage_means_us["forward_sub"] + self.stage_means_us["backward_sub"]

    @property
    def accounting_error_pct(self) -> float:
        return 100.0 * abs(sum(self.stage_means_us[s] for s in STAGES) - self.mean_us) / self.mean_us

    @property
    def time_reduction_pct(self) -> float | None:
        if self.speedup_vs_scalar is None:
            return None
        return 100.0 * (1.0 - 1.0 / self.speedup_vs_scalar)

    @property
    def label(self) -> str:
        return f"{self.nr}x{self.nt}/{self.precision.value}/{self.path.value}"

    def shares(self) -> dict[str, float]:
        total = self.mean_us
        out = {s: self.stage_means_us[s] / total for s in STAGES}
        out["inversion"] = self.inversion_us / total
        return out

    def row(self) -> dict:
        r = {
            "nr": self.nr,
            "nt": self.nt,
            "precision": self.precision.value,
            "path": self.path.value,
            "path_used": self.path_used.value,
            "n_ttis": self.n_ttis,
            "output_digest": self.output_digest,
            "mean_us": self.mean_us,
            "median_us": self.median_us,
            "p95_us": self.p95_us,
            "min_us": self.min_us,
            **{f"{s}_us": self.stage_means_us[s] for s in STAGES},
            "inversion_us": self.inversion_us,
            "accounting_error_pct": self.accounting_error_pct,
            "speedup_vs_scalar": self.speedup_vs_scalar,
            "time_reduction_pct": self.time_reduction_pct,
            "speedup_vs_scalar_pd": self.speedup_vs_scalar_pd,
        }
        return r


@dataclass
class BenchReport:
    config: BenchConfig
    host: dict
    cells: list[BenchCell]
    workload_digests: dict[str, str]
    clock_resolution_ns: float
    warnings: list[str] = field(default_factory=list)

    def cell(self, nr: int, nt: int, precision, path) -> BenchCell:
        precision, path = PrecisionMode.parse(precision), ExecPath.parse(path)
        for c in self.cells:
            if (c.nr, c.nt, c.precision, c.path) == (nr, nt, precision, path):
                return c
        raise KeyError(f"no cell {nr}x{nt}/{precision.value}/{path.value}")

    def latency_rows(self) -> list[dict]:
        tti_ms = self.config.numerology.tti_ms
        rows = []
        for c in self.cells:
            if (c.nr, c.nt) != (4, 4):
                continue
            mean_ms = c.mean_us / 1e3
            rows.append(
                {
                    "cell": c.label,
                    "mean_ms": mean_ms,
                    "budget_ms": tti_ms,
                    "budget_share_pct": 100.0 * mean_ms / tti_ms,
                    "green": mean_ms < LATENCY_BUDGET_SHARE * tti_ms,
                }
            )
        return rows

    def dominance_rows(self) -> list[dict]:
        rows = []
        for c in self.cells:
            if c.nt < 4:
                continue
            sh = c.shares()
            rival = max(OTHER_STAGES, key=lambda s: sh[s])
            rows.append(
                {
                    "cell": c.label,
                    "inversion_share": sh["inversion"],
                    "largest_other_stage": rival,
                    "largest_other_share": sh[rival],
                    "pass": sh["inversion"] > sh[rival],
                }
            )
        return rows

    def to_json_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "bench",
            "config": self.config.to_mapping(),
            "host": self.host,
            "workload_digests": self.workload_digests,
            "cells": [
                {k: v for k, v in c.row().items() if k not in CELL_TIMING_COLUMNS}
                | {"timing": {k: c.row()[k] for k in CELL_TIMING_COLUMNS}}
                for c in self.cells
            ],
            "timing_checks": {
                "clock_resolution_ns": self.clock_resolution_ns,
                "warnings": self.warnings,
                "latency_budget": self.latency_rows(),
                "dominance": self.dominance_rows(),
                "reference_targets": REFERENCE_TARGETS,
            },
        }


def host_descriptor() -> dict:
    caps = active_capabilities()
    return {
        **caps.as_dict(),
        "machine": platform.machine(),
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "numba": numba.__version__,
    }


def measure_clock_resolution(samples: int = 2000) -> float:
    """Smallest positive step of the monotonic clock, in ns (at least the advertised resolution)."""
    clock = time.perf_counter_ns
    best = float("inf")
    for _ in range(samples):
        a = clock()
        b = clock()
        while b == a:
            b = clock()
        best = min(best, b - a)
    return max(best, time.get_clock_info("perf_counter").resolution * 1e9)


def _digest_workload(data: list[TtiData]) -> str:
    h = hashlib.sha256()
    for d in data:
        h.update(np.ascontiguousarray(d.tx.source_bits).tobytes())
        h.update(np.ascontiguousarray(d.channel.re).tobytes())
        h.update(np.ascontiguousarray(d.channel.im).tobytes())
        h.update(np.ascontiguousarray(d.rx.symbols).tobytes())
    return h.hexdigest()


def _run_cell(
    data: list[TtiData], cfg: BenchConfig, nr: int, nt: int, precision: PrecisionMode, path: ExecPath, nv: float
) -> BenchCell:
    det = DetectionConfig(nr, nt, precision, path, nv)
    first = prepare_slot(data[0].rx, data[0].channel, det)
    work = Workspace.for_slot(first)
    for i in range(cfg.warmup_ttis):
        d = data[i % len(data)]
        run_prepared(prepare_slot(d.rx, d.channel, det), work)
    timings: list[StageTimings] = []
    digest = hashlib.sha256()
    for i in range(cfg.n_ttis):
        d = data[i % len(data)]
        prep = prepare_slot(d.rx, d.channel, det)
        res = run_prepared(prep, work)
        timings.append(res.timings)
        digest.update(res.x_re.tobytes())
        digest.update(res.x_im.tobytes())
    totals = np.array([t.total for t in timings], dtype=np.float64) / 1e3
    mean = StageTimings.mean(timings)
    return BenchCell(
        nr, nt, precision, path, first.path, cfg.n_ttis, digest.hexdigest(), totals,
        {s: getattr(mean, s) / 1e3 for s in STAGES},
    )  # fmt: skip


def run_bench(cfg: BenchConfig, log=None) -> BenchReport:
    """Time every (mimo, precision, path) cell on one shared, pre-generated workload per MIMO size."""
    mcs = resolve_mcs(cfg.mcs_index, cfg.mcs_table)
    profile = resolve_profile(cfg.channel_profile)
    nv = noise_var_from_snr_db(cfg.snr_db)
    resolution = measure_clock_resolution()
    cells: list[BenchCell] = []
    digests: dict[str, str] = {}
    warnings: list[str] = []
    for nr, nt in cfg.mimo_sizes:
        data = [
            generate_tti(cfg.numerology, profile, (nr, nt), mcs.qm, nv, cfg.master_seed, 0, i)
            for i in range(min(cfg.n_ttis, WORKLOAD_POOL))
        ]
        digests[f"{nr}x{nt}"] = _digest_workload(data)
        for precision in cfg.precisions:
            for path in cfg.paths:
                if log is not None:
                    log(f"bench {nr}x{nt} {precision.value} {path.value}")
                cells.append(_run_cell(data, cfg, nr, nt, precision, path, nv))
    for c in cells:
        scalar = [s for s in cells if (s.nr, s.nt, s.precision, s.path) == (c.nr, c.nt, c.precision, ExecPath.SCALAR)]
        if scalar:
            c.speedup_vs_scalar = 1.0 if c is scalar[0] else scalar[0].mean_us / c.mean_us
        ref = [s for s in cells if (s.nr, s.nt, s.precision, s.path) == (c.nr, c.nt, PrecisionMode.PD, ExecPath.SCALAR)]
        if ref:
            c.speedup_vs_scalar_pd = 1.0 if c is ref[0] else ref[0].mean_us / c.mean_us
        if c.min_us * 1e3 < CLOCK_RESOLUTION_FACTOR * resolution:
            warnings.append(
                f"{c.label}: per-TTI time {c.min_us:.3f} us is below {CLOCK_RESOLUTION_FACTOR}x the clock "
                f"resolution ({resolution:.0f} ns); timings are unreliable"
            )
        if c.accounting_error_pct > 100 * ACCOUNTING_TOLERANCE:
            warnings.append(f"{c.label}: stage sum deviates {c.accounting_error_pct:.1f}% from total")
        if c.path_used is not c.path:
            warnings.append(f"{c.label}: no native vector unit, vector path ran the scalar fallback")
    return BenchReport(cfg, host_descriptor(), cells, digests, resolution, warnings)


# --------------------------------------------------------------------------- emission


def plot_rows(report: BenchReport) -> tuple[list[str], list[dict]]:
    """One series per (mimo, stage); one column per (precision, path) cell, values in us."""
    combos = []
    for c in report.cells:
        key = f"{c.precision.value}_{c.path.value}_us"
        if key not in combos:
            combos.append(key)
    rows = []
    for nr, nt in report.config.mimo_sizes:
        for stage in STAGES:
            row = {"mimo": f"{nr}x{nt}", "nr": nr, "nt": nt, "stage": stage}
            for key in combos:
                row[key] = ""
            for c in report.cells:
                if (c.nr, c.nt) == (nr, nt):
                    row[f"{c.precision.value}_{c.path.value}_us"] = c.stage_means_us[stage]
            rows.append(row)
    return list(PLOT_COLUMNS_FIXED) + combos, rows


def emit_breakdown(report: BenchReport, fmt: str = "all", out_dir: str | Path | None = None) -> list[Path]:
    """Write ``report.csv``, ``report.json`` and/or ``breakdown_plotdata.csv``."""
    if not report.cells:
        raise ValueError("report has no cells")
    formats = {"csv", "json", "plot-data"} if fmt == "all" else {fmt}
    if not formats <= {"csv", "json", "plot-data"}:
        raise ValueError(f"unknown format {fmt!r}; expected csv, json, plot-data or all")
    out = output_dir(out_dir if out_dir is not None else report.config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if "json" in formats:
        doc = json_safe(report.to_json_dict())
        validate_document(doc)
        p = out / "report.json"
        p.write_text(json.dumps(doc, indent=2, allow_nan=False) + "\n")
        written.append(p)
    if "csv" in formats:
        p = out / "report.csv"
        rows = [{k: ("" if v is None else v) for k, v in c.row().items()} for c in report.cells]
        write_rows_csv(p, CELL_CSV_COLUMNS, rows, f"simdmimo bench v{SCHEMA_VERSION}")
        written.append(p)
    if "plot-data" in formats:
        p = out / "breakdown_plotdata.csv"
        cols, rows = plot_rows(report)
        write_rows_csv(p, cols, rows, f"simdmimo breakdown plot-data v{SCHEMA_VERSION}")
        written.append(p)
    return written
