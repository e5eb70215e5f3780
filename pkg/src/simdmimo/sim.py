"""Monte-Carlo link-level simulation: bits, QAM, fading channel, AWGN, LMMSE, metrics."""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import yaml

from .detector import DetectionConfig, StageTimings, detect_slot, mse, warm_up
from .kernels import ExecPath
from .linalg import SingularMatrixError
from .phy.channel import (
    ChannelProfile,
    ChannelResponse,
    awgn_array,
    derive_rng,
    load_channel_profile,
    noise_var_from_snr_db,
    realize_channel,
)
from .phy.grid import SlotGrid
from .phy.mcs import McsEntry, NrNumerology, default_mcs_table_path, load_mcs_table
from .schema import validate_document
from .tensor import PrecisionMode

SCHEMA_VERSION = "1.0"
FULL_SCALE_TTIS = 10_000
DEFAULT_TTIS = 100

# stream identifiers mixed into the per-TTI seed
_STREAM_BITS, _STREAM_CHANNEL, _STREAM_NOISE = 0, 1, 2

SIM_CSV_COLUMNS = (
    "snr_db", "noise_var", "ttis", "skipped", "symbols", "symbol_errors", "ser", "bits", "bit_errors", "ber",
    "evm_rms_pct", "mse", "t_covariance_us", "t_lu_us", "t_forward_sub_us", "t_backward_sub_us",
    "t_equalize_us", "t_total_us",
)  # fmt: skip
TIMING_COLUMNS = tuple(c for c in SIM_CSV_COLUMNS if c.startswith("t_"))

_NUMEROLOGY_KEYS = {"scs_khz", "n_rb", "symbols_per_slot"}
_SIM_KEYS = {
    "numerology", "mcs_index", "mcs_table", "mimo", "snr_db_points", "n_ttis", "precision", "path",
    "master_seed", "channel_profile",
}  # fmt: skip
SHARED_SECTIONS = {"bench"}  # other tools' sections tolerated in a shared config file


class ConfigError(ValueError):
    pass


def read_config_file(path: str | Path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: cannot parse config: {exc}") from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    return data


def numerology_from(data, origin: str) -> NrNumerology:
    if data is None:
        return NrNumerology()
    if not isinstance(data, dict):
        raise ConfigError(f"{origin}: 'numerology' must be a mapping")
    unknown = set(data) - _NUMEROLOGY_KEYS
    if unknown:
        raise ConfigError(f"{origin}: unknown numerology keys {sorted(unknown)}")
    try:
        return NrNumerology(**{k: int(v) for k, v in data.items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{origin}: {exc}") from None


def _mimo_from(value, origin: str) -> tuple[int, int]:
    try:
        nr, nt = (int(v) for v in value)
    except (TypeError, ValueError):
        raise ConfigError(f"{origin}: mimo must be a pair [nr, nt], got {value!r}") from None
    return nr, nt


@dataclass(frozen=True)
class SimConfig:
    numerology: NrNumerology = field(default_factory=NrNumerology)
    mcs_index: int = 9
    mimo: tuple[int, int] = (4, 4)
    snr_db_points: tuple[float, ...] = (0.0, 5.0, 10.0, 15.0, 20.0)
    n_ttis: int = DEFAULT_TTIS
    precision: PrecisionMode = PrecisionMode.PS
    path: ExecPath = ExecPath.VECTOR
    master_seed: int = 0
    channel_profile: str = "tdl-c"
    mcs_table: str | None = None  # path; None selects the shipped 256QAM table

    def __post_init__(self):
        set_ = object.__setattr__
        set_(self, "precision", PrecisionMode.parse(self.precision))
        set_(self, "path", ExecPath.parse(self.path))
        set_(self, "mimo", tuple(int(v) for v in self.mimo))
        set_(self, "snr_db_points", tuple(float(v) for v in self.snr_db_points))
        if self.n_ttis < 1:
            raise ConfigError(f"n_ttis must be >= 1, got {self.n_ttis}")
        if not self.snr_db_points:
            raise ConfigError("snr_db_points must not be empty")
        if any(b <= a for a, b in zip(self.snr_db_points, self.snr_db_points[1:])):
            raise ConfigError("snr_db_points must be strictly increasing")
        if any(math.isnan(v) for v in self.snr_db_points):
            raise ConfigError("snr_db_points must not contain NaN")
        if self.master_seed < 0:
            raise ConfigError(f"master_seed must be >= 0, got {self.master_seed}")
        try:
            DetectionConfig(self.mimo[0], self.mimo[1])
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def nr(self) -> int:
        return self.mimo[0]

    @property
    def nt(self) -> int:
        return self.mimo[1]

    def replace(self, **changes) -> "SimConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_mapping(cls, data: dict, origin: str = "<config>") -> "SimConfig":
        unknown = set(data) - _SIM_KEYS - SHARED_SECTIONS
        if unknown:
            raise ConfigError(f"{origin}: unknown config keys {sorted(unknown)}")
        kw: dict = {}
        if "numerology" in data:
            kw["numerology"] = numerology_from(data["numerology"], origin)
        if "mimo" in data:
            kw["mimo"] = _mimo_from(data["mimo"], origin)
        try:
            for key, conv in (("mcs_index", int), ("n_ttis", int), ("master_seed", int), ("channel_profile", str)):
                if key in data:
                    kw[key] = conv(data[key])
            if "snr_db_points" in data:
                kw["snr_db_points"] = tuple(float(v) for v in data["snr_db_points"])
            if data.get("mcs_table") is not None:
                kw["mcs_table"] = str(data["mcs_table"])
            if "precision" in data:
                kw["precision"] = PrecisionMode.parse(data["precision"])
            if "path" in data:
                kw["path"] = ExecPath.parse(data["path"])
            return cls(**kw)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{origin}: {exc}") from None

    @classmethod
    def from_file(cls, path: str | Path) -> "SimConfig":
        return cls.from_mapping(read_config_file(path), str(path))

    def to_mapping(self) -> dict:
        return {
            "numerology": asdict(self.numerology),
            "mcs_index": self.mcs_index,
            "mcs_table": self.mcs_table,
            "mimo": list(self.mimo),
            "snr_db_points": list(self.snr_db_points),
            "n_ttis": self.n_ttis,
            "precision": self.precision.value,
            "path": self.path.value,
            "master_seed": self.master_seed,
            "channel_profile": self.channel_profile,
        }


def resolve_mcs(cfg_index: int, table: str | None) -> McsEntry:
    path = Path(table) if table is not None else default_mcs_table_path()
    try:
        entries = load_mcs_table(path)
    except FileNotFoundError as exc:
        raise ConfigError(str(exc)) from None
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if not 0 <= cfg_index < len(entries):
        raise ConfigError(f"MCS index {cfg_index} not in {path} (0..{len(entries) - 1})")
    return entries[cfg_index]


def resolve_profile(ref: str) -> ChannelProfile:
    try:
        return load_channel_profile(ref)
    except FileNotFoundError as exc:
        raise ConfigError(str(exc)) from None
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


@dataclass
class TtiData:
    tx: SlotGrid
    channel: ChannelResponse  # always double precision
    rx: SlotGrid


def apply_channel(h: ChannelResponse, x: np.ndarray) -> np.ndarray:
    """``y[k, s] = H[k] x[k, s]`` for grids shaped ``(K, S, nt)``."""
    hc = h.re.astype(np.float64) + 1j * h.im.astype(np.float64)
    return np.einsum("ijk,ksj->ksi", hc, x, optimize=True)


def generate_tti(
    numerology: NrNumerology,
    profile: ChannelProfile,
    mimo: tuple[int, int],
    qm: int,
    noise_var: float,
    master_seed: int,
    snr_index: int,
    tti_index: int,
) -> TtiData:
    """One slot of seeded traffic; all draws happen in double precision."""
    nr, nt = mimo
    keys = (master_seed, snr_index, tti_index)
    tx = SlotGrid.random(numerology, nt, qm, derive_rng(*keys, _STREAM_BITS))
    h = realize_channel(profile, numerology, nr, nt, tti_index, seed=[master_seed, snr_index, _STREAM_CHANNEL])
    y = apply_channel(h, tx.symbols)
    y = y + awgn_array(y.shape, noise_var, derive_rng(*keys, _STREAM_NOISE))
    return TtiData(tx, h, SlotGrid.received(y))


@dataclass
class SnrRecord:
    snr_db: float
    noise_var: float
    ttis: int
    skipped: int
    symbols: int
    symbol_errors: int
    bits: int
    bit_errors: int
    err_energy: float
    ref_energy: float
    mean_stage_timings: StageTimings

    @property
    def ser(self) -> float:
        return self.symbol_errors / self.symbols if self.symbols else 0.0

    @property
    def ber(self) -> float:
        return self.bit_errors / self.bits if self.bits else 0.0

    @property
    def mse(self) -> float:
        return self.err_energy / self.symbols if self.symbols else 0.0

    @property
    def evm_rms(self) -> float:
        return 100.0 * math.sqrt(self.err_energy / self.ref_energy) if self.ref_energy > 0 else 0.0

    def row(self) -> dict:
        t = self.mean_stage_timings
        return {
            "snr_db": self.snr_db,
            "noise_var": self.noise_var,
            "ttis": self.ttis,
            "skipped": self.skipped,
            "symbols": self.symbols,
            "symbol_errors": self.symbol_errors,
            "ser": self.ser,
            "bits": self.bits,
            "bit_errors": self.bit_errors,
            "ber": self.ber,
            "evm_rms_pct": self.evm_rms,
            "mse": self.mse,
            "t_covariance_us": t.covariance / 1e3,
            "t_lu_us": t.lu / 1e3,
            "t_forward_sub_us": t.forward_sub / 1e3,
            "t_backward_sub_us": t.backward_sub / 1e3,
            "t_equalize_us": t.equalize / 1e3,
            "t_total_us": t.total / 1e3,
        }


@dataclass
class SimResult:
    config: SimConfig
    records: list[SnrRecord]
    mcs: McsEntry

    def ser(self) -> list[float]:
        return [r.ser for r in self.records]

    def rows(self) -> list[dict]:
        return [r.row() for r in self.records]

    def to_json_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "sim",
            "config": self.config.to_mapping(),
            "mcs": {"index": self.mcs.index, "qm": self.mcs.qm, "code_rate_x1024": self.mcs.code_rate_x1024},
            "columns": list(SIM_CSV_COLUMNS),
            "records": self.rows(),
        }


class _Accumulator:
    """Order-independent sums for one SNR point."""

    def __init__(self):
        self.ttis = self.skipped = self.symbols = self.symbol_errors = self.bits = self.bit_errors = 0
        self.err_energy = self.ref_energy = 0.0
        self.timings = StageTimings()

    def add(self, tx: SlotGrid, x_hat: np.ndarray, timings: StageTimings) -> None:
        x = tx.symbols
        d = x_hat.astype(np.complex128) - x
        bits_hat = SlotGrid.received(x_hat).demodulate(tx.qm).reshape(-1, tx.qm)
        bits = tx.source_bits.reshape(-1, tx.qm)
        wrong = bits_hat != bits
        self.ttis += 1
        self.symbols += x.size
        self.symbol_errors += int(wrong.any(axis=1).sum())
        self.bits += bits.size
        self.bit_errors += int(wrong.sum())
        self.err_energy += float(np.sum(d.real**2 + d.imag**2))
        self.ref_energy += float(np.sum(x.real**2 + x.imag**2))
        self.timings = self.timings + timings

    def record(self, snr_db: float, noise_var: float) -> SnrRecord:
        t = self.timings.scaled(1.0 / self.ttis) if self.ttis else StageTimings()
        return SnrRecord(
            snr_db, noise_var, self.ttis, self.skipped, self.symbols, self.symbol_errors, self.bits,
            self.bit_errors, self.err_energy, self.ref_energy, t,
        )  # fmt: skip


def _preflight(cfg: SimConfig, precisions=None) -> tuple[McsEntry, ChannelProfile]:
    mcs, profile = resolve_mcs(cfg.mcs_index, cfg.mcs_table), resolve_profile(cfg.channel_profile)
    for p in precisions or (cfg.precision,):
        warm_up(DetectionConfig(cfg.nr, cfg.nt, p, cfg.path, 1.0))  # keeps JIT loading out of the timings
    return mcs, profile


def run_sim(cfg: SimConfig, progress: Callable[[int, int], None] | None = None) -> SimResult:
    """Sweep the configured SNR points; a pure function of ``cfg`` apart from timings."""
    mcs, profile = _preflight(cfg)
    records = []
    for si, snr in enumerate(cfg.snr_db_points):
        nv = noise_var_from_snr_db(snr)
        det = DetectionConfig(cfg.nr, cfg.nt, cfg.precision, cfg.path, nv)
        acc = _Accumulator()
        for tti in range(cfg.n_ttis):
            data = generate_tti(cfg.numerology, profile, cfg.mimo, mcs.qm, nv, cfg.master_seed, si, tti)
            try:
                res = detect_slot(data.rx, data.channel, det)
            except SingularMatrixError:
                acc.skipped += 1
                continue
            acc.add(data.tx, res.x_hat, res.timings)
            if progress is not None:
                progress(si, tti)
        records.append(acc.record(snr, nv))
    return SimResult(cfg, records, mcs)


# --------------------------------------------------------------------------- precision comparison


def binomial_ci_half_width(p: float, n: int, z: float = 1.959963984540054) -> float:
    """Normal-approximation 95% half-width of a proportion estimated from ``n`` trials."""
    if n <= 0:
        return float("inf")
    return z * math.sqrt(max(p * (1.0 - p), 0.0) / n)


@dataclass
class PrecisionDelta:
    snr_db: float
    ser_ps: float
    ser_pd: float
    delta_ser: float
    ci_half_width: float
    mse_ps: float
    mse_pd: float

    @property
    def within_ci(self) -> bool:
        return abs(self.delta_ser) <= self.ci_half_width

    @property
    def mse_ratio(self) -> float:
        if self.mse_pd == 0:
            return 1.0 if self.mse_ps == 0 else float("inf")
        return self.mse_ps / self.mse_pd


@dataclass
class PrecisionComparison:
    ps: SimResult
    pd: SimResult
    deltas: list[PrecisionDelta]

    def to_json_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "compare-precision",
            "config": self.ps.config.to_mapping(),
            "ps": self.ps.rows(),
            "pd": self.pd.rows(),
            "deltas": [
                {**asdict(d), "within_ci": d.within_ci, "mse_ratio": d.mse_ratio} for d in self.deltas
            ],
        }


def compare_precisions(cfg: SimConfig) -> PrecisionComparison:
    """The same seeded experiment under PS and PD; each slot is generated once and detected twice."""
    mcs, profile = _preflight(cfg, (PrecisionMode.PS, PrecisionMode.PD))
    recs: dict[PrecisionMode, list[SnrRecord]] = {PrecisionMode.PS: [], PrecisionMode.PD: []}
    for si, snr in enumerate(cfg.snr_db_points):
        nv = noise_var_from_snr_db(snr)
        accs = {p: _Accumulator() for p in recs}
        dets = {p: DetectionConfig(cfg.nr, cfg.nt, p, cfg.path, nv) for p in recs}
        for tti in range(cfg.n_ttis):
            data = generate_tti(cfg.numerology, profile, cfg.mimo, mcs.qm, nv, cfg.master_seed, si, tti)
            for p, det in dets.items():
                try:
                    res = detect_slot(data.rx, data.channel, det)
                except SingularMatrixError:
                    accs[p].skipped += 1
                    continue
                accs[p].add(data.tx, res.x_hat, res.timings)
        for p in recs:
            recs[p].append(accs[p].record(snr, nv))
    ps = SimResult(cfg.replace(precision=PrecisionMode.PS), recs[PrecisionMode.PS], mcs)
    pd = SimResult(cfg.replace(precision=PrecisionMode.PD), recs[PrecisionMode.PD], mcs)
    deltas = []
    for a, b in zip(ps.records, pd.records):
        pooled = (a.symbol_errors + b.symbol_errors) / max(a.symbols + b.symbols, 1)
        deltas.append(
            PrecisionDelta(a.snr_db, a.ser, b.ser, a.ser - b.ser, binomial_ci_half_width(pooled, b.symbols), a.mse, b.mse)
        )
    return PrecisionComparison(ps, pd, deltas)


def evm_rms(x_hat, x_ref) -> float:
    """RMS error vector magnitude in percent of the reference RMS."""
    a = np.asarray(x_hat).astype(np.complex128).ravel()
    b = np.asarray(x_ref).astype(np.complex128).ravel()
    if a.size == 0 or a.size != b.size:
        raise ValueError(f"evm needs equal non-empty inputs, got {a.size} and {b.size}")
    ref = float(np.mean(b.real**2 + b.imag**2))
    if ref <= 0:
        raise ValueError("reference has zero average power")
    return 100.0 * math.sqrt(mse(a, b) / ref)


# --------------------------------------------------------------------------- export


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_rows_csv(path: Path, columns, rows: list[dict], header_comment: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


def json_safe(obj):
    """Replace non-finite floats by ``None`` so the document is strict JSON."""
    if isinstance(obj, dict):
        return {k: json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [json_safe(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def write_sim_outputs(result: SimResult | PrecisionComparison, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    doc = json_safe(result.to_json_dict())
    validate_document(doc)
    jpath = out / "report.json"
    jpath.write_text(json.dumps(doc, indent=2, allow_nan=False) + "\n")
    cpath = out / "report.csv"
    if isinstance(result, PrecisionComparison):
        rows = [{"precision": "ps", **r} for r in result.ps.rows()] + [{"precision": "pd", **r} for r in result.pd.rows()]
        write_rows_csv(cpath, ("precision",) + SIM_CSV_COLUMNS, rows, f"simdmimo compare-precision v{SCHEMA_VERSION}")
    else:
        write_rows_csv(cpath, SIM_CSV_COLUMNS, result.rows(), f"simdmimo sim v{SCHEMA_VERSION}")
    return [jpath, cpath]
