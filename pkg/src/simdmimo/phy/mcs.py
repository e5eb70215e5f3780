"""NR numerology, MCS tables and transport block size."""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from fractions import Fraction
from importlib import resources
from pathlib import Path

SUPPORTED_QM = (2, 4, 6, 8)
SUPPORTED_LAYERS = (1, 2, 4, 8)
RE_PER_PRB_CAP = 156
DEFAULT_OVERHEAD_RE_PER_PRB = 12  # one DMRS symbol per slot

# TS 38.214 Table 5.1.3.2-1: TBS values for N_info <= 3824
TBS_TABLE = (
    24, 32, 40, 48, 56, 64, 72, 80, 88, 96, 104, 112, 120, 128, 136, 144, 152, 160, 168, 176, 184, 192,
    208, 224, 240, 256, 272, 288, 304, 320, 336, 352, 368, 384, 408, 432, 456, 480, 504, 528, 552, 576,
    608, 640, 672, 704, 736, 768, 808, 848, 888, 928, 984, 1032, 1064, 1128, 1160, 1192, 1224, 1256,
    1288, 1320, 1352, 1416, 1480, 1544, 1608, 1672, 1736, 1800, 1864, 1928, 2024, 2088, 2152, 2216,
    2280, 2408, 2472, 2536, 2600, 2664, 2728, 2792, 2856, 2976, 3104, 3240, 3368, 3496, 3624, 3752, 3824,
)  # fmt: skip


@dataclass(frozen=True)
class NrNumerology:
    scs_khz: int = 15
    n_rb: int = 60
    symbols_per_slot: int = 14

    def __post_init__(self):
        if self.scs_khz not in (15, 30, 60, 120, 240):
            raise ValueError(f"unsupported subcarrier spacing {self.scs_khz} kHz")
        if self.n_rb < 1:
            raise ValueError(f"n_rb must be >= 1, got {self.n_rb}")
        if self.symbols_per_slot < 1:
            raise ValueError(f"symbols_per_slot must be >= 1, got {self.symbols_per_slot}")

    @property
    def n_subcarriers(self) -> int:
        return 12 * self.n_rb

    @property
    def tti_ms(self) -> float:
        return 15.0 / self.scs_khz

    @property
    def scs_hz(self) -> float:
        return self.scs_khz * 1e3


class McsTableError(ValueError):
    pass


@dataclass(frozen=True)
class McsEntry:
    index: int
    qm: int
    code_rate_x1024: float

    def __post_init__(self):
        if not 0 <= self.index <= 31:
            raise ValueError(f"MCS index {self.index} out of range")
        if self.qm not in SUPPORTED_QM:
            raise ValueError(f"MCS {self.index}: modulation order {self.qm} not in {SUPPORTED_QM}")
        if not 0 < self.code_rate_x1024 < 1024:
            raise ValueError(f"MCS {self.index}: code rate {self.code_rate_x1024}/1024 outside (0, 1)")

    @property
    def modulation_order(self) -> int:
        return self.qm

    @property
    def code_rate(self) -> float:
        return self.code_rate_x1024 / 1024


def default_mcs_table_path(table: int = 2) -> Path:
    if table not in (1, 2):
        raise ValueError(f"no shipped MCS table {table}; expected 1 or 2")
    return Path(str(resources.files("simdmimo.phy") / "data" / f"mcs_table{table}.csv"))


def load_mcs_table(path: str | Path) -> list[McsEntry]:
    """Parse ``index,qm,rate_x1024`` records; ``#`` comments and one header line allowed."""
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise FileNotFoundError(f"MCS table not found: {path}") from None
    entries: dict[int, McsEntry] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = [f.strip() for f in line.split(",")]
        if fields == ["index", "qm", "rate_x1024"]:
            continue
        if len(fields) != 3:
            raise McsTableError(f"{path}:{lineno}: expected 3 fields 'index,qm,rate_x1024', got {len(fields)}")
        try:
            idx, qm, rate = int(fields[0]), int(fields[1]), float(fields[2])
        except ValueError:
            raise McsTableError(f"{path}:{lineno}: cannot parse {raw.strip()!r}") from None
        if idx in entries:
            raise McsTableError(f"{path}:{lineno}: duplicate MCS index {idx}")
        try:
            entries[idx] = McsEntry(idx, qm, rate)
        except ValueError as exc:
            raise McsTableError(f"{path}:{lineno}: {exc}") from None
    if not entries:
        raise McsTableError(f"{path}: no MCS entries")
    for expected in range(len(entries)):
        if expected not in entries:
            raise McsTableError(f"{path}: MCS index {expected} missing (indices must be contiguous from 0)")
    return [entries[i] for i in range(len(entries))]


def lookup_mcs(index: int, table: str | Path | None = None) -> McsEntry:
    entries = load_mcs_table(table if table is not None else default_mcs_table_path())
    if not 0 <= index < len(entries):
        raise ValueError(f"MCS index {index} not in table (0..{len(entries) - 1})")
    return entries[index]


def _floor_log2(x: Fraction) -> int:
    return int(math.floor(x)).bit_length() - 1


def compute_tbs(
    mcs: McsEntry, n_rb: int, n_layers: int, overhead_re_per_prb: int = DEFAULT_OVERHEAD_RE_PER_PRB
) -> int:
    """Transport block size in bits for one slot (TS 38.214 5.1.3.2, one codeword)."""
    if n_layers not in SUPPORTED_LAYERS:
        raise ValueError(f"n_layers must be one of {SUPPORTED_LAYERS}, got {n_layers}")
    if n_rb < 1:
        raise ValueError(f"n_rb must be >= 1, got {n_rb}")
    if not 0 <= overhead_re_per_prb < 12 * 14:
        raise ValueError(f"overhead_re_per_prb out of range: {overhead_re_per_prb}")
    n_re_prb = 12 * 14 - overhead_re_per_prb
    n_re = min(RE_PER_PRB_CAP, n_re_prb) * n_rb
    rate = Fraction(str(mcs.code_rate_x1024)) / 1024
    n_info = n_re * rate * mcs.qm * n_layers
    if n_info <= 0:
        return 0
    if n_info <= 3824:
        n = max(3, _floor_log2(n_info) - 6)
        n_info_q = max(24, (1 << n) * math.floor(n_info / (1 << n)))
        return TBS_TABLE[bisect.bisect_left(TBS_TABLE, n_info_q)]
    n = _floor_log2(n_info - 24) - 5
    n_info_q = max(3840, (1 << n) * math.floor((n_info - 24) / (1 << n) + Fraction(1, 2)))
    if rate <= Fraction(1, 4):
        c = math.ceil(Fraction(n_info_q + 24, 3816))
    elif n_info_q > 8424:
        c = math.ceil(Fraction(n_info_q + 24, 8424))
    else:
        c = 1
    return 8 * c * math.ceil(Fraction(n_info_q + 24, 8 * c)) - 24


def peak_rate(tbs_bits: int, tti_ms: float) -> float:
    """Throughput in Mbps for one transport block per TTI."""
    if tti_ms <= 0:
        raise ValueError(f"tti_ms must be positive, got {tti_ms}")
    return tbs_bits / tti_ms / 1000.0
