"""Gray-mapped square QAM as defined for NR (TS 38.211 5.1).

Even-indexed bits select the in-phase level and odd-indexed bits the quadrature
level.  Per axis with bits ``c0, c1, ...`` and ``s_i = 1 - 2 c_i`` the amplitude is
``s0 * (2**(m-1) - s1 * (2**(m-2) - s2 * (...)))``.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from ..tensor import ComplexBuffer, Layout, PrecisionMode

SUPPORTED_QM = (2, 4, 6, 8)
_TIE_ULPS = 8


def _check_qm(qm: int) -> int:
    if qm not in SUPPORTED_QM:
        raise ValueError(f"unsupported modulation order {qm}; expected one of {SUPPORTED_QM}")
    return qm // 2


def normalization(qm: int) -> float:
    """Scale that maps odd-integer levels onto a unit-average-power constellation."""
    m = _check_qm(qm)
    return float(np.sqrt(2 * (4**m - 1) / 3))


@lru_cache(maxsize=None)
def _axis_tables(m: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-axis level for every label, label for every sorted level, tie winners."""
    labels = np.arange(1 << m)
    level = np.zeros(1 << m, dtype=np.int64)
    for lab in labels:
        s = [1 - 2 * ((lab >> (m - 1 - i)) & 1) for i in range(m)]  # c0 is the MSB of the axis label
        acc = 1
        for i in range(m - 1, 0, -1):
            acc = (1 << (m - i)) - s[i] * acc
        level[lab] = s[0] * acc
    order = np.argsort(level)  # label at each ascending level position
    # Boundary j sits between positions j and j+1; exact hits go to the smaller label.
    tie = np.where(order[:-1] < order[1:], 0, 1)
    return level, order, tie


def _axis_levels(m: int) -> np.ndarray:
    return _axis_tables(m)[0]


def constellation(qm: int) -> np.ndarray:
    """All ``2**qm`` points indexed by the integer label ``b0 b1 ... b_{qm-1}`` (b0 MSB)."""
    _check_qm(qm)
    labels = np.arange(1 << qm)
    bits = (labels[:, None] >> np.arange(qm - 1, -1, -1)) & 1
    return modulate_array(bits.ravel().astype(np.uint8), qm)


def _axis_labels(bits: np.ndarray, m: int, offset: int) -> np.ndarray:
    lab = np.zeros(bits.shape[0], dtype=np.int64)
    for i in range(m):
        lab = (lab << 1) | bits[:, offset + 2 * i]
    return lab


def modulate_array(bits, qm: int) -> np.ndarray:
    """Bits (any integer array of 0/1) to complex128 symbols."""
    m = _check_qm(qm)
    b = np.asarray(bits, dtype=np.int64).ravel()
    if b.size % qm:
        raise ValueError(f"bit count {b.size} not divisible by modulation order {qm}")
    if b.size and (b.min() < 0 or b.max() > 1):
        raise ValueError("bits must be 0 or 1")
    b = b.reshape(-1, qm)
    level = _axis_levels(m)
    scale = 1.0 / normalization(qm)
    i_lvl = level[_axis_labels(b, m, 0)]
    q_lvl = level[_axis_labels(b, m, 1)]
    return (i_lvl * scale) + 1j * (q_lvl * scale)


def qam_modulate(
    bits,
    qm: int,
    precision: PrecisionMode | str = PrecisionMode.PD,
    layout: Layout | str = Layout.SPLIT,
) -> ComplexBuffer:
    return ComplexBuffer.from_array(modulate_array(bits, qm), layout, precision)


def _axis_decide(v: np.ndarray, m: int) -> np.ndarray:
    """Nearest level position per sample, exact boundary hits resolved by the tie table."""
    _, order, tie = _axis_tables(m)
    n_lvl = 1 << m
    t = (v + (n_lvl - 1)) / 2  # level positions sit at integers 0..n_lvl-1
    base = np.floor(t)
    frac = t - base
    # Boundaries are irrational in normalized units, so a sample placed on one lands
    # within a few ulps of the half-way point after rescaling; that counts as a hit.
    slack = _TIE_ULPS * np.finfo(np.float64).eps * np.maximum(np.abs(t), 1.0)
    near = np.abs(frac - 0.5) <= slack
    pos = base + ((frac > 0.5) & ~near)
    inside = (base >= 0) & (base < n_lvl - 1)
    hit = near & inside
    if hit.any():
        pos[hit] = base[hit] + tie[base[hit].astype(np.int64)]
    pos = np.clip(pos, 0, n_lvl - 1).astype(np.int64)
    return order[pos]


def demodulate_array(y, qm: int) -> np.ndarray:
    """Hard decisions for complex samples; returns a flat uint8 bit array."""
    m = _check_qm(qm)
    y = np.asarray(y).ravel()
    norm = normalization(qm)
    yr = np.real(y).astype(np.float64) * norm
    yi = np.imag(y).astype(np.float64) * norm
    i_lab = _axis_decide(yr, m)
    q_lab = _axis_decide(yi, m)
    out = np.empty((y.size, qm), dtype=np.uint8)
    for i in range(m):
        shift = m - 1 - i
        out[:, 2 * i] = (i_lab >> shift) & 1
        out[:, 2 * i + 1] = (q_lab >> shift) & 1
    return out.ravel()


def qam_demodulate_hard(y: ComplexBuffer | np.ndarray, qm: int) -> np.ndarray:
    if isinstance(y, ComplexBuffer):
        y = y.to_numpy()
    return demodulate_array(y, qm)
