"""Slot resource grid."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..tensor import PrecisionMode
from .mcs import NrNumerology
from .qam import demodulate_array, modulate_array


@dataclass(frozen=True)
class SlotGrid:
    """Complex symbols shaped ``(n_subcarriers, symbols_per_slot, n_streams)``.

    Bits fill the grid in C order, stream index fastest.  Received grids carry
    no source bits (``qm == 0``).
    """

    symbols: np.ndarray
    source_bits: np.ndarray
    qm: int = 0

    def __post_init__(self):
        if self.symbols.ndim != 3:
            raise ValueError(f"slot grid must be 3-D (subcarriers, symbols, streams), got {self.symbols.shape}")

    @property
    def n_subcarriers(self) -> int:
        return self.symbols.shape[0]

    @property
    def n_symbols(self) -> int:
        return self.symbols.shape[1]

    @property
    def n_streams(self) -> int:
        return self.symbols.shape[2]

    @classmethod
    def from_bits(cls, bits, qm: int, n_subcarriers: int, n_symbols: int, n_streams: int) -> "SlotGrid":
        bits = np.asarray(bits, dtype=np.uint8).ravel()
        need = n_subcarriers * n_symbols * n_streams * qm
        if bits.size != need:
            raise ValueError(f"grid needs {need} bits, got {bits.size}")
        sym = modulate_array(bits, qm).reshape(n_subcarriers, n_symbols, n_streams)
        return cls(sym, bits, qm)

    @classmethod
    def random(cls, numerology: NrNumerology, n_streams: int, qm: int, rng: np.random.Generator) -> "SlotGrid":
        n = numerology.n_subcarriers * numerology.symbols_per_slot * n_streams * qm
        bits = rng.integers(0, 2, size=n, dtype=np.uint8)
        return cls.from_bits(bits, qm, numerology.n_subcarriers, numerology.symbols_per_slot, n_streams)

    @classmethod
    def received(cls, symbols: np.ndarray) -> "SlotGrid":
        return cls(np.asarray(symbols), np.zeros(0, np.uint8), 0)

    @classmethod
    def from_planes(cls, re: np.ndarray, im: np.ndarray) -> "SlotGrid":
        """Inverse of :meth:`planes`: ``(streams, symbols, K)`` planes to a received grid."""
        return cls.received(np.transpose(re + 1j * im.astype(re.dtype), (2, 1, 0)))

    def planes(self, precision: PrecisionMode | str = PrecisionMode.PD) -> tuple[np.ndarray, np.ndarray]:
        """Split planes shaped ``(streams, symbols, K)``, subcarriers innermost."""
        dt = PrecisionMode.parse(precision).real_dtype
        t = np.transpose(self.symbols, (2, 1, 0))
        return np.ascontiguousarray(t.real, dt), np.ascontiguousarray(t.imag, dt)

    def demodulate(self, qm: int) -> np.ndarray:
        return demodulate_array(self.symbols, qm)
