"""Precision modes, memory layouts and the complex containers used by every kernel.

A :class:`ComplexBuffer` owns a flat real array of ``2 * len`` components carved
out of an over-allocated byte block so its base address honours the requested
alignment.  Two layouts are supported:

* ``Layout.SPLIT``: all real parts, then all imaginary parts (the default; complex
  multiply-accumulate maps onto plain vector FMAs without shuffles).
* ``Layout.INTERLEAVED``: ``re, im`` pairs, i.e. numpy's native complex layout,
  kept for external I/O.

Buffers are frozen (read-only) once built.
"""

from __future__ import annotations

import enum
from typing import Iterable

import numpy as np

DEFAULT_ALIGNMENT = 64
MIN_ALIGNMENT = 32


class PrecisionMode(enum.Enum):
    """Packed-single (32-bit components) or packed-double (64-bit components)."""

    PS = "ps"
    PD = "pd"

    @property
    def real_dtype(self) -> np.dtype:
        return np.dtype(np.float32) if self is PrecisionMode.PS else np.dtype(np.float64)

    @property
    def complex_dtype(self) -> np.dtype:
        return np.dtype(np.complex64) if self is PrecisionMode.PS else np.dtype(np.complex128)

    @property
    def component_bits(self) -> int:
        return self.real_dtype.itemsize * 8

    @property
    def component_bytes(self) -> int:
        return self.real_dtype.itemsize

    @property
    def unit_roundoff(self) -> float:
        # round-to-nearest: half the machine epsilon
        return float(np.finfo(self.real_dtype).eps) / 2

    @classmethod
    def parse(cls, value: "PrecisionMode | str") -> "PrecisionMode":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown precision {value!r}; expected 'ps' or 'pd'") from None


class Layout(enum.Enum):
    SPLIT = "split"
    INTERLEAVED = "interleaved"

    @classmethod
    def parse(cls, value: "Layout | str") -> "Layout":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown layout {value!r}; expected 'split' or 'interleaved'") from None


def _check_alignment(alignment: int) -> None:
    if alignment < MIN_ALIGNMENT or alignment & (alignment - 1):
        raise ValueError(f"alignment must be a power of two >= {MIN_ALIGNMENT} bytes, got {alignment}")


def _aligned_empty(n_items: int, dtype: np.dtype, alignment: int) -> np.ndarray:
    nbytes = n_items * dtype.itemsize
    raw = np.empty(nbytes + alignment, dtype=np.uint8)
    offset = (-raw.ctypes.data) % alignment
    return raw[offset : offset + nbytes].view(dtype)


class ComplexBuffer:
    """Fixed-length, aligned, read-only run of complex samples."""

    __slots__ = ("_data", "_length", "layout", "precision", "alignment")

    def __init__(self, data: np.ndarray, length: int, layout: Layout, precision: PrecisionMode, alignment: int):
        # Use alloc_buffer / from_array; this constructor trusts its arguments.
        self._data = data
        self._length = length
        self.layout = layout
        self.precision = precision
        self.alignment = alignment

    @classmethod
    def _empty(
        cls,
        length: int,
        layout: Layout = Layout.SPLIT,
        precision: PrecisionMode = PrecisionMode.PD,
        alignment: int = DEFAULT_ALIGNMENT,
    ) -> "ComplexBuffer":
        if int(length) <= 0:
            raise ValueError(f"buffer length must be positive, got {length}")
        _check_alignment(alignment)
        data = _aligned_empty(2 * int(length), precision.real_dtype, alignment)
        return cls(data, int(length), layout, precision, alignment)

    @classmethod
    def from_array(
        cls,
        values: Iterable[complex] | np.ndarray,
        layout: Layout | str = Layout.SPLIT,
        precision: PrecisionMode | str = PrecisionMode.PD,
        alignment: int = DEFAULT_ALIGNMENT,
    ) -> "ComplexBuffer":
        """Copy ``values`` (rounded to ``precision``) into a fresh buffer."""
        layout = Layout.parse(layout)
        precision = PrecisionMode.parse(precision)
        arr = np.asarray(values).ravel()
        buf = cls._empty(arr.size, layout, precision, alignment)
        re, im = buf.planes(writable=True)
        re[:] = arr.real
        im[:] = arr.imag if np.iscomplexobj(arr) else 0
        return buf._freeze()

    def _freeze(self) -> "ComplexBuffer":
        self._data.flags.writeable = False
        return self

    def __len__(self) -> int:
        return self._length

    @property
    def data(self) -> np.ndarray:
        """Flat component array (read-only once frozen)."""
        return self._data

    @property
    def address(self) -> int:
        return self._data.ctypes.data

    def planes(self, writable: bool = False) -> tuple[np.ndarray, np.ndarray]:
        """Real and imaginary component views (strided for interleaved storage)."""
        if writable and not self._data.flags.writeable:
            raise ValueError("buffer is frozen")
        n = self._length
        if self.layout is Layout.SPLIT:
            return self._data[:n], self._data[n:]
        return self._data[0::2], self._data[1::2]

    @property
    def re(self) -> np.ndarray:
        return self.planes()[0]

    @property
    def im(self) -> np.ndarray:
        return self.planes()[1]

    def to_numpy(self) -> np.ndarray:
        out = np.empty(self._length, dtype=self.precision.complex_dtype)
        out.real, out.imag = self.planes()
        return out

    def same_elements(self, other: "ComplexBuffer") -> bool:
        """Bit-exact element comparison, ignoring layout and alignment."""
        if len(self) != len(other) or self.precision is not other.precision:
            return False
        a_re, a_im = self.planes()
        b_re, b_im = other.planes()
        return bool(
            np.array_equal(a_re.view(_uint_view(a_re)), b_re.view(_uint_view(b_re)))
            and np.array_equal(a_im.view(_uint_view(a_im)), b_im.view(_uint_view(b_im)))
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ComplexBuffer):
            return NotImplemented
        return self.layout is other.layout and self.same_elements(other)

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        head = ", ".join(f"{z:.4g}" for z in self.to_numpy()[:4])
        more = ", ..." if self._length > 4 else ""
        return (
            f"ComplexBuffer(len={self._length}, layout={self.layout.value}, "
            f"precision={self.precision.value}, [{head}{more}])"
        )


def _uint_view(a: np.ndarray) -> np.dtype:
    return np.dtype(np.uint32) if a.dtype.itemsize == 4 else np.dtype(np.uint64)


def alloc_buffer(
    length: int,
    layout: Layout | str = Layout.SPLIT,
    precision: PrecisionMode | str = PrecisionMode.PD,
    alignment: int = DEFAULT_ALIGNMENT,
) -> ComplexBuffer:
    """Zero-initialised buffer whose base address is a multiple of ``alignment``."""
    buf = ComplexBuffer._empty(length, Layout.parse(layout), PrecisionMode.parse(precision), alignment)
    buf._data[:] = 0
    return buf._freeze()


def convert_precision(b: ComplexBuffer, target: PrecisionMode | str) -> ComplexBuffer:
    """Element-wise round-to-nearest copy of ``b`` in ``target`` precision."""
    target = PrecisionMode.parse(target)
    out = ComplexBuffer._empty(len(b), b.layout, target, b.alignment)
    out._data[:] = b.data  # same layout, so components line up one-to-one
    return out._freeze()


def relayout(b: ComplexBuffer, target_layout: Layout | str) -> ComplexBuffer:
    target_layout = Layout.parse(target_layout)
    out = ComplexBuffer._empty(len(b), target_layout, b.precision, b.alignment)
    re, im = out.planes(writable=True)
    src_re, src_im = b.planes()
    re[:] = src_re
    im[:] = src_im
    return out._freeze()


class CMatrix:
    """Dense complex matrix stored row-major in a :class:`ComplexBuffer`."""

    __slots__ = ("rows", "cols", "storage", "hermitian")

    def __init__(self, rows: int, cols: int, storage: ComplexBuffer, hermitian: bool = False):
        if rows < 1 or cols < 1:
            raise ValueError(f"matrix dimensions must be positive, got {rows}x{cols}")
        if len(storage) != rows * cols:
            raise ValueError(f"storage holds {len(storage)} elements, expected {rows * cols}")
        if hermitian and rows != cols:
            raise ValueError("only square matrices can be Hermitian")
        self.rows = rows
        self.cols = cols
        self.storage = storage
        self.hermitian = hermitian

    @classmethod
    def from_array(
        cls,
        a: np.ndarray,
        precision: PrecisionMode | str = PrecisionMode.PD,
        layout: Layout | str = Layout.SPLIT,
        hermitian: bool = False,
    ) -> "CMatrix":
        a = np.asarray(a)
        if a.ndim != 2:
            raise ValueError(f"expected a 2-D array, got shape {a.shape}")
        m = cls(a.shape[0], a.shape[1], ComplexBuffer.from_array(a, layout, precision), hermitian=False)
        if hermitian:
            if not m.is_hermitian():
                raise ValueError("matrix flagged Hermitian is not Hermitian within tolerance")
            m.hermitian = True
        return m

    @classmethod
    def from_planes(
        cls, re: np.ndarray, im: np.ndarray, precision: PrecisionMode, hermitian: bool = False
    ) -> "CMatrix":
        rows, cols = re.shape
        buf = ComplexBuffer._empty(rows * cols, Layout.SPLIT, precision)
        bre, bim = buf.planes(writable=True)
        bre[:] = re.ravel()
        bim[:] = im.ravel()
        return cls(rows, cols, buf._freeze(), hermitian)

    @classmethod
    def identity(cls, n: int, precision: PrecisionMode | str = PrecisionMode.PD) -> "CMatrix":
        return cls.from_array(np.eye(n), precision, hermitian=True)

    @property
    def shape(self) -> tuple[int, int]:
        return self.rows, self.cols

    @property
    def precision(self) -> PrecisionMode:
        return self.storage.precision

    @property
    def layout(self) -> Layout:
        return self.storage.layout

    def planes(self) -> tuple[np.ndarray, np.ndarray]:
        re, im = self.storage.planes()
        return re.reshape(self.rows, self.cols), im.reshape(self.rows, self.cols)

    def to_numpy(self) -> np.ndarray:
        return self.storage.to_numpy().reshape(self.rows, self.cols)

    def is_hermitian(self, tol: float | None = None) -> bool:
        if self.rows != self.cols:
            return False
        a = self.to_numpy()
        if tol is None:
            tol = 16 * self.precision.unit_roundoff * max(float(np.abs(a).max()), 1.0)
        return bool(np.all(np.abs(a - a.conj().T) <= tol))

    def __repr__(self) -> str:
        flag = ", hermitian" if self.hermitian else ""
        return f"CMatrix({self.rows}x{self.cols}, {self.precision.value}{flag})"
