"""Element-wise and reduction kernels with interchangeable scalar / vector paths.

Both paths are compiled with numba and operate on split real/imaginary planes.
The scalar kernels walk one complex element per iteration with strict IEEE
semantics and the compiler's vectorizers disabled.  The vector kernels are
written as lane loops the compiler turns into SIMD code at the host width, with
FMA contraction allowed; the remainder that does not fill a register falls
through to the compiler's scalar epilogue.

If :func:`capability_query` finds no usable vector unit, requests for the vector
path run the scalar kernels and the returned :class:`KernelReport` says so.
"""

from __future__ import annotations

import enum
import platform
import time
from dataclasses import dataclass
from typing import Mapping

import llvmlite.binding as ll
import numpy as np

from ._jit import scalar_kernel, vector_kernel
from .tensor import CMatrix, ComplexBuffer, Layout, PrecisionMode, relayout



class ExecPath(enum.Enum):
    SCALAR = "scalar"
    VECTOR = "vector"

    @classmethod
    def parse(cls, value: "ExecPath | str") -> "ExecPath":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown execution path {value!r}; expected 'scalar' or 'vector'") from None


@dataclass(frozen=True)
class KernelReport:
    elements_processed: int
    path_used: ExecPath
    elapsed: int  # nanoseconds


@dataclass(frozen=True)
class Capabilities:
    """What the host's vector unit offers, as seen by the code generator."""

    width_bits: int
    native: bool
    fma: bool
    cpu_name: str
    model: str

    def lanes(self, precision: PrecisionMode) -> int:
        """Complex elements per register (re and im each take one component)."""
        return self.width_bits // (2 * precision.component_bits)

    def as_dict(self) -> dict:
        return {
            "width_bits": self.width_bits,
            "native": self.native,
            "fma": self.fma,
            "cpu_name": self.cpu_name,
            "model": self.model,
            "lanes_ps": self.lanes(PrecisionMode.PS),
            "lanes_pd": self.lanes(PrecisionMode.PD),
        }


def _cpu_model() -> str:
    try:
        with open("/proc/cpuinfo") as fh:
            for line in fh:
                if line.startswith("model name"):
                    return line.split(":", 1)[1].strip()
    except OSError:
        pass
    return platform.processor() or platform.machine()


def capability_query(features: Mapping[str, bool] | None = None) -> Capabilities:
    """Widest usable vector register and whether the vector path is native.

    ``features`` overrides host detection (LLVM feature names, e.g. ``{"avx2": True}``).
    """
    if features is None:
        host = ll.get_host_cpu_features()
        features = {k: bool(host[k]) for k in host}
        cpu_name = ll.get_host_cpu_name()
        model = _cpu_model()
    else:
        cpu_name = model = "override"

    def has(name: str) -> bool:
        return bool(features.get(name, False))

    if has("avx512f"):
        width = 512
    elif has("avx2") or has("avx"):
        width = 256
    elif has("sse2") or has("neon") or has("asimd"):
        width = 128
    else:
        width = 0
    return Capabilities(
        width_bits=width,
        native=width > 0,
        fma=has("fma") or has("neon") or has("asimd"),
        cpu_name=cpu_name,
        model=model,
    )


# Chosen once at import; kernels never re-query inside their loops.
_ACTIVE = capability_query()


def active_capabilities() -> Capabilities:
    return _ACTIVE


def resolve_path(path: ExecPath | str) -> ExecPath:
    """The path that will actually run for a request, after host fallback."""
    path = ExecPath.parse(path)
    if path is ExecPath.VECTOR and not _ACTIVE.native:
        return ExecPath.SCALAR
    return path


def block_lanes(precision: PrecisionMode) -> int:
    """Lane count used for explicit chunking; at least 1."""
    return max(_ACTIVE.lanes(precision), 1)


# --------------------------------------------------------------------------- jit kernels


@scalar_kernel("void(r1, r1, r1, r1, w1, w1)")
def _vadd_scalar(ar, ai, br, bi, cr, ci):
    for i in range(ar.shape[0]):
        cr[i] = ar[i] + br[i]
        ci[i] = ai[i] + bi[i]


@vector_kernel
def _vadd_vector(ar, ai, br, bi, cr, ci):
    for i in range(ar.shape[0]):
        cr[i] = ar[i] + br[i]
        ci[i] = ai[i] + bi[i]


@scalar_kernel("void(r1, r1, r1, r1, r1, r1, w1, w1)")
def _cmul_fma_scalar(accr, acci, ar, ai, br, bi, cr, ci):
    for i in range(ar.shape[0]):
        pr = ar[i] * br[i] - ai[i] * bi[i]
        pi = ar[i] * bi[i] + ai[i] * br[i]
        cr[i] = accr[i] + pr
        ci[i] = acci[i] + pi


@vector_kernel
def _cmul_fma_vector(accr, acci, ar, ai, br, bi, cr, ci):
    for i in range(ar.shape[0]):
        cr[i] = accr[i] + ar[i] * br[i] - ai[i] * bi[i]
        ci[i] = acci[i] + ar[i] * bi[i] + ai[i] * br[i]


@scalar_kernel("UniTuple(f, 2)(r1, r1, r1, r1, f, f)")
def _cdot_scalar(ar, ai, br, bi, sign, zero):
    # sign = -1 conjugates a
    sr = zero
    si = zero
    for i in range(ar.shape[0]):
        xi = sign * ai[i]
        sr += ar[i] * br[i] - xi * bi[i]
        si += ar[i] * bi[i] + xi * br[i]
    return sr, si


@vector_kernel
def _cdot_vector(ar, ai, br, bi, sign, zero, lanes, tr, ti):
    # Per chunk: lane products, tree reduction over lanes; chunks summed in order.
    n = ar.shape[0]
    main = n - n % lanes
    sr = zero
    si = zero
    for base in range(0, main, lanes):
        for l in range(lanes):
            i = base + l
            xi = sign * ai[i]
            tr[l] = ar[i] * br[i] - xi * bi[i]
            ti[l] = ar[i] * bi[i] + xi * br[i]
        width = lanes
        while width > 1:
            half = width // 2
            for l in range(half):
                tr[l] += tr[l + half]
                ti[l] += ti[l + half]
            width = half
        sr += tr[0]
        si += ti[0]
    for i in range(main, n):
        xi = sign * ai[i]
        sr += ar[i] * br[i] - xi * bi[i]
        si += ar[i] * bi[i] + xi * br[i]
    return sr, si


@scalar_kernel("void(r2, r2, f, w2, w2, f)")
def _gram_scalar(hr, hi, s2, rr, ri, zero):
    n, m = hr.shape
    for i in range(n):
        for j in range(i, n):
            sr = zero
            si = zero
            for l in range(m):
                # h[i,l] * conj(h[j,l])
                sr += hr[i, l] * hr[j, l] + hi[i, l] * hi[j, l]
                si += hi[i, l] * hr[j, l] - hr[i, l] * hi[j, l]
            rr[i, j] = sr
            ri[i, j] = si
            rr[j, i] = sr
            ri[j, i] = -si
        rr[i, i] += s2
        ri[i, i] = zero


@vector_kernel
def _gram_vector(hr, hi, s2, rr, ri, zero, neg, lanes, tr, ti):
    n = hr.shape[0]
    for i in range(n):
        for j in range(i, n):
            # sum_l conj(h[j,l]) * h[i,l]
            sr, si = _cdot_vector(hr[j], hi[j], hr[i], hi[i], neg, zero, lanes, tr, ti)
            rr[i, j] = sr
            ri[i, j] = si
            rr[j, i] = sr
            ri[j, i] = -si
        rr[i, i] += s2
        ri[i, i] = zero


# --------------------------------------------------------------------------- public API


def _check_same_shape(*bufs: ComplexBuffer) -> None:
    first = bufs[0]
    for b in bufs[1:]:
        if len(b) != len(first):
            raise ValueError(f"length mismatch: {len(first)} vs {len(b)}")
        if b.layout is not first.layout:
            raise ValueError(f"layout mismatch: {first.layout.value} vs {b.layout.value}")
        if b.precision is not first.precision:
            raise ValueError(f"precision mismatch: {first.precision.value} vs {b.precision.value}")


def _new_like(b: ComplexBuffer) -> tuple[ComplexBuffer, np.ndarray, np.ndarray]:
    out = ComplexBuffer._empty(len(b), b.layout, b.precision, b.alignment)
    re, im = out.planes(writable=True)
    return out, re, im


def _finish(result, n: int, used: ExecPath, t0: int, with_report: bool):
    if with_report:
        return result, KernelReport(n, used, time.perf_counter_ns() - t0)
    return result


def vadd(a: ComplexBuffer, b: ComplexBuffer, path: ExecPath | str = ExecPath.VECTOR, *, with_report: bool = False):
    """``c[i] = a[i] + b[i]``; bit-identical across paths."""
    _check_same_shape(a, b)
    used = resolve_path(path)
    out, cr, ci = _new_like(a)
    t0 = time.perf_counter_ns()
    fn = _vadd_vector if used is ExecPath.VECTOR else _vadd_scalar
    fn(*a.planes(), *b.planes(), cr, ci)
    return _finish(out._freeze(), len(a), used, t0, with_report)


def cmul_fma(
    acc: ComplexBuffer,
    a: ComplexBuffer,
    b: ComplexBuffer,
    path: ExecPath | str = ExecPath.VECTOR,
    *,
    with_report: bool = False,
):
    """``acc[i] + a[i] * b[i]`` (complex product), returned as a new buffer."""
    _check_same_shape(acc, a, b)
    used = resolve_path(path)
    out, cr, ci = _new_like(acc)
    t0 = time.perf_counter_ns()
    fn = _cmul_fma_vector if used is ExecPath.VECTOR else _cmul_fma_scalar
    fn(*acc.planes(), *a.planes(), *b.planes(), cr, ci)
    return _finish(out._freeze(), len(a), used, t0, with_report)


def cdot(
    a: ComplexBuffer,
    b: ComplexBuffer,
    conjugate_a: bool = False,
    path: ExecPath | str = ExecPath.VECTOR,
    *,
    with_report: bool = False,
):
    """Inner product ``sum(conj(a) * b)`` (or ``sum(a * b)``) as a numpy complex scalar.

    The scalar path sums sequentially.  The vector path forms one register of
    lane products at a time, tree-reduces it, and adds chunk results in order,
    then the tail sequentially.  Both orders are fixed, so results repeat
    bit-for-bit from run to run.
    """
    _check_same_shape(a, b)
    used = resolve_path(path)
    dt = a.precision.real_dtype.type
    sign = dt(-1) if conjugate_a else dt(1)
    t0 = time.perf_counter_ns()
    if used is ExecPath.VECTOR:
        lanes = block_lanes(a.precision)
        tr = np.empty(lanes, a.precision.real_dtype)
        ti = np.empty(lanes, a.precision.real_dtype)
        sr, si = _cdot_vector(*a.planes(), *b.planes(), sign, dt(0), lanes, tr, ti)
    else:
        sr, si = _cdot_scalar(*a.planes(), *b.planes(), sign, dt(0))
    z = a.precision.complex_dtype.type(complex(sr, si))
    return _finish(z, len(a), used, t0, with_report)


def gram_update(
    h: CMatrix, noise_var: float, path: ExecPath | str = ExecPath.VECTOR, *, with_report: bool = False
):
    """Covariance ``R = H H^H + noise_var * I`` (``Nr x Nr``, Hermitian flag set)."""
    noise_var = float(noise_var)
    if not np.isfinite(noise_var) or noise_var < 0:
        raise ValueError(f"noise_var must be finite and >= 0, got {noise_var}")
    used = resolve_path(path)
    prec = h.precision
    dt = prec.real_dtype
    hr, hi = (np.ascontiguousarray(p) for p in h.planes())
    n = h.rows
    rr = np.empty((n, n), dt)
    ri = np.empty((n, n), dt)
    t0 = time.perf_counter_ns()
    if used is ExecPath.VECTOR:
        lanes = block_lanes(prec)
        _gram_vector(hr, hi, dt.type(noise_var), rr, ri, dt.type(0), dt.type(-1), lanes, np.empty(lanes, dt), np.empty(lanes, dt))
    else:
        _gram_scalar(hr, hi, dt.type(noise_var), rr, ri, dt.type(0))
    r = CMatrix.from_planes(rr, ri, prec, hermitian=True)
    if h.layout is Layout.INTERLEAVED:
        r = CMatrix(n, n, relayout(r.storage, Layout.INTERLEAVED), hermitian=True)
    return _finish(r, h.rows * h.cols, used, t0, with_report)
