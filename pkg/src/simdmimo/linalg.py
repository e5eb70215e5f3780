"""Pivoted LU factorization, triangular substitution and inversion.

Two families of routines live here:

* single-matrix operations on :class:`CMatrix` (``lu_factor``, ``forward_sub``,
  ``backward_sub``, ``invert``, ``solve``).  The vector path vectorizes row AXPYs
  and processes right-hand sides in blocks of ``lanes`` columns; the scalar path
  solves one column at a time.
* lane-batched kernels over stacks of matrices laid out ``(n, n, K)``, where the
  innermost axis holds one independent matrix per lane.  The detector feeds one
  subcarrier per lane.

Singularity is detected with a scale-aware guard: a pivot whose magnitude falls
below ``16 * unit_roundoff * max|a_ij|`` stops the factorization.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ._jit import scalar_kernel, vector_kernel
from .kernels import ExecPath, block_lanes, resolve_path
from .tensor import CMatrix, ComplexBuffer, Layout, PrecisionMode, relayout

PIVOT_GUARD = 16.0
STAGES = ("factorize", "forward_sub", "backward_sub", "assemble_inverse")


class SingularMatrixError(ArithmeticError):
    """Raised when a pivot falls below the singularity guard."""

    def __init__(self, column: int, subcarrier: int | None = None, message: str | None = None):
        self.column = column
        self.subcarrier = subcarrier
        if message is None:
            where = f" at subcarrier {subcarrier}" if subcarrier is not None else ""
            message = f"matrix is singular to working precision: pivot in column {column}{where}"
        super().__init__(message)


@dataclass(frozen=True)
class LuFactorization:
    """``P A = L U`` packed in one matrix: unit-lower L below the diagonal, U on and above."""

    lu_packed: CMatrix
    perm: np.ndarray  # perm[i] = original row placed at row i
    swaps: int

    @property
    def n(self) -> int:
        return self.lu_packed.rows

    @property
    def precision(self) -> PrecisionMode:
        return self.lu_packed.precision

    def lower(self) -> np.ndarray:
        lu = self.lu_packed.to_numpy()
        return np.tril(lu, -1) + np.eye(self.n, dtype=lu.dtype)

    def upper(self) -> np.ndarray:
        return np.triu(self.lu_packed.to_numpy())

    def permutation_matrix(self) -> np.ndarray:
        p = np.zeros((self.n, self.n))
        p[np.arange(self.n), self.perm] = 1.0
        return p


@dataclass
class SolveStats:
    stage_times: dict[str, int] = field(default_factory=lambda: dict.fromkeys(STAGES, 0))

    def add(self, stage: str, ns: int) -> None:
        self.stage_times[stage] += ns

    @property
    def total(self) -> int:
        return sum(self.stage_times.values())


def pivot_threshold(max_abs: float, precision: PrecisionMode) -> float:
    return PIVOT_GUARD * precision.unit_roundoff * max_abs


def guard_squared(precision: PrecisionMode) -> float:
    """Kernels compare squared magnitudes: ``|p|^2 < guard_squared * max|a_ij|^2``."""
    return pivot_threshold(1.0, precision) ** 2


# --------------------------------------------------------------------------- per-matrix kernels


@vector_kernel
def _lu_vector(ar, ai, perm, guard2, one):
    # Same elimination as the scalar kernel; the row swaps and row AXPYs over j vectorize.
    n = ar.shape[0]
    swaps = 0
    big = ar[0, 0] * ar[0, 0] + ai[0, 0] * ai[0, 0]
    for i in range(n):
        for j in range(n):
            v = ar[i, j] * ar[i, j] + ai[i, j] * ai[i, j]
            if v > big:
                big = v
    eps2 = guard2 * big
    for i in range(n):
        perm[i] = i
    for c in range(n):
        p = c
        best = ar[c, c] * ar[c, c] + ai[c, c] * ai[c, c]
        for r in range(c + 1, n):
            v = ar[r, c] * ar[r, c] + ai[r, c] * ai[r, c]
            if v > best:
                best = v
                p = r
        if not best > eps2:
            return c, swaps
        if p != c:
            for j in range(n):
                t = ar[c, j]
                ar[c, j] = ar[p, j]
                ar[p, j] = t
                t = ai[c, j]
                ai[c, j] = ai[p, j]
                ai[p, j] = t
            q = perm[c]
            perm[c] = perm[p]
            perm[p] = q
            swaps += 1
        pr = ar[c, c]
        pi = ai[c, c]
        inv = one / best
        for r in range(c + 1, n):
            xr = ar[r, c]
            xi = ai[r, c]
            lr = (xr * pr + xi * pi) * inv
            li = (xi * pr - xr * pi) * inv
            ar[r, c] = lr
            ai[r, c] = li
            for j in range(c + 1, n):
                ar[r, j] -= lr * ar[c, j] - li * ai[c, j]
                ai[r, j] -= lr * ai[c, j] + li * ar[c, j]
    return -1, swaps


@vector_kernel
def _fwd_block_vector(lr, li, perm, br, bi, zr, zi):
    # z, b: (n, kb) blocks of right-hand sides; columns are the vector lanes.
    n, kb = zr.shape
    for i in range(n):
        src = perm[i]
        for c in range(kb):
            zr[i, c] = br[src, c]
            zi[i, c] = bi[src, c]
    for i in range(1, n):
        for j in range(i):
            a = lr[i, j]
            b = li[i, j]
            for c in range(kb):
                zr[i, c] -= a * zr[j, c] - b * zi[j, c]
                zi[i, c] -= a * zi[j, c] + b * zr[j, c]


@vector_kernel
def _bwd_block_vector(ur, ui, zr, zi, one):
    n, kb = zr.shape
    for i in range(n - 1, -1, -1):
        for j in range(i + 1, n):
            a = ur[i, j]
            b = ui[i, j]
            for c in range(kb):
                zr[i, c] -= a * zr[j, c] - b * zi[j, c]
                zi[i, c] -= a * zi[j, c] + b * zr[j, c]
        pr = ur[i, i]
        pi = ui[i, i]
        inv = one / (pr * pr + pi * pi)
        for c in range(kb):
            sr = zr[i, c]
            si = zi[i, c]
            zr[i, c] = (sr * pr + si * pi) * inv
            zi[i, c] = (si * pr - sr * pi) * inv


# --------------------------------------------------------------------------- lane-batched kernels


@vector_kernel
def lu_lanes_vector(ar, ai, perm, guard2, fail, one):
    """In-place LU of ``K`` matrices stored ``(n, n, K)``; ``fail[k]`` = first bad column or -1."""
    n = ar.shape[0]
    lanes = ar.shape[2]
    p = np.empty(lanes, np.int64)
    best = np.empty(lanes, ar.dtype)
    eps2 = np.empty(lanes, ar.dtype)
    for k in range(lanes):
        eps2[k] = ar[0, 0, k] * ar[0, 0, k] + ai[0, 0, k] * ai[0, 0, k]
    for i in range(n):
        for j in range(n):
            for k in range(lanes):
                v = ar[i, j, k] * ar[i, j, k] + ai[i, j, k] * ai[i, j, k]
                eps2[k] = max(eps2[k], v)
    for k in range(lanes):
        eps2[k] *= guard2
    for i in range(n):
        for k in range(lanes):
            perm[i, k] = i
    for k in range(lanes):
        fail[k] = -1
    for c in range(n):
        for k in range(lanes):
            p[k] = c
            best[k] = ar[c, c, k] * ar[c, c, k] + ai[c, c, k] * ai[c, c, k]
        for r in range(c + 1, n):
            for k in range(lanes):
                v = ar[r, c, k] * ar[r, c, k] + ai[r, c, k] * ai[r, c, k]
                if v > best[k]:
                    best[k] = v
                    p[k] = r
        for k in range(lanes):
            bad = not best[k] > eps2[k]
            if fail[k] < 0 and bad:
                fail[k] = c
            r = p[k]
            if r != c:
                for j in range(n):
                    t = ar[c, j, k]
                    ar[c, j, k] = ar[r, j, k]
                    ar[r, j, k] = t
                    t = ai[c, j, k]
                    ai[c, j, k] = ai[r, j, k]
                    ai[r, j, k] = t
                q = perm[c, k]
                perm[c, k] = perm[r, k]
                perm[r, k] = q
            if bad:
                # unit pivot keeps the lane finite; fail[] reports it afterwards
                ar[c, c, k] = one
                ai[c, c, k] = one - one
                best[k] = one
            best[k] = one / best[k]
        for r in range(c + 1, n):
            for k in range(lanes):
                pr = ar[c, c, k]
                pi = ai[c, c, k]
                xr = ar[r, c, k]
                xi = ai[r, c, k]
                ar[r, c, k] = (xr * pr + xi * pi) * best[k]
                ai[r, c, k] = (xi * pr - xr * pi) * best[k]
            for j in range(c + 1, n):
                for k in range(lanes):
                    lr = ar[r, c, k]
                    li = ai[r, c, k]
                    ar[r, j, k] -= lr * ar[c, j, k] - li * ai[c, j, k]
                    ai[r, j, k] -= lr * ai[c, j, k] + li * ar[c, j, k]


@vector_kernel
def fwd_lanes_vector(lr, li, perm, br, bi, zr, zi):
    """``L Z = P B`` per lane; ``B``/``Z`` are ``(n, m, K)`` right-hand-side stacks."""
    n = lr.shape[0]
    m = br.shape[1]
    lanes = lr.shape[2]
    for i in range(n):
        for c in range(m):
            for k in range(lanes):
                src = perm[i, k]
                zr[i, c, k] = br[src, c, k]
                zi[i, c, k] = bi[src, c, k]
    for i in range(1, n):
        for j in range(i):
            for c in range(m):
                for k in range(lanes):
                    a = lr[i, j, k]
                    b = li[i, j, k]
                    zr[i, c, k] -= a * zr[j, c, k] - b * zi[j, c, k]
                    zi[i, c, k] -= a * zi[j, c, k] + b * zr[j, c, k]


@vector_kernel
def bwd_lanes_vector(ur, ui, zr, zi, one):
    """``U X = Z`` per lane, overwriting ``Z`` with ``X``."""
    n = ur.shape[0]
    m = zr.shape[1]
    lanes = ur.shape[2]
    inv = np.empty(lanes, ur.dtype)
    for i in range(n - 1, -1, -1):
        for j in range(i + 1, n):
            for c in range(m):
                for k in range(lanes):
                    a = ur[i, j, k]
                    b = ui[i, j, k]
                    zr[i, c, k] -= a * zr[j, c, k] - b * zi[j, c, k]
                    zi[i, c, k] -= a * zi[j, c, k] + b * zr[j, c, k]
        for k in range(lanes):
            inv[k] = one / (ur[i, i, k] * ur[i, i, k] + ui[i, i, k] * ui[i, i, k])
        for c in range(m):
            for k in range(lanes):
                pr = ur[i, i, k]
                pi = ui[i, i, k]
                sr = zr[i, c, k]
                si = zi[i, c, k]
                zr[i, c, k] = (sr * pr + si * pi) * inv[k]
                zi[i, c, k] = (si * pr - sr * pi) * inv[k]


@scalar_kernel("void(w3, w3, iw2, f, iw1, iw1, f)")
def lu_each_scalar(ar, ai, perm, guard2, fail, swaps, one):
    """In-place LU of ``(K, n, n)`` stacks, one matrix and one element at a time.

    ``fail[k]`` is the first column whose pivot fails the guard, -1 on success.
    """
    n_mat, n, _ = ar.shape
    for k in range(n_mat):
        fail[k] = -1
        swaps[k] = 0
        for i in range(n):
            perm[k, i] = i
        big = ar[k, 0, 0] * ar[k, 0, 0] + ai[k, 0, 0] * ai[k, 0, 0]
        for i in range(n):
            for j in range(n):
                v = ar[k, i, j] * ar[k, i, j] + ai[k, i, j] * ai[k, i, j]
                big = max(big, v)
        eps2 = guard2 * big
        for c in range(n):
            p = c
            best = ar[k, c, c] * ar[k, c, c] + ai[k, c, c] * ai[k, c, c]
            for r in range(c + 1, n):
                v = ar[k, r, c] * ar[k, r, c] + ai[k, r, c] * ai[k, r, c]
                if v > best:
                    best = v
                    p = r
            if not best > eps2:
                fail[k] = c
                # identity keeps the later substitution kernels finite for this matrix
                for i in range(n):
                    for j in range(n):
                        ar[k, i, j] = one if i == j else one - one
                        ai[k, i, j] = one - one
                break
            if p != c:
                for j in range(n):
                    t = ar[k, c, j]
                    ar[k, c, j] = ar[k, p, j]
                    ar[k, p, j] = t
                    t = ai[k, c, j]
                    ai[k, c, j] = ai[k, p, j]
                    ai[k, p, j] = t
                q = perm[k, c]
                perm[k, c] = perm[k, p]
                perm[k, p] = q
                swaps[k] += 1
            pr = ar[k, c, c]
            pi = ai[k, c, c]
            inv = one / best
            for r in range(c + 1, n):
                xr = ar[k, r, c]
                xi = ai[k, r, c]
                lr = (xr * pr + xi * pi) * inv
                li = (xi * pr - xr * pi) * inv
                ar[k, r, c] = lr
                ai[k, r, c] = li
                for j in range(c + 1, n):
                    ar[k, r, j] -= lr * ar[k, c, j] - li * ai[k, c, j]
                    ai[k, r, j] -= lr * ai[k, c, j] + li * ar[k, c, j]


@scalar_kernel("void(r3, r3, ir2, r3, r3, w3, w3)")
def fwd_each_scalar(lr, li, perm, br, bi, zr, zi):
    """``L Z = P B`` on ``(K, n, m)`` stacks, one right-hand-side column at a time."""
    n_mat, n, _ = lr.shape
    m = br.shape[2]
    for k in range(n_mat):
        for c in range(m):
            for i in range(n):
                zr[k, i, c] = br[k, perm[k, i], c]
                zi[k, i, c] = bi[k, perm[k, i], c]
            for i in range(1, n):
                sr = zr[k, i, c]
                si = zi[k, i, c]
                for j in range(i):
                    sr -= lr[k, i, j] * zr[k, j, c] - li[k, i, j] * zi[k, j, c]
                    si -= lr[k, i, j] * zi[k, j, c] + li[k, i, j] * zr[k, j, c]
                zr[k, i, c] = sr
                zi[k, i, c] = si


@scalar_kernel("void(r3, r3, w3, w3, f)")
def bwd_each_scalar(ur, ui, zr, zi, one):
    """``U X = Z`` on ``(K, n, m)`` stacks, overwriting ``Z``."""
    n_mat, n, _ = ur.shape
    m = zr.shape[2]
    for k in range(n_mat):
        for c in range(m):
            for i in range(n - 1, -1, -1):
                sr = zr[k, i, c]
                si = zi[k, i, c]
                for j in range(i + 1, n):
                    sr -= ur[k, i, j] * zr[k, j, c] - ui[k, i, j] * zi[k, j, c]
                    si -= ur[k, i, j] * zi[k, j, c] + ui[k, i, j] * zr[k, j, c]
                pr = ur[k, i, i]
                pi = ui[k, i, i]
                inv = one / (pr * pr + pi * pi)
                zr[k, i, c] = (sr * pr + si * pi) * inv
                zi[k, i, c] = (si * pr - sr * pi) * inv


# --------------------------------------------------------------------------- public API


def _check_square_finite(a: CMatrix) -> None:
    if a.rows != a.cols:
        raise ValueError(f"matrix must be square, got {a.rows}x{a.cols}")
    re, im = a.planes()
    if not (np.isfinite(re).all() and np.isfinite(im).all()):
        raise ValueError("matrix has non-finite entries")


def _working_planes(a: CMatrix) -> tuple[np.ndarray, np.ndarray]:
    re, im = a.planes()
    return np.array(re, order="C"), np.array(im, order="C")


def _factor_planes(a: CMatrix, used: ExecPath) -> tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    _check_square_finite(a)
    ar, ai = _working_planes(a)
    dt = a.precision.real_dtype.type
    perm = np.empty(a.rows, np.int64)
    guard2 = dt(guard_squared(a.precision))
    if used is ExecPath.VECTOR:
        col, swaps = _lu_vector(ar, ai, perm, guard2, dt(1))
    else:
        fail = np.empty(1, np.int64)
        nswap = np.empty(1, np.int64)
        lu_each_scalar(ar[None], ai[None], perm[None], guard2, fail, nswap, dt(1))
        col, swaps = fail[0], nswap[0]
    if col >= 0:
        raise SingularMatrixError(col)
    return ar, ai, perm, swaps


def lu_factor(a: CMatrix, path: ExecPath | str = ExecPath.VECTOR) -> LuFactorization:
    """Partial-pivoting LU (largest-magnitude pivot per column)."""
    used = resolve_path(path)
    ar, ai, perm, swaps = _factor_planes(a, used)
    perm.flags.writeable = False
    return LuFactorization(CMatrix.from_planes(ar, ai, a.precision), perm, int(swaps))


def _rhs_planes(f: LuFactorization, b: ComplexBuffer) -> tuple[np.ndarray, np.ndarray]:
    if len(b) != f.n:
        raise ValueError(f"right-hand side has length {len(b)}, expected {f.n}")
    if b.precision is not f.precision:
        raise ValueError(f"precision mismatch: factors {f.precision.value}, rhs {b.precision.value}")
    return b.planes()


def _vector_out(re: np.ndarray, im: np.ndarray, like: ComplexBuffer) -> ComplexBuffer:
    out = ComplexBuffer._empty(len(like), like.layout, like.precision, like.alignment)
    o_re, o_im = out.planes(writable=True)
    o_re[:] = re.ravel()
    o_im[:] = im.ravel()
    return out._freeze()


def forward_sub(f: LuFactorization, b: ComplexBuffer, path: ExecPath | str = ExecPath.VECTOR) -> ComplexBuffer:
    """Solve ``L z = P b`` with the unit-diagonal factor."""
    br, bi = _rhs_planes(f, b)
    lr, li = f.lu_packed.planes()
    dt = f.precision.real_dtype
    zr = np.empty((f.n, 1), dt)
    zi = np.empty((f.n, 1), dt)
    if resolve_path(path) is ExecPath.VECTOR:
        _fwd_block_vector(lr, li, f.perm, br.reshape(-1, 1), bi.reshape(-1, 1), zr, zi)
    else:
        n = f.n
        fwd_each_scalar(lr[None], li[None], f.perm[None], br.reshape(1, n, 1), bi.reshape(1, n, 1), zr[None], zi[None])
    return _vector_out(zr, zi, b)


def backward_sub(f: LuFactorization, z: ComplexBuffer, path: ExecPath | str = ExecPath.VECTOR) -> ComplexBuffer:
    """Solve ``U x = z``."""
    zr_in, zi_in = _rhs_planes(f, z)
    ur, ui = f.lu_packed.planes()
    dt = f.precision.real_dtype
    xr = np.array(zr_in, dtype=dt).reshape(-1, 1)
    xi = np.array(zi_in, dtype=dt).reshape(-1, 1)
    if resolve_path(path) is ExecPath.VECTOR:
        _bwd_block_vector(ur, ui, xr, xi, dt.type(1))
    else:
        bwd_each_scalar(ur[None], ui[None], xr[None], xi[None], dt.type(1))
    return _vector_out(xr, xi, z)


def _solve_columns(
    f_planes: tuple[np.ndarray, np.ndarray],
    perm: np.ndarray,
    br: np.ndarray,
    bi: np.ndarray,
    used: ExecPath,
    precision: PrecisionMode,
    stats: SolveStats,
) -> tuple[np.ndarray, np.ndarray]:
    lr, li = f_planes
    n, k = br.shape
    dt = precision.real_dtype
    one = dt.type(1)
    xr = np.empty((n, k), dt)
    xi = np.empty((n, k), dt)
    clock = time.perf_counter_ns
    if used is ExecPath.VECTOR:
        width = block_lanes(precision)
        zr = np.empty((n, width), dt)
        zi = np.empty((n, width), dt)
        for start in range(0, k, width):
            stop = min(start + width, k)
            zr_b = zr[:, : stop - start]
            zi_b = zi[:, : stop - start]
            t0 = clock()
            _fwd_block_vector(lr, li, perm, br[:, start:stop], bi[:, start:stop], zr_b, zi_b)
            t1 = clock()
            _bwd_block_vector(lr, li, zr_b, zi_b, one)
            t2 = clock()
            xr[:, start:stop] = zr_b
            xi[:, start:stop] = zi_b
            t3 = clock()
            stats.add("forward_sub", t1 - t0)
            stats.add("backward_sub", t2 - t1)
            stats.add("assemble_inverse", t3 - t2)
    else:
        l3r, l3i, p2 = lr[None], li[None], perm[None]
        zr = np.empty((1, n, 1), dt)
        zi = np.empty((1, n, 1), dt)
        for c in range(k):
            t0 = clock()
            fwd_each_scalar(l3r, l3i, p2, br[None, :, c : c + 1], bi[None, :, c : c + 1], zr, zi)
            t1 = clock()
            bwd_each_scalar(l3r, l3i, zr, zi, one)
            t2 = clock()
            xr[:, c] = zr[0, :, 0]
            xi[:, c] = zi[0, :, 0]
            t3 = clock()
            stats.add("forward_sub", t1 - t0)
            stats.add("backward_sub", t2 - t1)
            stats.add("assemble_inverse", t3 - t2)
    return xr, xi


def _as_layout(m: CMatrix, layout: Layout) -> CMatrix:
    if layout is Layout.SPLIT:
        return m
    return CMatrix(m.rows, m.cols, relayout(m.storage, layout), m.hermitian)


def invert(a: CMatrix, path: ExecPath | str = ExecPath.VECTOR) -> tuple[CMatrix, SolveStats]:
    """``A^-1`` from one factorization and ``n`` unit-vector solves."""
    used = resolve_path(path)
    stats = SolveStats()
    t0 = time.perf_counter_ns()
    ar, ai, perm, _ = _factor_planes(a, used)
    stats.add("factorize", time.perf_counter_ns() - t0)
    dt = a.precision.real_dtype
    eye = np.eye(a.rows, dtype=dt)
    xr, xi = _solve_columns((ar, ai), perm, eye, np.zeros_like(eye), used, a.precision, stats)
    return _as_layout(CMatrix.from_planes(xr, xi, a.precision), a.layout), stats


def solve(a: CMatrix, b: CMatrix, path: ExecPath | str = ExecPath.VECTOR) -> CMatrix:
    """``X`` with ``A X = B``: one factorization, then substitution per right-hand side."""
    if b.rows != a.rows:
        raise ValueError(f"right-hand side has {b.rows} rows, expected {a.rows}")
    if b.precision is not a.precision:
        raise ValueError(f"precision mismatch: {a.precision.value} vs {b.precision.value}")
    used = resolve_path(path)
    ar, ai, perm, _ = _factor_planes(a, used)
    br, bi = (np.ascontiguousarray(p) for p in b.planes())
    xr, xi = _solve_columns((ar, ai), perm, br, bi, used, a.precision, SolveStats())
    return _as_layout(CMatrix.from_planes(xr, xi, a.precision), b.layout)
