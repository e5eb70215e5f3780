"""LMMSE MIMO detection, one weight set per subcarrier per slot.

For every subcarrier ``k`` the receiver forms ``R = H H^H + s2 I``, factors it
with pivoted LU, solves ``R Z = H`` by forward and backward substitution and
applies ``W = Z^H = H^H R^-1`` to all symbols of the slot.  The five stages are
separate compiled calls so each can be timed on its own.

Vector path: matrices are batched across subcarriers (one subcarrier per SIMD
lane, arrays shaped ``(n, n, K)``).  Scalar path: conventional per-subcarrier
matrices (``(K, n, n)``) processed one element at a time.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, fields

import numpy as np

from ._jit import scalar_kernel, vector_kernel
from .kernels import ExecPath, gram_update, resolve_path
from .linalg import (
    SingularMatrixError,
    bwd_each_scalar,
    bwd_lanes_vector,
    fwd_each_scalar,
    fwd_lanes_vector,
    guard_squared,
    lu_each_scalar,
    lu_lanes_vector,
    solve,
)
from .phy.channel import ChannelResponse
from .phy.grid import SlotGrid
from .tensor import CMatrix, ComplexBuffer, PrecisionMode

STAGES = ("covariance", "lu", "forward_sub", "backward_sub", "equalize")
SUPPORTED_ANTENNAS = (1, 2, 4, 8)


@dataclass(frozen=True)
class DetectionConfig:
    nr: int
    nt: int
    precision: PrecisionMode = PrecisionMode.PS
    path: ExecPath = ExecPath.VECTOR
    noise_var: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "precision", PrecisionMode.parse(self.precision))
        object.__setattr__(self, "path", ExecPath.parse(self.path))
        if self.nr not in SUPPORTED_ANTENNAS or self.nt not in SUPPORTED_ANTENNAS:
            raise ValueError(f"nr and nt must be in {SUPPORTED_ANTENNAS}, got {self.nr}x{self.nt}")
        if self.nr < self.nt:
            raise ValueError(f"need nr >= nt, got nr={self.nr}, nt={self.nt}")
        if not self.noise_var >= 0 or not np.isfinite(self.noise_var):
            raise ValueError(f"noise_var must be finite and >= 0, got {self.noise_var}")


@dataclass
class StageTimings:
    """Per-stage wall time in nanoseconds (floats once averaged)."""

    covariance: float = 0
    lu: float = 0
    forward_sub: float = 0
    backward_sub: float = 0
    equalize: float = 0
    total: float = 0

    @property
    def inversion(self) -> float:
        return self.lu + self.forward_sub + self.backward_sub

    @property
    def stage_sum(self) -> float:
        return sum(getattr(self, s) for s in STAGES)

    def as_dict(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def __add__(self, other: "StageTimings") -> "StageTimings":
        return StageTimings(**{k: v + getattr(other, k) for k, v in self.as_dict().items()})

    def scaled(self, factor: float) -> "StageTimings":
        return StageTimings(**{k: v * factor for k, v in self.as_dict().items()})

    @classmethod
    def mean(cls, items: list["StageTimings"]) -> "StageTimings":
        if not items:
            return cls()
        acc = cls()
        for t in items:
            acc = acc + t
        return acc.scaled(1.0 / len(items))


@dataclass
class DetectionResult:
    x_re: np.ndarray  # (nt, symbols, K)
    x_im: np.ndarray
    timings: StageTimings
    subcarriers_processed: int
    path_used: ExecPath

    @property
    def x_hat(self) -> np.ndarray:
        """Estimates shaped like a slot grid: ``(K, symbols, nt)``."""
        z = self.x_re + 1j * self.x_im.astype(self.x_re.dtype)
        return np.transpose(z, (2, 1, 0))

    def to_grid(self) -> SlotGrid:
        return SlotGrid.received(self.x_hat)


# --------------------------------------------------------------------------- kernels


@vector_kernel
def covariance_lanes_vector(hr, hi, s2, rr, ri, zero):
    """``R = H H^H + s2 I`` per lane; H ``(nr, nt, K)``, R ``(nr, nr, K)``."""
    nr, nt, lanes = hr.shape
    for i in range(nr):
        for j in range(i, nr):
            for k in range(lanes):
                rr[i, j, k] = zero
                ri[i, j, k] = zero
            for l in range(nt):
                for k in range(lanes):
                    a = hr[i, l, k]
                    b = hi[i, l, k]
                    c = hr[j, l, k]
                    d = hi[j, l, k]
                    rr[i, j, k] += a * c + b * d
                    ri[i, j, k] += b * c - a * d
            if i == j:
                for k in range(lanes):
                    rr[i, i, k] += s2
                    ri[i, i, k] = zero
            else:
                for k in range(lanes):
                    rr[j, i, k] = rr[i, j, k]
                    ri[j, i, k] = -ri[i, j, k]


@vector_kernel
def equalize_lanes_vector(zr, zi, yr, yi, xr, xi, zero):
    """``x[:, s] = Z^H y[:, s]`` per lane; Z ``(nr, nt, K)``, y ``(nr, S, K)``, x ``(nt, S, K)``."""
    nr, nt, lanes = zr.shape
    n_sym = yr.shape[1]
    for a in range(nt):
        for s in range(n_sym):
            for k in range(lanes):
                xr[a, s, k] = zero
                xi[a, s, k] = zero
            for b in range(nr):
                for k in range(lanes):
                    p = zr[b, a, k]
                    q = zi[b, a, k]
                    u = yr[b, s, k]
                    v = yi[b, s, k]
                    xr[a, s, k] += p * u + q * v
                    xi[a, s, k] += p * v - q * u


@scalar_kernel("void(r3, r3, f, w3, w3, f)")
def covariance_each_scalar(hr, hi, s2, rr, ri, zero):
    """Per-subcarrier covariance on ``(K, nr, nt)`` stacks."""
    n_sc, nr, nt = hr.shape
    for k in range(n_sc):
        for i in range(nr):
            for j in range(i, nr):
                sr = zero
                si = zero
                for l in range(nt):
                    a = hr[k, i, l]
                    b = hi[k, i, l]
                    c = hr[k, j, l]
                    d = hi[k, j, l]
                    sr += a * c + b * d
                    si += b * c - a * d
                if i == j:
                    rr[k, i, i] = sr + s2
                    ri[k, i, i] = zero
                else:
                    rr[k, i, j] = sr
                    ri[k, i, j] = si
                    rr[k, j, i] = sr
                    ri[k, j, i] = -si


@scalar_kernel("void(r3, r3, r3, r3, w3, w3, f)")
def equalize_each_scalar(zr, zi, yr, yi, xr, xi, zero):
    """Z ``(K, nr, nt)``, y ``(K, nr, S)``, x ``(K, nt, S)``."""
    n_sc, nr, nt = zr.shape
    n_sym = yr.shape[2]
    for k in range(n_sc):
        for a in range(nt):
            for s in range(n_sym):
                sr = zero
                si = zero
                for b in range(nr):
                    p = zr[k, b, a]
                    q = zi[k, b, a]
                    u = yr[k, b, s]
                    v = yi[k, b, s]
                    sr += p * u + q * v
                    si += p * v - q * u
                xr[k, a, s] = sr
                xi[k, a, s] = si


# --------------------------------------------------------------------------- pipeline


@dataclass
class PreparedSlot:
    """Inputs staged in the precision and memory layout of one execution path."""

    cfg: DetectionConfig
    path: ExecPath
    hr: np.ndarray
    hi: np.ndarray
    yr: np.ndarray
    yi: np.ndarray

    @property
    def n_subcarriers(self) -> int:
        return self.hr.shape[2] if self.path is ExecPath.VECTOR else self.hr.shape[0]

    @property
    def n_symbols(self) -> int:
        return self.yr.shape[1] if self.path is ExecPath.VECTOR else self.yr.shape[2]


class Workspace:
    """Scratch buffers for one (config, path, slot shape); reused so timed stages never page-fault."""

    def __init__(self, cfg: DetectionConfig, path: ExecPath, n_subcarriers: int, n_symbols: int):
        nr, nt = cfg.nr, cfg.nt
        dt = cfg.precision.real_dtype
        self.key = (cfg.nr, cfg.nt, cfg.precision, path, n_subcarriers, n_symbols)
        if path is ExecPath.VECTOR:
            shapes = {"r": (nr, nr, n_subcarriers), "z": (nr, nt, n_subcarriers), "x": (nt, n_symbols, n_subcarriers)}
            perm_shape = (nr, n_subcarriers)
        else:
            shapes = {"r": (n_subcarriers, nr, nr), "z": (n_subcarriers, nr, nt), "x": (n_subcarriers, nt, n_symbols)}
            perm_shape = (n_subcarriers, nr)
        self.arrays = {}
        for name, shape in shapes.items():
            self.arrays[name + "r"] = np.zeros(shape, dt)
            self.arrays[name + "i"] = np.zeros(shape, dt)
        self.arrays["perm"] = np.zeros(perm_shape, np.int64)
        self.arrays["fail"] = np.zeros(n_subcarriers, np.int64)
        self.arrays["swaps"] = np.zeros(n_subcarriers, np.int64)

    @classmethod
    def for_slot(cls, prep: "PreparedSlot") -> "Workspace":
        return cls(prep.cfg, prep.path, prep.n_subcarriers, prep.n_symbols)


def _channel_planes(h) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(h, ChannelResponse):
        return h.re, h.im
    h = np.asarray(h)
    if h.ndim != 3:
        raise ValueError(f"channel must be (K, nr, nt), got shape {h.shape}")
    t = np.moveaxis(h, 0, 2)
    return t.real, t.imag


def prepare_slot(grid_rx: SlotGrid, h_per_sc, cfg: DetectionConfig) -> PreparedSlot:
    """Validate shapes and stage inputs for :func:`run_prepared` (not timed)."""
    hr, hi = _channel_planes(h_per_sc)
    nr, nt, n_sc = hr.shape
    if (nr, nt) != (cfg.nr, cfg.nt):
        raise ValueError(f"channel is {nr}x{nt}, config expects {cfg.nr}x{cfg.nt}")
    if grid_rx.n_streams != cfg.nr:
        raise ValueError(f"received grid has {grid_rx.n_streams} antennas, config expects {cfg.nr}")
    if grid_rx.n_subcarriers != n_sc:
        raise ValueError(f"grid has {grid_rx.n_subcarriers} subcarriers, channel has {n_sc}")
    if not (np.isfinite(hr).all() and np.isfinite(hi).all()):
        raise ValueError("channel has non-finite entries")
    used = resolve_path(cfg.path)
    dt = cfg.precision.real_dtype
    y = grid_rx.symbols  # (K, S, nr)
    if used is ExecPath.VECTOR:
        yt = np.transpose(y, (2, 1, 0))
        return PreparedSlot(
            cfg, used,
            np.ascontiguousarray(hr, dt), np.ascontiguousarray(hi, dt),
            np.ascontiguousarray(yt.real, dt), np.ascontiguousarray(yt.imag, dt),
        )  # fmt: skip
    yt = np.transpose(y, (0, 2, 1))
    return PreparedSlot(
        cfg, used,
        np.ascontiguousarray(np.moveaxis(hr, 2, 0), dt), np.ascontiguousarray(np.moveaxis(hi, 2, 0), dt),
        np.ascontiguousarray(yt.real, dt), np.ascontiguousarray(yt.imag, dt),
    )  # fmt: skip


def run_prepared(prep: PreparedSlot, work: Workspace | None = None) -> DetectionResult:
    """Run the five timed stages on staged inputs."""
    if work is None:
        work = Workspace.for_slot(prep)
    elif work.key != (prep.cfg.nr, prep.cfg.nt, prep.cfg.precision, prep.path, prep.n_subcarriers, prep.n_symbols):
        raise ValueError("workspace does not match the prepared slot")
    cfg = prep.cfg
    dt = cfg.precision.real_dtype
    zero, one = dt.type(0), dt.type(1)
    s2 = dt.type(cfg.noise_var)
    guard2 = dt.type(guard_squared(cfg.precision))
    n_sc = prep.n_subcarriers
    w = work.arrays
    rr, ri, zr, zi, xr, xi = (w[k] for k in ("rr", "ri", "zr", "zi", "xr", "xi"))
    perm, fail = w["perm"], w["fail"]
    clock = time.perf_counter_ns
    if prep.path is ExecPath.VECTOR:
        ta = clock()
        t0 = clock()
        covariance_lanes_vector(prep.hr, prep.hi, s2, rr, ri, zero)
        t1 = clock()
        lu_lanes_vector(rr, ri, perm, guard2, fail, one)
        t2 = clock()
        fwd_lanes_vector(rr, ri, perm, prep.hr, prep.hi, zr, zi)
        t3 = clock()
        bwd_lanes_vector(rr, ri, zr, zi, one)
        t4 = clock()
        equalize_lanes_vector(zr, zi, prep.yr, prep.yi, xr, xi, zero)
        t5 = clock()
        tb = clock()
        x_re, x_im = xr.copy(), xi.copy()
    else:
        ta = clock()
        t0 = clock()
        covariance_each_scalar(prep.hr, prep.hi, s2, rr, ri, zero)
        t1 = clock()
        lu_each_scalar(rr, ri, perm, guard2, fail, w["swaps"], one)
        t2 = clock()
        fwd_each_scalar(rr, ri, perm, prep.hr, prep.hi, zr, zi)
        t3 = clock()
        bwd_each_scalar(rr, ri, zr, zi, one)
        t4 = clock()
        equalize_each_scalar(zr, zi, prep.yr, prep.yi, xr, xi, zero)
        t5 = clock()
        tb = clock()
        x_re = np.ascontiguousarray(np.transpose(xr, (1, 2, 0)))
        x_im = np.ascontiguousarray(np.transpose(xi, (1, 2, 0)))
    _raise_if_singular(fail)  # checked after the timed region; a failed lane only yields garbage until here
    timings = StageTimings(
        covariance=t1 - t0, lu=t2 - t1, forward_sub=t3 - t2, backward_sub=t4 - t3, equalize=t5 - t4, total=tb - ta
    )
    return DetectionResult(x_re, x_im, timings, n_sc, prep.path)


def _raise_if_singular(fail: np.ndarray) -> None:
    bad = np.flatnonzero(fail >= 0)
    if bad.size:
        k = int(bad[0])
        raise SingularMatrixError(int(fail[k]), subcarrier=k)


def warm_up(cfg: DetectionConfig, n_subcarriers: int = 12) -> None:
    """Run one tiny identity-channel slot so the kernels for ``cfg`` are compiled or loaded."""
    h = np.broadcast_to(np.eye(cfg.nr, cfg.nt, dtype=np.complex128), (n_subcarriers, cfg.nr, cfg.nt))
    y = np.ones((n_subcarriers, 1, cfg.nr), dtype=np.complex128)
    detect_slot(SlotGrid.received(y), h, cfg)


def detect_slot(grid_rx: SlotGrid, h_per_sc, cfg: DetectionConfig) -> DetectionResult:
    """LMMSE estimates for every subcarrier and symbol of one received slot.

    ``h_per_sc`` is a :class:`ChannelResponse` or a complex ``(K, nr, nt)`` array.
    """
    return run_prepared(prepare_slot(grid_rx, h_per_sc, cfg))


def lmmse_weights(h: CMatrix, noise_var: float, path: ExecPath | str = ExecPath.VECTOR) -> CMatrix:
    """``W = H^H (H H^H + s2 I)^-1`` through LU and substitution (``R Z = H``, ``W = Z^H``)."""
    r = gram_update(h, noise_var, path)
    z = solve(r, CMatrix(h.rows, h.cols, h.storage), path).to_numpy()
    return CMatrix.from_array(z.conj().T, h.precision, h.layout)


def _as_complex(x) -> np.ndarray:
    if isinstance(x, ComplexBuffer):
        return x.to_numpy()
    if isinstance(x, CMatrix):
        return x.to_numpy()
    return np.asarray(x)


def mse(x_hat, x_true) -> float:
    """Mean ``|x_hat - x_true|^2`` over all entries, accumulated in double precision."""
    a = _as_complex(x_hat).astype(np.complex128).ravel()
    b = _as_complex(x_true).astype(np.complex128).ravel()
    if a.size == 0:
        raise ValueError("mse of empty input")
    if a.size != b.size:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    d = a - b
    return float(np.mean(d.real**2 + d.imag**2))
