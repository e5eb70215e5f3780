"""Tapped-delay-line fading channel, AWGN and seeding helpers."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence, Union

import numpy as np
import yaml

from ..tensor import CMatrix, ComplexBuffer, PrecisionMode
from .mcs import NrNumerology

SeedLike = Union[int, Sequence[int], np.random.SeedSequence]

BUILTIN_PROFILES = {
    "tdl-c": "tdl_c.yaml",
    "synthetic-3tap": "synthetic_3tap.yaml",
    "awgn": "awgn.yaml",
}
_PROFILE_KEYS = {"name", "model", "fading", "taps", "rng_seed", "delay_spread_s"}


def derive_rng(*keys: int | Sequence[int]) -> np.random.Generator:
    """Generator seeded from a tuple of non-negative integer keys."""
    flat: list[int] = []
    for k in keys:
        if isinstance(k, (list, tuple)):
            flat.extend(int(v) for v in k)
        else:
            flat.append(int(k))
    return np.random.default_rng(np.random.SeedSequence(flat))


def noise_var_from_snr_db(snr_db: float) -> float:
    """Per-complex-dimension noise variance for unit-power symbols and channels."""
    if math.isinf(snr_db) and snr_db > 0:
        return 0.0
    return float(10.0 ** (-snr_db / 10.0))


class DopplerModel(enum.Enum):
    STATIC = "static"
    BLOCK_FADING = "block_fading"

    @classmethod
    def parse(cls, value: "DopplerModel | str") -> "DopplerModel":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown channel model {value!r}; expected 'static' or 'block_fading'") from None


@dataclass(frozen=True)
class ChannelProfile:
    """Tap list ``(delay_s, power_db)``; powers are renormalized to unit sum.

    ``fading=False`` replaces the random tap gains by ``sqrt(p) * I`` so a
    single-tap profile yields ``H[k] = I`` (pure AWGN link).
    """

    taps: tuple[tuple[float, float], ...]
    rng_seed: int = 0
    doppler_model: DopplerModel = DopplerModel.BLOCK_FADING
    fading: bool = True
    name: str = "custom"
    powers: tuple[float, ...] = field(init=False, repr=False)

    def __post_init__(self):
        taps = tuple((float(d), float(p)) for d, p in self.taps)
        if not taps:
            raise ValueError("channel profile needs at least one tap")
        delays = [d for d, _ in taps]
        if any(not math.isfinite(d) or d < 0 for d in delays):
            raise ValueError("tap delays must be finite and non-negative")
        if any(b <= a for a, b in zip(delays, delays[1:])):
            raise ValueError("tap delays must be strictly increasing")
        if any(not math.isfinite(p) for _, p in taps):
            raise ValueError("tap powers must be finite")
        lin = np.array([10.0 ** (p / 10.0) for _, p in taps])
        object.__setattr__(self, "taps", taps)
        object.__setattr__(self, "powers", tuple(float(v) for v in lin / lin.sum()))
        object.__setattr__(self, "doppler_model", DopplerModel.parse(self.doppler_model))

    @property
    def delays(self) -> np.ndarray:
        return np.array([d for d, _ in self.taps])

    @property
    def is_flat(self) -> bool:
        return len(self.taps) == 1

    @classmethod
    def from_mapping(cls, data: dict, origin: str = "<mapping>") -> "ChannelProfile":
        if not isinstance(data, dict):
            raise ValueError(f"{origin}: channel profile must be a mapping")
        unknown = set(data) - _PROFILE_KEYS
        if unknown:
            raise ValueError(f"{origin}: unknown channel profile keys {sorted(unknown)}")
        if "taps" not in data:
            raise ValueError(f"{origin}: channel profile has no 'taps'")
        try:
            taps = tuple((float(d), float(p)) for d, p in data["taps"])
        except (TypeError, ValueError):
            raise ValueError(f"{origin}: taps must be a list of [delay_s, power_db] pairs") from None
        return cls(
            taps=taps,
            rng_seed=int(data.get("rng_seed", 0)),
            doppler_model=DopplerModel.parse(data.get("model", "block_fading")),
            fading=bool(data.get("fading", True)),
            name=str(data.get("name", Path(origin).stem)),
        )


def builtin_profile_path(name: str) -> Path:
    return Path(str(resources.files("simdmimo.phy") / "data" / BUILTIN_PROFILES[name]))


def load_channel_profile(ref: str | Path) -> ChannelProfile:
    """Load a built-in profile by name (``tdl-c``, ``synthetic-3tap``, ``awgn``) or a YAML file."""
    ref_s = str(ref)
    path = builtin_profile_path(ref_s.lower()) if ref_s.lower() in BUILTIN_PROFILES else Path(ref_s)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise FileNotFoundError(f"channel profile not found: {path}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ValueError(f"{path}: cannot parse channel profile: {exc}") from None
    return ChannelProfile.from_mapping(data, str(path))


class ChannelResponse:
    """Per-subcarrier channel matrices stored as split planes shaped ``(nr, nt, K)``."""

    __slots__ = ("re", "im", "precision")

    def __init__(self, re: np.ndarray, im: np.ndarray, precision: PrecisionMode):
        self.re = re
        self.im = im
        self.precision = precision

    @property
    def nr(self) -> int:
        return self.re.shape[0]

    @property
    def nt(self) -> int:
        return self.re.shape[1]

    def __len__(self) -> int:
        return self.re.shape[2]

    def __getitem__(self, k: int) -> CMatrix:
        return CMatrix.from_planes(self.re[:, :, k], self.im[:, :, k], self.precision)

    def __iter__(self):
        return (self[k] for k in range(len(self)))

    def to_numpy(self) -> np.ndarray:
        """Complex array shaped ``(K, nr, nt)``."""
        return np.moveaxis(self.re + 1j * self.im.astype(self.re.dtype), 2, 0).astype(self.precision.complex_dtype)

    def astype(self, precision: PrecisionMode | str) -> "ChannelResponse":
        precision = PrecisionMode.parse(precision)
        dt = precision.real_dtype
        return ChannelResponse(np.ascontiguousarray(self.re, dt), np.ascontiguousarray(self.im, dt), precision)

    @classmethod
    def from_numpy(cls, h: np.ndarray, precision: PrecisionMode | str = PrecisionMode.PD) -> "ChannelResponse":
        """Build from a complex ``(K, nr, nt)`` array."""
        precision = PrecisionMode.parse(precision)
        h = np.moveaxis(np.asarray(h), 0, 2)
        dt = precision.real_dtype
        return cls(np.ascontiguousarray(h.real, dt), np.ascontiguousarray(h.imag, dt), precision)


def channel_gains(profile: ChannelProfile, nr: int, nt: int, rng: np.random.Generator) -> np.ndarray:
    """Tap gains shaped ``(taps, nr, nt)``, each ``CN(0, p_tap)``."""
    p = np.sqrt(np.asarray(profile.powers))[:, None, None]
    if not profile.fading:
        return p * np.eye(nr, nt)[None, :, :]
    draw = rng.standard_normal((2, len(profile.taps), nr, nt))
    return p * (draw[0] + 1j * draw[1]) * math.sqrt(0.5)


def frequency_response(gains: np.ndarray, delays: np.ndarray, numerology: NrNumerology) -> np.ndarray:
    """``H[i, j, k] = sum_t g[t, i, j] exp(-2j pi f_k tau_t)`` with ``f_k = k * scs``."""
    f = np.arange(numerology.n_subcarriers) * numerology.scs_hz
    phase = np.exp(-2j * np.pi * np.outer(delays, f))
    return np.einsum("tij,tk->ijk", gains, phase)


def realize_channel(
    profile: ChannelProfile,
    numerology: NrNumerology,
    nr: int,
    nt: int,
    tti_index: int = 0,
    seed: SeedLike | None = None,
    precision: PrecisionMode | str = PrecisionMode.PD,
) -> ChannelResponse:
    """One slot's channel on every subcarrier.

    Gains come from ``(seed or profile.rng_seed, tti_index)``; a static profile
    ignores ``tti_index`` so every slot sees the same realization.
    """
    if nr < 1 or nt < 1:
        raise ValueError(f"antenna counts must be positive, got {nr}x{nt}")
    base = profile.rng_seed if seed is None else seed
    if isinstance(base, np.random.SeedSequence):
        base = list(base.entropy) if isinstance(base.entropy, (list, tuple)) else [base.entropy]
    tti = 0 if profile.doppler_model is DopplerModel.STATIC else tti_index
    rng = derive_rng(base, tti)
    h = frequency_response(channel_gains(profile, nr, nt, rng), profile.delays, numerology)
    precision = PrecisionMode.parse(precision)
    dt = precision.real_dtype
    return ChannelResponse(np.ascontiguousarray(h.real, dt), np.ascontiguousarray(h.imag, dt), precision)


def awgn_array(shape, noise_var: float, rng: np.random.Generator) -> np.ndarray:
    """``CN(0, noise_var)`` samples (complex128); draw order is fixed regardless of value."""
    if not noise_var >= 0:
        raise ValueError(f"noise_var must be >= 0, got {noise_var}")
    draw = rng.standard_normal((2,) + tuple(np.atleast_1d(shape)))
    return (draw[0] + 1j * draw[1]) * math.sqrt(noise_var / 2)


def add_awgn(y: ComplexBuffer, noise_var: float, seed: SeedLike) -> ComplexBuffer:
    if not noise_var >= 0:
        raise ValueError(f"noise_var must be >= 0, got {noise_var}")
    if noise_var == 0:
        out = ComplexBuffer._empty(len(y), y.layout, y.precision, y.alignment)
        out._data[:] = y.data
        return out._freeze()
    rng = derive_rng(seed) if not isinstance(seed, np.random.SeedSequence) else np.random.default_rng(seed)
    noisy = y.to_numpy().astype(np.complex128) + awgn_array(len(y), noise_var, rng)
    return ComplexBuffer.from_array(noisy, y.layout, y.precision, y.alignment)
