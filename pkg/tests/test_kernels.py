import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from simdmimo import kernels
from simdmimo.kernels import (
    Capabilities,
    ExecPath,
    capability_query,
    cdot,
    cmul_fma,
    gram_update,
    resolve_path,
    vadd,
)
from simdmimo.tensor import CMatrix, ComplexBuffer, Layout, PrecisionMode

from conftest import PATH_TOL, crandn, rel_fro

PATHS = list(ExecPath)
PRECISIONS = list(PrecisionMode)


def buf(values, precision="pd", layout="split"):
    return ComplexBuffer.from_array(values, layout, precision)


def random_buf(rng, n, precision, layout="split"):
    return buf(crandn(rng, n), precision, layout)


@pytest.mark.parametrize("path", PATHS)
def test_vadd_examples(path):
    assert vadd(buf([1 + 2j]), buf([3 - 1j]), path).to_numpy()[0] == 4 + 1j
    a = buf([1.5 - 2j, 0.25 + 7j])
    assert vadd(a, buf([0, 0]), path) == a


def test_vadd_rejects_mismatch():
    with pytest.raises(ValueError):
        vadd(buf([1, 2]), buf([1]))
    with pytest.raises(ValueError):
        vadd(buf([1]), buf([1], precision="ps"))
    with pytest.raises(ValueError):
        vadd(buf([1]), buf([1], layout="interleaved"))


def test_vadd_1000_ps_bit_exact(rng):
    a, b = random_buf(rng, 1000, "ps"), random_buf(rng, 1000, "ps")
    assert vadd(a, b, "vector").same_elements(vadd(a, b, "scalar"))


@pytest.mark.parametrize("path", PATHS)
def test_cmul_fma_examples(path):
    out = cmul_fma(buf([0]), buf([1 + 1j]), buf([1 - 1j]), path)
    assert out.to_numpy()[0] == 2 + 0j
    acc = buf([3 - 2j, 1j])
    assert cmul_fma(acc, buf([0, 0]), buf([5 + 5j, -1]), path) == acc


def test_cmul_fma_1024_pd_within_4_ulp(rng):
    acc, a, b = (random_buf(rng, 1024, "pd") for _ in range(3))
    v = cmul_fma(acc, a, b, "vector").to_numpy()
    s = cmul_fma(acc, a, b, "scalar").to_numpy()
    for got, ref in ((v.real, s.real), (v.imag, s.imag)):
        # ulp measured against the magnitude of the terms, where contraction rounding lives
        ulp = np.spacing(np.maximum(np.abs(ref), 1e-300))
        scale = np.abs(acc.to_numpy()) + np.abs(a.to_numpy()) * np.abs(b.to_numpy())
        assert np.all(np.abs(got - ref) <= 4 * np.maximum(ulp, np.spacing(scale)))


@pytest.mark.parametrize("path", PATHS)
def test_cdot_examples(path):
    a = buf([1 + 0j, 0 + 1j])
    assert cdot(a, a, conjugate_a=True, path=path) == 2 + 0j
    assert cdot(buf([1, 0]), buf([0, 1]), path=path) == 0
    assert cdot(buf([1j]), buf([1j]), conjugate_a=False, path=path) == -1


def test_cdot_empty_input_rejected():
    with pytest.raises(ValueError):
        buf([])


def _fsum_dot(a, b, conj):
    a = np.conj(a) if conj else a
    p = a.astype(np.complex128) * b.astype(np.complex128)
    return complex(math.fsum(p.real), math.fsum(p.imag))


@pytest.mark.parametrize("path", PATHS)
def test_cdot_720_ps_vs_compensated_oracle(rng, path):
    a, b = random_buf(rng, 720, "ps"), random_buf(rng, 720, "ps")
    ref = _fsum_dot(a.to_numpy(), b.to_numpy(), True)
    got = complex(cdot(a, b, True, path))
    assert abs(got - ref) / abs(ref) <= 1e-5


def test_cdot_returns_precision_scalar():
    assert isinstance(cdot(buf([1], "ps"), buf([1], "ps")), np.complex64)
    assert isinstance(cdot(buf([1]), buf([1])), np.complex128)


@pytest.mark.parametrize("path", PATHS)
def test_gram_examples(path):
    r = gram_update(CMatrix.from_array(np.zeros((2, 2))), 0.5, path)
    assert r.hermitian and np.array_equal(r.to_numpy(), 0.5 * np.eye(2))
    r = gram_update(CMatrix.from_array(np.eye(2)), 0.1, path)
    assert np.allclose(r.to_numpy(), 1.1 * np.eye(2), rtol=0, atol=1e-15)


def _naive_gram(h, s2):
    n, m = h.shape
    r = np.zeros((n, n), dtype=complex)
    for i in range(n):
        for j in range(n):
            for l in range(m):
                r[i, j] += h[i, l] * np.conj(h[j, l])
        r[i, i] += s2
    return r


@pytest.mark.parametrize("path", PATHS)
def test_gram_random_4x4_vs_triple_loop(rng, path):
    h = crandn(rng, 4, 4)
    r = gram_update(CMatrix.from_array(h), 0.3, path).to_numpy()
    assert np.max(np.abs(r - _naive_gram(h, 0.3))) <= 1e-12
    assert np.all(r.diagonal().imag == 0) and np.all(r.diagonal().real >= 0.3)


def test_gram_rejects_bad_noise():
    h = CMatrix.from_array(np.eye(2))
    for bad in (-1.0, float("nan"), float("inf")):
        with pytest.raises(ValueError):
            gram_update(h, bad)


def test_gram_keeps_interleaved_layout(rng):
    h = CMatrix.from_array(crandn(rng, 2, 3), layout="interleaved")
    r = gram_update(h, 0.0)
    assert r.layout is Layout.INTERLEAVED and r.shape == (2, 2)


def test_capability_query_256():
    c = capability_query({"avx2": True, "avx": True, "fma": True})
    assert (c.width_bits, c.native, c.fma) == (256, True, True)
    assert c.lanes(PrecisionMode.PS) == 256 // 64 == 4
    assert c.lanes(PrecisionMode.PD) == 256 // 128 == 2


def test_capability_query_512_and_none():
    assert capability_query({"avx512f": True}).width_bits == 512
    c = capability_query({})
    assert (c.width_bits, c.native) == (0, False)
    assert c.lanes(PrecisionMode.PS) == 0


def test_capability_host_report():
    c = capability_query()
    assert c.width_bits in (0, 128, 256, 512)
    assert c.native == (c.width_bits > 0)
    assert c.lanes(PrecisionMode.PS) == c.width_bits // 64
    d = c.as_dict()
    assert set(d) >= {"width_bits", "native", "fma", "model", "lanes_ps", "lanes_pd"}


def test_fallback_is_observable(monkeypatch, rng):
    monkeypatch.setattr(kernels, "_ACTIVE", Capabilities(0, False, False, "none", "none"))
    assert resolve_path("vector") is ExecPath.SCALAR
    a, b = random_buf(rng, 9, "pd"), random_buf(rng, 9, "pd")
    out, rep = vadd(a, b, "vector", with_report=True)
    assert rep.path_used is ExecPath.SCALAR
    assert out.same_elements(vadd(a, b, "scalar"))
    _, rep = cdot(a, b, path="vector", with_report=True)
    assert rep.path_used is ExecPath.SCALAR


def test_kernel_report_fields(rng):
    a = random_buf(rng, 37, "ps")
    for fn, args in ((vadd, (a, a)), (cmul_fma, (a, a, a)), (cdot, (a, a))):
        _, rep = fn(*args, with_report=True)
        assert rep.elements_processed == 37 and rep.elapsed >= 0
    _, rep = gram_update(CMatrix.from_array(crandn(rng, 2, 3)), 0.0, with_report=True)
    assert rep.elements_processed == 6


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 1100), st.sampled_from(PRECISIONS), st.integers(0, 2**32 - 1))
def test_path_equivalence_any_length(n, precision, seed):
    rng = np.random.default_rng(seed)
    a, b, c = (random_buf(rng, n, precision) for _ in range(3))
    tol = PATH_TOL[precision]
    assert vadd(a, b, "vector").same_elements(vadd(a, b, "scalar"))
    assert rel_fro(cmul_fma(c, a, b, "vector").to_numpy(), cmul_fma(c, a, b, "scalar").to_numpy()) <= tol
    # dot products are compared relative to the sum of magnitudes; cancellation can make |sum| tiny
    scale = float(np.sum(np.abs(a.to_numpy()) * np.abs(b.to_numpy())))
    dv, ds = complex(cdot(a, b, True, "vector")), complex(cdot(a, b, True, "scalar"))
    assert abs(dv - ds) <= tol * scale


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8), st.integers(1, 8), st.sampled_from(PRECISIONS), st.integers(0, 2**32 - 1))
def test_gram_path_equivalence(nr, nt, precision, seed):
    rng = np.random.default_rng(seed)
    h = CMatrix.from_array(crandn(rng, nr, nt), precision)
    rv = gram_update(h, 0.2, "vector").to_numpy()
    rs = gram_update(h, 0.2, "scalar").to_numpy()
    assert rel_fro(rv, rs) <= PATH_TOL[precision]


@pytest.mark.parametrize("path", PATHS)
@pytest.mark.parametrize("n", [7, 721])
def test_tail_lengths_match_numpy(rng, path, n):
    a, b = random_buf(rng, n, "pd"), random_buf(rng, n, "pd")
    an, bn = a.to_numpy(), b.to_numpy()
    assert np.allclose(cmul_fma(a, a, b, path).to_numpy(), an + an * bn, rtol=1e-14, atol=1e-14)
    assert abs(complex(cdot(a, b, True, path)) - np.vdot(an, bn)) <= 1e-12 * n


@pytest.mark.parametrize("path", PATHS)
def test_deterministic_repeat(rng, path):
    a, b = random_buf(rng, 1024, "ps"), random_buf(rng, 1024, "ps")
    first = cdot(a, b, True, path)
    assert all(cdot(a, b, True, path) == first for _ in range(5))
    assert cmul_fma(a, a, b, path) == cmul_fma(a, a, b, path)
