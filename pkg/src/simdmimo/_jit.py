"""Compilation helpers for the two execution paths.

Scalar kernels are compiled eagerly, for explicit float32/float64 signatures,
with LLVM's loop and SLP vectorizers switched off, so they really do execute one
element per instruction.  Vector kernels compile lazily with the vectorizers on
and FMA contraction allowed.
"""

from __future__ import annotations

from contextlib import contextmanager

import numba
from numba import types as nbt

FLOAT_TYPES = ("float32", "float64")


@contextmanager
def _vectorizers_off():
    saved = numba.config.LOOP_VECTORIZE, numba.config.SLP_VECTORIZE
    numba.config.LOOP_VECTORIZE = False
    numba.config.SLP_VECTORIZE = False
    try:
        yield
    finally:
        numba.config.LOOP_VECTORIZE, numba.config.SLP_VECTORIZE = saved


def _namespace(float_name: str) -> dict:
    ft = getattr(nbt, float_name)
    ns = {"f": ft, "i": nbt.int64, "void": nbt.void, "UniTuple": nbt.UniTuple, "Tuple": nbt.Tuple}
    for nd in (1, 2, 3):
        ns[f"r{nd}"] = nbt.Array(ft, nd, "A", readonly=True)
        ns[f"w{nd}"] = nbt.Array(ft, nd, "A")
        ns[f"ir{nd}"] = nbt.Array(nbt.int64, nd, "A", readonly=True)
        ns[f"iw{nd}"] = nbt.Array(nbt.int64, nd, "A")
    return ns


def signatures(*templates: str) -> list:
    """Expand signature templates for float32 and float64.

    Tokens: ``f`` float scalar, ``i`` int64, ``r<N>``/``w<N>`` read-only/writable
    N-d float arrays, ``ir<N>``/``iw<N>`` the int64 equivalents; e.g.
    ``"void(r1, r1, w1)"``.
    """
    return [eval(t, {"__builtins__": {}}, _namespace(f)) for t in templates for f in FLOAT_TYPES]


def scalar_kernel(*templates: str):
    """Eagerly compile ``templates`` (see :func:`signatures`) with vectorizers off."""
    sigs = signatures(*templates)

    def deco(fn):
        with _vectorizers_off():
            return numba.njit(sigs, cache=True, nogil=True)(fn)

    return deco


vector_kernel = numba.njit(cache=True, nogil=True, fastmath={"contract"})
