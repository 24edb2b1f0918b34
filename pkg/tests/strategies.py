"""Hypothesis strategies for simplex points and kernels."""

import numpy as np
from hypothesis import strategies as st

from klap.core import FiniteDistribution
from klap.kernels import CorruptionKernel


def _positive(n, lo=1e-3):
    return st.lists(st.floats(lo, 1.0), min_size=n, max_size=n)


@st.composite
def simplex(draw, n=None, lo=1e-3, max_size=8):
    if n is None:
        n = draw(st.integers(1, max_size))
    w = np.array(draw(_positive(n, lo)))
    if w.sum() == 0:
        w[0] = 1.0
    return FiniteDistribution(w / w.sum())


@st.composite
def simplex_pair(draw, max_size=8):
    n = draw(st.integers(1, max_size))
    return draw(simplex(n)), draw(simplex(n))


@st.composite
def kernel(draw, nx=None, ny=None, max_size=8, lo=1e-3):
    if nx is None:
        nx = draw(st.integers(1, max_size))
    if ny is None:
        ny = draw(st.integers(1, max_size))
    cols = [np.array(draw(_positive(ny, lo))) for _ in range(nx)]
    for c in cols:
        if c.sum() == 0:
            c[0] = 1.0
    m = np.stack([c / c.sum() for c in cols], axis=1)
    return CorruptionKernel(m)


@st.composite
def kernel_and_p(draw, max_size=8, lo=1e-3):
    k = draw(kernel(max_size=max_size, lo=lo))
    return k, draw(simplex(k.input_size, lo=lo))
