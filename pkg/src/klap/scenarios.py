"""Named desk-scale instances used by the verification suite and examples."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import FiniteDistribution
from .kernels import (
    CorruptionKernel,
    additive_noise_kernel,
    apply,
    grayscale_kernel,
    support_floor,
)


@dataclass(frozen=True)
class Instance:
    name: str
    kernel: CorruptionKernel
    p_data: FiniteDistribution

    @property
    def q(self) -> FiniteDistribution:
        return apply(self.kernel, self.p_data)


def two_state() -> Instance:
    k = CorruptionKernel([[0.9, 0.2], [0.1, 0.8]], label="two_state")
    return Instance("two_state", k, FiniteDistribution([0.3, 0.7]))


def grayscale_small() -> Instance:
    """2 shades x 2 colors; X index = 2 * shade + color."""
    return Instance("grayscale_2x2", grayscale_kernel(2, 2),
                    FiniteDistribution([0.1, 0.3, 0.4, 0.2]))


GRAYSCALE_SHADES = np.array([0.2, 0.35, 0.3, 0.15])
GRAYSCALE_COLORS = np.array([[0.85, 0.15], [0.3, 0.7], [0.6, 0.4], [0.1, 0.9]])


def grayscale_sweep() -> Instance:
    """4 shades x 2 colors with strongly shade-dependent color; for sweeps."""
    pd = (GRAYSCALE_SHADES[:, None] * GRAYSCALE_COLORS).ravel()
    return Instance("grayscale_4x2", grayscale_kernel(4, 2), FiniteDistribution(pd))


NOISE_PMF = [0.5, 0.2, 0.05, 0.0, 0.0, 0.0, 0.05, 0.2]


def sparse_noise() -> Instance:
    """Injective cyclic noise on 8 symbols with a target supported on 3 of them."""
    k = additive_noise_kernel(8, NOISE_PMF, "cyclic")
    return Instance("sparse_noise", k,
                    FiniteDistribution([0, 0, 0.3, 0, 0.5, 0, 0.2, 0]))


def random_instance(rng: np.random.Generator, nx: int, ny: int,
                    floor: float | None = None) -> Instance:
    """Dirichlet(1) kernel columns and a Dirichlet(1) full-support target."""
    R = rng.dirichlet(np.ones(ny), size=nx).T
    k = CorruptionKernel(R, label=f"random({ny}x{nx})")
    if floor is not None:
        k = support_floor(k, floor)
    p = rng.dirichlet(np.ones(nx))
    p = np.maximum(p, 1e-3)
    return Instance(k.label, k, FiniteDistribution(p / p.sum()))
