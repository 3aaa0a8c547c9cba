"""Shared builders for the test suite."""
import numpy as np
import pytest

from ucast.model import UCastConfig
from ucast.rng import Stream
from ucast.varlab import VarProcessSpec, spectral_radius


def random_spd(n: int, seed: int = 0, ridge: float = 0.1) -> np.ndarray:
    """Well-conditioned symmetric positive definite test matrix."""
    g = Stream(seed, (n, 71)).normal((n, n))
    return g @ g.T / n + ridge * np.eye(n)


def random_stable_spec(c: int, seed: int, radius: float = 0.9,
                       unit_noise: bool = False) -> VarProcessSpec:
    """Dense random coefficient matrix rescaled to the requested radius."""
    stream = Stream(seed, (c, 73))
    a = stream.normal((c, c))
    a *= radius / spectral_radius(a)
    noise = np.ones(c) if unit_noise else stream.uniform(0.5, 2.0, c)
    return VarProcessSpec(structure="custom", C=c, A=a, noise_diag=noise,
                          seed=seed)


def tiny_config(**overrides) -> UCastConfig:
    base = dict(channels=6, lookback=8, horizon=4, d=8, layers=2, ratio=2,
                heads=1, alpha=0.1, eps_cov=1e-4, seed=0)
    base.update(overrides)
    return UCastConfig(**base)


@pytest.fixture
def rng():
    return Stream(0, (999,))
