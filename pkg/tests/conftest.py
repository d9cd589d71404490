import functools

import numpy as np
import pytest
from hypothesis import settings

import kmsflow as kf

settings.register_profile("suite", max_examples=25, deadline=None)
settings.load_profile("suite")


@functools.lru_cache(maxsize=None)
def cached_generator(n: int, seed: int):
    """Seeded generator shared across tests (construction is deterministic)."""
    return kf.random_generator(n, seed)


@functools.lru_cache(maxsize=None)
def cached_gns(n: int, seed: int):
    gen, psi = cached_generator(n, seed)
    return kf.gns_calculus(gen)


def rng_matrix(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))


@pytest.fixture
def ctx2():
    return kf.DensityContext.from_rho(np.diag([0.75, 0.25]))


@pytest.fixture
def ctx_tracial2():
    return kf.DensityContext.from_rho(np.eye(2) / 2)
