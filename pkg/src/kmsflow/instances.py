"""Seeded random instances for tests, acceptance suites and the CLI.

Every instance is a deterministic function of (n, seed): the generator state
is ``numpy.random.default_rng(seed)`` and all draws happen in a fixed order,
so the same seed reproduces bit-identical objects.  The density ensemble
bounds the condition number p_max/p_min (default 100) because the quadrature
oracle degrades on ill-conditioned states; a flag lifts the bound for stress
tests.
"""

from __future__ import annotations

import numpy as np

from .generator import generator_from_cp
from .matrix_core import DensityContext, dagger
from .superop import from_kraus, kms_adjoint, superop_exp

DEFAULT_COND_BOUND = 100.0


def ginibre(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))


def random_unitary(rng: np.random.Generator, n: int) -> np.ndarray:
    q, r = np.linalg.qr(ginibre(rng, n))
    return q * (np.diagonal(r) / np.abs(np.diagonal(r)))


def random_density(rng: np.random.Generator, n: int, cond_bound: float) -> np.ndarray:
    """Random full-rank density matrix with p_max/p_min <= cond_bound."""
    logp = rng.uniform(0.0, np.log(cond_bound), size=n)
    p = np.exp(logp)
    p /= p.sum()
    u = random_unitary(rng, n)
    rho = (u * p) @ dagger(u)
    return 0.5 * (rho + dagger(rho))


def random_instance(
    n: int,
    seed: int,
    kraus_rank: int | None = None,
    cond_bound: float = DEFAULT_COND_BOUND,
    tol: float = 1e-9,
    ctx: DensityContext | None = None,
):
    """A seeded (DensityContext, Psi) pair: Psi is the KMS symmetrization of
    a random Kraus-form completely positive map, rescaled to unit norm of
    Psi(I).  A fixed density context may be supplied instead of sampling one
    (the "rho": matrix variant of the instance config)."""
    if n < 2:
        raise ValueError("instance dimension must be at least 2")
    if kraus_rank is None:
        kraus_rank = n
    if kraus_rank < 1:
        raise ValueError("kraus_rank must be at least 1")
    rng = np.random.default_rng(seed)
    if ctx is None:
        ctx = DensityContext.from_rho(random_density(rng, n, cond_bound), tol=tol)
    elif ctx.dim != n:
        raise ValueError(f"supplied density has dimension {ctx.dim}, expected {n}")
    ops = [ginibre(rng, n) / np.sqrt(n) for _ in range(kraus_rank)]
    phi = from_kraus(ops)
    psi = 0.5 * (phi + kms_adjoint(phi, ctx))
    norm = np.linalg.norm(psi.apply(np.eye(n)), 2)
    psi = (1.0 / norm) * psi
    return ctx, psi


def random_generator(
    n: int,
    seed: int,
    kraus_rank: int | None = None,
    cond_bound: float = DEFAULT_COND_BOUND,
    tol: float = 1e-9,
    ctx: DensityContext | None = None,
):
    """A seeded certified Markov generator, returned with the Psi that
    produced it."""
    ctx, psi = random_instance(
        n, seed, kraus_rank=kraus_rank, cond_bound=cond_bound, tol=tol, ctx=ctx
    )
    gen = generator_from_cp(psi, ctx)
    return gen, psi


def random_markov_operator(n: int, seed: int, t: float | None = None):
    """A seeded symmetric Markov operator on the standard form, produced as
    exp(-t L2) of a seeded generator."""
    gen, _ = random_generator(n, seed)
    rng = np.random.default_rng(seed + 7919)
    if t is None:
        t = float(rng.uniform(0.2, 2.0))
    return gen.ctx, superop_exp(gen.L2, t)


def tracial_context(n: int, tol: float = 1e-9) -> DensityContext:
    return DensityContext.from_rho(np.eye(n) / n, tol=tol)
