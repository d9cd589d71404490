"""Dense complex matrix primitives attached to a faithful state.

Everything downstream is driven by a :class:`DensityContext`: an invertible
density matrix rho together with its spectral decomposition.  The context
carries

* the KMS inner product  <A, B> = tr(A* rho^{1/2} B rho^{1/2}),
* the modular group  sigma_z(A) = rho^{iz} A rho^{-iz}  (analytically
  continued to complex z),
* the embedding x -> rho^{1/4} x rho^{1/4} of the algebra into its
  standard-form Hilbert space (matrices with the Hilbert-Schmidt inner
  product, cyclic vector rho^{1/2}),
* the modular conjugation J(a) = a*.

Matrices are plain complex numpy arrays; fractional powers always go through
the full spectral decomposition, never scalar interpolation, so all formulas
are invariant under the basis choice inside degenerate eigenspaces.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import DimensionMismatch, NotHermitian

DEFAULT_TOL = 1e-9

# Public complex powers are restricted to |Im z| <= 1/2; conditioning of
# sigma_z degrades like (p_max/p_min)^{|Im z|}.
IM_Z_PUBLIC_LIMIT = 0.5 + 1e-12


class AnalyticContinuationWarning(UserWarning):
    """Raised when sigma_z is continued beyond |Im z| = 1/2."""


def as_matrix(a, n: int | None = None) -> np.ndarray:
    """Validate and return ``a`` as a square complex matrix.

    Rejects non-square shapes and non-finite entries; if ``n`` is given the
    dimension must match.
    """
    m = np.asarray(a, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m.real)) or not np.all(np.isfinite(m.imag)):
        raise ValueError("matrix has non-finite entries")
    if n is not None and m.shape[0] != n:
        raise DimensionMismatch(f"expected dimension {n}, got {m.shape[0]}")
    return m


def opnorm(a: np.ndarray) -> float:
    """Operator (spectral) norm."""
    if a.size == 0:
        return 0.0
    return float(np.linalg.norm(a, 2))


def hsnorm(a: np.ndarray) -> float:
    """Hilbert-Schmidt (Frobenius) norm."""
    return float(np.linalg.norm(a))


def dagger(a: np.ndarray) -> np.ndarray:
    return a.conj().T


def matrix_units(n: int) -> np.ndarray:
    """All matrix units as an (n, n, n, n) array: units[a, b] = E_ab."""
    units = np.zeros((n, n, n, n), dtype=complex)
    for a in range(n):
        for b in range(n):
            units[a, b, a, b] = 1.0
    return units


def eig_hermitian(h, tol: float = DEFAULT_TOL):
    """Spectral decomposition of a Hermitian matrix.

    Returns (eigenvalues ascending, unitary of eigenvectors as columns).
    Raises NotHermitian if ||H - H*|| > tol * ||H||.
    """
    h = as_matrix(h)
    scale = max(opnorm(h), 1.0)
    if opnorm(h - dagger(h)) > tol * scale:
        raise NotHermitian("matrix is not Hermitian within tolerance")
    w, u = np.linalg.eigh(0.5 * (h + dagger(h)))
    return w, u


@dataclass(frozen=True, eq=False)
class DensityContext:
    """An invertible density matrix with cached spectral data.

    Fields: ``rho`` (Hermitian, positive definite, unit trace), its
    eigenvalues ``p`` (ascending, strictly positive, summing to one), the
    eigenvector unitary ``u`` (columns), and the default certification
    tolerance ``tol``.
    """

    rho: np.ndarray
    p: np.ndarray
    u: np.ndarray
    tol: float = DEFAULT_TOL

    MIN_EIGENVALUE = 1e-12

    @staticmethod
    def from_rho(rho, tol: float = DEFAULT_TOL) -> "DensityContext":
        rho = as_matrix(rho)
        if tol <= 0:
            raise ValueError("tolerance must be positive")
        p, u = eig_hermitian(rho, tol=max(tol, 1e-12))
        if p.min() < DensityContext.MIN_EIGENVALUE:
            raise ValueError(
                f"density matrix is numerically singular "
                f"(min eigenvalue {p.min():.3e} < {DensityContext.MIN_EIGENVALUE:.0e})"
            )
        if abs(p.sum() - 1.0) > 1e-12:
            raise ValueError(f"trace must be 1 within 1e-12, got {p.sum()!r}")
        recon = (u * p) @ dagger(u)
        if opnorm(recon - rho) > 1e-12 * max(opnorm(rho), 1.0):
            raise NotHermitian("spectral reconstruction of rho failed")
        return DensityContext(rho=rho, p=p, u=u, tol=tol)

    @property
    def dim(self) -> int:
        return self.rho.shape[0]

    @property
    def condition(self) -> float:
        return float(self.p.max() / self.p.min())

    def power(self, z: complex) -> np.ndarray:
        """rho^z through the spectral decomposition; Hermitian for real z."""
        z = complex(z)
        w = np.exp(z * np.log(self.p))
        out = (self.u * w) @ dagger(self.u)
        if z.imag == 0.0:
            out = 0.5 * (out + dagger(out))
        return out

    @cached_property
    def sqrt_rho(self) -> np.ndarray:
        return self.power(0.5)

    @cached_property
    def quarter_rho(self) -> np.ndarray:
        return self.power(0.25)

    @cached_property
    def inv_quarter_rho(self) -> np.ndarray:
        return self.power(-0.25)

    @cached_property
    def inv_sqrt_rho(self) -> np.ndarray:
        return self.power(-0.5)

    @cached_property
    def log_p(self) -> np.ndarray:
        return np.log(self.p)

    def is_tracial(self, tol: float | None = None) -> bool:
        tol = self.tol if tol is None else tol
        return bool(np.ptp(self.p) <= tol)


def frac_power(ctx: DensityContext, z: complex) -> np.ndarray:
    """rho^z for the context's density matrix."""
    return ctx.power(z)


def kms_inner(ctx: DensityContext, a, b) -> complex:
    """KMS inner product tr(A* rho^{1/2} B rho^{1/2}).

    Conjugate-linear in the first argument, positive definite.
    """
    a = as_matrix(a, ctx.dim)
    b = as_matrix(b, ctx.dim)
    s = ctx.sqrt_rho
    return complex(np.trace(dagger(a) @ s @ b @ s))


def sigma_z(ctx: DensityContext, z: complex, a) -> np.ndarray:
    """Modular group sigma_z(A) = rho^{iz} A rho^{-iz}.

    Computed entrywise in rho's eigenbasis, where the (a, b) entry picks up
    the factor (p_a/p_b)^{iz}.  Warns when continued beyond |Im z| = 1/2,
    where conditioning degrades.
    """
    a = as_matrix(a, ctx.dim)
    z = complex(z)
    if abs(z.imag) > IM_Z_PUBLIC_LIMIT:
        warnings.warn(
            f"sigma_z continued to Im z = {z.imag:.3g}; conditioning degrades like "
            f"(p_max/p_min)^|Im z|",
            AnalyticContinuationWarning,
            stacklevel=2,
        )
    at = dagger(ctx.u) @ a @ ctx.u
    factors = np.exp(1j * z * (ctx.log_p[:, None] - ctx.log_p[None, :]))
    return ctx.u @ (factors * at) @ dagger(ctx.u)


def embed(ctx: DensityContext, x) -> np.ndarray:
    """Symmetric embedding of the algebra into the standard form:
    x -> rho^{1/4} x rho^{1/4}.  Sends the identity to the cyclic vector
    rho^{1/2}; positive matrices land in the standard positive cone."""
    x = as_matrix(x, ctx.dim)
    return ctx.quarter_rho @ x @ ctx.quarter_rho


def descend(ctx: DensityContext, a) -> np.ndarray:
    """Exact inverse of :func:`embed`: a -> rho^{-1/4} a rho^{-1/4}."""
    a = as_matrix(a, ctx.dim)
    return ctx.inv_quarter_rho @ a @ ctx.inv_quarter_rho


def modular_conjugation(ctx: DensityContext, a) -> np.ndarray:
    """Modular conjugation of the standard form: J(a) = a*.

    Antilinear, isometric for the Hilbert-Schmidt norm, involutive, and fixes
    embed(x) for Hermitian x.
    """
    a = as_matrix(a, ctx.dim)
    return dagger(a)


def hilbert_algebra_product(ctx: DensityContext, a, b) -> np.ndarray:
    """Product of two standard-form vectors induced by the left Hilbert
    algebra: a . b = a rho^{-1/2} b.

    Under the GNS identification x -> x rho^{1/2} this is the algebra
    product; equivalently descend(a . b) = descend(a) descend(b).
    """
    a = as_matrix(a, ctx.dim)
    b = as_matrix(b, ctx.dim)
    return a @ ctx.inv_sqrt_rho @ b


def left_bounded_rep(ctx: DensityContext, a) -> np.ndarray:
    """The matrix x with a = x rho^{1/2}; left multiplication by x is the
    left action of the vector a."""
    return as_matrix(a, ctx.dim) @ ctx.inv_sqrt_rho


def right_bounded_rep(ctx: DensityContext, b) -> np.ndarray:
    """The matrix y with b = rho^{1/2} y; right multiplication by y is the
    right action of the vector b."""
    return ctx.inv_sqrt_rho @ as_matrix(b, ctx.dim)
