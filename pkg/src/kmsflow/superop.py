"""Superoperator algebra on n x n matrices.

A superoperator is stored as an n^2 x n^2 complex matrix over the
column-stacking vectorization  vec(X) = X.flatten(order="F"),  so that
vec(A X B) = (B^T otimes A) vec(X).  The same storage serves two levels:

* ``algebra`` -- maps on the matrix algebra itself (Phi, Psi, generators L),
* ``l2``      -- maps on the standard-form Hilbert space (T, L_2).

The two levels are converted by conjugation with the symmetric embedding
x -> rho^{1/4} x rho^{1/4}; composing mismatched levels is an error.

The Choi matrix convention is  C = sum_ab E_ab otimes S(E_ab);  a map is
completely positive iff its Choi matrix is positive semidefinite.  Kraus
families are stored so that  S(X) = sum_j V_j* X V_j  (left factor is the
adjoint), matching the generator representation used throughout the package.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import (
    DimensionMismatch,
    EmptyKrausList,
    NotHermiticityPreserving,
    NotPSD,
    UnitalityViolated,
    WrongLevel,
)
from .matrix_core import (
    DensityContext,
    as_matrix,
    dagger,
    hsnorm,
    opnorm,
)
from .reports import Check, Report

ALGEBRA = "algebra"
L2 = "l2"
_LEVELS = (ALGEBRA, L2)


def vec(x: np.ndarray) -> np.ndarray:
    """Column-stacking vectorization."""
    return np.asarray(x, dtype=complex).flatten(order="F")


def unvec(v: np.ndarray, n: int | None = None) -> np.ndarray:
    v = np.asarray(v, dtype=complex).ravel()
    if n is None:
        n = int(round(np.sqrt(v.size)))
    if n * n != v.size:
        raise DimensionMismatch(f"cannot reshape length {v.size} into a square matrix")
    return v.reshape((n, n), order="F")


@dataclass(frozen=True, eq=False)
class Superoperator:
    """A linear map on n x n matrices at a fixed representation level."""

    mat: np.ndarray
    dim: int
    level: str = ALGEBRA

    def __post_init__(self):
        if self.level not in _LEVELS:
            raise WrongLevel(f"unknown level {self.level!r}")
        m = np.asarray(self.mat, dtype=complex)
        if m.shape != (self.dim**2, self.dim**2):
            raise DimensionMismatch(
                f"superoperator matrix has shape {m.shape}, expected "
                f"{(self.dim**2, self.dim**2)}"
            )
        object.__setattr__(self, "mat", m)

    def apply(self, x) -> np.ndarray:
        x = as_matrix(x, self.dim)
        return unvec(self.mat @ vec(x), self.dim)

    def __call__(self, x) -> np.ndarray:
        return self.apply(x)

    def _require_same(self, other: "Superoperator"):
        if self.dim != other.dim:
            raise DimensionMismatch("superoperator dimensions differ")
        if self.level != other.level:
            raise WrongLevel(f"cannot combine levels {self.level!r} and {other.level!r}")

    def __matmul__(self, other: "Superoperator") -> "Superoperator":
        self._require_same(other)
        return Superoperator(self.mat @ other.mat, self.dim, self.level)

    def __add__(self, other: "Superoperator") -> "Superoperator":
        self._require_same(other)
        return Superoperator(self.mat + other.mat, self.dim, self.level)

    def __sub__(self, other: "Superoperator") -> "Superoperator":
        self._require_same(other)
        return Superoperator(self.mat - other.mat, self.dim, self.level)

    def __mul__(self, c) -> "Superoperator":
        return Superoperator(complex(c) * self.mat, self.dim, self.level)

    __rmul__ = __mul__

    def __neg__(self) -> "Superoperator":
        return Superoperator(-self.mat, self.dim, self.level)

    @property
    def norm(self) -> float:
        """Spectral norm of the n^2 x n^2 matrix (the operator norm on the
        Hilbert-Schmidt space; used as the scale for every certification)."""
        return opnorm(self.mat)

    def hs_adjoint(self) -> "Superoperator":
        """Adjoint with respect to the Hilbert-Schmidt inner product."""
        return Superoperator(dagger(self.mat), self.dim, self.level)


def identity_superop(n: int, level: str = ALGEBRA) -> Superoperator:
    return Superoperator(np.eye(n * n, dtype=complex), n, level)


def zero_superop(n: int, level: str = ALGEBRA) -> Superoperator:
    return Superoperator(np.zeros((n * n, n * n), dtype=complex), n, level)


def lmul(a, level: str = ALGEBRA) -> Superoperator:
    """Left multiplication X -> A X."""
    a = as_matrix(a)
    n = a.shape[0]
    return Superoperator(np.kron(np.eye(n), a), n, level)


def rmul(b, level: str = ALGEBRA) -> Superoperator:
    """Right multiplication X -> X B."""
    b = as_matrix(b)
    n = b.shape[0]
    return Superoperator(np.kron(b.T, np.eye(n)), n, level)


def from_kraus(ops, level: str = ALGEBRA) -> Superoperator:
    """The map X -> sum_j V_j* X V_j for the given family {V_j}."""
    ops = [as_matrix(v) for v in ops]
    if not ops:
        raise EmptyKrausList("need at least one Kraus operator")
    n = ops[0].shape[0]
    mat = np.zeros((n * n, n * n), dtype=complex)
    for v in ops:
        if v.shape[0] != n:
            raise DimensionMismatch("Kraus operators must share one dimension")
        mat += np.kron(v.T, dagger(v))
    return Superoperator(mat, n, level)


def choi(s: Superoperator) -> np.ndarray:
    """Choi matrix C = sum_ab E_ab otimes S(E_ab).

    The columns of ``s.mat`` are exactly vec(S(E_ab)) with column index
    b*n + a, so the Choi matrix is a block rearrangement of the stored
    matrix.
    """
    n = s.dim
    c = np.zeros((n * n, n * n), dtype=complex)
    for a in range(n):
        for b in range(n):
            block = unvec(s.mat[:, b * n + a], n)
            c[a * n : (a + 1) * n, b * n : (b + 1) * n] = block
    return c


def superop_from_choi(c: np.ndarray, level: str = ALGEBRA) -> Superoperator:
    """Inverse of :func:`choi`."""
    c = np.asarray(c, dtype=complex)
    n = int(round(np.sqrt(c.shape[0])))
    mat = np.zeros((n * n, n * n), dtype=complex)
    for a in range(n):
        for b in range(n):
            block = c[a * n : (a + 1) * n, b * n : (b + 1) * n]
            mat[:, b * n + a] = vec(block)
    return Superoperator(mat, n, level)


def kraus_from_choi(c: np.ndarray, rank_tol: float = 1e-10) -> list[np.ndarray]:
    """Kraus family {V_j} of a completely positive map from its Choi matrix.

    Eigenvalues below rank_tol * ||C|| are discarded; small negatives above
    -rank_tol * ||C|| are clamped to zero (rounding noise from upstream
    eigendecompositions).  Raises NotPSD for anything more negative.
    """
    c = np.asarray(c, dtype=complex)
    c = 0.5 * (c + dagger(c))
    w, u = np.linalg.eigh(c)
    scale = max(abs(w).max(initial=0.0), 1e-300)
    if w.min(initial=0.0) < -rank_tol * scale:
        raise NotPSD(
            f"Choi matrix has eigenvalue {w.min():.3e} < -{rank_tol:.1e} * ||C||"
        )
    ops = []
    n = int(round(np.sqrt(c.shape[0])))
    for wi, ui in zip(w, u.T):
        if wi > rank_tol * scale:
            k = unvec(np.sqrt(wi) * ui, n)
            ops.append(dagger(k))  # S(X) = sum K X K* = sum V* X V with V = K*
    return ops


def embed_superop(ctx: DensityContext) -> Superoperator:
    """x -> rho^{1/4} x rho^{1/4} as a superoperator (level-changing)."""
    q = ctx.quarter_rho
    return Superoperator(np.kron(q.T, q), ctx.dim, L2)


def descend_superop(ctx: DensityContext) -> Superoperator:
    q = ctx.inv_quarter_rho
    return Superoperator(np.kron(q.T, q), ctx.dim, ALGEBRA)


def to_l2(s: Superoperator, ctx: DensityContext) -> Superoperator:
    """KMS implementation of an algebra-level map:
    T(rho^{1/4} x rho^{1/4}) = rho^{1/4} S(x) rho^{1/4}."""
    if s.level != ALGEBRA:
        raise WrongLevel("to_l2 expects an algebra-level superoperator")
    e = embed_superop(ctx).mat
    d = descend_superop(ctx).mat
    return Superoperator(e @ s.mat @ d, s.dim, L2)


def to_algebra(s: Superoperator, ctx: DensityContext) -> Superoperator:
    """Inverse of :func:`to_l2`."""
    if s.level != L2:
        raise WrongLevel("to_algebra expects an L2-level superoperator")
    e = embed_superop(ctx).mat
    d = descend_superop(ctx).mat
    return Superoperator(d @ s.mat @ e, s.dim, ALGEBRA)


def kms_gram(ctx: DensityContext) -> np.ndarray:
    """Gram matrix G of the KMS inner product over vectorized coordinates:
    <A, B>_rho = vec(A)* G vec(B),  G = (rho^{1/2})^T otimes rho^{1/2}."""
    s = ctx.sqrt_rho
    return np.kron(s.T, s)


def kms_adjoint(s: Superoperator, ctx: DensityContext) -> Superoperator:
    """Adjoint with respect to the KMS inner product:
    <S^dag(A), B>_rho = <A, S(B)>_rho for all A, B."""
    if s.level != ALGEBRA:
        raise WrongLevel("kms_adjoint is defined for algebra-level maps")
    if s.dim != ctx.dim:
        raise DimensionMismatch("superoperator and context dimensions differ")
    g = kms_gram(ctx)
    si = ctx.inv_sqrt_rho
    ginv = np.kron(si.T, si)
    return Superoperator(ginv @ dagger(s.mat) @ g, s.dim, ALGEBRA)


def superop_exp(s: Superoperator, t: float) -> Superoperator:
    """exp(-t S) by scaling-and-squaring."""
    return Superoperator(scipy.linalg.expm(-float(t) * s.mat), s.dim, s.level)


def _scale(x: float) -> float:
    """Certification scale: thresholds are tol * max(norm, 1)."""
    return max(float(x), 1.0)


def hermiticity_preservation_defect(s: Superoperator) -> float:
    """max_ab || S(E_ab*) - S(E_ab)* ||, evaluated on the matrix-unit basis
    (kept basis-explicit so the error message stays actionable)."""
    n = s.dim
    worst = 0.0
    for a in range(n):
        for b in range(n):
            e = np.zeros((n, n), dtype=complex)
            e[a, b] = 1.0
            worst = max(worst, opnorm(s.apply(dagger(e)) - dagger(s.apply(e))))
    return worst


def is_cp(s: Superoperator, tol: float = 1e-9) -> Report:
    """Complete positivity via Choi positivity."""
    c = choi(s)
    w = np.linalg.eigvalsh(0.5 * (c + dagger(c)))
    cnorm = abs(w).max(initial=0.0)
    rep = Report(name="cp", tol=tol)
    rep.checks.append(
        Check("min_choi_eig", float(w.min(initial=0.0)), -tol * _scale(cnorm), "ge")
    )
    rep.metrics.update(
        {"choi_norm": float(cnorm), "choi_herm_defect": float(opnorm(c - dagger(c)))}
    )
    return rep


def is_kms_symmetric(s: Superoperator, ctx: DensityContext, tol: float = 1e-9) -> Report:
    """Self-adjointness for the KMS inner product: ||S - S^dag|| <= tol ||S||."""
    adj = kms_adjoint(s, ctx)
    defect = opnorm(s.mat - adj.mat)
    rep = Report(name="kms_symmetric", tol=tol)
    rep.checks.append(Check("kms_defect", defect, tol * _scale(s.norm), "le"))
    rep.metrics["norm"] = s.norm
    return rep


def is_ccn(
    lgen: Superoperator,
    tol: float = 1e-9,
    exp_probe_times=(1e-3, 1e-2, 1e-1, 1.0),
) -> Report:
    """Conditional complete negativity of a candidate Markov generator.

    Preconditions (raised, not reported): L(I) = 0 within tolerance and
    Hermiticity preservation on the matrix-unit basis.

    Primary criterion: the Choi matrix of -L, compressed to the orthogonal
    complement of vec(I), is positive semidefinite down to -tol * ||L||.
    Secondary witness: exp(-t L) is completely positive on a fixed time grid.
    Both verdicts are recorded and a disagreement is flagged; the verdict of
    the report is the primary criterion together with the agreement flag.
    """
    if lgen.level != ALGEBRA:
        raise WrongLevel("is_ccn expects an algebra-level generator")
    n = lgen.dim
    scale = _scale(lgen.norm)
    unital_defect = opnorm(lgen.apply(np.eye(n)))
    if unital_defect > tol * scale:
        raise UnitalityViolated(
            f"||L(I)|| = {unital_defect:.3e} exceeds {tol:.1e} * max(||L||, 1)"
        )
    herm_defect = hermiticity_preservation_defect(lgen)
    if herm_defect > tol * scale:
        raise NotHermiticityPreserving(
            f"max ||L(E_ab*) - L(E_ab)*|| = {herm_defect:.3e} exceeds tolerance"
        )

    omega = vec(np.eye(n))
    proj = np.eye(n * n, dtype=complex) - np.outer(omega, omega.conj()) / n
    c_neg = choi(-1.0 * lgen)
    compressed = proj @ (0.5 * (c_neg + dagger(c_neg))) @ proj
    min_eig = float(np.linalg.eigvalsh(compressed).min())

    probe = {}
    probe_pass = True
    for t in exp_probe_times:
        r = is_cp(superop_exp(lgen, t), tol=tol)
        probe[f"exp_probe_min_eig_t={t:g}"] = r.check("min_choi_eig").value
        probe_pass = probe_pass and r.passed

    rep = Report(name="ccn", tol=tol)
    rep.checks.append(Check("min_projected_choi_eig", min_eig, -tol * scale, "ge"))
    primary_pass = min_eig >= -tol * scale
    rep.checks.append(
        Check("criteria_agree", 1.0 if probe_pass == primary_pass else 0.0, 1.0, "ge")
    )
    rep.metrics.update(probe)
    rep.metrics.update(
        {
            "unital_defect": unital_defect,
            "hermiticity_defect": herm_defect,
            "exp_probe_pass": probe_pass,
            "norm": lgen.norm,
        }
    )
    return rep


def is_markov_l2(t: Superoperator, ctx: DensityContext, tol: float = 1e-9) -> Report:
    """Markov-operator certification on the standard form.

    Checks (i) T fixes the cyclic vector rho^{1/2}; (ii) the descended map
    x -> descend(T(embed(x))) is completely positive (the finite-dimensional
    criterion for complete preservation of the cone rho^{1/4} PSD rho^{1/4});
    (iii) T commutes with the modular conjugation.
    """
    if t.level != L2:
        raise WrongLevel("is_markov_l2 expects an L2-level superoperator")
    if t.dim != ctx.dim:
        raise DimensionMismatch("superoperator and context dimensions differ")
    n = t.dim
    cyclic = ctx.sqrt_rho
    fix_defect = hsnorm(t.apply(cyclic) - cyclic)

    descended = to_algebra(t, ctx)
    cp_rep = is_cp(descended, tol=tol)

    jdefect = 0.0
    for a in range(n):
        for b in range(n):
            e = np.zeros((n, n), dtype=complex)
            e[a, b] = 1.0
            jdefect = max(jdefect, hsnorm(t.apply(dagger(e)) - dagger(t.apply(e))))

    rep = Report(name="markov_l2", tol=tol)
    rep.checks.append(Check("cyclic_fix_defect", fix_defect, tol * _scale(t.norm), "le"))
    rep.checks.append(cp_rep.check("min_choi_eig"))
    rep.checks.append(Check("j_commutation_defect", jdefect, tol * _scale(t.norm), "le"))
    rep.metrics["descended_choi_norm"] = cp_rep.metrics["choi_norm"]
    rep.metrics["norm"] = t.norm
    return rep
