"""KMS-symmetric Markov generators and their Dirichlet forms.

A certified :class:`MarkovGenerator` bundles the algebra-level generator L
(annihilating the identity, KMS-symmetric, conditionally completely
negative), its standard-form implementation L2 = embed o L o descend, and the
certification reports.

Generators are built from completely positive data through

    L(A) = (1 + sigma_{-i/2})^{-1}(Psi(I)) A
         + A (1 + sigma_{+i/2})^{-1}(Psi(I)) - Psi(A)

for a KMS-symmetric completely positive Psi; the two resolvent coefficients
are mutual adjoints, and the partial-fraction identity
(1+s)^{-1} + (1+1/s)^{-1} = 1 makes L(I) = 0 automatic.  The inverse problem
(recovering an admissible Psi from a certified L) is solved by Dykstra
alternating projections between the affine family Psi_m and the cone of
positive semidefinite Choi matrices.

The quadratic form E(a) = <a, L2 a> on the standard form is the Dirichlet
form of the semigroup; this module also provides the cone projection
a -> a ^ rho^{1/2} (nearest point of rho^{1/2} - L2_+ in the real
Hilbert-Schmidt metric) and the contraction and product-inequality checks
that characterize Dirichlet forms.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CertificationFailed,
    Infeasible,
    NoConvergence,
    NotJFixed,
    PreconditionFailed,
)
from .matrix_core import (
    DensityContext,
    as_matrix,
    dagger,
    descend,
    embed,
    hilbert_algebra_product,
    hsnorm,
    opnorm,
)
from .reports import Check, Report
from .superop import (
    Superoperator,
    choi,
    is_ccn,
    is_cp,
    is_kms_symmetric,
    kms_adjoint,
    lmul,
    rmul,
    superop_exp,
    to_l2,
    unvec,
    vec,
)
from .vtransform import v_transform


def modular_resolvent(ctx: DensityContext, m, half: float) -> np.ndarray:
    """(1 + sigma_{-i*half*... })^{-1} applied entrywise in rho's eigenbasis.

    ``half=+0.5`` gives (1 + sigma_{-i/2})^{-1}, whose entry (a, b) divisor is
    1 + (p_a/p_b)^{1/2};  ``half=-0.5`` gives (1 + sigma_{+i/2})^{-1}.
    The spectrum of the divisor is contained in (1, inf), so this is always
    well conditioned.
    """
    m = as_matrix(m, ctx.dim)
    mt = dagger(ctx.u) @ m @ ctx.u
    denom = 1.0 + np.exp(half * (ctx.log_p[:, None] - ctx.log_p[None, :]))
    return ctx.u @ (mt / denom) @ dagger(ctx.u)


@dataclass(frozen=True, eq=False)
class MarkovGenerator:
    """A certified Markov generator with its standard-form implementation."""

    L: Superoperator
    L2: Superoperator
    ctx: DensityContext
    certificates: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.L.dim

    @property
    def tol(self) -> float:
        return self.ctx.tol


def certify_generator(lgen: Superoperator, ctx: DensityContext, tol: float | None = None) -> MarkovGenerator:
    """Certify L(I) = 0, KMS symmetry and conditional complete negativity,
    and attach the KMS implementation L2.

    Raises CertificationFailed (carrying the failing report) if any
    certificate fails.
    """
    tol = ctx.tol if tol is None else tol
    n = lgen.dim
    scale = max(1.0, lgen.norm)

    unital = Report(name="unital_kernel", tol=tol)
    unital.checks.append(
        Check("kernel_defect", opnorm(lgen.apply(np.eye(n))), tol * scale, "le")
    )
    kms = is_kms_symmetric(lgen, ctx, tol=tol)
    ccn = is_ccn(lgen, tol=tol)
    certificates = {"unital_kernel": unital, "kms_symmetric": kms, "ccn": ccn}
    for name, rep in certificates.items():
        if not rep.passed:
            raise CertificationFailed(f"generator failed {name} certification", rep)
    return MarkovGenerator(L=lgen, L2=to_l2(lgen, ctx), ctx=ctx, certificates=certificates)


def generator_from_cp(psi: Superoperator, ctx: DensityContext, tol: float | None = None) -> MarkovGenerator:
    """Build a certified Markov generator from a KMS-symmetric completely
    positive map via the resolvent representation."""
    tol = ctx.tol if tol is None else tol
    cp = is_cp(psi, tol=tol)
    if not cp.passed:
        raise PreconditionFailed("Psi is not completely positive", cp)
    sym = is_kms_symmetric(psi, ctx, tol=tol)
    if not sym.passed:
        raise PreconditionFailed("Psi is not KMS-symmetric", sym)
    m = psi.apply(np.eye(psi.dim))
    m = 0.5 * (m + dagger(m))
    k = modular_resolvent(ctx, m, +0.5)
    lgen = lmul(k) + rmul(dagger(k)) - psi
    return certify_generator(lgen, ctx, tol=tol)


def _hermitian_basis(n: int) -> list[np.ndarray]:
    """Orthonormal (Hilbert-Schmidt) basis of the Hermitian n x n matrices."""
    basis = []
    for a in range(n):
        e = np.zeros((n, n), dtype=complex)
        e[a, a] = 1.0
        basis.append(e)
    inv_sqrt2 = 1.0 / np.sqrt(2.0)
    for a in range(n):
        for b in range(a + 1, n):
            e = np.zeros((n, n), dtype=complex)
            e[a, b] = inv_sqrt2
            e[b, a] = inv_sqrt2
            basis.append(e)
            f = np.zeros((n, n), dtype=complex)
            f[a, b] = 1j * inv_sqrt2
            f[b, a] = -1j * inv_sqrt2
            basis.append(f)
    return basis


def _real_stack(z: np.ndarray) -> np.ndarray:
    return np.concatenate([z.real, z.imag])


def _psd_project(h: np.ndarray) -> np.ndarray:
    h = 0.5 * (h + dagger(h))
    w, u = np.linalg.eigh(h)
    wc = np.clip(w, 0.0, None)
    return (u * wc) @ dagger(u)


def recover_cp_from_generator(
    gen: MarkovGenerator, max_iter: int = 5000, tol: float = 1e-8
):
    """Recover a KMS-symmetric completely positive Psi reproducing the
    generator through the resolvent representation.

    Parametrizes m = Psi(I) over Hermitian matrices, restricts to the
    (numerically computed) subspace where Psi_m = lmul(k) + rmul(k*) - L is
    KMS-symmetric, and runs Dykstra alternating projections between that
    affine family of Choi matrices and the PSD cone.  The round-trip
    L(Psi) = L holds identically on the affine family, so the only
    certification left to reach is Choi positivity.

    Returns (psi, report).  Raises Infeasible after max_iter without a PSD
    point; the report carries the best min-eigenvalue reached.
    """
    ctx = gen.ctx
    n = gen.dim
    basis = _hermitian_basis(n)
    dim_par = len(basis)

    def family_part(m: np.ndarray) -> Superoperator:
        k = modular_resolvent(ctx, m, +0.5)
        return lmul(k) + rmul(dagger(k))

    # KMS-symmetry constraint: homogeneous and, for Hermitian m, satisfied
    # identically; the null space is computed anyway as a guard.
    cols = []
    sym_cols = []
    for h in basis:
        part = family_part(h)
        cols.append(_real_stack(vec(choi(part))))
        sym_cols.append(_real_stack((part - kms_adjoint(part, ctx)).mat.ravel()))
    a_sym = np.column_stack(sym_cols)
    _, svals, vt = np.linalg.svd(a_sym, full_matrices=True)
    cutoff = 1e-10 * max(1.0, svals.max(initial=0.0))
    null_mask = np.concatenate([svals, np.zeros(dim_par - svals.size)]) <= cutoff
    kms_null = vt.T[:, null_mask]

    a_choi = np.column_stack(cols) @ kms_null
    a_pinv = np.linalg.pinv(a_choi, rcond=1e-12)
    c_l = choi(gen.L)
    c0 = -_real_stack(vec(c_l))

    def affine_project(z: np.ndarray):
        phi = a_pinv @ (_real_stack(vec(z)) - c0)
        r = c0 + a_choi @ phi
        half = r.size // 2
        return unvec(r[:half] + 1j * r[half:], n * n), phi

    feas_tol = 0.5 * ctx.tol
    x = affine_project(np.zeros((n * n, n * n), dtype=complex))[0]
    p = np.zeros_like(x)
    q = np.zeros_like(x)
    best_min_eig = -np.inf
    iterations = 0
    converged = False
    phi = None
    for iterations in range(1, max_iter + 1):
        y = _psd_project(x + p)
        p = x + p - y
        x, phi = affine_project(y + q)
        q = y + q - x
        min_eig = float(np.linalg.eigvalsh(0.5 * (x + dagger(x))).min())
        best_min_eig = max(best_min_eig, min_eig)
        scale = max(1.0, opnorm(x))
        if min_eig >= -feas_tol * scale:
            converged = True
            break

    rep = Report(name="recover_cp", tol=tol)
    rep.metrics.update(
        {
            "iterations": iterations,
            "best_min_choi_eig": best_min_eig,
            "kms_null_dim": int(kms_null.shape[1]),
        }
    )
    if not converged:
        rep.checks.append(Check("feasible", 0.0, 1.0, "ge"))
        raise Infeasible(
            f"no PSD point found within {max_iter} iterations "
            f"(best min eigenvalue {best_min_eig:.3e})",
            rep,
        )

    theta = kms_null @ phi
    m = sum(t * h for t, h in zip(theta, basis))
    m = 0.5 * (m + dagger(m))
    psi = family_part(m) - gen.L
    # Round trip through the public representation: recompute m from psi.
    m2 = psi.apply(np.eye(n))
    m2 = 0.5 * (m2 + dagger(m2))
    rebuilt = lmul(modular_resolvent(ctx, m2, +0.5)) + rmul(
        dagger(modular_resolvent(ctx, m2, +0.5))
    ) - psi
    roundtrip = opnorm(rebuilt.mat - gen.L.mat)
    rep.checks.append(Check("roundtrip_residual", roundtrip, tol * max(1.0, gen.L.norm), "le"))
    rep.checks.append(
        Check("min_choi_eig", float(np.linalg.eigvalsh(choi(psi)).min()),
              -ctx.tol * max(1.0, opnorm(choi(psi))), "ge")
    )
    return psi, rep


def evolve(gen: MarkovGenerator, t: float) -> Superoperator:
    """Standard-form semigroup exp(-t L2)."""
    if t < 0:
        raise ValueError("Markov evolution requires t >= 0")
    return superop_exp(gen.L2, t)


def chernoff_residual(gen: MarkovGenerator, t: float, n_steps: int) -> float:
    """Operator-norm distance between the Chernoff product of V-transformed
    semigroup elements and the semigroup generated by the V-transform of L2:

        || (V(exp(-t/n L2)))^n - exp(-t V(L2)) ||.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    ctx = gen.ctx
    step = v_transform(evolve(gen, t / n_steps), ctx)
    target = superop_exp(v_transform(gen.L2, ctx), t)
    return opnorm(np.linalg.matrix_power(step.mat, n_steps) - target.mat)


def dirichlet_energy(gen: MarkovGenerator, a) -> float:
    """Dirichlet form E(a) = <a, L2 a> on the standard form (real part; the
    imaginary part vanishes for a certified generator)."""
    a = as_matrix(a, gen.dim)
    va = vec(a)
    return float(np.real(va.conj() @ (gen.L2.mat @ va)))


def et_energy(gen: MarkovGenerator, a, t: float) -> float:
    """Truncated form E_t(a) = <a, a - exp(-t L2) a> / t, increasing to E(a)
    as t decreases to 0."""
    if t <= 0:
        raise ValueError("t must be positive")
    a = as_matrix(a, gen.dim)
    va = vec(a)
    tt = superop_exp(gen.L2, t)
    return float(np.real(va.conj() @ (va - tt.mat @ va)) / t)


def cone_project(
    ctx: DensityContext,
    a,
    tol: float = 1e-10,
    max_iter: int = 50000,
):
    """Projection a ^ rho^{1/2} onto the closed convex cone
    {rho^{1/2} - rho^{1/4} v rho^{1/4} : v >= 0} in the real Hilbert-Schmidt
    metric.

    Solved as min_{v >= 0} ||a - rho^{1/2} + rho^{1/4} v rho^{1/4}||_F^2 by
    projected gradient with the exact smoothness constant 2 max(p): the
    quadratic's Hessian acts entrywise with eigenvalues 2 (p_a p_b)^{1/2}.
    Convergence is declared at relative step < tol.
    """
    a = as_matrix(a, ctx.dim)
    if hsnorm(a - dagger(a)) > ctx.tol * max(1.0, hsnorm(a)):
        raise NotJFixed("cone_project requires a J-fixed (Hermitian) vector")
    a = 0.5 * (a + dagger(a))
    r = a - ctx.sqrt_rho
    quarter = ctx.quarter_rho
    step = 1.0 / (2.0 * ctx.p.max())
    v = _psd_project(-descend(ctx, r))
    for _ in range(max_iter):
        grad = 2.0 * (quarter @ (r + quarter @ v @ quarter) @ quarter)
        v_new = _psd_project(v - step * grad)
        move = hsnorm(v_new - v)
        v = v_new
        if move <= tol * max(1.0, hsnorm(v)):
            return ctx.sqrt_rho - embed(ctx, v)
    raise NoConvergence(f"cone projection did not converge in {max_iter} iterations")


def random_cone_point(ctx: DensityContext, rng: np.random.Generator) -> np.ndarray:
    """A random element of the cone rho^{1/2} - L2_+."""
    n = ctx.dim
    g = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    v = g @ dagger(g) * rng.uniform(0.1, 2.0)
    return ctx.sqrt_rho - embed(ctx, v)


def variational_inequality_report(
    ctx: DensityContext, a, proj, trials: int = 100, seed: int = 0, tol: float = 1e-9
) -> Report:
    """Optimality witness for the cone projection: Re<a - proj, c - proj> <= tol
    for random cone points c."""
    a = as_matrix(a, ctx.dim)
    proj = as_matrix(proj, ctx.dim)
    rng = np.random.default_rng(seed)
    worst = -np.inf
    for _ in range(trials):
        c = random_cone_point(ctx, rng)
        val = float(np.real(np.trace(dagger(a - proj) @ (c - proj))))
        worst = max(worst, val)
    rep = Report(name="cone_variational_inequality", tol=tol)
    rep.checks.append(Check("max_inner_product", worst, tol, "le"))
    return rep


def dirichlet_contraction_check(
    gen: MarkovGenerator, trials: int = 50, tol: float = 1e-8, seed: int = 0
) -> Report:
    """Markovianity of the Dirichlet form: E(a ^ rho^{1/2}) <= E(a) for
    J-fixed a, together with J-invariance E(Ja) = E(a)."""
    ctx = gen.ctx
    n = gen.dim
    rng = np.random.default_rng(seed)
    worst_contraction = -np.inf
    worst_j = 0.0
    for _ in range(trials):
        g = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        a = 0.5 * (g + dagger(g))
        proj = cone_project(ctx, a)
        worst_contraction = max(
            worst_contraction, dirichlet_energy(gen, proj) - dirichlet_energy(gen, a)
        )
        b = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        worst_j = max(worst_j, abs(dirichlet_energy(gen, dagger(b)) - dirichlet_energy(gen, b)))
    rep = Report(name="dirichlet_contraction", tol=tol)
    rep.checks.append(Check("max_energy_increase", worst_contraction, tol, "le"))
    rep.checks.append(Check("max_j_invariance_defect", worst_j, tol, "le"))
    return rep


def energy_product_inequality(
    gen: MarkovGenerator, a, b, tol: float = 1e-8
) -> Report:
    """Dirichlet-form product inequality on the standard form:

        E(a.b)^{1/2} <= ||pi_l(a)|| E(b)^{1/2} + E(a)^{1/2} ||pi_r(b)||,

    where a.b = a rho^{-1/2} b is the standard-form product of vectors and
    the norms are the operator norms of the left/right multiplication
    operators (a rho^{-1/2} and rho^{-1/2} b respectively).
    """
    ctx = gen.ctx
    a = as_matrix(a, gen.dim)
    b = as_matrix(b, gen.dim)
    ab = hilbert_algebra_product(ctx, a, b)
    ea = max(dirichlet_energy(gen, a), 0.0)
    eb = max(dirichlet_energy(gen, b), 0.0)
    eab = max(dirichlet_energy(gen, ab), 0.0)
    left_norm = opnorm(a @ ctx.inv_sqrt_rho)
    right_norm = opnorm(ctx.inv_sqrt_rho @ b)
    lhs = np.sqrt(eab)
    rhs = left_norm * np.sqrt(eb) + np.sqrt(ea) * right_norm
    rep = Report(name="energy_product_inequality", tol=tol)
    rep.checks.append(Check("excess", float(lhs - rhs), tol, "le"))
    rep.metrics.update(
        {"lhs": float(lhs), "rhs": float(rhs), "pi_l_norm": left_norm, "pi_r_norm": right_norm}
    )
    return rep
