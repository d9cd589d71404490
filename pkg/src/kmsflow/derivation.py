"""First-order differential calculus of a KMS-symmetric Markov generator.

The calculus (H, pi_l, pi_r, J, delta) is produced by a GNS-type quotient:
on the tensor square of the matrix algebra, the V-transformed generator
induces the sesquilinear form

    <A1 (x) B1, A2 (x) B2>  =  -1/2 tr(B1* rho^{1/2} Lv(A1* A2) rho^{1/2} B2),

which is positive semidefinite on the subspace

    N = { sum_j A_j (x) B_j  :  sum_j A_j sigma_{-i/2}(B_j) = 0 }.

H is N modulo the numerical null space of the form; the two commuting
actions are pi_l(X): A (x) B -> XA (x) B and pi_r(X): A (x) B -> A (x) BX,
the antilinear involution is A (x) B -> -B* (x) A*, and the derivation is

    delta(A) = sigma_{-i/4}(A) (x) I  -  I (x) sigma_{i/4}(A),

satisfying the twisted Leibniz rule and <delta(A), delta(B)> = <A, L(B)>_rho.

Because the bimodule is a multiple of the standard M_n bimodule, the
derivation decomposes into components delta_j(A) = rho^{1/4} [V_j, A] rho^{1/4}
for matrices V_1..V_N; the same family is reachable through the Kraus
decomposition of Xi(A) = rho^{1/4} Pv(rho^{-1/4} A rho^{-1/4}) rho^{1/4} for
an admissible completely positive Psi (Pv its V-transform).  Both routes are
implemented, and a numerical isometry between the two calculi witnesses the
uniqueness of the construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import (
    CertificationFailed,
    DerivationRecoveryFailure,
    GramMismatch,
    GramNotPSD,
    InconsistentPsi,
    Infeasible,
    NonIntegralMultiplicity,
    ReconstructionFailure,
)
from .generator import (
    MarkovGenerator,
    modular_resolvent,
    recover_cp_from_generator,
)
from .matrix_core import (
    DensityContext,
    as_matrix,
    dagger,
    descend,
    hilbert_algebra_product,
    hsnorm,
    opnorm,
    right_bounded_rep,
    sigma_z,
)
from .reports import Check, Report
from .superop import (
    Superoperator,
    choi,
    kraus_from_choi,
    lmul,
    rmul,
    to_algebra,
    unvec,
    vec,
)
from .vtransform import v_transform

GRAM_PSD_TOL = 1e-8
NULL_CUTOFF = 1e-10
FORM_TOL = 1e-8
COMMUTATOR_FORM_TOL = 1e-7


@dataclass(frozen=True, eq=False)
class FirstOrderCalculus:
    """Coordinates of a first-order differential calculus.

    ``pi_l[a, b]`` / ``pi_r[a, b]`` are the (dim_h x dim_h) matrices of the
    two actions on the computational matrix unit E_ab, ``delta[a, b]`` is the
    vector delta(E_ab) in H, and the antilinear involution acts as
    ``xi -> jmat @ conj(xi)``.  ``meta`` carries construction diagnostics
    (Gram spectrum, null cutoff, ambient dimensions).
    """

    dim_h: int
    pi_l: np.ndarray  # (n, n, dim_h, dim_h)
    pi_r: np.ndarray  # (n, n, dim_h, dim_h)
    jmat: np.ndarray  # (dim_h, dim_h)
    delta: np.ndarray  # (n, n, dim_h)
    ctx: DensityContext
    meta: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.pi_l.shape[0]

    def pi_l_of(self, x) -> np.ndarray:
        x = as_matrix(x, self.dim)
        return np.einsum("ab,abij->ij", x, self.pi_l)

    def pi_r_of(self, x) -> np.ndarray:
        x = as_matrix(x, self.dim)
        return np.einsum("ab,abij->ij", x, self.pi_r)

    def delta_of(self, a) -> np.ndarray:
        a = as_matrix(a, self.dim)
        return np.einsum("ab,abk->k", a, self.delta)

    def jop(self, xi) -> np.ndarray:
        return self.jmat @ np.conj(xi)


@dataclass(frozen=True, eq=False)
class CommutatorFamily:
    """Matrices V_1..V_N with the generator form sum_j <[V_j,A],[V_j,B]>_rho,
    closed under adjoints as a set through the stored involutive pairing."""

    ops: tuple
    pairing: tuple

    def __post_init__(self):
        ops = tuple(np.asarray(v, dtype=complex) for v in self.ops)
        object.__setattr__(self, "ops", ops)
        pairing = tuple(int(j) for j in self.pairing)
        object.__setattr__(self, "pairing", pairing)
        if sorted(pairing) != list(range(len(ops))):
            raise ValueError("pairing must be a permutation")
        for j, k in enumerate(pairing):
            if pairing[k] != j:
                raise ValueError("pairing must be an involution")
            if not np.array_equal(ops[k], dagger(ops[j])):
                raise ValueError("pairing does not realize adjoint closure exactly")

    def __len__(self) -> int:
        return len(self.ops)


def _unit(n: int, a: int, b: int) -> np.ndarray:
    e = np.zeros((n, n), dtype=complex)
    e[a, b] = 1.0
    return e


def _unit_perm(n: int) -> np.ndarray:
    """Permutation from row-major unit labels (a n + b) to vec indices (b n + a)."""
    idx = np.arange(n * n).reshape(n, n).T.ravel()
    return idx


def kms_form_of_generator(gen: MarkovGenerator) -> np.ndarray:
    """The matrix F[(ab),(cd)] = <E_ab, L(E_cd)>_rho over matrix-unit pairs
    (row-major unit labels)."""
    from .superop import kms_gram

    perm = _unit_perm(gen.dim)
    f_vec = kms_gram(gen.ctx) @ gen.L.mat
    return f_vec[np.ix_(perm, perm)]


def gns_calculus(gen: MarkovGenerator, rank_tol: float = NULL_CUTOFF) -> FirstOrderCalculus:
    """Construct the first-order calculus of a certified generator by the
    GNS quotient of the V-transformed generator.

    Raises GramNotPSD when the restricted form has an eigenvalue below
    -1e-8 * ||G|| (a non-CND input slipping through certification) and
    ReconstructionFailure when <delta(A), delta(B)> fails to reproduce
    <A, L(B)>_rho on the matrix units.
    """
    ctx = gen.ctx
    n = gen.dim
    eye = np.eye(n, dtype=complex)

    lcheck = to_algebra(v_transform(gen.L2, ctx), ctx)
    kernel_defect = opnorm(lcheck.apply(eye))
    if kernel_defect > ctx.tol * max(1.0, lcheck.norm):
        raise ReconstructionFailure(
            f"V-transformed generator does not annihilate I (defect {kernel_defect:.3e})"
        )

    # Gram form on the product basis E_ab (x) E_cd.
    sqrt_rho = ctx.sqrt_rho
    t4 = np.empty((n, n, n, n), dtype=complex)
    for b in range(n):
        for bp in range(n):
            y = sqrt_rho @ unvec(lcheck.mat[:, bp * n + b], n) @ sqrt_rho
            t4[b, bp] = y
    gram = -0.5 * np.einsum("aA,bBcC,dD->abcdABCD", eye, t4, eye).reshape(n**4, n**4)
    gram = 0.5 * (gram + dagger(gram))

    # Constraint subspace N: kernel of sum_j A_j sigma_{-i/2}(B_j).
    s_half = np.einsum("xc,dy->cdxy", sqrt_rho, ctx.inv_sqrt_rho)  # sigma_{-i/2}(E_cd)
    mu = np.einsum("pa,cdbq->pqabcd", eye, s_half).reshape(n * n, n**4)
    nullbasis = scipy.linalg.null_space(mu)
    if nullbasis.shape[1] != n**4 - n * n:
        raise ReconstructionFailure(
            f"constraint kernel has dimension {nullbasis.shape[1]}, expected {n**4 - n*n}"
        )

    gram_n = dagger(nullbasis) @ gram @ nullbasis
    gram_n = 0.5 * (gram_n + dagger(gram_n))
    eigs, w = np.linalg.eigh(gram_n)
    gnorm = max(abs(eigs).max(initial=0.0), 0.0)
    if eigs.min(initial=0.0) < -GRAM_PSD_TOL * max(gnorm, 1e-300):
        raise GramNotPSD(
            f"restricted Gram form has eigenvalue {eigs.min():.3e} "
            f"< -{GRAM_PSD_TOL:.0e} * ||G||"
        )
    # Anchor the cutoff both to ||G|| (relative rank decision) and to the
    # assembly noise floor of the generator, so a numerically-zero L yields
    # an empty calculus instead of amplified rounding junk.
    cutoff = rank_tol * gnorm + 1e-13 * max(1.0, gen.L.norm)
    keep = eigs > cutoff
    dim_h = int(keep.sum())
    g_kept = eigs[keep]
    w_kept = w[:, keep]

    # class map (ambient -> H) and lift (H basis -> ambient representatives)
    class_map = (np.sqrt(g_kept)[:, None] * dagger(w_kept)) @ dagger(nullbasis)
    lift = nullbasis @ (w_kept / np.sqrt(g_kept)[None, :])

    class_t = class_map.reshape(dim_h, n, n, n, n)
    lift_t = lift.reshape(n, n, n, n, dim_h)
    pi_l = np.einsum("ipbcd,qbcdk->pqik", class_t, lift_t)
    pi_r = np.einsum("iabcq,abcpk->pqik", class_t, lift_t)

    # delta(E_ab) = sigma_{-i/4}(E_ab) (x) I - I (x) sigma_{i/4}(E_ab)
    qr = ctx.quarter_rho
    qi = ctx.inv_quarter_rho
    s_m4 = np.einsum("xa,by->abxy", qr, qi)  # sigma_{-i/4}(E_ab)
    s_p4 = np.einsum("xa,by->abxy", qi, qr)  # sigma_{+i/4}(E_ab)
    d6 = np.einsum("abxy,zw->abxyzw", s_m4, eye) - np.einsum(
        "xy,abzw->abxyzw", eye, s_p4
    )
    delta = np.einsum("iP,abP->abi", class_map, d6.reshape(n, n, n**4))

    # antilinear involution: A (x) B -> -B* (x) A*
    mj_lift = -np.conj(lift_t).transpose(3, 2, 1, 0, 4).reshape(n**4, dim_h)
    jmat = class_map @ mj_lift

    calc = FirstOrderCalculus(
        dim_h=dim_h,
        pi_l=pi_l,
        pi_r=pi_r,
        jmat=jmat,
        delta=delta,
        ctx=ctx,
        meta={
            "gram_eigs": eigs,
            "null_cutoff": cutoff,
            "ambient_dim": n**4,
            "constraint_dim": int(nullbasis.shape[1]),
            "vgen_kernel_defect": kernel_defect,
        },
    )

    form_h = np.einsum("abi,cdi->abcd", np.conj(delta), delta).reshape(n * n, n * n)
    form_l = kms_form_of_generator(gen)
    defect = np.abs(form_h - form_l).max()
    if defect > FORM_TOL * max(1.0, gen.L.norm):
        raise ReconstructionFailure(
            f"<delta(A), delta(B)> deviates from <A, L(B)>_rho by {defect:.3e}"
        )
    calc.meta["form_identity_defect"] = float(defect)
    return calc


def spanning_family(calc: FirstOrderCalculus) -> np.ndarray:
    """Matrix whose columns are pi_l(E_ab) delta(E_cd), indexed by
    ((a n + b) n + c) n + d."""
    n = calc.dim
    s = np.einsum("abik,cdk->iabcd", calc.pi_l, calc.delta)
    return s.reshape(calc.dim_h, n**4)


def calculus_invariants_report(
    calc: FirstOrderCalculus, gen: MarkovGenerator, tol: float = 1e-9
) -> Report:
    """Certify the defining properties of a first-order calculus:
    *-homomorphism / *-antihomomorphism structure of the commuting actions,
    compatibility of the antilinear involution, the twisted Leibniz rule,
    cyclicity of the delta-image under the left action, and the
    reconstruction of the generator form.

    All defects are maximal entrywise deviations over the full matrix-unit
    grid, evaluated with vectorized contractions.
    """
    n = calc.dim
    ctx = calc.ctx
    d = calc.dim_h
    rep = Report(name="calculus_invariants", tol=tol)
    scale = max(1.0, gen.L.norm)
    n2 = n * n

    pl = calc.pi_l.reshape(n2, d, d)
    pr = calc.pi_r.reshape(n2, d, d)
    pl_wide = calc.pi_l.transpose(2, 0, 1, 3).reshape(d, n2 * d)
    pr_wide = calc.pi_r.transpose(2, 0, 1, 3).reshape(d, n2 * d)

    def _maxabs(x) -> float:
        return float(np.abs(x).max(initial=0.0))

    hom = antihom = commute = j_twist = 0.0
    for a in range(n):
        for b in range(n):
            x = a * n + b
            # pi_l(E_ab) pi_l(E_cd) = delta_bc pi_l(E_ad)
            prod = (pl[x] @ pl_wide).reshape(d, n2, d).transpose(1, 0, 2)
            expect = np.zeros_like(prod)
            expect[b * n : (b + 1) * n] = calc.pi_l[a]
            hom = max(hom, _maxabs(prod - expect))
            # pi_r(E_ab) pi_r(E_cd) = delta_da pi_r(E_cb)
            prod_r = (pr[x] @ pr_wide).reshape(d, n2, d).transpose(1, 0, 2)
            expect_r = np.zeros_like(prod_r)
            expect_r.reshape(n, n, d, d)[:, a] = calc.pi_r[:, b]
            antihom = max(antihom, _maxabs(prod_r - expect_r))
            # [pi_l(E_ab), pi_r(E_cd)] = 0
            lr = (pl[x] @ pr_wide).reshape(d, n2, d).transpose(1, 0, 2)
            rl = (pr.reshape(n2 * d, d) @ pl[x]).reshape(n2, d, d)
            commute = max(commute, _maxabs(lr - rl))
            # J pi_l(A) pi_r(B) conj = pi_l(B)* pi_r(A)* J
            lhs = (calc.jmat @ np.conj(pl[x] @ pr_wide)).reshape(d, n2, d).transpose(1, 0, 2)
            t = dagger(pr[x]) @ calc.jmat
            rhs = (np.conj(pl.transpose(0, 2, 1)).reshape(n2 * d, d) @ t).reshape(n2, d, d)
            j_twist = max(j_twist, _maxabs(lhs - rhs))

    adj = max(
        _maxabs(np.conj(calc.pi_l.transpose(0, 1, 3, 2)) - calc.pi_l.transpose(1, 0, 2, 3)),
        _maxabs(np.conj(calc.pi_r.transpose(0, 1, 3, 2)) - calc.pi_r.transpose(1, 0, 2, 3)),
    )
    unital = max(
        _maxabs(np.einsum("aaij->ij", calc.pi_l) - np.eye(d)),
        _maxabs(np.einsum("aaij->ij", calc.pi_r) - np.eye(d)),
    )
    rep.checks.append(Check("pi_l_homomorphism_defect", hom, tol * scale, "le"))
    rep.checks.append(Check("pi_r_antihomomorphism_defect", antihom, tol * scale, "le"))
    rep.checks.append(Check("actions_commute_defect", commute, tol * scale, "le"))
    rep.checks.append(Check("star_compatibility_defect", adj, tol * scale, "le"))
    rep.checks.append(Check("unitality_defect", unital, tol * scale, "le"))

    j_unitary = _maxabs(dagger(calc.jmat) @ calc.jmat - np.eye(d))
    j_invol = _maxabs(calc.jmat @ np.conj(calc.jmat) - np.eye(d))
    rep.checks.append(Check("j_antiunitary_defect", j_unitary, tol * scale, "le"))
    rep.checks.append(Check("j_involution_defect", j_invol, tol * scale, "le"))
    rep.checks.append(Check("j_bimodule_twist_defect", j_twist, tol * scale, "le"))

    # delta(A*) = J delta(A)
    j_delta = _maxabs(
        calc.delta.transpose(1, 0, 2)
        - np.einsum("ij,abj->abi", calc.jmat, np.conj(calc.delta))
    )
    rep.checks.append(Check("j_delta_defect", j_delta, tol * scale, "le"))

    # twisted Leibniz rule delta(E_ab E_cd) = pi_l(sigma_{-i/4}(E_ab)) delta(E_cd)
    #                                        + pi_r(sigma_{+i/4}(E_cd)) delta(E_ab)
    qr = ctx.quarter_rho
    qi = ctx.inv_quarter_rho
    s_m4 = np.einsum("xa,by->abxy", qr, qi)
    s_p4 = np.einsum("xa,by->abxy", qi, qr)
    pl_s = np.einsum("abxy,xyij->abij", s_m4, calc.pi_l)
    pr_s = np.einsum("abxy,xyij->abij", s_p4, calc.pi_r)
    rhs = np.einsum("abij,cdj->abcdi", pl_s, calc.delta) + np.einsum(
        "cdij,abj->abcdi", pr_s, calc.delta
    )
    lhs = np.zeros_like(rhs)
    for b in range(n):
        lhs[:, b, b, :, :] = calc.delta[:, :, :]
    rep.checks.append(Check("twisted_leibniz_defect", _maxabs(lhs - rhs), tol * scale, "le"))

    # cyclicity: pi_l(A) delta(B) spans H
    if d > 0:
        sv = np.linalg.svd(spanning_family(calc), compute_uv=False)
        rank = int((sv > NULL_CUTOFF * sv.max(initial=0.0)).sum())
    else:
        rank = 0
    rep.checks.append(Check("cyclic_rank_deficit", float(calc.dim_h - rank), 0.0, "le"))

    form_h = np.einsum("abi,cdi->abcd", np.conj(calc.delta), calc.delta).reshape(n2, n2)
    form_defect = float(np.abs(form_h - kms_form_of_generator(gen)).max())
    rep.checks.append(Check("form_identity_defect", form_defect, FORM_TOL * scale, "le"))
    return rep


def commutator_form_matrix(family: CommutatorFamily, ctx: DensityContext, n: int) -> np.ndarray:
    """The matrix sum_j <[V_j, E_ab], [V_j, E_cd]>_rho over matrix-unit pairs
    (row-major unit labels)."""
    from .superop import kms_gram

    perm = _unit_perm(n)
    gk = kms_gram(ctx)
    rhs = np.zeros((n * n, n * n), dtype=complex)
    for v in family.ops:
        k = lmul(v).mat - rmul(v).mat  # columns are vec([V, E]) in vec order
        rhs += dagger(k) @ gk @ k
    return rhs[np.ix_(perm, perm)]


def verify_commutator_form(
    family: CommutatorFamily, gen: MarkovGenerator, tol: float = COMMUTATOR_FORM_TOL
) -> Report:
    """Evaluate <A, L(B)>_rho against sum_j <[V_j, A], [V_j, B]>_rho on all
    matrix-unit pairs; the deviation matrix is attached to the report."""
    lhs = kms_form_of_generator(gen)
    rhs = commutator_form_matrix(family, gen.ctx, gen.dim)
    dev = np.abs(lhs - rhs)
    rep = Report(name="commutator_form", tol=tol)
    rep.checks.append(
        Check("max_form_deviation", float(dev.max(initial=0.0)), tol * max(1.0, gen.L.norm), "le")
    )
    rep.metrics["deviation_matrix"] = dev
    rep.metrics["family_size"] = len(family)
    return rep


def _close_under_adjoints(ops: list[np.ndarray], pair_tol: float) -> CommutatorFamily:
    """Return an adjoint-closed family.

    If the raw family already pairs off within pair_tol (detected by nearest
    adjoint matching), the pairing is made exact by replacing the partner
    with the literal adjoint (Hermitian average for fixed points); otherwise
    the family is doubled as {V_j/sqrt2} + {V_j*/sqrt2}, which leaves the
    quadratic form unchanged.
    """
    if not ops:
        return CommutatorFamily(ops=(), pairing=())
    m = len(ops)
    scale = max(max(opnorm(v) for v in ops), 1e-300)
    pairing = [-1] * m
    matched = True
    for j in range(m):
        if pairing[j] >= 0:
            continue
        target = dagger(ops[j])
        best, best_dist = -1, np.inf
        for k in range(m):
            if pairing[k] >= 0 and k != j:
                continue
            dist = opnorm(target - ops[k])
            if dist < best_dist:
                best, best_dist = k, dist
        if best < 0 or best_dist > pair_tol * scale:
            matched = False
            break
        pairing[j] = best
        pairing[best] = j

    if matched and all(p >= 0 for p in pairing):
        exact = list(ops)
        for j in range(m):
            k = pairing[j]
            if k == j:
                exact[j] = 0.5 * (ops[j] + dagger(ops[j]))
            elif k > j:
                exact[k] = dagger(exact[j])
        return CommutatorFamily(ops=tuple(exact), pairing=tuple(pairing))

    inv_sqrt2 = 1.0 / np.sqrt(2.0)
    doubled = [inv_sqrt2 * v for v in ops] + [inv_sqrt2 * dagger(v) for v in ops]
    # make the halves exact mutual adjoints at the bit level
    doubled = [np.asarray(v) for v in doubled]
    for j in range(m):
        doubled[m + j] = dagger(doubled[j])
    pairing = list(range(m, 2 * m)) + list(range(m))
    return CommutatorFamily(ops=tuple(doubled), pairing=tuple(pairing))


def extract_commutators_gns(
    calc: FirstOrderCalculus, gen: MarkovGenerator, tol: float = COMMUTATOR_FORM_TOL
) -> CommutatorFamily:
    """Read the commutator family off the GNS calculus.

    The bimodule is a multiple of the standard M_n bimodule; the multiplicity
    space is the range of the minimal projection pi_l(F_11) pi_r(F_11) built
    from the matrix units of rho's eigenbasis.  Component derivations are
    untwisted with rho^{-1/4} and each V_j is recovered by
    V_j = sum_a d_j(E_a1) E_1a (fixing the additive-identity gauge).
    """
    ctx = calc.ctx
    n = calc.dim
    if calc.dim_h == 0:
        fam = CommutatorFamily(ops=(), pairing=())
        rep = verify_commutator_form(fam, gen, tol=tol)
        if not rep.passed:
            raise CertificationFailed("empty family fails nonzero form", rep)
        return fam

    if calc.dim_h % (n * n):
        raise NonIntegralMultiplicity(
            f"dim H = {calc.dim_h} is not a multiple of n^2 = {n*n}"
        )
    mult = calc.dim_h // (n * n)

    u = ctx.u
    f_units = np.einsum("xa,yb->abxy", u, np.conj(u))  # F_ab = U E_ab U*
    p_l = calc.pi_l_of(f_units[0, 0])
    p_r = calc.pi_r_of(f_units[0, 0])
    proj = p_l @ p_r
    tr = float(np.real(np.trace(proj)))
    if abs(tr - mult) > 0.01:
        raise NonIntegralMultiplicity(
            f"rank of the minimal bimodule projection is {tr:.6f}, expected {mult}"
        )
    w, vecs = np.linalg.eigh(0.5 * (proj + dagger(proj)))
    eta = vecs[:, w > 0.5]
    if eta.shape[1] != mult:
        raise NonIntegralMultiplicity(
            f"projection rank {eta.shape[1]} disagrees with multiplicity {mult}"
        )

    # orthonormal coordinate vectors F_ab (x) xi_j = pi_l(F_a1) pi_r(F_1b) eta_j
    basis_vectors = np.empty((n, n, calc.dim_h, mult), dtype=complex)
    pl_a = [calc.pi_l_of(f_units[a, 0]) for a in range(n)]
    pr_b = [calc.pi_r_of(f_units[0, b]) for b in range(n)]
    for a in range(n):
        for b in range(n):
            basis_vectors[a, b] = pl_a[a] @ (pr_b[b] @ eta)

    qi = ctx.inv_quarter_rho
    # delta components on every matrix unit, expressed in the F basis:
    # coeff[j, a, b, c, d] = < F_ab (x) xi_j, delta(E_cd) >_H
    coeff = np.einsum("abij,cdi->jabcd", np.conj(basis_vectors), calc.delta)
    comp = np.einsum("jabcd,abxy->jcdxy", coeff, f_units)  # delta_j(E_cd) as matrices

    ops = []
    worst = 0.0
    units = [_unit(n, a, b) for a in range(n) for b in range(n)]
    for j in range(mult):
        dj = {}
        for c in range(n):
            for dd in range(n):
                dj[c * n + dd] = qi @ comp[j, c, dd] @ qi
        v = np.zeros((n, n), dtype=complex)
        for a in range(n):
            v[:, a] = dj[a * n + 0][:, 0]
        for idx, e in enumerate(units):
            worst = max(worst, hsnorm(dj[idx] - (v @ e - e @ v)))
        ops.append(v)
    vscale = max(1.0, max((opnorm(v) for v in ops), default=0.0))
    if worst > 1e-7 * vscale:
        raise DerivationRecoveryFailure(
            f"component derivations deviate from commutators by {worst:.3e}"
        )

    fam = _close_under_adjoints(ops, pair_tol=1e-10)
    rep = verify_commutator_form(fam, gen, tol=tol)
    if not rep.passed:
        raise CertificationFailed("extracted family fails the form identity", rep)
    return fam


def xi_map(gen: MarkovGenerator, psi: Superoperator) -> Superoperator:
    """Xi(A) = rho^{1/4} Pv(rho^{-1/4} A rho^{-1/4}) rho^{1/4} with Pv the
    V-transform of Psi; symmetric for the trace pairing."""
    ctx = gen.ctx
    psi_check = v_transform(psi, ctx)
    qr = ctx.quarter_rho
    qi = ctx.inv_quarter_rho
    mat = np.kron(qr.T, qr) @ psi_check.mat @ np.kron(qi.T, qi)
    return Superoperator(mat, gen.dim, psi.level)


def extract_commutators_kraus(
    gen: MarkovGenerator,
    psi: Superoperator | None = None,
    tol: float = COMMUTATOR_FORM_TOL,
    rank_tol: float = 1e-10,
) -> CommutatorFamily:
    """Extract the commutator family through the Kraus decomposition of Xi.

    If no Psi is supplied, one is recovered from the generator; infeasible
    recovery aborts with InconsistentPsi rather than guessing.  The raw Kraus
    operators of Xi carry twice the generator form (the W-average of the two
    modular rotations contributes a factor 1/2), so the family is normalized
    by 1/sqrt(2) before adjoint closure.
    """
    ctx = gen.ctx
    n = gen.dim
    if psi is None:
        try:
            psi, _ = recover_cp_from_generator(gen)
        except Infeasible as exc:
            raise InconsistentPsi(
                "no admissible completely positive map could be recovered"
            ) from exc
    m = psi.apply(np.eye(n))
    m = 0.5 * (m + dagger(m))
    k = modular_resolvent(ctx, m, +0.5)
    rebuilt = lmul(k) + rmul(dagger(k)) - psi
    defect = opnorm(rebuilt.mat - gen.L.mat)
    if defect > 1e-8 * max(1.0, gen.L.norm):
        raise InconsistentPsi(
            f"Psi does not reproduce the generator (residual {defect:.3e})"
        )

    xi = xi_map(gen, psi)
    # trace symmetry tr(A Xi(B)) = tr(Xi(A) B)
    t2 = np.zeros((n * n, n * n), dtype=complex)
    for c in range(n):
        for d in range(n):
            x = unvec(xi.mat[:, d * n + c], n)
            for a in range(n):
                for b in range(n):
                    t2[a * n + b, c * n + d] = x[b, a]
    sym_defect = np.abs(t2 - t2.T).max()
    if sym_defect > 1e-8 * max(1.0, xi.norm):
        raise InconsistentPsi(
            f"Xi is not symmetric for the trace pairing (defect {sym_defect:.3e})"
        )

    raw = kraus_from_choi(choi(xi), rank_tol=rank_tol)
    normalized = [v / np.sqrt(2.0) for v in raw]
    fam = _close_under_adjoints(normalized, pair_tol=1e-10)
    rep = verify_commutator_form(fam, gen, tol=tol)
    if not rep.passed:
        raise CertificationFailed("Kraus-route family fails the form identity", rep)
    return fam


def commutator_calculus(
    family: CommutatorFamily, gen: MarkovGenerator, rank_tol: float = NULL_CUTOFF
) -> FirstOrderCalculus:
    """Assemble the calculus carried by a commutator family on M_n (x) C^N,
    with delta(A)_j = rho^{1/4} [V_j, A] rho^{1/4}, then trim to the cyclic
    sub-bimodule generated by the delta-image so the spanning property holds.
    """
    ctx = gen.ctx
    n = gen.dim
    nf = len(family)
    if nf == 0:
        return FirstOrderCalculus(
            dim_h=0,
            pi_l=np.zeros((n, n, 0, 0), dtype=complex),
            pi_r=np.zeros((n, n, 0, 0), dtype=complex),
            jmat=np.zeros((0, 0), dtype=complex),
            delta=np.zeros((n, n, 0), dtype=complex),
            ctx=ctx,
            meta={"family_size": 0},
        )
    qr = ctx.quarter_rho
    dim_full = n * n * nf

    units = [_unit(n, a, b) for a in range(n) for b in range(n)]
    delta_full = np.zeros((n, n, dim_full), dtype=complex)
    for a in range(n):
        for b in range(n):
            e = units[a * n + b]
            for j, v in enumerate(family.ops):
                block = qr @ (v @ e - e @ v) @ qr
                delta_full[a, b, j * n * n : (j + 1) * n * n] = vec(block)

    eye_f = np.eye(nf)
    pi_l_full = np.empty((n, n, dim_full, dim_full), dtype=complex)
    pi_r_full = np.empty((n, n, dim_full, dim_full), dtype=complex)
    for a in range(n):
        for b in range(n):
            e = units[a * n + b]
            pi_l_full[a, b] = np.kron(eye_f, lmul(e).mat)
            pi_r_full[a, b] = np.kron(eye_f, rmul(e).mat)

    # transpose permutation on vec coordinates
    pt = np.zeros((n * n, n * n))
    for i in range(n):
        for j in range(n):
            pt[j * n + i, i * n + j] = 1.0
    perm = np.zeros((nf, nf))
    for j, jstar in enumerate(family.pairing):
        perm[jstar, j] = 1.0
    jmat_full = -np.kron(perm, pt)

    # cyclic subspace spanned by pi_l(E_ab) delta(E_cd)
    span = np.einsum("abik,cdk->iabcd", pi_l_full, delta_full).reshape(dim_full, n**4)
    if np.abs(span).max(initial=0.0) == 0.0:
        q = np.zeros((dim_full, 0))
    else:
        uu, sv, _ = np.linalg.svd(span, full_matrices=False)
        q = uu[:, sv > rank_tol * sv.max()]
    dim_h = q.shape[1]

    qd = dagger(q)
    pi_l = (qd @ pi_l_full.reshape(n * n, dim_full, dim_full) @ q).reshape(n, n, dim_h, dim_h)
    pi_r = (qd @ pi_r_full.reshape(n * n, dim_full, dim_full) @ q).reshape(n, n, dim_h, dim_h)
    delta = np.einsum("ji,abj->abi", np.conj(q), delta_full)
    jmat = qd @ jmat_full @ np.conj(q)

    proj_out = np.eye(dim_full) - q @ qd
    leak = float(
        np.abs(proj_out @ (pi_l_full.reshape(n * n, dim_full, dim_full) @ q)).max(initial=0.0)
    )
    return FirstOrderCalculus(
        dim_h=dim_h,
        pi_l=pi_l,
        pi_r=pi_r,
        jmat=jmat,
        delta=delta,
        ctx=ctx,
        meta={"family_size": nf, "full_dim": dim_full, "compression_leak": float(leak)},
    )


def inner_vector(calc: FirstOrderCalculus, ctx: DensityContext | None = None):
    """Least-squares solution of the innerness equation

        delta(A) = pi_l(sigma_{-i/4}(A)) xi0 - pi_r(sigma_{+i/4}(A)) xi0

    over all matrix units A.  Returns (xi0, residual); the residual is
    relative to the total norm of the delta image (absolute when the image
    vanishes) and is guaranteed to be tiny in finite dimension, where every
    such derivation is inner.
    """
    ctx = calc.ctx if ctx is None else ctx
    n = calc.dim
    d = calc.dim_h
    if d == 0:
        return np.zeros(0, dtype=complex), 0.0
    rows = []
    rhs = []
    for a in range(n):
        for b in range(n):
            e = _unit(n, a, b)
            m = calc.pi_l_of(sigma_z(ctx, -0.25j, e)) - calc.pi_r_of(sigma_z(ctx, 0.25j, e))
            rows.append(m)
            rhs.append(calc.delta[a, b])
    a_stack = np.vstack(rows)
    b_stack = np.concatenate(rhs)
    xi0, *_ = np.linalg.lstsq(a_stack, b_stack, rcond=None)
    resid = np.linalg.norm(a_stack @ xi0 - b_stack)
    denom = np.linalg.norm(b_stack)
    return xi0, float(resid / denom if denom > 0 else resid)


def uniqueness_witness(
    calc_a: FirstOrderCalculus,
    calc_b: FirstOrderCalculus,
    gen: MarkovGenerator,
    tol: float = 1e-6,
):
    """Witness that two calculi of the same generator are isomorphic.

    The candidate intertwiner maps the spanning family pi_l(E_ab) delta(E_cd)
    of one calculus onto the other's.  Gram agreement of the two spanning
    families is exactly the isometry condition and is checked first (raising
    GramMismatch with the worst entry); the returned report certifies that
    the induced map intertwines both actions, the involutions and the
    derivations.  Returns (theta, report).
    """
    n = gen.dim
    sa = spanning_family(calc_a)
    sb = spanning_family(calc_b)
    ga = dagger(sa) @ sa
    gb = dagger(sb) @ sb
    dev = np.abs(ga - gb)
    max_dev = float(dev.max(initial=0.0))
    if max_dev > tol * max(1.0, np.abs(ga).max(initial=0.0)):
        idx = np.unravel_index(np.argmax(dev), dev.shape)
        raise GramMismatch(
            f"spanning-family Gram matrices deviate by {max_dev:.3e} at {idx}",
            max_deviation=max_dev,
            index=tuple(int(i) for i in idx),
        )

    theta = sb @ np.linalg.pinv(sa, rcond=1e-12)
    rep = Report(name="uniqueness_witness", tol=tol)
    rep.checks.append(Check("gram_mismatch_max", max_dev, tol * max(1.0, np.abs(ga).max(initial=0.0)), "le"))
    rep.checks.append(Check("spanning_map_defect", float(np.abs(theta @ sa - sb).max(initial=0.0)), tol, "le"))

    pl_dev = 0.0
    pr_dev = 0.0
    for a in range(n):
        for b in range(n):
            pl_dev = max(pl_dev, np.abs(theta @ (calc_a.pi_l[a, b] @ sa) - calc_b.pi_l[a, b] @ (theta @ sa)).max(initial=0.0))
            pr_dev = max(pr_dev, np.abs(theta @ (calc_a.pi_r[a, b] @ sa) - calc_b.pi_r[a, b] @ (theta @ sa)).max(initial=0.0))
    rep.checks.append(Check("pi_l_intertwine_defect", float(pl_dev), tol, "le"))
    rep.checks.append(Check("pi_r_intertwine_defect", float(pr_dev), tol, "le"))

    j_dev = np.abs(theta @ (calc_a.jmat @ np.conj(sa)) - calc_b.jmat @ np.conj(theta @ sa)).max(initial=0.0)
    rep.checks.append(Check("j_intertwine_defect", float(j_dev), tol, "le"))

    d_dev = 0.0
    for a in range(n):
        for b in range(n):
            d_dev = max(d_dev, np.linalg.norm(theta @ calc_a.delta[a, b] - calc_b.delta[a, b]))
    rep.checks.append(Check("delta_match_defect", float(d_dev), tol, "le"))
    rep.metrics.update({"dim_h_a": calc_a.dim_h, "dim_h_b": calc_b.dim_h})
    return theta, rep


def leibniz_bilinear_residual(calc: FirstOrderCalculus, a, b, c) -> float:
    """Residual of the six-term bilinear identity satisfied by any bounded
    first-order calculus, evaluated on standard-form vectors a, b, c:

        <d(D^{1/4}a) . D^{1/4}b, d(D^{-1/4}c)> + <d(D^{-1/4}a) . D^{-1/4}b, d(D^{1/4}c)>
      = <d(D^{-1/4}(a.b)), d(D^{1/4}c)> + <d(D^{1/4}a), d((D^{-1/4}c) . J(D^{-1/4}b))>
        - <d(J(D^{1/4}c) . (D^{1/4}a)), d(J(D^{-1/4}b))>

    where D^s is the modular flow on vectors, dots are the standard-form
    products, and the right action of a vector y is pi_r(rho^{-1/2} y).
    """
    ctx = calc.ctx

    def dpow(s, x):
        return ctx.power(s) @ x @ ctx.power(-s)

    def dl2(x):
        return calc.delta_of(descend(ctx, x))

    def right_act(xi, y):
        return calc.pi_r_of(right_bounded_rep(ctx, y)) @ xi

    def ip(x, y):
        return complex(np.vdot(x, y))

    a = as_matrix(a, calc.dim)
    b = as_matrix(b, calc.dim)
    c = as_matrix(c, calc.dim)
    prod = lambda x, y: hilbert_algebra_product(ctx, x, y)
    jj = dagger

    lhs = ip(right_act(dl2(dpow(0.25, a)), dpow(0.25, b)), dl2(dpow(-0.25, c))) + ip(
        right_act(dl2(dpow(-0.25, a)), dpow(-0.25, b)), dl2(dpow(0.25, c))
    )
    rhs = (
        ip(dl2(dpow(-0.25, prod(a, b))), dl2(dpow(0.25, c)))
        + ip(dl2(dpow(0.25, a)), dl2(prod(dpow(-0.25, c), jj(dpow(-0.25, b)))))
        - ip(dl2(prod(jj(dpow(0.25, c)), dpow(0.25, a))), dl2(jj(dpow(-0.25, b))))
    )
    scale = max(1.0, abs(lhs), abs(rhs))
    return float(abs(lhs - rhs) / scale)
