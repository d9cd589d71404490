import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import kmsflow as kf
from kmsflow.errors import InsufficientRange
from kmsflow.matrix_core import dagger, opnorm
from kmsflow.superop import superop_exp
from kmsflow.vtransform import (
    delta_superop,
    markov_preservation_check,
    modular_spectrum,
    v_transform_cptp_certificate,
    v_transform_quadrature,
)

from conftest import cached_generator, rng_matrix


def random_superop(seed, n, level="l2"):
    rng = np.random.default_rng(seed)
    return kf.Superoperator(rng_matrix(rng, n * n), n, level)


class TestModularSpectrum:
    def test_eigenvalue_reciprocity(self, ctx2):
        lam = modular_spectrum(ctx2).lam
        n = 2
        for a in range(n):
            for b in range(n):
                assert abs(lam[b * n + a] * lam[a * n + b] - 1.0) < 1e-15

    def test_basis_diagonalizes_delta(self, ctx2):
        spec = modular_spectrum(ctx2)
        d = delta_superop(ctx2)
        diag = dagger(spec.basis) @ d.mat @ spec.basis
        np.testing.assert_allclose(diag, np.diag(spec.lam), atol=1e-12)


class TestWTransform:
    def test_identity_fixed(self, ctx2):
        s = kf.identity_superop(2, "l2")
        np.testing.assert_allclose(kf.w_transform(s, ctx2).mat, s.mat, atol=1e-14)

    def test_commuting_with_delta_unchanged(self, ctx2):
        s = delta_superop(ctx2, power=0.25)
        np.testing.assert_allclose(kf.w_transform(s, ctx2).mat, s.mat, atol=1e-12)

    def test_lmul_unit_scaling(self, ctx2):
        # sigma_{+-i/4}(E12) = 3^{-+1/4} E12, so W(lmul(E12)) scales by
        # (3^{1/4} + 3^{-1/4})/2
        e12 = np.array([[0.0, 1.0], [0.0, 0.0]])
        s = kf.lmul(e12)
        expect = 0.5 * (3.0**0.25 + 3.0**-0.25)
        np.testing.assert_allclose(
            kf.w_transform(s, ctx2).mat, expect * s.mat, atol=1e-13
        )


class TestVTransform:
    def test_identity_fixed(self, ctx2):
        s = kf.identity_superop(2, "l2")
        np.testing.assert_allclose(kf.v_transform(s, ctx2).mat, s.mat, atol=1e-14)

    def test_tracial_is_identity_exactly(self, ctx_tracial2):
        s = random_superop(0, 2)
        assert opnorm(kf.v_transform(s, ctx_tracial2).mat - s.mat) <= 1e-12 * s.norm

    def test_matrix_element_scaling(self, ctx2):
        # coupling between Delta-eigenvalues 3 and 1/3 is scaled by
        # 2/(3^{1/2} + 3^{-1/2}) = sqrt(3)/2
        spec = modular_spectrum(ctx2)
        i3 = int(np.argmin(np.abs(spec.lam - 3.0)))
        i13 = int(np.argmin(np.abs(spec.lam - 1.0 / 3.0)))
        m = np.zeros((4, 4), dtype=complex)
        m[i3, i13] = 1.0
        s = kf.Superoperator(spec.basis @ m @ dagger(spec.basis), 2, "l2")
        v = kf.v_transform(s, ctx2)
        np.testing.assert_allclose(v.mat, (np.sqrt(3) / 2) * s.mat, atol=1e-13)

    @given(st.integers(0, 10_000), st.sampled_from([2, 3, 4]))
    @settings(max_examples=20)
    def test_inverse_pair(self, seed, n):
        gen, _ = cached_generator(n, 0)
        s = random_superop(seed, n)
        wv = kf.w_transform(kf.v_transform(s, gen.ctx), gen.ctx)
        vw = kf.v_transform(kf.w_transform(s, gen.ctx), gen.ctx)
        assert opnorm(wv.mat - s.mat) <= 1e-10 * s.norm
        assert opnorm(vw.mat - s.mat) <= 1e-10 * s.norm

    def test_contraction(self):
        gen, _ = cached_generator(3, 1)
        for seed in range(5):
            s = random_superop(seed, 3)
            assert kf.v_transform(s, gen.ctx).norm <= s.norm * (1 + 1e-12)

    def test_key_property(self):
        # (<D^{1/4} xi, Tv D^{-1/4} eta> + <D^{-1/4} xi, Tv D^{1/4} eta>)/2
        #   = <xi, T eta>
        gen, _ = cached_generator(2, 2)
        ctx = gen.ctx
        s = random_superop(3, 2)
        v = kf.v_transform(s, ctx)
        dp = delta_superop(ctx, power=0.25).mat
        dm = delta_superop(ctx, power=-0.25).mat
        rng = np.random.default_rng(4)
        for _ in range(10):
            xi = rng.standard_normal(4) + 1j * rng.standard_normal(4)
            eta = rng.standard_normal(4) + 1j * rng.standard_normal(4)
            lhs = 0.5 * (
                np.vdot(dp @ xi, v.mat @ (dm @ eta))
                + np.vdot(dm @ xi, v.mat @ (dp @ eta))
            )
            rhs = np.vdot(xi, s.mat @ eta)
            assert abs(lhs - rhs) < 1e-9 * max(1.0, abs(rhs))

    def test_j_commutation_preserved(self, ctx2):
        # build a J-commuting map (Hermiticity-preserving) and check Tv stays so
        rng = np.random.default_rng(5)
        k = rng_matrix(rng, 2)
        s = kf.Superoperator(np.kron(k.conj(), k), 2, "l2")  # X -> k X k*

        def j_defect(t):
            worst = 0.0
            for a in range(2):
                for b in range(2):
                    e = np.zeros((2, 2), complex)
                    e[a, b] = 1.0
                    worst = max(worst, opnorm(t.apply(dagger(e)) - dagger(t.apply(e))))
            return worst

        assert j_defect(s) < 1e-13
        assert j_defect(kf.v_transform(s, ctx2)) < 1e-12

    def test_cyclic_vector_fixed(self):
        gen, _ = cached_generator(2, 6)
        t = superop_exp(gen.L2, 0.9)
        tv = kf.v_transform(t, gen.ctx)
        s = gen.ctx.sqrt_rho
        assert np.linalg.norm(tv.apply(s) - s) < 1e-10


class TestQuadratureOracle:
    def test_identity(self, ctx2):
        s = kf.identity_superop(2, "l2")
        q, info = v_transform_quadrature(s, ctx2, steps=400000)
        assert opnorm(q.mat - s.mat) < 1e-8
        assert info["tail_bound"] < 1e-8

    def test_matches_closed_form(self, ctx2):
        s = random_superop(7, 2)
        v = kf.v_transform(s, ctx2)
        q, info = v_transform_quadrature(s, ctx2, steps=200000)
        assert opnorm(q.mat - v.mat) < 1e-6
        assert info["tail_bound"] < 1e-8
        assert info["step_doubling_diff"] < 1e-5

    def test_tail_insensitive_to_doubled_range(self, ctx2):
        s = random_superop(8, 2)
        q1, info = v_transform_quadrature(s, ctx2, steps=100000)
        q2, _ = v_transform_quadrature(s, ctx2, r_max=2 * info["r_max"], steps=200000)
        # doubling the range (same step size) only moves the truncated tail
        assert opnorm(q1.mat - q2.mat) < 1e-10

    def test_alternative_integral_inverted_delta(self, ctx2):
        # the representation with Delta -> Delta^{-1} carries the same
        # prefactor 2; agreement with the closed form pins the constant
        s = random_superop(9, 2)
        v = kf.v_transform(s, ctx2)
        q, _ = v_transform_quadrature(s, ctx2, steps=200000, invert_delta=True)
        assert opnorm(q.mat - v.mat) < 1e-6

    def test_rejects_insufficient_range(self, ctx2):
        s = random_superop(10, 2)
        with pytest.raises(InsufficientRange):
            v_transform_quadrature(s, ctx2, r_max=1.0, steps=2000)

    def test_rejects_ill_conditioned(self):
        ctx = kf.DensityContext.from_rho(np.diag([1 - 1e-8, 1e-8]))
        s = random_superop(11, 2)
        with pytest.raises(InsufficientRange):
            v_transform_quadrature(s, ctx, steps=2000)

    def test_rejects_too_few_steps(self, ctx2):
        with pytest.raises(ValueError):
            v_transform_quadrature(kf.identity_superop(2, "l2"), ctx2, steps=100)


class TestCptpCertificate:
    def test_tracial_trivial(self, ctx_tracial2):
        rep = v_transform_cptp_certificate(ctx_tracial2)
        assert rep.passed
        assert rep.check("min_choi_eig").value > -1e-14

    def test_nontracial_n2(self, ctx2):
        rep = v_transform_cptp_certificate(ctx2)
        assert rep.passed
        assert rep.check("min_choi_eig").value >= -1e-10

    def test_choi_skipped_for_large_n(self):
        gen, _ = cached_generator(4, 3)
        rep = v_transform_cptp_certificate(gen.ctx)
        assert rep.passed
        assert "choi_skipped" in rep.metrics


class TestMarkovPreservation:
    def test_identity(self, ctx2):
        assert markov_preservation_check(kf.identity_superop(2, "l2"), ctx2).passed

    @pytest.mark.parametrize("seed", range(5))
    def test_seeded_markov_operators(self, seed):
        ctx, t = kf.random_markov_operator(2, seed)
        rep = markov_preservation_check(t, ctx)
        assert rep.passed

    def test_precondition_gate(self):
        ctx, t = kf.random_markov_operator(2, 12)
        skew = kf.Superoperator(t.mat + 0.2j * np.eye(4), 2, "l2")
        rep = markov_preservation_check(skew, ctx)
        assert not rep.passed
        assert rep.metrics["transformed"] == "skipped (precondition failed)"
