import numpy as np
import pytest
from hypothesis import given, strategies as st

import kmsflow as kf
from kmsflow.errors import (
    EmptyKrausList,
    NotHermiticityPreserving,
    NotPSD,
    UnitalityViolated,
    WrongLevel,
)
from kmsflow.matrix_core import dagger, opnorm
from kmsflow.superop import (
    choi,
    from_kraus,
    kms_gram,
    kraus_from_choi,
    superop_from_choi,
    unvec,
    vec,
)

from conftest import rng_matrix

SX = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)


def transpose_superop(n, level="algebra"):
    mat = np.zeros((n * n, n * n), dtype=complex)
    for i in range(n):
        for j in range(n):
            mat[i * n + j, j * n + i] = 1.0
    return kf.Superoperator(mat, n, level)


def depolarizing(n):
    """X -> tr(X) I / n"""
    omega = vec(np.eye(n))
    return kf.Superoperator(np.outer(omega, omega) / n, n)


class TestBasicMaps:
    def test_vec_convention(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_allclose(vec(x), [1, 3, 2, 4])
        np.testing.assert_allclose(unvec(vec(x)), x)

    def test_lmul(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_allclose(
            kf.lmul(np.diag([1.0, 0.0])).apply(x), [[1, 2], [0, 0]]
        )

    def test_rmul(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_allclose(
            kf.rmul(np.diag([1.0, 0.0])).apply(x), [[1, 0], [3, 0]]
        )

    def test_lmul_rmul_commute(self):
        rng = np.random.default_rng(0)
        a, b = rng_matrix(rng, 3), rng_matrix(rng, 3)
        lhs = kf.lmul(a) @ kf.rmul(b)
        rhs = kf.rmul(b) @ kf.lmul(a)
        np.testing.assert_allclose(lhs.mat, rhs.mat, atol=1e-13)

    def test_from_kraus_identity(self):
        s = from_kraus([np.eye(2)])
        np.testing.assert_allclose(s.mat, np.eye(4), atol=1e-15)

    def test_from_kraus_sigma_x(self):
        s = from_kraus([SX])
        np.testing.assert_allclose(s.apply(np.diag([1.0, 0.0])), np.diag([0.0, 1.0]))

    def test_from_kraus_empty(self):
        with pytest.raises(EmptyKrausList):
            from_kraus([])

    def test_level_mismatch_raises(self):
        a = kf.identity_superop(2, "algebra")
        b = kf.identity_superop(2, "l2")
        with pytest.raises(WrongLevel):
            a @ b


class TestChoiKraus:
    def test_choi_of_identity(self):
        c = choi(kf.identity_superop(2))
        omega = vec(np.eye(2))
        np.testing.assert_allclose(c, np.outer(omega, omega.conj()), atol=1e-15)

    def test_choi_of_depolarizing(self):
        # evaluating X -> tr(X) I/n on matrix units gives Choi = I/n
        c = choi(depolarizing(3))
        np.testing.assert_allclose(c, np.eye(9) / 3, atol=1e-14)

    def test_choi_linearity(self):
        rng = np.random.default_rng(1)
        s = kf.Superoperator(rng_matrix(rng, 4), 2)
        t = kf.Superoperator(rng_matrix(rng, 4), 2)
        alpha = 0.7 - 0.2j
        np.testing.assert_array_equal(
            choi(alpha * s + t), alpha * choi(s) + choi(t)
        )

    def test_choi_round_trip(self):
        rng = np.random.default_rng(2)
        s = kf.Superoperator(rng_matrix(rng, 9), 3)
        np.testing.assert_allclose(superop_from_choi(choi(s)).mat, s.mat, atol=1e-15)

    @given(st.integers(0, 10_000))
    def test_kraus_round_trip_cp(self, seed):
        rng = np.random.default_rng(seed)
        s = from_kraus([rng_matrix(rng, 2), rng_matrix(rng, 2)])
        ops = kraus_from_choi(choi(s))
        np.testing.assert_allclose(
            from_kraus(ops).mat, s.mat, atol=1e-9 * max(1, s.norm)
        )

    def test_kraus_rank_counting(self):
        s = from_kraus([np.eye(2)])
        assert len(kraus_from_choi(choi(s))) == 1

    def test_kraus_rejects_non_psd(self):
        with pytest.raises(NotPSD):
            kraus_from_choi(choi(transpose_superop(2)))

    @given(st.integers(0, 10_000))
    def test_kraus_unitary_remixing(self, seed):
        # mixing the family by a unitary leaves the superoperator unchanged
        rng = np.random.default_rng(seed)
        v1, v2 = rng_matrix(rng, 2), rng_matrix(rng, 2)
        g = rng_matrix(rng, 2)
        w, _ = np.linalg.qr(g)
        mixed = [w[0, 0] * v1 + w[1, 0] * v2, w[0, 1] * v1 + w[1, 1] * v2]
        lhs = from_kraus([v1, v2])
        rhs = from_kraus(mixed)
        assert opnorm(lhs.mat - rhs.mat) < 1e-10 * max(1.0, lhs.norm)


class TestIsCp:
    def test_kraus_map_passes(self):
        rng = np.random.default_rng(3)
        rep = kf.is_cp(from_kraus([rng_matrix(rng, 2)]))
        assert rep.passed

    def test_transpose_fails_with_minus_one(self):
        rep = kf.is_cp(transpose_superop(2))
        assert not rep.passed
        assert abs(rep.check("min_choi_eig").value + 1.0) < 1e-12

    def test_identity_passes(self):
        assert kf.is_cp(kf.identity_superop(3)).passed


class TestKmsAdjoint:
    def test_gram_matrix_represents_inner_product(self, ctx2):
        rng = np.random.default_rng(4)
        a, b = rng_matrix(rng, 2), rng_matrix(rng, 2)
        lhs = kf.kms_inner(ctx2, a, b)
        rhs = vec(a).conj() @ kms_gram(ctx2) @ vec(b)
        assert abs(lhs - rhs) < 1e-12

    def test_defining_property(self, ctx2):
        rng = np.random.default_rng(5)
        s = kf.Superoperator(rng_matrix(rng, 4), 2)
        sd = kf.kms_adjoint(s, ctx2)
        for a in [rng_matrix(rng, 2) for _ in range(4)]:
            for b in [rng_matrix(rng, 2) for _ in range(4)]:
                lhs = kf.kms_inner(ctx2, sd.apply(a), b)
                rhs = kf.kms_inner(ctx2, a, s.apply(b))
                assert abs(lhs - rhs) < 1e-10

    def test_sigma_quarter_selfadjoint(self, ctx2):
        # sigma_{i/4} is its own KMS adjoint since -conj(i/4) = i/4
        s = kf.Superoperator(
            np.kron(ctx2.power(0.25).T, ctx2.power(-0.25)), 2
        )
        np.testing.assert_allclose(kf.kms_adjoint(s, ctx2).mat, s.mat, atol=1e-12)

    def test_tracial_reduces_to_hs_adjoint(self, ctx_tracial2):
        rng = np.random.default_rng(6)
        s = kf.Superoperator(rng_matrix(rng, 4), 2)
        np.testing.assert_allclose(
            kf.kms_adjoint(s, ctx_tracial2).mat, dagger(s.mat), atol=1e-13
        )

    def test_lmul_adjoint_formula(self, ctx2):
        # lmul(k)^dag = lmul(sigma_{i/2}(k*))
        rng = np.random.default_rng(7)
        k = rng_matrix(rng, 2)
        lhs = kf.kms_adjoint(kf.lmul(k), ctx2)
        rhs = kf.lmul(kf.sigma_z(ctx2, 0.5j, dagger(k)))
        np.testing.assert_allclose(lhs.mat, rhs.mat, atol=1e-12)

    def test_involution_and_antihomomorphism(self, ctx2):
        rng = np.random.default_rng(8)
        s = kf.Superoperator(rng_matrix(rng, 4), 2)
        t = kf.Superoperator(rng_matrix(rng, 4), 2)
        np.testing.assert_allclose(
            kf.kms_adjoint(kf.kms_adjoint(s, ctx2), ctx2).mat, s.mat, atol=1e-12
        )
        lhs = kf.kms_adjoint(s @ t, ctx2)
        rhs = kf.kms_adjoint(t, ctx2) @ kf.kms_adjoint(s, ctx2)
        assert opnorm(lhs.mat - rhs.mat) < 1e-10 * max(1.0, lhs.norm)

    def test_wrong_level(self, ctx2):
        with pytest.raises(WrongLevel):
            kf.kms_adjoint(kf.identity_superop(2, "l2"), ctx2)


class TestIsKmsSymmetric:
    def test_symmetrization_passes(self, ctx2):
        rng = np.random.default_rng(9)
        phi = from_kraus([rng_matrix(rng, 2)])
        psi = 0.5 * (phi + kf.kms_adjoint(phi, ctx2))
        assert kf.is_kms_symmetric(psi, ctx2).passed

    def test_modular_flow_fails_when_nontracial(self, ctx2):
        t = 0.37
        s = kf.Superoperator(np.kron(ctx2.power(-1j * t).T, ctx2.power(1j * t)), 2)
        assert not kf.is_kms_symmetric(s, ctx2).passed

    def test_identity_passes(self, ctx2):
        assert kf.is_kms_symmetric(kf.identity_superop(2), ctx2).passed


class TestIsCcn:
    def test_unitary_conjugation_generator_passes(self, ctx_tracial2):
        # L = id - Psi with Psi(X) = sx X sx, tracially symmetric and unital
        lgen = kf.identity_superop(2) - from_kraus([SX])
        rep = kf.is_ccn(lgen)
        assert rep.passed
        assert rep.metrics["exp_probe_pass"]

    def test_sign_flip_fails_and_criteria_agree(self):
        lgen = -1.0 * (kf.identity_superop(2) - from_kraus([SX]))
        rep = kf.is_ccn(lgen)
        assert not rep.passed
        assert not rep.metrics["exp_probe_pass"]
        assert rep.check("criteria_agree").passed()

    def test_zero_passes(self):
        from kmsflow.superop import zero_superop

        assert kf.is_ccn(zero_superop(2)).passed

    def test_unitality_gate(self):
        with pytest.raises(UnitalityViolated):
            kf.is_ccn(kf.identity_superop(2))

    def test_hermiticity_gate(self):
        # X -> i(X - tr(X) I/2) annihilates I but is not Hermiticity-preserving
        s = 1j * (kf.identity_superop(2) - depolarizing(2))
        with pytest.raises(NotHermiticityPreserving):
            kf.is_ccn(s)


class TestIsMarkovL2:
    def test_identity_passes(self, ctx2):
        assert kf.is_markov_l2(kf.identity_superop(2, "l2"), ctx2).passed

    def test_semigroup_element_passes(self):
        gen, _ = kf.random_generator(2, 17)
        t = kf.superop_exp(gen.L2, 0.5)
        assert kf.is_markov_l2(t, gen.ctx).passed

    def test_transpose_sandwich_fails_cp(self, ctx2):
        from kmsflow.superop import descend_superop, embed_superop

        t = kf.Superoperator(
            embed_superop(ctx2).mat @ transpose_superop(2).mat @ descend_superop(ctx2).mat,
            2,
            "l2",
        )
        rep = kf.is_markov_l2(t, ctx2)
        assert not rep.passed
        assert rep.check("min_choi_eig").value < -1e-3


class TestSuperopExp:
    def test_t_zero_is_identity(self):
        rng = np.random.default_rng(10)
        s = kf.Superoperator(rng_matrix(rng, 4), 2)
        np.testing.assert_allclose(kf.superop_exp(s, 0.0).mat, np.eye(4), atol=1e-15)

    def test_semigroup_law(self):
        rng = np.random.default_rng(11)
        s = kf.Superoperator(rng_matrix(rng, 4), 2)
        lhs = kf.superop_exp(s, 0.8).mat
        rhs = kf.superop_exp(s, 0.5).mat @ kf.superop_exp(s, 0.3).mat
        assert opnorm(lhs - rhs) < 1e-9 * max(1.0, opnorm(lhs))

    def test_depolarizing_spectrum(self):
        # L = n(id - depolarizing)/1 acts as n on traceless matrices, 0 on I
        n = 2
        lgen = float(n) * (kf.identity_superop(n) - depolarizing(n))
        e = kf.superop_exp(lgen, 0.7)
        np.testing.assert_allclose(e.apply(np.eye(n)), np.eye(n), atol=1e-12)
        x = np.array([[1.0, 2.0], [0.5, -1.0]])
        x0 = x - np.trace(x) * np.eye(n) / n
        np.testing.assert_allclose(
            e.apply(x0), np.exp(-0.7 * n) * x0, atol=1e-12
        )


class TestSerialization:
    def test_superop_json_round_trip(self):
        from kmsflow.serialize import superop_from_json, superop_to_json

        rng = np.random.default_rng(12)
        s = kf.Superoperator(rng_matrix(rng, 4), 2, "l2")
        s2 = superop_from_json(superop_to_json(s))
        np.testing.assert_array_equal(s.mat, s2.mat)
        assert s2.level == "l2"

    def test_matrix_json_full_precision(self):
        import json

        from kmsflow.serialize import matrix_from_json, matrix_to_json

        x = np.array([[1 / 3, np.pi], [np.sqrt(2), 1e-17]]) + 1j * np.array(
            [[0.1, 2 / 7], [1e300, -np.e]]
        )
        y = matrix_from_json(json.loads(json.dumps(matrix_to_json(x))))
        np.testing.assert_array_equal(x, y)
