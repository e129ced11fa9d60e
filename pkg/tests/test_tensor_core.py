import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tendae.exceptions import DimensionError
from tendae.tensor_core import (
    fold,
    k_rank,
    khatri_rao,
    kron,
    n_mode_product,
    numerical_rank,
    parafac_reconstruct,
    rearrange,
    tucker_reconstruct,
    unfold,
    unrearrange,
    unvec,
    vec,
    identity_tensor,
)


def crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def loop_unfold(t, mode):
    # direct transcription of the column index maps
    I, J, R = t.shape
    if mode == 1:
        out = np.zeros((I, J * R), complex)
        for i, j, r in itertools.product(range(I), range(J), range(R)):
            out[i, j + r * J] = t[i, j, r]
    elif mode == 2:
        out = np.zeros((J, I * R), complex)
        for i, j, r in itertools.product(range(I), range(J), range(R)):
            out[j, i + r * I] = t[i, j, r]
    else:
        out = np.zeros((R, I * J), complex)
        for i, j, r in itertools.product(range(I), range(J), range(R)):
            out[r, i + j * I] = t[i, j, r]
    return out


class TestUnfold:
    def test_zero_shapes(self):
        z = np.zeros((2, 3, 4))
        assert unfold(z, 1).shape == (2, 12)
        assert unfold(z, 2).shape == (3, 8)
        assert unfold(z, 3).shape == (4, 6)
        for m in (1, 2, 3):
            assert not unfold(z, m).any()

    @pytest.mark.parametrize("mode", [1, 2, 3])
    def test_loop_oracle(self, mode):
        t = crandn(np.random.default_rng(0), 2, 2, 2)
        np.testing.assert_array_equal(unfold(t, mode), loop_unfold(t, mode))

    @pytest.mark.parametrize("mode", [1, 2, 3])
    def test_loop_oracle_rectangular(self, mode):
        t = crandn(np.random.default_rng(1), 2, 3, 4)
        np.testing.assert_array_equal(unfold(t, mode), loop_unfold(t, mode))

    def test_mode1_is_slice_concatenation(self):
        t = crandn(np.random.default_rng(2), 3, 2, 4)
        np.testing.assert_array_equal(unfold(t, 1), np.hstack([t[:, :, r] for r in range(4)]))
        np.testing.assert_array_equal(unfold(t, 2), np.hstack([t[:, :, r].T for r in range(4)]))
        np.testing.assert_array_equal(
            unfold(t, 3), np.vstack([vec(t[:, :, r]) for r in range(4)])
        )

    def test_bad_mode(self):
        with pytest.raises(ValueError):
            unfold(np.zeros((2, 2, 2)), 4)


class TestFold:
    def test_round_trip_mode2(self):
        t = crandn(np.random.default_rng(3), 3, 4, 2)
        np.testing.assert_array_equal(fold(unfold(t, 2), 2, t.shape), t)

    def test_zero(self):
        assert not fold(np.zeros((4, 6)), 3, (2, 3, 4)).any()

    def test_mode3_slices(self):
        rng = np.random.default_rng(4)
        m = crandn(rng, 3, 8)
        t = fold(m, 3, (2, 4, 3))
        for r in range(3):
            for i in range(2):
                for j in range(4):
                    assert t[i, j, r] == m[r, i + 2 * j]

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            fold(np.zeros((3, 5)), 1, (3, 2, 2))

    @settings(max_examples=40, deadline=None)
    @given(
        dims=st.tuples(*(st.integers(1, 6) for _ in range(3))),
        mode=st.sampled_from([1, 2, 3]),
        seed=st.integers(0, 2**31),
    )
    def test_round_trip_property(self, dims, mode, seed):
        t = crandn(np.random.default_rng(seed), *dims)
        np.testing.assert_array_equal(fold(unfold(t, mode), mode, dims), t)


class TestNModeProduct:
    def test_identity(self):
        t = crandn(np.random.default_rng(5), 2, 3, 4)
        np.testing.assert_array_equal(n_mode_product(t, np.eye(2), 1), t)

    def test_zero(self):
        t = crandn(np.random.default_rng(6), 2, 3, 4)
        out = n_mode_product(t, np.zeros((5, 3)), 2)
        assert out.shape == (2, 5, 4) and not out.any()

    def test_loop_oracle(self):
        rng = np.random.default_rng(7)
        t = crandn(rng, 2, 3, 2)
        a = crandn(rng, 4, 3)
        want = np.zeros((2, 4, 2), complex)
        for i, p, r in itertools.product(range(2), range(4), range(2)):
            for j in range(3):
                want[i, p, r] += a[p, j] * t[i, j, r]
        np.testing.assert_allclose(n_mode_product(t, a, 2), want, atol=1e-12)

    def test_associative_across_modes(self):
        rng = np.random.default_rng(8)
        t = crandn(rng, 3, 4, 2)
        a, b = crandn(rng, 5, 3), crandn(rng, 2, 4)
        lhs = n_mode_product(n_mode_product(t, a, 1), b, 2)
        rhs = n_mode_product(n_mode_product(t, b, 2), a, 1)
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)

    def test_mismatch(self):
        with pytest.raises(DimensionError):
            n_mode_product(np.zeros((2, 3, 4)), np.zeros((2, 2)), 3)


class TestProducts:
    def test_identity_kron(self):
        np.testing.assert_array_equal(kron(np.eye(2), np.eye(3)), np.eye(6))

    def test_mixed_product(self):
        rng = np.random.default_rng(9)
        a, b, c, d = (crandn(rng, 2, 2) for _ in range(4))
        np.testing.assert_allclose(kron(a, b) @ kron(c, d), kron(a @ c, b @ d), atol=1e-12)

    def test_vec_outer(self):
        rng = np.random.default_rng(10)
        a, b = crandn(rng, 3), crandn(rng, 4)
        np.testing.assert_allclose(vec(np.outer(a, b)), np.kron(b, a), atol=1e-14)

    def test_vec_triple_product(self):
        # vec(A X B) = (B^T kron A) vec(X)
        rng = np.random.default_rng(11)
        a, x, b = crandn(rng, 2, 3), crandn(rng, 3, 4), crandn(rng, 4, 2)
        np.testing.assert_allclose(vec(a @ x @ b), kron(b.T, a) @ vec(x), atol=1e-12)

    def test_khatri_rao_single_column(self):
        rng = np.random.default_rng(12)
        a, b = crandn(rng, 3, 1), crandn(rng, 2, 1)
        np.testing.assert_array_equal(khatri_rao(a, b), np.kron(a, b))

    def test_khatri_rao_property5(self):
        rng = np.random.default_rng(13)
        a, b = crandn(rng, 2, 2), crandn(rng, 3, 3)
        c, d = crandn(rng, 2, 2), crandn(rng, 3, 2)
        np.testing.assert_allclose(
            kron(a, b) @ khatri_rao(c, d), khatri_rao(a @ c, b @ d), atol=1e-12
        )

    def test_khatri_rao_diag_vec(self):
        rng = np.random.default_rng(14)
        a, c, b = crandn(rng, 3, 4), crandn(rng, 4, 2), crandn(rng, 4)
        np.testing.assert_allclose(
            vec(a @ np.diag(b) @ c), khatri_rao(c.T, a) @ b, atol=1e-12
        )

    def test_khatri_rao_mismatch(self):
        with pytest.raises(DimensionError):
            khatri_rao(np.ones((2, 2)), np.ones((2, 3)))

    def test_unvec_round_trip(self):
        m = crandn(np.random.default_rng(15), 3, 5)
        np.testing.assert_array_equal(unvec(vec(m), 3, 5), m)


class TestRearrange:
    def test_single_kron(self):
        rng = np.random.default_rng(16)
        a, b = crandn(rng, 3, 2), crandn(rng, 2, 2)
        r = rearrange(np.kron(a, b), 3, 2, 2, 2)
        np.testing.assert_allclose(r, np.outer(vec(b), vec(a)), atol=1e-14)
        assert numerical_rank(r) == 1

    def test_scalar_a(self):
        b = crandn(np.random.default_rng(17), 3, 2)
        r = rearrange(np.kron(np.ones((1, 1)), b), 1, 1, 3, 2)
        assert r.shape == (6, 1)
        np.testing.assert_array_equal(r[:, 0], vec(b))

    @pytest.mark.parametrize("k", [1, 2, 3])
    def test_rank_of_sum(self, k):
        rng = np.random.default_rng(18 + k)
        c = sum(np.kron(crandn(rng, 3, 4), crandn(rng, 2, 3)) for _ in range(k))
        assert numerical_rank(rearrange(c, 3, 4, 2, 3)) == k

    def test_inverse(self):
        c = crandn(np.random.default_rng(22), 6, 12)
        np.testing.assert_array_equal(unrearrange(rearrange(c, 3, 4, 2, 3), 3, 4, 2, 3), c)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            rearrange(np.zeros((5, 4)), 2, 2, 2, 2)


class TestReconstruct:
    def test_all_ones(self):
        f = [np.ones((n, 1)) for n in (2, 3, 4)]
        np.testing.assert_array_equal(parafac_reconstruct(f), np.ones((2, 3, 4)))

    def test_outer_sum_oracle(self):
        rng = np.random.default_rng(23)
        a, b, c = crandn(rng, 3, 2), crandn(rng, 4, 2), crandn(rng, 2, 2)
        want = sum(np.einsum("i,j,k->ijk", a[:, r], b[:, r], c[:, r]) for r in range(2))
        t = parafac_reconstruct((a, b, c))
        np.testing.assert_allclose(t, want, atol=1e-12)
        np.testing.assert_allclose(unfold(t, 1), a @ khatri_rao(c, b).T, atol=1e-12)
        np.testing.assert_allclose(unfold(t, 2), b @ khatri_rao(c, a).T, atol=1e-12)
        np.testing.assert_allclose(unfold(t, 3), c @ khatri_rao(b, a).T, atol=1e-12)

    def test_rank_mismatch(self):
        with pytest.raises(DimensionError):
            parafac_reconstruct((np.ones((2, 2)), np.ones((2, 1)), np.ones((2, 2))))

    def test_tucker_identity_core_is_parafac(self):
        rng = np.random.default_rng(24)
        a, b, c = crandn(rng, 3, 2), crandn(rng, 4, 2), crandn(rng, 5, 2)
        np.testing.assert_allclose(
            tucker_reconstruct(identity_tensor(2), a, b, c),
            parafac_reconstruct((a, b, c)),
            atol=1e-12,
        )

    def test_tucker_identity_factors(self):
        g = crandn(np.random.default_rng(25), 2, 3, 4)
        np.testing.assert_allclose(tucker_reconstruct(g, np.eye(2), np.eye(3), np.eye(4)), g)

    def test_tucker_loop_oracle(self):
        rng = np.random.default_rng(26)
        g = crandn(rng, 2, 2, 2)
        a, b, c = crandn(rng, 3, 2), crandn(rng, 2, 2), crandn(rng, 4, 2)
        want = np.zeros((3, 2, 4), complex)
        for p, q, s in itertools.product(range(2), repeat=3):
            want += g[p, q, s] * np.einsum("i,j,k->ijk", a[:, p], b[:, q], c[:, s])
        np.testing.assert_allclose(tucker_reconstruct(g, a, b, c), want, atol=1e-12)

    def test_tucker_mismatch(self):
        with pytest.raises(DimensionError):
            tucker_reconstruct(np.ones((2, 2, 2)), np.ones((3, 3)), np.ones((2, 2)), np.ones((2, 2)))


class TestKRank:
    def test_identity(self):
        assert k_rank(np.eye(3)) == 3

    def test_repeated_column(self):
        a = np.array([[1.0, 1.0, 0.0], [2.0, 2.0, 1.0], [0.0, 0.0, 3.0]])
        assert k_rank(a) == 1

    def test_vandermonde(self):
        z = np.exp(1j * np.array([0.3, 1.1, -2.0]))
        v = z[None, :] ** np.arange(4)[:, None]
        assert k_rank(v) == 3

    def test_zero_column(self):
        assert k_rank(np.array([[1.0, 0.0], [0.0, 0.0]])) == 0

    def test_wide_matrix(self):
        # 2 rows, 3 pairwise independent columns
        assert k_rank(np.array([[1.0, 0.0, 1.0], [0.0, 1.0, 1.0]])) == 2

    def test_too_many_columns(self):
        with pytest.raises(ValueError):
            k_rank(np.ones((2, 9)))
