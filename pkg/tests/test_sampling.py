import numpy as np
import pytest

from tdbcur.errors import InputError, ModelDefinitionError, SelectionError
from tdbcur.sampling import (SelectionIndices, deim, find_adjacent, oversample,
                             qdeim)


def random_orthonormal(rng, m, k):
    Q, _ = np.linalg.qr(rng.standard_normal((m, k)))
    return Q


def deim_bruteforce(B):
    """Literal restatement of the greedy selection, kept independent of the
    library implementation: interpolate, take the residual argmax."""
    m, k = B.shape
    idx = [int(np.argmax(np.abs(B[:, 0])))]
    for j in range(1, k):
        P = np.zeros((m, j))
        P[idx, np.arange(j)] = 1.0
        c = np.linalg.solve(P.T @ B[:, :j], P.T @ B[:, j])
        r = B[:, j] - B[:, :j] @ c
        idx.append(int(np.argmax(np.abs(r))))
    return np.array(idx)


class TestDeim:
    def test_identity_basis(self):
        B = np.eye(7)[:, :3]
        assert np.array_equal(deim(B), [0, 1, 2])

    def test_matches_bruteforce_oracle(self):
        rng = np.random.default_rng(20)
        for _ in range(25):
            m = int(rng.integers(6, 40))
            k = int(rng.integers(1, min(m, 8) + 1))
            B = random_orthonormal(rng, m, k)
            assert np.array_equal(deim(B), deim_bruteforce(B))

    def test_indices_unique(self):
        rng = np.random.default_rng(21)
        B = random_orthonormal(rng, 50, 10)
        p = deim(B)
        assert len(np.unique(p)) == 10

    def test_interpolation_exact_on_basis(self):
        """The DEIM projector reproduces every basis vector at the points."""
        rng = np.random.default_rng(22)
        B = random_orthonormal(rng, 25, 5)
        p = deim(B)
        proj = B @ np.linalg.solve(B[p], np.eye(5))
        for j in range(5):
            x = B @ np.eye(5)[:, j]
            xr = proj @ x[p]
            assert np.allclose(xr, x, atol=1e-10)

    def test_shape_validation(self):
        with pytest.raises(InputError):
            deim(np.ones((3, 5)))
        with pytest.raises(InputError):
            deim(np.ones(4))

    def test_duplicate_column_rejected(self):
        B = np.zeros((6, 2))
        B[0, 0] = 1.0
        B[0, 1] = 1.0
        with pytest.raises(SelectionError):
            deim(B)


class TestQdeim:
    def test_identity_basis(self):
        B = np.eye(9)[:, :4]
        assert set(qdeim(B)) == {0, 1, 2, 3}

    def test_selection_well_conditioned(self):
        rng = np.random.default_rng(23)
        for _ in range(10):
            B = random_orthonormal(rng, 60, 6)
            p = qdeim(B)
            assert len(np.unique(p)) == 6
            # QDEIM growth guarantee is far stronger than this sanity bound
            assert np.linalg.norm(np.linalg.pinv(B[p]), 2) < np.sqrt(60) * 2 ** 6

    def test_rank_deficient_rejected(self):
        B = np.zeros((8, 2))
        B[:, 0] = 1.0
        with pytest.raises(SelectionError):
            qdeim(B)


class TestOversample:
    def test_e_zero_is_identity(self):
        rng = np.random.default_rng(24)
        B = random_orthonormal(rng, 20, 4)
        base = deim(B)
        out = oversample(B, base, 0)
        assert np.array_equal(out, base)
        assert out is not base

    def test_base_preserved_as_prefix(self):
        rng = np.random.default_rng(25)
        B = random_orthonormal(rng, 30, 5)
        base = deim(B)
        out = oversample(B, base, 6)
        assert np.array_equal(out[:5], base)
        assert len(np.unique(out)) == 11

    def test_smallest_singular_value_nondecreasing(self):
        """Adding greedy rows never hurts the sampled-basis conditioning."""
        rng = np.random.default_rng(26)
        for trial in range(100):
            m = int(rng.integers(15, 60))
            k = int(rng.integers(2, 7))
            B = random_orthonormal(rng, m, k)
            base = deim(B)
            e_max = min(10, m - k)
            prev = np.linalg.svd(B[base], compute_uv=False)[-1]
            sel = base
            for e in range(1, e_max + 1):
                sel = oversample(B, base, e)
                smin = np.linalg.svd(B[sel], compute_uv=False)[-1]
                assert smin >= prev - 1e-12
                prev = smin

    def test_amplification_monotone_in_e(self):
        """eta_r = ||pinv(B[sel])|| is nonincreasing as e grows."""
        rng = np.random.default_rng(27)
        for trial in range(100):
            m = int(rng.integers(12, 50))
            k = int(rng.integers(2, 6))
            B = random_orthonormal(rng, m, k)
            base = deim(B)
            etas = []
            for e in range(0, min(8, m - k) + 1):
                sel = oversample(B, base, e)
                etas.append(np.linalg.norm(np.linalg.pinv(B[sel]), 2))
            assert all(b <= a + 1e-12 for a, b in zip(etas, etas[1:]))

    def test_input_validation(self):
        B = np.eye(5)[:, :2]
        with pytest.raises(InputError):
            oversample(B, np.array([0, 1]), -1)
        with pytest.raises(InputError):
            oversample(B, np.array([0, 1]), 4)


class TestFindAdjacent:
    def test_tridiagonal_stencil(self):
        stencil = [[1]] + [[i - 1, i + 1] for i in range(1, 9)] + [[8]]
        out = find_adjacent(np.array([4]), stencil)
        assert np.array_equal(out, [3, 5])

    def test_overlapping_rows_deduplicated(self):
        stencil = [[1]] + [[i - 1, i + 1] for i in range(1, 9)] + [[8]]
        out = find_adjacent(np.array([3, 4]), stencil)
        assert np.array_equal(out, [2, 5])

    def test_disjoint_from_p_and_sorted(self):
        stencil = [[1, 2], [0, 2], [0, 1]]
        out = find_adjacent(np.array([0, 1, 2]), stencil)
        assert out.size == 0

    def test_out_of_range_neighbor(self):
        with pytest.raises(ModelDefinitionError):
            find_adjacent(np.array([0]), [[5], [0]])


class TestSelectionIndices:
    def test_disjointness_enforced(self):
        with pytest.raises(InputError):
            SelectionIndices(s=np.array([0]), p=np.array([1, 2]),
                             p_a=np.array([2, 3]))

    def test_duplicates_rejected(self):
        with pytest.raises(InputError):
            SelectionIndices(s=np.array([0, 0]), p=np.array([1]),
                             p_a=np.array([2]))

    def test_valid_instance(self):
        si = SelectionIndices(s=np.array([0, 3]), p=np.array([1]),
                              p_a=np.array([0, 2]), e=1)
        assert si.e == 1
