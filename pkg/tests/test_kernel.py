import numpy as np
import pytest

from detsurv.kernel import (
    Kernel,
    KernelError,
    InfeasibleDiagonalError,
    ProbabilityVector,
    complement_kernel,
    delta_matrix,
    givens_update,
    ht_variance,
    inclusion_prob,
    poisson_kernel,
    projection_kernel_with_diagonal,
    restrict_kernel,
)

from conftest import (
    random_contracting_kernel,
    random_interior_diagonal,
    random_projection_kernel,
    rng,
)


class TestKernelValidation:
    def test_rejects_asymmetric(self):
        m = np.array([[0.5, 0.2], [0.1, 0.5]])
        with pytest.raises(KernelError, match="symmetric"):
            Kernel(m)

    def test_rejects_eigenvalues_outside_unit_interval(self):
        with pytest.raises(KernelError, match="eigenvalues"):
            Kernel(np.array([[0.5, 0.6], [0.6, 0.5]]))

    def test_rejects_bogus_projection_flag(self):
        with pytest.raises(KernelError, match="projection"):
            Kernel(np.diag([0.5, 0.5]), is_projection=True)

    def test_entries_are_immutable(self):
        k = poisson_kernel([0.5, 0.5])
        with pytest.raises(ValueError):
            k.entries[0, 0] = 0.9

    def test_probability_vector_bounds(self):
        with pytest.raises(KernelError):
            ProbabilityVector(np.array([0.0, 0.5]))
        with pytest.raises(KernelError):
            ProbabilityVector(np.array([0.5, 1.1]))
        pv = ProbabilityVector(np.array([0.25, 0.75]))
        assert pv.sample_size == pytest.approx(1.0)


class TestPoissonKernel:
    def test_diagonal_definition(self):
        k = poisson_kernel([0.5, 0.5, 0.5])
        assert np.array_equal(k.entries, np.diag([0.5, 0.5, 0.5]))
        assert not k.is_projection

    def test_census_is_identity_projection(self):
        k = poisson_kernel([1.0, 1.0])
        assert np.array_equal(k.entries, np.eye(2))
        assert k.is_projection

    def test_pairwise_independence(self):
        k = poisson_kernel([0.3, 0.7])
        assert inclusion_prob(k, {0, 1}) == pytest.approx(0.21)

    def test_rejects_out_of_range(self):
        with pytest.raises(KernelError):
            poisson_kernel([0.0, 0.5])


class TestProjectionWithDiagonal:
    def test_two_unit_half_half(self):
        k = projection_kernel_with_diagonal([0.5, 0.5])
        assert np.allclose(np.diagonal(k.entries), [0.5, 0.5])
        assert abs(abs(k.entries[0, 1]) - 0.5) < 1e-12
        assert np.abs(k.entries @ k.entries - k.entries).max() < 1e-12

    def test_rank_one_equal_thirds(self):
        k = projection_kernel_with_diagonal([1 / 3, 1 / 3, 1 / 3])
        assert np.allclose(np.diagonal(k.entries), 1 / 3, atol=1e-12)
        assert np.abs(k.entries @ k.entries - k.entries).max() < 1e-10
        assert k.rank() == 1

    def test_prescribed_diagonal_three_units(self):
        pi = np.array([0.7, 0.8, 0.5])
        k = projection_kernel_with_diagonal(pi)
        assert np.abs(np.diagonal(k.entries) - pi).max() < 1e-10
        assert np.abs(k.entries @ k.entries - k.entries).max() < 1e-10
        assert k.rank() == 2

    def test_non_integer_sum_rejected(self):
        with pytest.raises(InfeasibleDiagonalError):
            projection_kernel_with_diagonal([0.5, 0.6])

    def test_degenerate_entries_forced(self):
        k = projection_kernel_with_diagonal([1.0, 0.5, 0.5, 0.0])
        assert k.entries[0, 0] == 1.0
        assert np.abs(k.entries[0, 1:]).max() == 0.0
        assert np.abs(k.entries[3, :]).max() == 0.0
        assert np.abs(k.entries @ k.entries - k.entries).max() < 1e-10

    @pytest.mark.parametrize("seed", range(12))
    def test_random_diagonals(self, seed):
        g = rng(seed)
        n = int(g.integers(3, 60))
        n_s = int(g.integers(1, n))
        pi = random_interior_diagonal(n, n_s, g)
        k = projection_kernel_with_diagonal(pi)
        assert np.abs(np.diagonal(k.entries) - pi).max() < 1e-10
        assert np.abs(k.entries @ k.entries - k.entries).max() < 1e-10
        w = np.linalg.eigvalsh(k.entries)
        assert np.abs(np.round(w) - w).max() < 1e-9


class TestComplementAndRestriction:
    def test_poisson_complement(self):
        k = complement_kernel(poisson_kernel([0.3]))
        assert k.entries[0, 0] == pytest.approx(0.7)

    def test_census_complement_is_empty(self):
        k = complement_kernel(poisson_kernel([1.0, 1.0]))
        assert np.abs(k.entries).max() == 0.0

    def test_complement_of_projection_rank(self, base_rng):
        k = random_projection_kernel(6, 2, base_rng)
        comp = complement_kernel(k)
        assert comp.is_projection
        w = np.sort(np.linalg.eigvalsh(comp.entries))
        assert np.allclose(w[:2], 0.0, atol=1e-10)
        assert np.allclose(w[2:], 1.0, atol=1e-10)

    def test_restrict_full_domain_identity(self, base_rng):
        k = random_contracting_kernel(4, base_rng)
        r = restrict_kernel(k, range(4))
        assert np.array_equal(r.entries, k.entries)

    def test_restrict_poisson_singleton(self):
        k = poisson_kernel([0.2, 0.6, 0.9])
        r = restrict_kernel(k, [1])
        assert r.entries.shape == (1, 1)
        assert r.entries[0, 0] == pytest.approx(0.6)

    def test_restrict_projection_keeps_first_order(self, base_rng):
        k = random_projection_kernel(4, 2, base_rng)
        r = restrict_kernel(k, [0, 2])
        assert r.entries[0, 0] == pytest.approx(k.entries[0, 0])
        assert r.entries[1, 1] == pytest.approx(k.entries[2, 2])

    def test_restrict_out_of_range(self, base_rng):
        k = random_contracting_kernel(3, base_rng)
        with pytest.raises(KernelError):
            restrict_kernel(k, [0, 5])


class TestInclusionProb:
    def test_fixed_size_one_excludes_pairs(self):
        k = Kernel(np.array([[0.5, 0.5], [0.5, 0.5]]), is_projection=True)
        assert inclusion_prob(k, {0, 1}) == pytest.approx(0.0, abs=1e-14)

    def test_general_det_path(self, base_rng):
        k = random_contracting_kernel(5, base_rng)
        s = [0, 2, 4]
        direct = np.linalg.det(k.entries[np.ix_(s, s)])
        assert inclusion_prob(k, s) == pytest.approx(direct)

    def test_bounded_by_min_first_order(self):
        g = rng(7)
        for _ in range(20):
            k = random_contracting_kernel(5, g)
            i, j = g.choice(5, size=2, replace=False)
            p = inclusion_prob(k, {int(i), int(j)})
            assert -1e-12 <= p <= min(k.entries[i, i], k.entries[j, j]) + 1e-12


class TestDeltaMatrix:
    def test_poisson_is_diagonal(self):
        k = poisson_kernel([0.2, 0.8])
        d = delta_matrix(k)
        assert d[0, 1] == 0.0
        assert d[0, 0] == pytest.approx(0.2 * 0.8)

    def test_projection_rows_sum_to_zero(self, base_rng):
        k = random_projection_kernel(6, 3, base_rng)
        d = delta_matrix(k)
        assert np.abs(d.sum(axis=1)).max() < 1e-10

    def test_matches_pairwise_definition(self, base_rng):
        k = random_contracting_kernel(4, base_rng)
        d = delta_matrix(k)
        pi = np.diagonal(k.entries)
        for i in range(4):
            for j in range(4):
                if i == j:
                    expect = pi[i] * (1 - pi[i])
                else:
                    expect = inclusion_prob(k, {i, j}) - pi[i] * pi[j]
                assert d[i, j] == pytest.approx(expect, abs=1e-12)


class TestHtVariance:
    def test_census_variance_zero(self):
        k = poisson_kernel([1.0, 1.0, 1.0])
        assert ht_variance(k, [3.0, 1.0, 2.0]) == pytest.approx(0.0, abs=1e-12)

    def test_balanced_on_own_probabilities(self, base_rng):
        k = random_projection_kernel(5, 2, base_rng)
        y = 3.7 * np.diagonal(k.entries)
        assert ht_variance(k, y) == pytest.approx(0.0, abs=1e-10)

    def test_zero_diagonal_rejected(self):
        k = Kernel(np.diag([0.0, 0.5]))
        with pytest.raises(KernelError):
            ht_variance(k, [1.0, 1.0])

    def test_poisson_closed_form(self):
        p = np.array([0.25, 0.5, 0.8])
        y = np.array([2.0, -1.0, 3.0])
        expect = float(np.sum(y**2 * (1 - p) / p))
        assert ht_variance(poisson_kernel(p), y) == pytest.approx(expect)


class TestGivensUpdate:
    def test_guard_equal_diagonal(self):
        k = Kernel(np.array([[0.5, 0.2], [0.2, 0.5]]))
        assert givens_update(k, 0, 1) is None

    def test_guard_zero_coupling(self):
        k = poisson_kernel([0.3, 0.6])
        assert givens_update(k, 0, 1) is None

    def test_rank_one_two_unit_example(self):
        a = np.sqrt(0.21)
        k = Kernel(np.array([[0.7, a], [a, 0.3]]), is_projection=True)
        out = givens_update(k, 0, 1)
        assert out is not None
        assert np.allclose(np.diagonal(out.entries), [0.7, 0.3], atol=1e-12)
        assert out.entries[0, 1] == pytest.approx(-a)
        assert np.abs(out.entries @ out.entries - out.entries).max() < 1e-12

    @pytest.mark.parametrize("seed", range(6))
    def test_preserves_diagonal_and_spectrum(self, seed):
        g = rng(100 + seed)
        n = int(g.integers(3, 12))
        k = (
            random_projection_kernel(n, int(g.integers(1, n)), g)
            if g.random() < 0.5
            else random_contracting_kernel(n, g)
        )
        done = 0
        for _ in range(50):
            i, j = sorted(g.choice(n, size=2, replace=False).tolist())
            out = givens_update(k, i, j)
            if out is None:
                continue
            done += 1
            assert np.abs(np.diagonal(out.entries) - np.diagonal(k.entries)).max() < 1e-10
            w0 = np.sort(np.linalg.eigvalsh(k.entries))
            w1 = np.sort(np.linalg.eigvalsh(out.entries))
            assert np.abs(w0 - w1).max() < 1e-9
        assert done > 0
