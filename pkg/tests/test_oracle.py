import math

import numpy as np
import pytest

from gvmc import oracle
from gvmc.errors import SectorTooLarge


def random_cols(rng, m, n):
    return rng.standard_normal((m, n)) + 1j * rng.standard_normal((m, n))


class TestDistribution:
    def test_partition_equals_factorial_gram_det(self, rng):
        for n in (1, 2, 3):
            phi = random_cols(rng, 6, n)
            dist = oracle.tuple_distribution(phi)
            g = phi.conj().T @ phi
            expected = math.factorial(n) * np.linalg.det(g).real
            assert dist.partition == pytest.approx(expected, rel=1e-12)

    def test_probabilities_normalized(self, rng):
        dist = oracle.tuple_distribution(random_cols(rng, 5, 2))
        assert dist.probabilities.sum() == pytest.approx(1.0)
        assert np.all(dist.probabilities >= 0)

    def test_budget_guard(self, rng):
        with pytest.raises(SectorTooLarge):
            oracle.tuple_distribution(random_cols(rng, 200, 3))


class TestAdjugate:
    def test_matches_det_times_inverse(self, rng):
        for n in (1, 2, 3):
            mats = random_cols(rng, 4 * n, n).reshape(4, n, n)
            adj = oracle.adjugate(mats)
            dets = np.linalg.det(mats)
            ref = dets[:, None, None] * np.linalg.inv(mats)
            assert np.allclose(adj, ref, atol=1e-10)

    def test_finite_on_singular(self):
        mat = np.array([[[1.0 + 0j, 2.0], [2.0, 4.0]]])
        adj = oracle.adjugate(mat)
        assert np.all(np.isfinite(adj))


class TestIdentities:
    @pytest.mark.parametrize("n", [1, 2, 3])
    def test_suite_passes(self, n, rng):
        phi = random_cols(rng, 6, n)
        a = random_cols(rng, 6, n)
        b = random_cols(rng, 6, n)
        for report in oracle.run_oracle_suite(phi, a, b):
            assert report.passed, f"{report.name}: {report.max_abs_error:.3e}"

    def test_operator_columns(self, rng, make_hermitian):
        # a = A phi exercises the operator-matrix specialization
        phi = random_cols(rng, 6, 2)
        op = make_hermitian(6)
        for report in oracle.run_oracle_suite(phi, op @ phi, op @ phi):
            assert report.passed, f"{report.name}: {report.max_abs_error:.3e}"

    def test_corrupted_minor_detected(self, rng):
        phi = random_cols(rng, 5, 2)

        def corrupted(w, rows, cols):
            from gvmc import grassmann
            return -grassmann.minor_complement(w, rows, cols)

        reports = oracle.run_oracle_suite(phi, phi, phi, minor_fn=corrupted)
        by_name = {r.name: r for r in reports}
        assert not by_name["complementary-minor identity"].passed
