import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kvmix.errors import ConvergenceError, ParameterError, SizeError
from kvmix.spectral import (
    SpectrumReport,
    analyze_dump,
    frobenius_norm,
    jacobi_eigh,
    rank_estimate,
    singular_values,
    spectral_norm,
    svd,
)
from kvmix.tensor import synthesize_dump

from conftest import gaussian


def gram_oracle(a):
    a = np.asarray(a, dtype=np.float64)
    g = a @ a.T if a.shape[0] <= a.shape[1] else a.T @ a
    return np.sqrt(np.clip(np.sort(np.linalg.eigvalsh(g))[::-1], 0, None))


class TestNorms:
    def test_nilpotent(self):
        assert spectral_norm([[0.0, 2.0], [0.0, 0.0]]) == pytest.approx(2.0, rel=1e-9)

    def test_rank_one(self):
        u = np.array([2.0, 0.0])
        v = np.array([1.0, 2.0, 2.0])
        a = np.outer(u, v)
        assert spectral_norm(a) == pytest.approx(6.0, rel=1e-9)
        assert frobenius_norm(a) == pytest.approx(6.0, rel=1e-12)
        assert singular_values(a)[0] == pytest.approx(6.0, rel=1e-12)
        assert rank_estimate(a) == 1

    def test_zero(self):
        assert spectral_norm(np.zeros((3, 2))) == 0.0
        assert rank_estimate(np.zeros((3, 2))) == 0

    def test_all_ones_start_annihilated(self):
        # the all-ones vector lies in the null space of this matrix
        a = np.array([[1.0, -1.0], [1.0, -1.0]])
        assert spectral_norm(a) == pytest.approx(2.0, rel=1e-9)

    def test_convergence_error_carries_estimate(self):
        a = np.diag([1.0, 0.999999])
        a[0, 1] = 1e-3
        with pytest.raises(ConvergenceError) as info:
            spectral_norm(a, tol=1e-15, max_iters=2)
        assert info.value.estimate == pytest.approx(1.0, rel=1e-3)

    def test_rejects_bad_tol(self):
        with pytest.raises(ParameterError):
            spectral_norm([[1.0]], tol=0)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 40), st.integers(1, 40), st.integers(0, 2**32))
    def test_power_iteration_matches_oracle(self, r, c, seed):
        a = gaussian((r, c), seed)
        assert spectral_norm(a) == pytest.approx(gram_oracle(a)[0], rel=1e-5)


class TestJacobi:
    def test_matches_eigh(self, rng_matrix):
        a = rng_matrix(30, 30).astype(np.float64)
        g = a @ a.T
        evals, vecs = jacobi_eigh(g)
        np.testing.assert_allclose(evals, np.sort(np.linalg.eigvalsh(g))[::-1], rtol=1e-10, atol=1e-10)
        np.testing.assert_allclose(vecs @ np.diag(evals) @ vecs.T, g, atol=1e-9)
        np.testing.assert_allclose(vecs.T @ vecs, np.eye(30), atol=1e-10)

    def test_odd_size_and_diagonal(self):
        evals, _ = jacobi_eigh(np.diag([1.0, 3.0, 2.0]))
        assert evals.tolist() == [3.0, 2.0, 1.0]


class TestSingularValues:
    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 48), st.integers(1, 48), st.integers(0, 2**32))
    def test_against_gram_oracle(self, r, c, seed):
        a = gaussian((r, c), seed)
        sv = singular_values(a)
        assert sv.shape == (min(r, c),)
        np.testing.assert_allclose(sv, gram_oracle(a), rtol=1e-5, atol=1e-9)
        assert np.all(np.diff(sv) <= 0)
        assert np.sum(sv**2) == pytest.approx(frobenius_norm(a) ** 2, rel=1e-9)

    def test_svd_reconstructs(self, rng_matrix):
        for shape in ((5, 9), (9, 5)):
            a = rng_matrix(*shape)
            u, s, vt = svd(a)
            np.testing.assert_allclose(u @ np.diag(s) @ vt, a, atol=1e-10)

    def test_svd_rank_deficient(self):
        a = np.outer([1.0, 2.0, 3.0], [1.0, 1.0])
        u, s, vt = svd(a)
        np.testing.assert_allclose(u @ np.diag(s) @ vt, a, atol=1e-10)
        assert s[1] == pytest.approx(0.0, abs=1e-7)

    def test_size_limit(self):
        with pytest.raises(SizeError):
            singular_values(np.ones((513, 513)))

    def test_rank_tol_validation(self):
        with pytest.raises(ParameterError):
            rank_estimate([[1.0]], rel_tol=0)


class TestAnalyzeDump:
    def test_reports_and_aggregates(self):
        dump = synthesize_dump(4.0, 2, 3, 8, 16, seed=3)
        an = analyze_dump(dump)
        assert len(an.reports) == 2 * 3 * 2
        assert len(an.aggregates) == 4
        for agg in an.aggregates:
            assert np.all(agg.min <= agg.mean) and np.all(agg.mean <= agg.max)
        k = an.aggregate_for(0, "K").frobenius_norm[0]
        v = an.aggregate_for(0, "V").frobenius_norm[0]
        assert k / v == pytest.approx(4.0, rel=1e-3)

    def test_report_fields(self):
        r = SpectrumReport.of(np.diag([3.0, 1.0, 0.0]))
        assert r.spectral_norm == pytest.approx(3.0)
        assert r.frobenius_norm == pytest.approx(np.sqrt(10))
        assert r.rank_estimate == 2
        assert (r.rows, r.cols) == (3, 3)
