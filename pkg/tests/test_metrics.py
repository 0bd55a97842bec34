import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.stats import wasserstein_distance

from gexdiff.dataset import ExpressionMatrix
from gexdiff.errors import DegenerateRange, DimensionMismatch, EmptySample, InvalidRange
from gexdiff.metrics import (
    cv_and_zero_prop,
    evaluate,
    kl_gene,
    kl_histogram,
    median_bandwidth,
    mmd_rbf,
    pca_project,
    wasserstein_1d,
    wasserstein_gene,
    write_pca_csv,
)

finite = st.floats(-50, 50, allow_nan=False)
samples = arrays(np.float64, st.tuples(st.integers(1, 30), st.integers(1, 4)), elements=finite)


def rand(shape, seed=0, loc=0.0):
    return loc + np.random.default_rng(seed).normal(size=shape)


class TestWasserstein:
    def test_identical(self):
        a = rand((40, 3))
        assert wasserstein_1d(a, a) == 0.0

    def test_sorted_pairing(self):
        assert wasserstein_1d(np.array([1.0, 3.0]), np.array([4.0, 2.0])) == 1.0

    @pytest.mark.parametrize("c", [0.0, 2.5, -7.0])
    def test_translation(self, c):
        a = rand((25, 4), 1)
        assert wasserstein_1d(a, a + c) == pytest.approx(abs(c), abs=1e-12)

    @pytest.mark.parametrize("na,nb", [(10, 10), (7, 13), (1, 5), (40, 3)])
    def test_matches_scipy(self, na, nb):
        a, b = rand(na, 2), rand(nb, 3, loc=0.4)
        assert wasserstein_gene(a, b) == pytest.approx(wasserstein_distance(a, b), abs=1e-12)

    def test_errors(self):
        with pytest.raises(EmptySample):
            wasserstein_1d(np.zeros((0, 2)), np.zeros((3, 2)))
        with pytest.raises(DimensionMismatch):
            wasserstein_1d(np.zeros((3, 2)), np.zeros((3, 3)))

    @given(samples, samples)
    @settings(max_examples=60, deadline=None)
    def test_symmetric_nonnegative(self, a, b):
        g = min(a.shape[1], b.shape[1])
        a, b = a[:, :g], b[:, :g]
        w = wasserstein_1d(a, b)
        assert w >= 0
        assert w == pytest.approx(wasserstein_1d(b, a), rel=1e-12, abs=1e-12)


class TestMMD:
    def test_identical(self):
        a = rand((50, 6))
        assert mmd_rbf(a, a) <= 1e-12

    def test_separation(self):
        a, a2, b = rand((200, 5), 0), rand((200, 5), 1), rand((200, 5), 2, loc=5.0)
        assert mmd_rbf(a, b) > mmd_rbf(a, a2)

    def test_symmetric(self):
        a, b = rand((30, 4), 3), rand((45, 4), 4, loc=0.5)
        assert mmd_rbf(a, b) == pytest.approx(mmd_rbf(b, a), rel=1e-12)

    def test_row_order_invariant(self):
        a, b = rand((30, 4), 5), rand((20, 4), 6, loc=1.0)
        perm = np.random.default_rng(0).permutation(30)
        assert mmd_rbf(a[perm], b[::-1]) == pytest.approx(mmd_rbf(a, b), rel=1e-10)

    def test_fixed_bandwidth_by_hand(self):
        # one point each, distance 1, gamma 1: 2 - 2 exp(-1/2)
        val = mmd_rbf(np.array([[0.0]]), np.array([[1.0]]), bandwidth=1.0)
        assert val == pytest.approx(np.sqrt(2 - 2 * np.exp(-0.5)), rel=1e-14)

    def test_median_bandwidth(self):
        # pooled 0, 1, 2: distances 1, 1, 2
        assert median_bandwidth(np.array([[0.0], [1.0]]), np.array([[2.0]])) == 1.0

    def test_median_stable_under_duplicate(self):
        # duplicating an endpoint of the median pair adds distances 0, 1, 2: median stays 1
        base = median_bandwidth(np.array([[0.0], [1.0]]), np.array([[2.0]]))
        dup = median_bandwidth(np.array([[0.0], [1.0], [0.0]]), np.array([[2.0]]))
        assert base == dup == 1.0

    def test_errors(self):
        with pytest.raises(DimensionMismatch):
            mmd_rbf(np.zeros((2, 2)), np.zeros((2, 3)))
        with pytest.raises(InvalidRange):
            mmd_rbf(np.zeros((2, 2)), np.ones((2, 2)), bandwidth=0.0)

    @given(samples)
    @settings(max_examples=40, deadline=None)
    def test_nonnegative(self, a):
        b = a[::-1] + 0.5
        assert mmd_rbf(a, b) >= 0


class TestKL:
    def test_identical(self):
        a = rand((100, 3))
        assert kl_histogram(a, a) == 0.0

    def test_disjoint_two_bins(self):
        a, b = np.zeros(100), np.ones(100)
        p = np.array([101, 1]) / 102
        expected = float(np.sum(p * np.log(p / p[::-1])))
        assert kl_gene(a, b, bins=2) == pytest.approx(expected, rel=1e-14)
        assert expected == pytest.approx(100 / 102 * np.log(101), rel=1e-14)

    def test_asymmetric(self):
        a = np.concatenate([np.zeros(90), np.ones(10)])
        b = np.concatenate([np.zeros(50), np.ones(50)])
        assert abs(kl_gene(a, b, 2) - kl_gene(b, a, 2)) > 1e-3

    def test_degenerate_gene(self):
        with pytest.raises(DegenerateRange):
            kl_gene(np.ones(5), np.ones(3))
        a = np.column_stack([np.ones(20), rand(20, 1)])
        b = np.column_stack([np.ones(20), rand(20, 2)])
        assert kl_histogram(a, b) == pytest.approx(kl_gene(a[:, 1], b[:, 1]) / 2)

    def test_bins(self):
        with pytest.raises(InvalidRange):
            kl_histogram(rand(10), rand(10), bins=1)

    def test_nonnegative_random(self):
        rng = np.random.default_rng(0)
        for _ in range(10_000):
            na, nb = rng.integers(1, 12, 2)
            a, b = rng.normal(size=na), rng.normal(0.3, 1.2, size=nb)
            assert kl_gene(a, b, int(rng.integers(2, 8))) >= 0


class TestSummaries:
    def test_zero_prop(self):
        cv, zp = cv_and_zero_prop(np.array([[0.0, 3.0, 0.0], [0.0, 3.0, 2.0], [1.0, 3.0, 0.0]]))
        np.testing.assert_allclose(zp, [2 / 3, 0.0, 2 / 3])
        assert cv[1] == 0.0

    def test_cv_by_hand(self):
        cv, zp = cv_and_zero_prop(np.array([[0.0], [2.0]]))
        assert cv[0] == 1.0 and zp[0] == 0.5

    def test_zero_mean_is_missing(self):
        cv, _ = cv_and_zero_prop(np.zeros((4, 2)))
        assert np.all(np.isnan(cv))


class TestPCA:
    def test_line_in_3d(self):
        pos = np.linspace(-3, 3, 21)
        direction = np.array([1.0, -2.0, 2.0]) / 3.0
        pts = pos[:, None] * direction + np.array([5.0, 1.0, -1.0])
        res = pca_project(pts[:10], pts[10:])
        assert res.variances[1] < 1e-12 * res.variances[0]
        coords = np.concatenate([res.real, res.synth])
        # largest loading (-2/3) flipped positive, so coordinate = -position
        np.testing.assert_allclose(coords[:, 0], -pos, atol=1e-9)
        np.testing.assert_allclose(coords[:, 1], 0.0, atol=1e-9)

    def test_identical_sets(self):
        a = rand((30, 5))
        res = pca_project(a, a)
        np.testing.assert_array_equal(res.real, res.synth)

    def test_matches_eigh(self):
        a, b = rand((40, 6), 1), rand((35, 6), 2) * np.array([3, 1, 1, 2, 0.5, 1])
        res = pca_project(a, b)
        z = np.concatenate([a, b])
        w, v = np.linalg.eigh(np.cov(z.T, bias=True))
        np.testing.assert_allclose(res.variances, w[::-1][:2], rtol=1e-8)
        for j in range(2):
            assert abs(res.components[:, j] @ v[:, -1 - j]) == pytest.approx(1.0, abs=1e-8)
            assert res.components[np.argmax(np.abs(res.components[:, j])), j] > 0

    def test_variance_ordering(self):
        res = pca_project(rand((50, 4), 3), rand((50, 4), 4))
        coords = np.concatenate([res.real, res.synth])
        assert coords[:, 0].var() >= coords[:, 1].var()

    def test_too_few_rows(self):
        with pytest.raises(InvalidRange):
            pca_project(np.ones((1, 1)), np.ones((1, 1)), dims=2)

    def test_csv(self, tmp_path):
        res = pca_project(rand((3, 3)), rand((2, 3), 1))
        write_pca_csv(res, tmp_path / "p.csv")
        lines = (tmp_path / "p.csv").read_text().splitlines()
        assert lines[0] == "set,dim1,dim2" and len(lines) == 6
        assert [ln.split(",")[0] for ln in lines[1:]] == ["real"] * 3 + ["synth"] * 2


class TestReport:
    def _matrix(self, seed, names=("g1", "g2", "g3")):
        v = np.abs(rand((20, 3), seed))
        v[::4, 0] = 0.0
        return ExpressionMatrix(v, list(names))

    def test_identical_all_zero(self):
        m = self._matrix(0)
        rep = evaluate(m, m)
        assert rep.kl <= 1e-10 and rep.wasserstein <= 1e-10 and rep.mmd <= 1e-10

    def test_gene_mismatch_named(self):
        with pytest.raises(DimensionMismatch, match="g2"):
            evaluate(self._matrix(0), self._matrix(1, ("g1", "gX", "g3")))

    def test_json_schema(self):
        d = json.loads(evaluate(self._matrix(0), self._matrix(1)).to_json())
        assert sorted(d) == ["histogram_bins", "kernel_bandwidth", "kl", "mmd", "n_real", "n_synth",
                             "per_gene_cv", "per_gene_zero_prop", "schema_version", "wasserstein"]
        assert d["per_gene_zero_prop"]["real"][0] == 0.25

    def test_per_gene_csv(self, tmp_path):
        evaluate(self._matrix(0), self._matrix(1)).write_per_gene_csv(tmp_path / "g.csv")
        lines = (tmp_path / "g.csv").read_text().splitlines()
        assert lines[0] == "gene,cv_real,cv_synth,zeroprop_real,zeroprop_synth"
        assert [ln.split(",")[0] for ln in lines[1:]] == ["g1", "g2", "g3"]
