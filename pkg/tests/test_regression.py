import math

import numpy as np
import pytest

import dualcv as dc
from dualcv.regression import bin_indices, least_squares_fit


def gauss_solve(a, b):
    """Hand-rolled Gaussian elimination with partial pivoting (test oracle)."""
    a = [row[:] for row in a.tolist()]
    b = b.tolist()
    n = len(b)
    for col in range(n):
        piv = max(range(col, n), key=lambda r: abs(a[r][col]))
        a[col], a[piv] = a[piv], a[col]
        b[col], b[piv] = b[piv], b[col]
        for r in range(col + 1, n):
            f = a[r][col] / a[col][col]
            for c in range(col, n):
                a[r][c] -= f * a[col][c]
            b[r] -= f * b[col]
    x = [0.0] * n
    for r in range(n - 1, -1, -1):
        x[r] = (b[r] - sum(a[r][c] * x[c] for c in range(r + 1, n))) / a[r][r]
    return np.array(x)


class TestPolynomialBasis:
    @pytest.mark.parametrize("degree,d,count", [(0, 3, 1), (5, 3, 56), (6, 1, 7)])
    def test_counts(self, degree, d, count):
        basis = dc.build_polynomial_basis(degree, d)
        assert basis.size == count == math.comb(degree + d, d)

    def test_constant_included_and_distinct(self):
        basis = dc.build_polynomial_basis(4, 2)
        assert basis.exponents[0] == (0, 0)
        assert len(set(basis.exponents)) == basis.size

    def test_evaluation_1d(self):
        basis = dc.build_polynomial_basis(2, 1)
        assert np.array_equal(dc.evaluate_features(basis, [3.0]), [1.0, 3.0, 9.0])

    def test_evaluation_matches_monomials_2d(self):
        basis = dc.build_polynomial_basis(3, 2)
        s = np.array([1.5, -2.0])
        feats = dc.evaluate_features(basis, s)
        expected = [s[0] ** e0 * s[1] ** e1 for e0, e1 in basis.exponents]
        assert np.allclose(feats, expected)


class TestLocalBasis:
    def test_quantile_occupancy(self):
        samples = np.arange(1.0, 101.0)
        basis = dc.build_local_basis(samples, 4)
        feats = dc.evaluate_features(basis, samples[:, None])
        occupancy = feats.sum(axis=0)
        assert np.all(np.abs(occupancy - 25) <= 1)

    def test_single_cell(self):
        basis = dc.build_local_basis(np.arange(10.0), 1)
        assert basis.breakpoints[0].size == 0
        assert np.array_equal(dc.evaluate_features(basis, [3.0]), [1.0])

    def test_permutation_invariance(self):
        rng = np.random.default_rng(3)
        samples = rng.normal(size=500)
        shuffled = samples.copy()
        rng.shuffle(shuffled)
        a = dc.build_local_basis(samples, 7)
        b = dc.build_local_basis(shuffled, 7)
        assert np.array_equal(a.breakpoints[0], b.breakpoints[0])

    def test_degenerate_samples_error(self):
        with pytest.raises(ValueError):
            dc.build_local_basis(np.full(50, 3.0), 5)

    def test_too_few_samples(self):
        with pytest.raises(ValueError):
            dc.build_local_basis(np.arange(3.0), 5)

    def test_one_hot_and_tie_rule(self):
        basis = dc.LocalBasis(breakpoints=(np.array([100.0]),), P=2, d=1)
        assert np.array_equal(dc.evaluate_features(basis, [90.0]), [1.0, 0.0])
        # a state exactly on the threshold belongs to the right cell
        assert np.array_equal(dc.evaluate_features(basis, [100.0]), [0.0, 1.0])

    def test_one_hot_partition_everywhere(self):
        rng = np.random.default_rng(8)
        basis = dc.build_local_basis(rng.normal(size=(400, 2)), 5)
        states = np.concatenate(
            [rng.normal(size=(200, 2)), np.array([[basis.breakpoints[0][1], 0.0]])]
        )
        feats = dc.evaluate_features(basis, states)
        per_dim = feats.reshape(len(states), 2, 5).sum(axis=2)
        assert np.all(per_dim == 1.0)

    def test_bin_indices_sorted_thresholds(self):
        bp = np.array([1.0, 2.0, 3.0])
        assert list(bin_indices(bp, np.array([0.5, 1.0, 2.5, 3.0, 9.0]))) == [0, 1, 2, 3, 3]


class TestLeastSquares:
    def test_identity_features(self):
        y = np.array([2.0, -1.0, 5.0])
        res = least_squares_fit(np.eye(3), y)
        assert np.allclose(res.coefficients, y)
        assert res.rank == 3
        assert res.residual_norm < 1e-12

    def test_duplicated_column(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(60, 3))
        y = rng.normal(size=60)
        base = least_squares_fit(x, y)
        dup = least_squares_fit(np.hstack([x, x[:, :1]]), y)
        # redundant direction gets zero weight: duplicated columns share it
        assert dup.coefficients[0] == pytest.approx(dup.coefficients[3], rel=1e-8)
        fitted_base = x @ base.coefficients
        fitted_dup = np.hstack([x, x[:, :1]]) @ dup.coefficients
        assert np.allclose(fitted_base, fitted_dup, atol=1e-10)
        assert dup.rank == 3

    def test_matches_normal_equations_oracle(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(100, 5))
        y = rng.normal(size=100)
        res = least_squares_fit(x, y)
        oracle = gauss_solve(x.T @ x, x.T @ y)
        assert np.allclose(res.coefficients, oracle, rtol=1e-8)

    def test_residual_orthogonal_to_columns(self):
        rng = np.random.default_rng(11)
        for trial in range(5):
            x = rng.normal(size=(80, 6))
            y = rng.normal(size=80)
            res = least_squares_fit(x, y)
            resid = y - x @ res.coefficients
            inner = np.abs(x.T @ resid)
            bound = 1e-8 * np.linalg.norm(x, axis=0) * np.linalg.norm(resid)
            assert np.all(inner <= bound + 1e-12)

    def test_rejects_nonfinite(self):
        x = np.ones((4, 2))
        x[0, 0] = np.nan
        with pytest.raises(ValueError):
            least_squares_fit(x, np.ones(4))

    def test_rejects_shape_mismatch(self):
        with pytest.raises(ValueError):
            least_squares_fit(np.ones((4, 2)), np.ones(5))
