import numpy as np
import numpy.testing as npt
import pytest

from dessilbi.lasso import entry_index, lasso_cd, lasso_path, ranking_auc


def orthonormal_design(rng, n=32, p=8):
    """Columns with X^T X = n I, so the lasso solution is a soft threshold."""
    a = rng.standard_normal((n, n))
    q, _ = np.linalg.qr(a)
    return q[:, :p] * np.sqrt(n)


class TestCoordinateDescent:
    def test_matches_soft_thresholding_on_an_orthonormal_design(self, rng):
        x = orthonormal_design(rng)
        w_true = np.array([2.0, -1.5, 0.8, 0.0, 0.0, 0.0, 0.0, 0.3])
        y = x @ w_true
        lam = 0.5
        w = lasso_cd(x, y, lam, gap_tol=1e-12)
        z = x.T @ y / x.shape[0]
        want = np.sign(z) * np.maximum(np.abs(z) - lam, 0.0)
        npt.assert_allclose(w, want, atol=1e-9)

    def test_zero_penalty_recovers_least_squares(self, rng):
        x = rng.standard_normal((40, 6))
        w_true = rng.standard_normal(6)
        y = x @ w_true
        w = lasso_cd(x, y, 0.0, gap_tol=1e-14)
        npt.assert_allclose(w, w_true, atol=1e-6)

    def test_duality_gap_certified_on_exit(self, rng):
        x = rng.standard_normal((50, 10))
        y = x @ rng.standard_normal(10) + 0.1 * rng.standard_normal(50)
        n = 50
        lam = 0.2
        w = lasso_cd(x, y, lam, gap_tol=1e-10)
        # recompute the gap from scratch at the returned point
        alpha = lam * n
        r = y - x @ w
        dual_norm = float(np.max(np.abs(x.T @ r)))
        s = 1.0 if dual_norm <= alpha else alpha / dual_norm
        gap = (0.5 * float(r @ r) * (1.0 + s * s)
               + alpha * float(np.sum(np.abs(w))) - s * float(y @ r))
        primal = 0.5 * float(r @ r) + alpha * float(np.sum(np.abs(w)))
        assert gap / n <= 1e-10 * (1.0 + max(primal / n, float(y @ y) / n))

    def test_stationarity_at_the_solution(self, rng):
        x = rng.standard_normal((60, 8))
        y = x @ np.array([3.0, -2.0, 0, 0, 0, 0, 0, 0]) + 0.05 * rng.standard_normal(60)
        lam = 0.3
        w = lasso_cd(x, y, lam, gap_tol=1e-12)
        corr = x.T @ (y - x @ w) / 60
        for j in range(8):
            if w[j] != 0.0:
                assert corr[j] == pytest.approx(lam * np.sign(w[j]), abs=1e-7)
            else:
                assert abs(corr[j]) <= lam + 1e-7

    def test_penalty_above_lam_max_returns_zero(self, rng):
        x = rng.standard_normal((30, 5))
        y = rng.standard_normal(30)
        lam_max = float(np.max(np.abs(x.T @ y))) / 30
        w = lasso_cd(x, y, lam_max * 1.01)
        npt.assert_array_equal(w, np.zeros(5))

    def test_warm_start_changes_nothing_about_the_answer(self, rng):
        x = rng.standard_normal((40, 6))
        y = x @ rng.standard_normal(6)
        cold = lasso_cd(x, y, 0.1, gap_tol=1e-12)
        warm = lasso_cd(x, y, 0.1, w0=rng.standard_normal(6), gap_tol=1e-12)
        npt.assert_allclose(cold, warm, atol=1e-8)

    def test_negative_penalty_rejected(self, rng):
        x = rng.standard_normal((10, 3))
        with pytest.raises(ValueError, match="nonnegative"):
            lasso_cd(x, np.zeros(10), -0.1)

    def test_sweep_budget_exhaustion_raises(self, rng):
        x = rng.standard_normal((30, 5))
        y = x @ rng.standard_normal(5)
        with pytest.raises(RuntimeError, match="sweeps"):
            lasso_cd(x, y, 0.01, max_sweeps=1, gap_tol=1e-16)

    def test_dead_column_stays_zero(self, rng):
        x = rng.standard_normal((30, 4))
        x[:, 2] = 0.0
        y = rng.standard_normal(30)
        w = lasso_cd(x, y, 0.05)
        assert w[2] == 0.0


class TestPath:
    def test_grid_spans_lam_max_down_to_ratio(self, rng):
        x = rng.standard_normal((40, 6))
        y = x @ rng.standard_normal(6)
        lams, weights = lasso_path(x, y, n_lams=20, ratio=1e-2)
        lam_max = float(np.max(np.abs(x.T @ y))) / 40
        assert lams[0] == pytest.approx(lam_max)
        assert lams[-1] == pytest.approx(lam_max * 1e-2)
        assert (np.diff(lams) < 0).all()
        assert weights.shape == (20, 6)

    def test_first_point_is_all_zero_and_support_grows(self, rng):
        x = orthonormal_design(rng)
        y = x @ np.array([2.0, -1.5, 0.8, 0, 0, 0, 0, 0.3])
        lams, weights = lasso_path(x, y, n_lams=30)
        # the first grid point sits exactly at lam_max; summation order can
        # leave an ulp-level residue, so zero here means numerically zero
        assert float(np.max(np.abs(weights[0]))) <= 1e-12
        sizes = [np.count_nonzero(w) for w in weights]
        assert sizes[-1] >= sizes[0]
        assert sizes[-1] == 4

    def test_each_grid_point_solves_its_own_problem(self, rng):
        x = rng.standard_normal((40, 5))
        y = x @ rng.standard_normal(5) + 0.1 * rng.standard_normal(40)
        lams, weights = lasso_path(x, y, n_lams=8, gap_tol=1e-12)
        for lam, w in zip(lams[::3], weights[::3]):
            direct = lasso_cd(x, y, float(lam), gap_tol=1e-12)
            npt.assert_allclose(w, direct, atol=1e-7)

    def test_zero_response_short_circuits(self):
        lams, weights = lasso_path(np.eye(4), np.zeros(4), n_lams=5)
        npt.assert_array_equal(lams, np.zeros(5))
        npt.assert_array_equal(weights, np.zeros((5, 4)))


class TestEntryIndex:
    def test_first_nonzero_row_per_column(self):
        weights = np.array([
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.5, 0.2, 0.0],
        ])
        npt.assert_array_equal(entry_index(weights), [1.0, 2.0, np.inf])

    def test_reentry_does_not_move_the_index(self):
        weights = np.array([[0.0], [1.0], [0.0], [2.0]])
        npt.assert_array_equal(entry_index(weights), [1.0])


class TestRankingAuc:
    def test_perfect_and_reversed_orderings(self):
        assert ranking_auc([0.0, 1.0], [2.0, 3.0]) == 1.0
        assert ranking_auc([2.0, 3.0], [0.0, 1.0]) == 0.0

    def test_ties_count_half(self):
        assert ranking_auc([1.0], [1.0]) == 0.5
        assert ranking_auc([1.0, 1.0], [1.0, 2.0]) == 0.75

    def test_never_entered_coordinates_rank_last(self):
        # true support entered at 0 and 1; one false coordinate never entered
        assert ranking_auc([0.0, 1.0], [np.inf]) == 1.0
        assert ranking_auc([np.inf], [np.inf]) == 0.5

    def test_empty_sides_are_rejected(self):
        with pytest.raises(ValueError, match="nonempty"):
            ranking_auc([], [1.0])
        with pytest.raises(ValueError, match="nonempty"):
            ranking_auc([1.0], [])
