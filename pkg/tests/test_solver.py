"""L1 solver correctness against independent references.

Three kinds of oracle are used: a closed-form soft-threshold solution on
orthogonal designs, a frozen proximal-gradient solution on one correlated
system (two million iterations, computed offline), and the subgradient
optimality certificate evaluated from scratch in this file.
"""

import itertools

import numpy as np
import pytest

from bitbottleneck import bitplane_codec as bc
from bitbottleneck import sparse_solver as ss
from bitbottleneck.tensor_store import DatasetError


def subgradient_gap(system, alpha, lam):
    # independent stationarity check: grad_j = 2 (G a - bty)_j must equal
    # -lam sign(a_j) on the support and stay within [-lam, lam] elsewhere
    grad = 2.0 * (system.gram @ alpha - system.bty)
    worst = 0.0
    for j in range(alpha.size):
        if system.gram[j, j] == 0.0:
            continue
        if alpha[j] == 0.0:
            worst = max(worst, abs(grad[j]) - lam)
        else:
            worst = max(worst, abs(grad[j] + lam * np.sign(alpha[j])))
    return worst


def random_system(rng, bits=None, rows=None):
    # correlated design: lattice-ish codes with slips, scaled noisy targets
    bits = bits or int(rng.integers(3, 9))
    rows = rows or int(rng.integers(32, 1025))
    codes = rng.integers(0, 1 << bits, size=rows).astype(np.uint32)
    s = float(np.exp(rng.normal(0.0, 1.0)))
    y = (codes + rng.uniform(-0.5, 0.5, size=rows)) * s
    return ss.build_gram_system(bc.decompose(codes, bits), y)


class TestGramSystem:
    def setup_method(self):
        self.rng = np.random.default_rng(21)

    def test_statistics_match_direct_products(self):
        codes = np.array([3, 5, 12, 7, 8], dtype=np.uint32)
        y = np.array([1.0, -2.0, 0.5, 3.0, 4.0])
        planes = bc.decompose(codes, 4)
        system = ss.build_gram_system(planes, y)
        b = planes.astype(np.float64)
        np.testing.assert_array_equal(system.gram, b.T @ b)
        np.testing.assert_allclose(system.bty, b.T @ y, rtol=1e-15)
        assert system.yty == pytest.approx(float(y @ y), rel=1e-15)
        assert system.num_rows == 5

    def test_gram_entries_are_exact_counts(self):
        system = random_system(self.rng, bits=8, rows=1000)
        assert np.all(system.gram == np.rint(system.gram))
        assert np.all(np.diag(system.gram) >= system.gram.max(axis=1) - 1e-12)

    def test_merge_matches_concatenation(self):
        codes1 = np.array([1, 2, 3], dtype=np.uint32)
        codes2 = np.array([4, 5, 6, 7], dtype=np.uint32)
        y1 = np.array([0.5, 1.5, 2.5])
        y2 = np.array([3.5, 4.5, 5.5, 6.5])
        merged = ss.merge_gram_systems([
            ss.build_gram_system(bc.decompose(codes1, 3), y1),
            ss.build_gram_system(bc.decompose(codes2, 3), y2)])
        whole = ss.build_gram_system(bc.decompose(np.concatenate([codes1, codes2]), 3),
                                     np.concatenate([y1, y2]))
        np.testing.assert_array_equal(merged.gram, whole.gram)
        np.testing.assert_allclose(merged.bty, whole.bty, rtol=1e-14)
        assert merged.yty == pytest.approx(whole.yty, rel=1e-14)
        assert merged.num_rows == whole.num_rows

    def test_row_size_mismatch_rejected(self):
        planes = bc.decompose(np.array([1, 2], dtype=np.uint32), 2)
        with pytest.raises(DatasetError):
            ss.build_gram_system(planes, np.array([1.0]))


class TestLambdaGrid:
    def setup_method(self):
        self.rng = np.random.default_rng(22)
        self.system = random_system(self.rng)

    def test_lambda_max_formula(self):
        assert ss.lambda_max(self.system) == 2.0 * float(np.abs(self.system.bty).max())

    def test_grid_is_ascending_geometric(self):
        grid = ss.lambda_grid(self.system, num=16, ratio=1e-3, max_ratio=0.5)
        lmax = ss.lambda_max(self.system)
        assert grid.size == 16
        assert grid[0] == pytest.approx(1e-3 * lmax, rel=1e-12)
        assert grid[-1] == pytest.approx(0.5 * lmax, rel=1e-12)
        ratios = grid[1:] / grid[:-1]
        np.testing.assert_allclose(ratios, ratios[0], rtol=1e-9)

    def test_zero_target_degenerates_to_zero_grid(self):
        planes = bc.decompose(np.array([1, 2, 3], dtype=np.uint32), 2)
        system = ss.build_gram_system(planes, np.zeros(3))
        assert ss.lambda_grid(system).tolist() == [0.0]

    def test_bad_factors_rejected(self):
        with pytest.raises(DatasetError, match="grid"):
            ss.lambda_grid(self.system, ratio=0.0)
        with pytest.raises(DatasetError, match="grid"):
            ss.lambda_grid(self.system, ratio=0.5, max_ratio=0.25)


class TestOrthogonalClosedForm:
    # on an orthogonal design the penalized minimizer is coordinatewise
    # soft(bty_j, lam/2) / G_jj, so the solver can be checked analytically
    def orthogonal_system(self, rng, bits=6, per_plane=40):
        codes = np.repeat(np.power(2, np.arange(bits, dtype=np.uint32)), per_plane)
        rng.shuffle(codes)
        y = (codes + rng.uniform(-0.4, 0.4, size=codes.size)) * 0.37
        return ss.build_gram_system(bc.decompose(codes, bits), y)

    def test_matches_soft_threshold(self):
        rng = np.random.default_rng(23)
        system = self.orthogonal_system(rng)
        for frac in (0.01, 0.1, 0.4, 0.9):
            lam = frac * ss.lambda_max(system)
            sol = ss.solve_lasso(system, lam)
            want = (np.sign(system.bty)
                    * np.maximum(np.abs(system.bty) - lam / 2.0, 0.0)
                    / np.diag(system.gram))
            np.testing.assert_allclose(sol.alpha, want, rtol=0, atol=1e-10)

    def test_nonnegative_matches_positive_part(self):
        rng = np.random.default_rng(24)
        system = self.orthogonal_system(rng)
        # flip one correlation negative; the constrained fit must pin it at 0
        bty = system.bty.copy()
        bty[2] = -bty[2]
        system = ss.GramSystem(gram=system.gram, bty=bty, yty=system.yty,
                               num_rows=system.num_rows)
        lam = 0.2 * ss.lambda_max(system)
        sol = ss.solve_lasso(system, lam, nonnegative=True)
        want = np.maximum(system.bty - lam / 2.0, 0.0) / np.diag(system.gram)
        np.testing.assert_allclose(sol.alpha, want, rtol=0, atol=1e-10)
        assert np.all(sol.alpha >= 0.0)


class TestFrozenCorrelatedSystem:
    # reference solutions computed offline by two million proximal-gradient
    # iterations on the exact same statistics; digits frozen here
    def frozen_system(self):
        codes = np.array([1, 2, 3, 5, 7, 8, 9, 12, 15, 4, 6, 11], dtype=np.uint32)
        y = 0.7 * codes.astype(np.float64) + np.sin(np.arange(codes.size))
        return ss.build_gram_system(bc.decompose(codes, 4), y)

    def test_statistics(self):
        system = self.frozen_system()
        assert system.gram.tolist() == [[7, 4, 3, 3], [4, 6, 3, 2],
                                        [3, 3, 6, 2], [3, 2, 2, 5]]
        np.testing.assert_allclose(
            system.bty, [35.70356748145137, 31.239312845508955,
                         35.1987597324465, 37.9080148659294], rtol=1e-14)
        assert system.yty == pytest.approx(385.3893024882495, rel=1e-14)
        assert ss.lambda_max(system) == pytest.approx(75.8160297318588, rel=1e-14)

    def test_penalized_solutions(self):
        system = self.frozen_system()
        cases = {
            5.0: ([0.6457991853468443, 1.269011990156416,
                   2.8040940142512123, 5.064881060214722], 56.4481527548731),
            40.0: ([0.47569528180306353, 0.0,
                    1.380635053621004, 2.7439317826556393], 307.79687791677463),
        }
        for lam, (alpha_want, obj_want) in cases.items():
            sol = ss.solve_lasso(system, lam)
            np.testing.assert_allclose(sol.alpha, alpha_want, rtol=0, atol=1e-8)
            assert ss.objective(system, sol.alpha, lam) == pytest.approx(
                obj_want, rel=1e-12)
        # the lam=40 solution drops plane 2 but keeps exact zeros exact
        assert ss.solve_lasso(system, 40.0).support == (1, 3, 4)

    def test_unpenalized_solution(self):
        system = self.frozen_system()
        sol = ss.solve_lasso(system, 0.0)
        np.testing.assert_allclose(
            sol.alpha, [0.6645491853468427, 1.4627619901564166,
                        3.0040940142512125, 5.3961310602147226],
            rtol=0, atol=1e-10)
        assert sol.residual_sse == pytest.approx(5.669846505027124, rel=1e-10)


class TestSolveLasso:
    def setup_method(self):
        self.rng = np.random.default_rng(25)

    def test_certificate_on_random_systems(self):
        for _ in range(25):
            system = random_system(self.rng)
            for frac in (0.001, 0.05, 0.3, 0.8):
                lam = frac * ss.lambda_max(system)
                sol = ss.solve_lasso(system, lam)
                assert subgradient_gap(system, sol.alpha, lam) <= 1e-8

    def test_zero_penalty_matches_normal_equations(self):
        for _ in range(10):
            system = random_system(self.rng)
            sol = ss.solve_lasso(system, 0.0)
            ref = np.linalg.lstsq(system.gram, system.bty, rcond=None)[0]
            assert np.linalg.norm(sol.alpha - ref) <= 1e-8 * max(
                1.0, np.linalg.norm(ref))

    def test_at_and_above_lambda_max_exactly_zero(self):
        for _ in range(10):
            system = random_system(self.rng)
            lmax = ss.lambda_max(system)
            for lam in (lmax, 1.5 * lmax):
                assert np.all(ss.solve_lasso(system, lam).alpha == 0.0)
                assert np.all(ss.solve_lasso(system, lam,
                                             nonnegative=True).alpha == 0.0)

    def test_support_and_sse_fields_consistent(self):
        system = random_system(self.rng)
        sol = ss.solve_lasso(system, 0.1 * ss.lambda_max(system))
        assert sol.support == tuple(int(j) + 1 for j in np.flatnonzero(sol.alpha))
        direct = ss.residual_sse(system, sol.alpha)
        assert sol.residual_sse == pytest.approx(direct, rel=1e-12, abs=1e-12)

    def test_warm_start_agrees_with_cold(self):
        system = random_system(self.rng)
        lam = 0.2 * ss.lambda_max(system)
        cold = ss.solve_lasso(system, lam)
        warm = ss.solve_lasso(system, lam,
                              warm_start=np.linalg.lstsq(system.gram, system.bty,
                                                         rcond=None)[0])
        assert ss.objective(system, warm.alpha, lam) == pytest.approx(
            ss.objective(system, cold.alpha, lam), rel=1e-10)

    def test_nonnegative_certificate(self):
        # targets with a negative stretch force active sign constraints
        for _ in range(10):
            system = random_system(self.rng)
            bty = system.bty * np.where(np.arange(system.bty.size) % 2, 1.0, -1.0)
            system = ss.GramSystem(gram=system.gram, bty=bty, yty=system.yty,
                                   num_rows=system.num_rows)
            lam = 0.05 * ss.lambda_max(system)
            sol = ss.solve_lasso(system, lam, nonnegative=True)
            assert np.all(sol.alpha >= 0.0)
            grad = 2.0 * (system.gram @ sol.alpha - system.bty)
            for j in range(sol.alpha.size):
                if system.gram[j, j] == 0.0:
                    continue
                if sol.alpha[j] > 0.0:
                    assert abs(grad[j] + lam) <= 1e-8
                else:
                    assert grad[j] >= -lam - 1e-8

    def test_negative_penalty_rejected(self):
        with pytest.raises(DatasetError):
            ss.solve_lasso(random_system(self.rng), -1.0)


class TestSolvePath:
    def setup_method(self):
        self.rng = np.random.default_rng(26)

    def test_monotone_sse_and_l1(self):
        for _ in range(10):
            system = random_system(self.rng)
            path = ss.solve_path(system, ss.lambda_grid(system))
            for a, b in zip(path, path[1:]):
                assert b.residual_sse >= a.residual_sse - 1e-9
                assert np.abs(b.alpha).sum() <= np.abs(a.alpha).sum() + 1e-9

    def test_path_points_match_single_solves(self):
        system = random_system(self.rng)
        grid = ss.lambda_grid(system, num=8)
        path = ss.solve_path(system, grid)
        for lam, sol in zip(grid, path):
            single = ss.solve_lasso(system, float(lam))
            assert ss.objective(system, sol.alpha, float(lam)) == pytest.approx(
                ss.objective(system, single.alpha, float(lam)), rel=1e-10)

    def test_descending_grid_rejected(self):
        system = random_system(self.rng)
        with pytest.raises(DatasetError, match="ascending"):
            ss.solve_path(system, np.array([2.0, 1.0]))


class TestRestrictedLeastSquares:
    def setup_method(self):
        self.rng = np.random.default_rng(27)

    def test_matches_lstsq_on_submatrix(self):
        for _ in range(10):
            system = random_system(self.rng, bits=6)
            support = (2, 3, 6)
            alpha, sse = ss.restricted_least_squares(system, support)
            idx = [j - 1 for j in support]
            sub = system.gram[np.ix_(idx, idx)]
            ref = np.linalg.solve(sub, system.bty[idx])
            np.testing.assert_allclose(alpha[idx], ref, rtol=1e-9)
            off = np.setdiff1d(np.arange(6), idx)
            assert np.all(alpha[off] == 0.0)
            assert sse == pytest.approx(ss.residual_sse(system, alpha), abs=1e-9)

    def test_empty_support(self):
        system = random_system(self.rng)
        alpha, sse = ss.restricted_least_squares(system, ())
        assert np.all(alpha == 0.0)
        assert sse == pytest.approx(system.yty, rel=1e-15)


class TestExactL0Oracle:
    def setup_method(self):
        self.rng = np.random.default_rng(28)

    def brute_force(self, system, max_bits):
        bits = system.bty.size
        best = (np.inf, np.zeros(bits))
        for d in range(1, max_bits + 1):
            for sup in itertools.combinations(range(bits), d):
                idx = list(sup)
                sub = system.gram[np.ix_(idx, idx)]
                try:
                    coef = np.linalg.solve(sub, system.bty[idx])
                except np.linalg.LinAlgError:
                    coef = np.linalg.lstsq(sub, system.bty[idx], rcond=None)[0]
                alpha = np.zeros(bits)
                alpha[idx] = coef
                sse = ss.residual_sse(system, alpha)
                if sse < best[0]:
                    best = (sse, alpha)
        return best

    def test_matches_brute_force(self):
        for _ in range(6):
            system = random_system(self.rng, bits=5, rows=200)
            for d in (1, 2, 4):
                oracle = ss.exact_l0_oracle(system, d)
                want_sse, _ = self.brute_force(system, d)
                assert oracle.residual_sse == pytest.approx(want_sse, abs=1e-9)
                assert len(oracle.support) <= d

    def test_full_size_equals_least_squares(self):
        system = random_system(self.rng, bits=4, rows=100)
        oracle = ss.exact_l0_oracle(system, 4)
        full = ss.solve_lasso(system, 0.0)
        assert oracle.residual_sse <= full.residual_sse + 1e-9
