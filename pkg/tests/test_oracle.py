import numpy as np
import pytest

import dualcv as dc
from dualcv import oracle as orc


class TestSolveTree:
    def test_one_step_put_by_hand(self):
        # E[Z_1] = 0.5*0 + 0.5*10 = 5, U_0 = max(0, 5) = 5
        tree = dc.TreeModel(N=1, u=1.1, d=0.9, p=0.5, s0=100.0)
        sol = dc.solve_tree(tree, dc.PayoffSpec.put(100.0))
        assert sol.u0 == pytest.approx(5.0, abs=1e-14)
        assert sol.exercise[0][0] == (sol.z[0][0] >= sol.cont[0][0])

    def test_zero_payoff(self, half_tree):
        sol = dc.solve_tree(half_tree, lambda s: np.zeros_like(s))
        for arr in sol.u_env:
            assert np.all(arr == 0.0)
        for arr in sol.a_inc + sol.m_up + sol.m_dn:
            assert np.all(arr == 0.0)

    def test_martingale_payoff_never_waits(self):
        # payoff = discounted asset: Z is a martingale, U = Z, tau* = 0, A* = 0
        tree = dc.TreeModel(N=3, u=1.2, d=0.8, p=0.5, s0=100.0)
        sol = dc.solve_tree(tree, lambda s: np.asarray(s, dtype=float))
        for n in range(4):
            assert np.allclose(sol.u_env[n], sol.z[n], atol=1e-12)
        assert sol.exercise[0][0]
        for arr in sol.a_inc:
            assert np.all(np.abs(arr) < 1e-12)

    def test_invalid_trees(self):
        with pytest.raises(ValueError):
            dc.TreeModel(N=3, u=0.8, d=1.2, p=0.5, s0=100.0)
        with pytest.raises(ValueError):
            dc.TreeModel(N=3, u=1.2, d=0.8, p=1.5, s0=100.0)


class TestEnumeratePaths:
    def test_counts(self):
        assert dc.enumerate_paths(dc.TreeModel(N=1, u=1.1, d=0.9, p=0.3, s0=1.0)).prices.shape == (2, 2)
        assert dc.enumerate_paths(dc.TreeModel(N=3, u=1.1, d=0.9, p=0.3, s0=1.0)).prices.shape == (8, 4)

    @pytest.mark.parametrize("p", [0.3, 0.5, 0.77])
    def test_probabilities_sum_to_one(self, p):
        paths = dc.enumerate_paths(dc.TreeModel(N=6, u=1.1, d=0.9, p=p, s0=1.0))
        assert abs(paths.prob.sum() - 1.0) < 1e-12

    def test_enumeration_cap(self):
        with pytest.raises(ValueError):
            dc.enumerate_paths(dc.TreeModel(N=21, u=1.1, d=0.9, p=0.5, s0=1.0))


class TestExactIdentities:
    @pytest.mark.parametrize(
        "tree",
        [
            dc.TreeModel(N=3, u=1.2, d=0.8, p=0.5, s0=100.0),
            dc.TreeModel(N=5, u=1.2, d=0.8, p=0.5, s0=100.0),
            dc.TreeModel(N=5, u=1.15, d=0.9, p=0.4, s0=95.0, discount=0.98),
        ],
    )
    def test_all_identities_hold(self, tree):
        sol = dc.solve_tree(tree, dc.PayoffSpec.put(100.0))
        report = dc.exact_identity_checks(tree, sol)
        assert report.all_passed, str(report)

    def test_zero_payoff_trivially_passes(self, half_tree):
        sol = dc.solve_tree(half_tree, lambda s: np.zeros_like(s))
        assert dc.exact_identity_checks(half_tree, sol).all_passed

    def test_doob_reconstruction_precision(self, half_tree):
        sol = dc.solve_tree(half_tree, dc.PayoffSpec.put(100.0))
        paths = orc.enumerate_paths(half_tree)
        proc = orc.path_processes(half_tree, sol, paths)
        err = np.abs(proc["u"] - (sol.u0 + proc["m"] - proc["a"]))
        assert err.max() < 1e-12

    def test_corrupted_martingale_breaks_zero_variance(self, half_tree):
        # weak duality: noise added to M* strictly raises the dual estimate
        sol = dc.solve_tree(half_tree, dc.PayoffSpec.put(100.0))
        paths = orc.enumerate_paths(half_tree)
        proc = orc.path_processes(half_tree, sol, paths)
        rng = np.random.default_rng(5)
        noisy = proc["m"] + np.cumsum(rng.normal(0, 2.0, size=proc["m"].shape), axis=1)
        noisy[:, 0] = 0.0
        dual = float(paths.prob @ np.max(proc["z"] - noisy, axis=1))
        assert dual > sol.u0 + 0.1

    def test_one_step_dual_max(self):
        tree = dc.TreeModel(N=1, u=1.1, d=0.9, p=0.5, s0=100.0)
        sol = dc.solve_tree(tree, dc.PayoffSpec.put(100.0))
        paths = orc.enumerate_paths(tree)
        proc = orc.path_processes(tree, sol, paths)
        assert np.allclose(np.max(proc["z"] - proc["m"], axis=1), 5.0, atol=1e-12)


class TestSmallestSupermartingale:
    def test_dominates_and_contracts(self, half_tree):
        sol = dc.solve_tree(half_tree, dc.PayoffSpec.put(100.0))
        for n in range(half_tree.N):
            assert np.all(sol.u_env[n] >= sol.z[n])
            assert np.all(sol.cont[n] <= sol.u_env[n] + 1e-14)

    def test_stopped_envelope_martingale(self, half_tree):
        sol = dc.solve_tree(half_tree, dc.PayoffSpec.put(100.0))
        paths = orc.enumerate_paths(half_tree)
        proc = orc.path_processes(half_tree, sol, paths)
        rows = np.arange(len(paths.prob))
        for n in range(half_tree.N + 1):
            idx = np.minimum(n, proc["tau_star"])
            val = float(paths.prob @ proc["u"][rows, idx])
            assert val == pytest.approx(sol.u0, abs=1e-12)
