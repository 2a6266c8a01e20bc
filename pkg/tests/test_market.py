import numpy as np
import pytest

import dualcv as dc
from dualcv.market import payoff_values


def tent(s, k1, k2):
    """Independent oracle for the put butterfly: tent with apex (k2-k1)/2."""
    mid = 0.5 * (k1 + k2)
    return np.maximum(0.0, 0.5 * (k2 - k1) - np.abs(np.asarray(s) - mid))


class TestModelSpec:
    def test_broadcasts_scalars(self):
        m = dc.ModelSpec(d=3, s0=100.0, r=0.05, delta=0.0, sigma=0.2, T=1.0, N=10)
        assert m.s0 == (100.0, 100.0, 100.0)
        assert m.sigma == (0.2, 0.2, 0.2)

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(s0=-1.0),
            dict(T=0.0),
            dict(N=0),
            dict(Nbar=0),
            dict(sigma=-0.1),
            dict(s0=(100.0, 100.0)),
        ],
    )
    def test_rejects_invalid(self, kwargs):
        base = dict(d=1, s0=100.0, r=0.06, delta=0.0, sigma=0.4, T=0.5, N=10, Nbar=1)
        base.update(kwargs)
        with pytest.raises(ValueError):
            dc.ModelSpec(**base)

    def test_fine_grid(self):
        m = dc.ModelSpec(d=1, s0=100.0, r=0.0, delta=0.0, sigma=0.2, T=0.5, N=10, Nbar=5)
        t = m.fine_times()
        assert len(t) == 51
        assert t[0] == 0.0 and t[-1] == 0.5
        assert np.allclose(np.diff(t), 0.01)
        assert list(m.exercise_indices()) == [5 * n for n in range(11)]


class TestSimulatePaths:
    def test_zero_volatility_is_deterministic(self):
        m = dc.ModelSpec(d=1, s0=100.0, r=0.06, delta=0.0, sigma=0.0, T=0.5, N=5, Nbar=2)
        pb = dc.simulate_paths(m, 50, 1)
        expected = 100.0 * np.exp(0.06 * pb.times)
        assert np.allclose(pb.values[:, :, 0], expected[None, :], rtol=1e-12)

    def test_determinism_and_seed_sensitivity(self, table1_model):
        a = dc.simulate_paths(table1_model, 200, 7)
        b = dc.simulate_paths(table1_model, 200, 7)
        c = dc.simulate_paths(table1_model, 200, 8)
        assert np.array_equal(a.values, b.values)
        assert not np.array_equal(a.values, c.values)

    def test_path_i_independent_of_batch_size(self, table1_model):
        small = dc.simulate_paths(table1_model, 3, 42)
        large = dc.simulate_paths(table1_model, 40_000, 42)
        assert np.array_equal(small.values, large.values[:3])

    def test_initial_prices_exact(self, table1_model):
        pb = dc.simulate_paths(table1_model, 100, 0)
        assert np.all(pb.values[:, 0, 0] == 100.0)
        assert pb.discount[0] == 1.0
        assert np.all(pb.values > 0)

    def test_discounted_tradable_is_martingale(self):
        # empirical mean of exp((delta-r)T) S_T equals s0 within 3 stderr
        m = dc.ModelSpec(d=1, s0=100.0, r=0.06, delta=0.0, sigma=0.4, T=0.5, N=1, Nbar=1)
        pb = dc.simulate_paths(m, 1_000_000, 3)
        x = np.exp(-0.06 * 0.5) * pb.values[:, -1, 0]
        se = x.std(ddof=1) / np.sqrt(len(x))
        assert abs(x.mean() - 100.0) < 3 * se

    def test_subtick_increments_mean_zero(self, table1_model):
        pb = dc.simulate_paths(table1_model, 100_000, 5)
        a = pb.tradables()[:, :, 0]
        inc = np.diff(a, axis=1)
        se = inc.std(axis=0, ddof=1) / np.sqrt(pb.q)
        assert np.all(np.abs(inc.mean(axis=0)) <= 3 * se)

    def test_rejects_bad_q_and_seed(self, table1_model):
        with pytest.raises(ValueError):
            dc.simulate_paths(table1_model, 0, 1)
        with pytest.raises(ValueError):
            dc.simulate_paths(table1_model, 10, -1)


class TestPayoffs:
    def test_put(self):
        assert dc.payoff_value(dc.PayoffSpec.put(100.0), [90.0]) == 10.0
        assert dc.payoff_value(dc.PayoffSpec.put(100.0), [110.0]) == 0.0

    def test_butterfly_matches_tent_oracle(self):
        # resolves the sign convention: tabulate on [80, 120] against the tent
        payoff = dc.PayoffSpec.butterfly(90.0, 110.0)
        grid = np.linspace(80.0, 120.0, 401)
        got = payoff_values(payoff, grid[:, None])
        assert np.allclose(got, tent(grid, 90.0, 110.0), atol=1e-12)
        assert dc.payoff_value(payoff, [100.0]) == 10.0  # apex (K2-K1)/2

    def test_max_call(self):
        assert dc.payoff_value(dc.PayoffSpec.max_call(100.0), [95.0, 105.0]) == 5.0
        assert dc.payoff_value(dc.PayoffSpec.max_call(100.0), [95.0, 99.0]) == 0.0

    def test_basket_put(self):
        assert dc.payoff_value(dc.PayoffSpec.basket_put(100.0), [90.0, 100.0, 95.0]) == 5.0

    def test_min_butterfly(self):
        payoff = dc.PayoffSpec.min_butterfly(90.0, 110.0)
        assert dc.payoff_value(payoff, [100.0, 95.0]) == 5.0
        assert dc.payoff_value(payoff, [100.0, 120.0]) == 0.0

    def test_all_kinds_nonnegative_on_dense_grid(self):
        rng = np.random.default_rng(0)
        s1 = np.linspace(1.0, 250.0, 500)[:, None]
        s2 = rng.uniform(1.0, 250.0, size=(2000, 2))
        s3 = rng.uniform(1.0, 250.0, size=(2000, 3))
        cases = [
            (dc.PayoffSpec.put(100.0), s1),
            (dc.PayoffSpec.butterfly(90.0, 110.0), s1),
            (dc.PayoffSpec.basket_put(100.0), s3),
            (dc.PayoffSpec.max_call(100.0), s2),
            (dc.PayoffSpec.min_butterfly(90.0, 110.0), s2),
        ]
        for payoff, states in cases:
            assert np.all(payoff_values(payoff, states) >= 0.0), payoff.kind

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            dc.payoff_value(dc.PayoffSpec.put(100.0), [90.0, 95.0])

    @pytest.mark.parametrize(
        "kind,strikes",
        [("put", (-5.0,)), ("butterfly", (110.0, 90.0)), ("butterfly", (90.0,)), ("nope", (1.0,))],
    )
    def test_invalid_specs(self, kind, strikes):
        with pytest.raises(ValueError):
            dc.PayoffSpec(kind, strikes)


class TestDiscountedPayoffs:
    def test_zero_rate_is_undiscounted(self):
        m = dc.ModelSpec(d=1, s0=100.0, r=0.0, delta=0.0, sigma=0.4, T=0.5, N=4, Nbar=1)
        pb = dc.simulate_paths(m, 500, 2)
        z = dc.discounted_payoffs(pb, dc.PayoffSpec.put(100.0))
        raw = np.maximum(100.0 - pb.values[:, pb.exercise_index, 0], 0.0)
        assert np.array_equal(z.z, raw)

    def test_zero_vol_put_is_zero(self):
        # deterministic path grows at r, so the ATM put is never in the money
        m = dc.ModelSpec(d=1, s0=100.0, r=0.06, delta=0.0, sigma=0.0, T=0.5, N=5, Nbar=1)
        pb = dc.simulate_paths(m, 10, 2)
        z = dc.discounted_payoffs(pb, dc.PayoffSpec.put(100.0))
        assert np.all(z.z == 0.0)

    def test_date0_constant(self, table1_model):
        pb = dc.simulate_paths(table1_model, 1000, 9)
        z = dc.discounted_payoffs(pb, dc.PayoffSpec.put(105.0))
        assert np.all(z.z[:, 0] == 5.0)

    def test_terminal_mean_matches_black_scholes(self, table1_model, put100):
        pb = dc.simulate_paths(table1_model, 200_000, 17)
        z = dc.discounted_payoffs(pb, put100)
        ref = dc.european_put_closed_form(100.0, 100.0, 0.06, 0.4, 0.5)
        se = z.z[:, -1].std(ddof=1) / np.sqrt(pb.q)
        assert abs(z.z[:, -1].mean() - ref) < 3 * se


class TestEuropeanPut:
    def test_reference_value(self):
        # 9.6642 is the known Black-Scholes value for these parameters
        assert dc.european_put_closed_form(100.0, 100.0, 0.06, 0.4, 0.5) == pytest.approx(
            9.6642, abs=1e-4
        )

    def test_vanishing_volatility_limit(self):
        assert dc.european_put_closed_form(100.0, 100.0, 0.06, 1e-9, 0.5) == pytest.approx(0.0, abs=1e-12)

    def test_short_maturity_limit(self):
        assert dc.european_put_closed_form(90.0, 100.0, 0.06, 0.4, 1e-12) == pytest.approx(10.0, abs=1e-6)

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            dc.european_put_closed_form(100.0, 100.0, 0.06, 0.4, 0.0)
