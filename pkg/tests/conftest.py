import numpy as np
import pytest

import dualcv as dc


@pytest.fixture(scope="session")
def table1_model():
    """Put-option market of the one-dimensional experiments (fine grid Nbar=5)."""
    return dc.ModelSpec(d=1, s0=100.0, r=0.06, delta=0.0, sigma=0.4, T=0.5, N=10, Nbar=5)


@pytest.fixture(scope="session")
def put100():
    return dc.PayoffSpec.put(100.0)


@pytest.fixture(scope="session")
def fitted_put(table1_model, put100):
    """One moderate-size fitted martingale shared by the statistical tests."""
    paths = dc.simulate_paths(table1_model, 40_000, 914)
    z = dc.discounted_payoffs(paths, put100)
    basis = dc.increment_basis_from_paths(paths, 20)
    return dc.fit_dual_coefficients(paths, z, basis)


@pytest.fixture(scope="session")
def half_tree():
    """Risk-neutral tree with p = 1/2, so enumerated paths are equal-weight."""
    return dc.TreeModel(N=4, u=1.2, d=0.8, p=0.5, s0=100.0)
