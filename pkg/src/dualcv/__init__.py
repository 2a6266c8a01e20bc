"""Bermudan option pricing by Monte Carlo with an approximate Doob martingale.

The package fits a dual martingale by backward least squares on
elementary hedging increments, uses it as a control variate for
Longstaff-Schwartz primal prices, computes the dual upper bound, builds
a proxy stopping policy from the martingale alone, and verifies
everything against an exact binomial-tree oracle.
"""

from .market import (
    ModelSpec,
    PathBatch,
    PayoffMatrix,
    PayoffSpec,
    discounted_payoffs,
    european_put_closed_form,
    payoff_value,
    payoff_values,
    simulate_paths,
)
from .regression import (
    LeastSquaresResult,
    LocalBasis,
    PolynomialBasis,
    build_local_basis,
    build_polynomial_basis,
    evaluate_features,
    least_squares_fit,
)
from .dual_martingale import (
    DualMartingale,
    IncrementBasis,
    MartingaleMatrix,
    elementary_increments,
    evaluate_martingale,
    fit_dual_coefficients,
    increment_basis_from_breakpoints,
    increment_basis_from_paths,
    load_martingale,
    save_martingale,
)
from .stopping import (
    PolicyRegressors,
    ProxyResult,
    StopTimes,
    apply_policy,
    fit_policy,
    policy_histogram,
    proxy_policy,
)
from .estimators import (
    PriceEstimate,
    VarianceDecomposition,
    cv_price,
    dual_price,
    mc_price,
    variance_decomposition,
)
from .oracle import (
    TreeModel,
    TreeSolution,
    enumerate_paths,
    exact_identity_checks,
    solve_tree,
)
from .harness import (
    ExperimentConfig,
    ResultRow,
    WeakDualityError,
    load_config,
    run_experiment,
    run_histogram,
    run_oracle_suite,
    run_variance_decomposition,
)
