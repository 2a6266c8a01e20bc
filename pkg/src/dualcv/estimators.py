"""Price estimators: plain Monte Carlo, martingale control variate, dual bound.

All estimators reduce a payoff matrix and a stop-time vector (or, for the
dual bound, a martingale matrix) to a PriceEstimate carrying the sample
mean and the standard deviation of the estimator itself.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dual_martingale import MartingaleMatrix
from .market import PayoffMatrix
from .stopping import StopTimes


@dataclass(frozen=True)
class PriceEstimate:
    """Point estimate with estimator-scale standard error.

    stderr is the sample standard deviation divided by sqrt(q); it is
    None when fewer than two samples are available.  lam is the fitted
    control-variate coefficient where applicable.
    """

    mean: float
    stderr: float | None
    q: int
    lam: float | None = None


@dataclass(frozen=True)
class VarianceDecomposition:
    """Within-run vs. total variance of a repeatedly refitted estimator.

    within_run_var is the mean over runs of the per-run sample variance
    of the stopped payoff; total_var is q times the across-run variance
    of the run means.  Their gap measures the variance contributed by
    re-estimating the policy itself.
    """

    within_run_var: float
    total_var: float
    runs: int
    q: int

    @property
    def within_std(self) -> float:
        """Estimator-scale standard deviation from within-run spread."""
        return float(np.sqrt(self.within_run_var / self.q))

    @property
    def total_std(self) -> float:
        """Estimator-scale standard deviation across runs."""
        return float(np.sqrt(self.total_var / self.q))


def _estimate(samples: np.ndarray, lam: float | None = None) -> PriceEstimate:
    q = samples.shape[0]
    stderr = float(samples.std(ddof=1) / np.sqrt(q)) if q >= 2 else None
    return PriceEstimate(mean=float(samples.mean()), stderr=stderr, q=q, lam=lam)


def stopped_values(matrix: np.ndarray, tau: StopTimes) -> np.ndarray:
    if matrix.shape[0] != tau.tau.shape[0]:
        raise ValueError("path counts do not match")
    return matrix[np.arange(matrix.shape[0]), tau.tau]


def mc_price(z: PayoffMatrix, tau: StopTimes) -> PriceEstimate:
    """Plain Monte Carlo price: mean of the stopped discounted payoff."""
    return _estimate(stopped_values(z.z, tau))


def cv_price(z: PayoffMatrix, m: MartingaleMatrix, tau: StopTimes) -> PriceEstimate:
    """Control-variate price: mean of Z_tau - lam * M_tau.

    lam = sum(Z_tau M_tau) / sum(M_tau^2) minimizes the asymptotic
    variance; when M_tau is identically zero this falls back to the
    plain estimator with lam unset.
    """
    ztau = stopped_values(z.z, tau)
    mtau = stopped_values(m.m, tau)
    denom = float(mtau @ mtau)
    if denom == 0.0:
        return _estimate(ztau)
    lam = float(ztau @ mtau) / denom
    return _estimate(ztau - lam * mtau, lam=lam)


def dual_price(z: PayoffMatrix, m: MartingaleMatrix) -> PriceEstimate:
    """Dual upper-bound estimator: mean of max_n (Z_n - M_n)."""
    if z.z.shape != m.m.shape:
        raise ValueError("payoff and martingale matrices must have the same shape")
    return _estimate(np.max(z.z - m.m, axis=1))


def variance_decomposition(run_samples: Sequence[np.ndarray]) -> VarianceDecomposition:
    """Split estimator variance into within-run and across-run parts.

    run_samples holds one stopped-payoff sample set per independent run
    (each run refits its policy, or not, depending on what is being
    measured).  Requires at least two runs of equal size.
    """
    runs = len(run_samples)
    if runs < 2:
        raise ValueError("need at least two runs to decompose the variance")
    sizes = {len(s) for s in run_samples}
    if len(sizes) != 1:
        raise ValueError("all runs must have the same sample count")
    q = sizes.pop()
    per_run_var = np.array([np.var(s, ddof=1) for s in run_samples])
    means = np.array([np.mean(s) for s in run_samples])
    return VarianceDecomposition(
        within_run_var=float(per_run_var.mean()),
        total_var=float(q * means.var(ddof=1)),
        runs=runs,
        q=q,
    )
