"""Stopping rules: Longstaff-Schwartz variants and the martingale proxy policy.

Three regression-based policies are supported.  'ls1' is the classical
rule built on the payoff alone.  'ls2' regresses the martingale-adjusted
payoff Z_tau - M_tau + M_n but still compares against Z_n, which keeps
the comparison consistent because the martingale increment has zero
conditional mean.  'ls2prime' runs the whole recursion on Z - M; it is
not equivalent and is kept to reproduce its known bias.

The proxy policy needs no regression at all: a backward maximum
recursion on Z - M yields a random time whose stopped value equals the
pathwise maximum of Z - M exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dual_martingale import MartingaleMatrix
from .market import PayoffMatrix
from .regression import LocalBasis, PolynomialBasis, evaluate_features, least_squares_fit

VARIANTS = ("ls1", "ls2", "ls2prime")


@dataclass(frozen=True)
class PolicyRegressors:
    """Frozen continuation-value regressions defining a stopping rule.

    coefficients[n-1] is the weight vector for exercise date n in 1..N-1;
    c0 is the date-0 constant projection of the regressand.  States are
    divided by state_scale before evaluating features (same function
    space, much better conditioned for high polynomial degrees).
    """

    variant: str
    coefficients: tuple[np.ndarray, ...]
    c0: float
    bases: tuple
    state_scale: np.ndarray
    itm_only: bool
    n_dates: int

    def __post_init__(self):
        for c in self.coefficients:
            c.setflags(write=False)
        self.state_scale.setflags(write=False)

    @property
    def needs_martingale(self) -> bool:
        return self.variant in ("ls2", "ls2prime")


@dataclass(frozen=True)
class StopTimes:
    """Per-path exercise index in 0..N."""

    tau: np.ndarray
    n_dates: int

    def __post_init__(self):
        self.tau.setflags(write=False)
        if self.tau.min() < 0 or self.tau.max() > self.n_dates:
            raise ValueError("stop times must lie in 0..N")


@dataclass(frozen=True)
class ProxyResult:
    """Proxy random time tau0 with its value recursion outputs.

    Pathwise, z[tau0] - m[tau0] equals pathmax = max_n (z_n - m_n) and
    u0hat - m_0 equals pathmax as well.
    """

    tau0: np.ndarray
    u0hat: np.ndarray
    pathmax: np.ndarray


def _normalize_bases(basis, n_dates: int) -> tuple:
    if isinstance(basis, (PolynomialBasis, LocalBasis)):
        return tuple([basis] * (n_dates - 1))
    bases = tuple(basis)
    if len(bases) != n_dates - 1:
        raise ValueError(f"need one basis per interior date (N-1={n_dates - 1}), got {len(bases)}")
    return bases


def _features(basis, states_n: np.ndarray, scale: np.ndarray) -> np.ndarray:
    if isinstance(basis, PolynomialBasis):
        return evaluate_features(basis, states_n / scale)
    return evaluate_features(basis, states_n)


def fit_policy(
    z: PayoffMatrix,
    m: MartingaleMatrix | None,
    states: np.ndarray,
    basis,
    variant: str = "ls1",
    itm_only: bool = False,
) -> PolicyRegressors:
    """Backward Longstaff-Schwartz fit over exercise dates N-1 .. 1.

    states holds the exercise-date asset prices, shape (q, N+1, d).
    Ties exercise: the rule stops when Z_n >= the fitted continuation.
    With itm_only, regressions use only paths with positive payoff and
    out-of-the-money paths always continue.
    """
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}")
    if variant != "ls1" and m is None:
        raise ValueError(f"variant {variant!r} requires a fitted martingale matrix")
    zz = z.z
    q, n_cols = zz.shape
    N = n_cols - 1
    if states.shape[:2] != (q, N + 1):
        raise ValueError("states must be (q, N+1, d)")
    mm = m.m if m is not None else np.zeros_like(zz)
    if mm.shape != zz.shape:
        raise ValueError("martingale matrix shape does not match the payoff matrix")

    bases = _normalize_bases(basis, N)
    scale = np.ones(states.shape[2])
    if any(isinstance(b, PolynomialBasis) for b in bases):
        scale = states.reshape(-1, states.shape[2]).mean(axis=0)

    cash = zz[:, N].copy()      # Z at the current stop time
    mstop = mm[:, N].copy()     # M at the current stop time
    coefficients: list[np.ndarray] = [np.empty(0)] * (N - 1)
    for n in range(N - 1, 0, -1):
        if variant == "ls1":
            regressand = cash
        elif variant == "ls2":
            regressand = cash - mstop + mm[:, n]
        else:
            regressand = cash - mstop
        feats = _features(bases[n - 1], states[:, n, :], scale)
        if itm_only:
            sel = zz[:, n] > 0.0
            if not sel.any():
                coefficients[n - 1] = np.zeros(feats.shape[1])
                continue
            coefs = least_squares_fit(feats[sel], regressand[sel]).coefficients
        else:
            coefs = least_squares_fit(feats, regressand).coefficients
        coefficients[n - 1] = coefs
        fitted = feats @ coefs
        level = zz[:, n] - mm[:, n] if variant == "ls2prime" else zz[:, n]
        exercise = level >= fitted
        if itm_only:
            exercise &= zz[:, n] > 0.0
        cash[exercise] = zz[exercise, n]
        mstop[exercise] = mm[exercise, n]

    if variant == "ls1":
        c0 = float(np.mean(cash))
    else:
        c0 = float(np.mean(cash - mstop + mm[:, 0]))
    return PolicyRegressors(
        variant=variant,
        coefficients=tuple(coefficients),
        c0=c0,
        bases=bases,
        state_scale=scale,
        itm_only=itm_only,
        n_dates=N,
    )


def apply_policy(
    regressors: PolicyRegressors,
    z: PayoffMatrix,
    m: MartingaleMatrix | None,
    states: np.ndarray,
) -> StopTimes:
    """Stop at the first date whose exercise comparison fires, out of sample."""
    if regressors.needs_martingale and m is None:
        raise ValueError(f"variant {regressors.variant!r} requires a martingale matrix")
    zz = z.z
    q, n_cols = zz.shape
    N = n_cols - 1
    if N != regressors.n_dates:
        raise ValueError("payoff matrix date count does not match the fitted policy")
    if states.shape[:2] != (q, N + 1):
        raise ValueError("states must be (q, N+1, d)")
    mm = m.m if m is not None else np.zeros_like(zz)

    exercise = np.zeros((q, N + 1), dtype=bool)
    level0 = zz[:, 0] - mm[:, 0] if regressors.variant == "ls2prime" else zz[:, 0]
    exercise[:, 0] = level0 >= regressors.c0
    for n in range(1, N):
        feats = _features(regressors.bases[n - 1], states[:, n, :], regressors.state_scale)
        if feats.shape[1] != regressors.coefficients[n - 1].shape[0]:
            raise ValueError(f"feature dimension mismatch at date {n}")
        fitted = feats @ regressors.coefficients[n - 1]
        level = zz[:, n] - mm[:, n] if regressors.variant == "ls2prime" else zz[:, n]
        exercise[:, n] = level >= fitted
    exercise[:, N] = True
    if regressors.itm_only:
        exercise[:, :N] &= zz[:, :N] > 0.0
    return StopTimes(tau=np.argmax(exercise, axis=1), n_dates=N)


def proxy_policy(z: PayoffMatrix, m: MartingaleMatrix) -> ProxyResult:
    """Random-time proxy of the optimal policy from a martingale alone.

    Backward recursion on D = Z - M: the running maximum V_n =
    max_{n<=p<=N} D_p is the recursion value shifted by M, and tau0 is
    the first date where D attains it.  Works for any martingale input;
    the identities hold pathwise by construction.
    """
    d = z.z - m.m
    v = np.maximum.accumulate(d[:, ::-1], axis=1)[:, ::-1]
    tau0 = np.argmax(d == v, axis=1)
    pathmax = v[:, 0]
    return ProxyResult(tau0=tau0, u0hat=pathmax + m.m[:, 0], pathmax=pathmax)


def policy_histogram(a: StopTimes, b: StopTimes) -> tuple[np.ndarray, np.ndarray]:
    """Counts of the stop-index differences a - b over -N..N.

    Returns (differences, counts), both of length 2N+1.
    """
    if a.tau.shape != b.tau.shape:
        raise ValueError("stop-time vectors must have the same length")
    n = max(a.n_dates, b.n_dates)
    diffs = np.arange(-n, n + 1)
    counts = np.bincount(a.tau - b.tau + n, minlength=2 * n + 1)
    return diffs, counts
