"""Regression bases and a rank-tolerant linear least-squares solver.

Two feature families are used throughout: global polynomials of bounded
total degree (continuation-value regressions) and per-dimension indicator
bins with quantile breakpoints (dual-martingale increments).  The solver
works off the normal equations with spectral truncation, so exactly
rank-deficient designs (one-hot bins summing to a constant, duplicated
columns) are handled without blowing up.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

# Relative singular-value cutoff: directions below RANK_RTOL * sigma_max
# get zero weight.
RANK_RTOL = 1e-10


@dataclass(frozen=True)
class PolynomialBasis:
    """All monomials of total degree <= degree in d variables, constant first."""

    degree: int
    d: int
    exponents: tuple[tuple[int, ...], ...]

    @property
    def size(self) -> int:
        return len(self.exponents)


@dataclass(frozen=True)
class LocalBasis:
    """Indicator basis with P cells per dimension.

    breakpoints[k] holds the P-1 strictly increasing thresholds of
    dimension k; a state equal to a threshold falls in the right cell.
    """

    breakpoints: tuple[np.ndarray, ...]
    P: int
    d: int

    def __post_init__(self):
        for bp in self.breakpoints:
            bp.setflags(write=False)

    @property
    def size(self) -> int:
        return self.P * self.d


@dataclass(frozen=True)
class LeastSquaresResult:
    coefficients: np.ndarray
    rank: int
    residual_norm: float


def build_polynomial_basis(degree: int, d: int) -> PolynomialBasis:
    if degree < 0 or d < 1:
        raise ValueError("degree must be >= 0 and d >= 1")
    exps = sorted(
        (e for e in itertools.product(range(degree + 1), repeat=d) if sum(e) <= degree),
        key=lambda e: (sum(e), e),
    )
    basis = PolynomialBasis(degree=degree, d=d, exponents=tuple(exps))
    assert basis.size == math.comb(degree + d, d)
    return basis


def quantile_breakpoints(samples: np.ndarray, P: int) -> np.ndarray:
    """Empirical k/P quantiles, k=1..P-1, of a 1-d sample."""
    if P == 1:
        return np.empty(0)
    return np.quantile(np.asarray(samples, dtype=float), np.arange(1, P) / P)


def build_local_basis(samples, P: int) -> LocalBasis:
    """Local basis with equal-occupancy cells from sample quantiles.

    samples is (q,) or (q, d).  Raises if a dimension's quantiles are not
    strictly increasing (degenerate sample).
    """
    if P < 1:
        raise ValueError("P must be >= 1")
    samples = np.asarray(samples, dtype=float)
    if samples.ndim == 1:
        samples = samples[:, None]
    q, d = samples.shape
    if q < P:
        raise ValueError(f"need at least P={P} samples per dimension, got {q}")
    breakpoints = []
    for k in range(d):
        bp = quantile_breakpoints(samples[:, k], P)
        if bp.size and not np.all(np.diff(bp) > 0):
            raise ValueError(f"degenerate samples in dimension {k}: quantiles are not distinct")
        breakpoints.append(bp)
    return LocalBasis(breakpoints=tuple(breakpoints), P=P, d=d)


def bin_indices(breakpoints: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Cell index of each value; values equal to a threshold go right."""
    return np.searchsorted(breakpoints, x, side="right")


def evaluate_features(basis, state: np.ndarray) -> np.ndarray:
    """Feature vector(s) of a state (d,) or a batch (q, d)."""
    state = np.asarray(state, dtype=float)
    single = state.ndim == 1
    if single:
        state = state[None, :]
    if state.shape[1] != basis.d:
        raise ValueError(f"state dimension {state.shape[1]} does not match basis d={basis.d}")

    if isinstance(basis, PolynomialBasis):
        q = state.shape[0]
        # per-dimension power tables, then product across dimensions
        pows = [state[:, k : k + 1] ** np.arange(basis.degree + 1) for k in range(basis.d)]
        exps = np.asarray(basis.exponents)
        feats = np.ones((q, basis.size))
        for k in range(basis.d):
            feats *= pows[k][:, exps[:, k]]
    elif isinstance(basis, LocalBasis):
        q = state.shape[0]
        feats = np.zeros((q, basis.d * basis.P))
        rows = np.arange(q)
        for k in range(basis.d):
            idx = bin_indices(basis.breakpoints[k], state[:, k])
            feats[rows, k * basis.P + idx] = 1.0
    else:
        raise TypeError(f"unsupported basis type {type(basis).__name__}")
    return feats[0] if single else feats


def solve_gram(gram: np.ndarray, cross: np.ndarray, rank_rtol: float = RANK_RTOL) -> tuple[np.ndarray, int]:
    """Minimum-norm solution of gram @ w = cross with spectral truncation.

    gram is X'X, so the singular-value cutoff on X squares to rank_rtol**2
    on the eigenvalues here; forming the Gram also floors what is
    distinguishable from zero at L*eps relative, so structurally null
    directions (whose eigenvalues surface as eps-level noise) are dropped
    rather than amplified.
    """
    if not (np.all(np.isfinite(gram)) and np.all(np.isfinite(cross))):
        raise ValueError("non-finite values in the normal equations")
    eigvals, eigvecs = np.linalg.eigh(gram)
    rtol = max(rank_rtol**2, gram.shape[0] * np.finfo(float).eps)
    cutoff = rtol * max(eigvals[-1], 0.0)
    keep = eigvals > cutoff
    rank = int(np.count_nonzero(keep))
    if rank == 0:
        return np.zeros(gram.shape[0]), 0
    v = eigvecs[:, keep]
    w = v @ ((v.T @ cross) / eigvals[keep])
    return w, rank


def least_squares_fit(features: np.ndarray, targets: np.ndarray) -> LeastSquaresResult:
    """Least squares of targets on feature columns, rank-tolerant.

    Singular directions below RANK_RTOL relative to the largest singular
    value receive zero weight (minimum-norm solution on the rest).
    """
    features = np.asarray(features, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if features.ndim != 2 or targets.ndim != 1 or features.shape[0] != targets.shape[0]:
        raise ValueError("features must be (q, L) and targets (q,) with matching q")
    if features.shape[0] < 1 or features.shape[1] < 1:
        raise ValueError("need at least one sample and one feature")
    if not (np.all(np.isfinite(features)) and np.all(np.isfinite(targets))):
        raise ValueError("non-finite values in regression inputs")
    gram = features.T @ features
    cross = features.T @ targets
    w, rank = solve_gram(gram, cross)
    residual = targets - features @ w
    return LeastSquaresResult(
        coefficients=w,
        rank=rank,
        residual_norm=float(np.linalg.norm(residual)),
    )
