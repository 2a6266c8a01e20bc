"""Market models, payoffs and risk-neutral path simulation.

The market is a d-asset Black-Scholes model observed on a fine grid that
refines each of the N exercise intervals into Nbar sub-steps.  Paths are
simulated with the exact log-normal transition per sub-step, so the
dividend-adjusted discounted asset exp((delta-r)t)*S_t is an exact
discrete-time martingale; the dual-martingale fit relies on that.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

# Paths are generated in fixed-size chunks, one Philox stream per
# (seed, chunk).  The layout never depends on the requested path count,
# so path i is a function of (seed, i) only.
_CHUNK = 1 << 14

PAYOFF_KINDS = ("put", "butterfly", "basket_put", "max_call", "min_butterfly")


def _per_asset(x, d: int, name: str) -> tuple[float, ...]:
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    if arr.size == 1:
        arr = np.full(d, arr.item())
    if arr.shape != (d,):
        raise ValueError(f"{name} must be scalar or length {d}, got shape {arr.shape}")
    return tuple(float(v) for v in arr)


@dataclass(frozen=True)
class ModelSpec:
    """Multi-asset GBM market with N exercise dates and Nbar sub-steps per interval.

    Parameters
    ----------
    d : int
        Number of risky assets (independent Brownian drivers).
    s0 : float or sequence
        Initial prices, broadcast to length d.
    r : float
        Risk-free rate (continuous compounding, per year).
    delta : float or sequence
        Dividend yields per asset.
    sigma : float or sequence
        Volatilities per asset.
    T : float
        Maturity in years.
    N : int
        Number of exercise intervals; exercise dates are T_n = n*T/N, n=0..N.
    Nbar : int
        Sub-steps per exercise interval; the fine grid has N*Nbar+1 points.
    """

    d: int
    s0: tuple[float, ...]
    r: float
    delta: tuple[float, ...]
    sigma: tuple[float, ...]
    T: float
    N: int
    Nbar: int = 1

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("d must be >= 1")
        object.__setattr__(self, "s0", _per_asset(self.s0, self.d, "s0"))
        object.__setattr__(self, "delta", _per_asset(self.delta, self.d, "delta"))
        object.__setattr__(self, "sigma", _per_asset(self.sigma, self.d, "sigma"))
        if any(s <= 0 for s in self.s0):
            raise ValueError("initial prices must be positive")
        if any(v < 0 for v in self.sigma):
            raise ValueError("volatilities must be nonnegative")
        if self.T <= 0:
            raise ValueError("maturity T must be positive")
        if self.N < 1 or self.Nbar < 1:
            raise ValueError("N and Nbar must be >= 1")

    @property
    def n_fine(self) -> int:
        return self.N * self.Nbar

    def fine_times(self) -> np.ndarray:
        return self.T * np.arange(self.n_fine + 1) / self.n_fine

    def exercise_indices(self) -> np.ndarray:
        """Fine-grid index of each exercise date n=0..N."""
        return np.arange(self.N + 1) * self.Nbar


@dataclass(frozen=True)
class PayoffSpec:
    """Contract payoff selector.

    kind is one of 'put', 'butterfly', 'basket_put', 'max_call',
    'min_butterfly'; strikes is (K,) or (K1, K2) as the kind requires.
    """

    kind: str
    strikes: tuple[float, ...]

    def __post_init__(self):
        if self.kind not in PAYOFF_KINDS:
            raise ValueError(f"unknown payoff kind {self.kind!r}")
        strikes = tuple(float(k) for k in np.atleast_1d(self.strikes))
        object.__setattr__(self, "strikes", strikes)
        n_expected = 2 if self.kind in ("butterfly", "min_butterfly") else 1
        if len(strikes) != n_expected:
            raise ValueError(f"{self.kind} needs {n_expected} strike(s), got {len(strikes)}")
        if any(k <= 0 for k in strikes):
            raise ValueError("strikes must be positive")
        if n_expected == 2 and not strikes[0] < strikes[1]:
            raise ValueError("butterfly strikes require K1 < K2")

    @classmethod
    def put(cls, K):
        return cls("put", (K,))

    @classmethod
    def butterfly(cls, K1, K2):
        return cls("butterfly", (K1, K2))

    @classmethod
    def basket_put(cls, K):
        return cls("basket_put", (K,))

    @classmethod
    def max_call(cls, K):
        return cls("max_call", (K,))

    @classmethod
    def min_butterfly(cls, K1, K2):
        return cls("min_butterfly", (K1, K2))


@dataclass(frozen=True)
class PathBatch:
    """Simulated asset paths on the fine grid plus risk-free numeraire values.

    values has shape (q, n_fine+1, d); discount[g] = exp(r * t_g) is the
    risk-free asset, so discounted payoffs are payoff / discount.  Arrays
    are frozen after construction and safe to share.
    """

    q: int
    values: np.ndarray
    discount: np.ndarray
    times: np.ndarray
    seed: int
    n_dates: int
    nbar: int
    model: ModelSpec | None = None

    def __post_init__(self):
        for arr in (self.values, self.discount, self.times):
            arr.setflags(write=False)
        if self.values.shape[0] != self.q:
            raise ValueError("values row count does not match q")
        if self.values.shape[1] != self.n_dates * self.nbar + 1:
            raise ValueError("values must cover the full fine grid")
        if self.discount[0] != 1.0:
            raise ValueError("discount[0] must be 1")

    @property
    def d(self) -> int:
        return self.values.shape[2]

    @property
    def exercise_index(self) -> np.ndarray:
        return np.arange(self.n_dates + 1) * self.nbar

    def exercise_values(self) -> np.ndarray:
        """Asset prices at the exercise dates, shape (q, N+1, d)."""
        return self.values[:, self.exercise_index, :]

    def tradables(self) -> np.ndarray:
        """Discounted dividend-reinvested assets exp((delta-r)t)*S, shape of values."""
        if self.model is not None:
            delta = np.asarray(self.model.delta)
            r = self.model.r
            growth = np.exp(np.outer(self.times, delta) - r * self.times[:, None])
        else:
            # synthetic batches (e.g. tree worlds) carry the numeraire only
            growth = (1.0 / self.discount)[:, None]
        return self.values * growth[None, :, :]

    def grid_signature(self) -> tuple:
        return (self.d, self.n_dates, self.nbar, float(self.times[-1]))


@dataclass(frozen=True)
class PayoffMatrix:
    """Discounted payoffs Z_n per path and exercise date, shape (q, N+1)."""

    z: np.ndarray

    def __post_init__(self):
        self.z.setflags(write=False)
        if not np.all(np.isfinite(self.z)):
            raise ValueError("payoff matrix contains non-finite values")

    @property
    def n_dates(self) -> int:
        return self.z.shape[1] - 1


def simulate_paths(model: ModelSpec, q: int, seed: int) -> PathBatch:
    """Simulate q independent risk-neutral paths on the fine grid.

    Uses the exact GBM step S_{t+h} = S_t * exp((r-delta-sigma^2/2)h +
    sigma*sqrt(h)*xi) with one Philox stream per fixed-size path chunk,
    so results are reproducible and path i never depends on q.
    """
    if q < 1:
        raise ValueError("q must be >= 1")
    if seed < 0:
        raise ValueError("seed must be a nonnegative integer")
    steps = model.n_fine
    dt = model.T / steps
    sigma = np.asarray(model.sigma)
    drift = (model.r - np.asarray(model.delta) - 0.5 * sigma**2) * dt
    vol = sigma * math.sqrt(dt)

    log_s = np.empty((q, steps + 1, model.d))
    log_s[:, 0, :] = np.log(model.s0)
    for start in range(0, q, _CHUNK):
        stop = min(start + _CHUNK, q)
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, start // _CHUNK])))
        z = rng.standard_normal((_CHUNK, steps, model.d))[: stop - start]
        np.cumsum(drift + vol * z, axis=1, out=z)
        log_s[start:stop, 1:, :] = log_s[start:stop, :1, :] + z

    values = np.exp(log_s)
    values[:, 0, :] = model.s0  # exp(log(s0)) can be off by one ulp
    times = model.fine_times()
    return PathBatch(
        q=q,
        values=values,
        discount=np.exp(model.r * times),
        times=times,
        seed=seed,
        n_dates=model.N,
        nbar=model.Nbar,
        model=model,
    )


def _butterfly_tent(s, K1: float, K2: float):
    mid = 0.5 * (K1 + K2)
    return (
        np.maximum(K1 - s, 0.0)
        + np.maximum(K2 - s, 0.0)
        - 2.0 * np.maximum(mid - s, 0.0)
    )


def payoff_values(payoff: PayoffSpec, s: np.ndarray) -> np.ndarray:
    """Evaluate the payoff on states s of shape (..., d); returns shape (...)."""
    s = np.asarray(s, dtype=float)
    kind = payoff.kind
    if kind in ("put", "butterfly") and s.shape[-1] != 1:
        raise ValueError(f"{kind} payoff requires d=1, got d={s.shape[-1]}")
    if kind == "put":
        return np.maximum(payoff.strikes[0] - s[..., 0], 0.0)
    if kind == "butterfly":
        return _butterfly_tent(s[..., 0], *payoff.strikes)
    if kind == "basket_put":
        return np.maximum(payoff.strikes[0] - s.mean(axis=-1), 0.0)
    if kind == "max_call":
        return np.maximum(s.max(axis=-1) - payoff.strikes[0], 0.0)
    if kind == "min_butterfly":
        return _butterfly_tent(s, *payoff.strikes).min(axis=-1)
    raise ValueError(f"unknown payoff kind {kind!r}")


def payoff_value(payoff: PayoffSpec, s) -> float:
    """Payoff for a single state vector of length d."""
    s = np.asarray(s, dtype=float)
    if s.ndim != 1:
        raise ValueError("payoff_value expects a single state vector")
    return float(payoff_values(payoff, s))


def discounted_payoffs(paths: PathBatch, payoff: PayoffSpec) -> PayoffMatrix:
    """Discounted payoff matrix z[path, n] = payoff(S_{T_n}) / exp(r*T_n)."""
    states = paths.exercise_values()
    raw = payoff_values(payoff, states)
    return PayoffMatrix(z=raw / paths.discount[paths.exercise_index][None, :])


def european_put_closed_form(s0: float, K: float, r: float, sigma: float, T: float) -> float:
    """Black-Scholes European put price (no dividends)."""
    if min(s0, K, sigma, T) <= 0:
        raise ValueError("s0, K, sigma, T must all be positive")
    v = sigma * math.sqrt(T)
    d1 = (math.log(s0 / K) + (r + 0.5 * sigma**2) * T) / v
    d2 = d1 - v
    return K * math.exp(-r * T) * norm.cdf(-d2) - s0 * norm.cdf(-d1)
