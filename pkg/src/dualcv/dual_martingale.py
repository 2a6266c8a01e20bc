"""Backward least-squares fit of an approximate Doob martingale.

The martingale is spanned by elementary martingale processes, one per
(price bin, asset): over every sub-step of the fine grid, the process
accumulates the indicator of the current bin times the increment of the
asset's discounted tradable.  The regression at each exercise interval
uses the interval increments of these processes, so refining the
sub-grid (larger Nbar) sharpens the hedge without adding coefficients.

Coefficients are fitted interval by interval from the last one
backwards, regressing the running pathwise maximum of the
martingale-adjusted payoff, net of the current payoff, onto the interval
increments.  Binning is per coordinate by default; for basket-style
payoffs whose delta depends on the basket level rather than on each
asset alone, bins of the basket average are used instead ("mean"
binning).  The fitted object evaluates to a pathwise martingale matrix
with M_0 = 0 and persists byte-exactly.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .market import PathBatch, PayoffMatrix
from .regression import RANK_RTOL, bin_indices, quantile_breakpoints, solve_gram

_MAGIC = b"DUALCVMG1\n"

BINNINGS = ("coordinate", "mean")


def _binning_states(paths: PathBatch, binning: str) -> np.ndarray:
    """State variables that drive the bins, shape (q, n_fine+1, n_vars)."""
    if binning == "coordinate":
        return paths.values
    if binning == "mean":
        return paths.values.mean(axis=2, keepdims=True)
    raise ValueError(f"unknown binning {binning!r}")


@dataclass(frozen=True)
class IncrementBasis:
    """Price bins per fine-grid time, with a fixed P-slot layout.

    breakpoints[g][v] holds the strictly increasing thresholds (at most
    P-1) of binning variable v at fine time g; fewer thresholds than P-1
    leave trailing cells structurally empty, which the rank-truncated
    solver zeroes out.  With "coordinate" binning the variables are the
    asset prices themselves and asset k is gated by its own bin; with
    "mean" binning a single basket-average variable gates every asset.
    """

    breakpoints: tuple[tuple[np.ndarray, ...], ...]
    P: int
    d: int
    Nbar: int
    N: int
    binning: str = "coordinate"

    def __post_init__(self):
        if self.binning not in BINNINGS:
            raise ValueError(f"binning must be one of {BINNINGS}")
        if len(self.breakpoints) != self.N * self.Nbar:
            raise ValueError("need one breakpoint set per fine time before maturity")
        for per_time in self.breakpoints:
            if len(per_time) != self.n_vars:
                raise ValueError("breakpoint sets do not match the binning variables")
            for bp in per_time:
                if bp.size >= self.P:
                    raise ValueError("more than P-1 thresholds for a single cell layout")
                bp.setflags(write=False)

    @property
    def n_vars(self) -> int:
        return self.d if self.binning == "coordinate" else 1

    def gate_var(self, k: int) -> int:
        """Binning variable gating asset k's increments."""
        return k if self.binning == "coordinate" else 0

    @property
    def L(self) -> int:
        """Elementary increments per exercise interval (one per bin and asset)."""
        return self.P * self.d


def increment_basis_from_paths(paths: PathBatch, P: int, binning: str = "coordinate") -> IncrementBasis:
    """Quantile breakpoints per fine time from a path sample.

    Duplicate quantiles (degenerate or discrete states, e.g. the
    deterministic time 0) are dropped, leaving fewer live cells.
    """
    if P < 1:
        raise ValueError("P must be >= 1")
    states = _binning_states(paths, binning)
    n_times = paths.n_dates * paths.nbar
    per_time = []
    for g in range(n_times):
        per_time.append(
            tuple(
                np.unique(quantile_breakpoints(states[:, g, v], P))
                for v in range(states.shape[2])
            )
        )
    return IncrementBasis(
        breakpoints=tuple(per_time), P=P, d=paths.d, Nbar=paths.nbar, N=paths.n_dates, binning=binning
    )


def increment_basis_from_breakpoints(
    breakpoints, P: int, d: int, Nbar: int, N: int, binning: str = "coordinate"
) -> IncrementBasis:
    """Explicit breakpoints (used by exact small-world tests)."""
    per_time = tuple(
        tuple(np.asarray(bp, dtype=float).copy() for bp in per_dim) for per_dim in breakpoints
    )
    return IncrementBasis(breakpoints=per_time, P=P, d=d, Nbar=Nbar, N=N, binning=binning)


@dataclass(eq=False)
class DualMartingale:
    """Fitted coefficients alpha[n-1, p, k] for interval n, bin p, asset k,
    plus the increment basis and a fingerprint of the fitting grid."""

    alpha: np.ndarray
    basis: IncrementBasis
    fingerprint: dict

    def __post_init__(self):
        expected = (self.basis.N, self.basis.P, self.basis.d)
        if self.alpha.shape != expected:
            raise ValueError(f"alpha shape {self.alpha.shape} does not match basis layout {expected}")
        if not np.all(np.isfinite(self.alpha)):
            raise ValueError("alpha contains non-finite values")
        self.alpha.setflags(write=False)


@dataclass(frozen=True)
class MartingaleMatrix:
    """Martingale values per path and exercise date, shape (q, N+1), M_0 = 0."""

    m: np.ndarray

    def __post_init__(self):
        self.m.setflags(write=False)
        if self.m.shape[1] < 1 or np.any(self.m[:, 0] != 0.0):
            raise ValueError("martingale matrix must start at 0")

    @property
    def n_dates(self) -> int:
        return self.m.shape[1] - 1


def _check_grid(paths: PathBatch, basis: IncrementBasis) -> None:
    if (paths.d, paths.n_dates, paths.nbar) != (basis.d, basis.N, basis.Nbar):
        raise ValueError("path grid does not match the increment basis")


def _interval_parts(paths: PathBatch, basis: IncrementBasis, states, tradable, n: int):
    """Per (sub-step, asset): bin indices and tradable increments of interval n."""
    parts = []
    for j in range(1, basis.Nbar + 1):
        g0 = (n - 1) * basis.Nbar + j - 1
        for k in range(basis.d):
            bins = bin_indices(basis.breakpoints[g0][basis.gate_var(k)], states[:, g0, basis.gate_var(k)])
            da = tradable[:, g0 + 1, k] - tradable[:, g0, k]
            parts.append((k, bins, da))
    return parts


def _interval_features(basis: IncrementBasis, parts, q: int) -> np.ndarray:
    """Dense (q, L) interval increments, component (p, k) at index p*d + k."""
    F = np.zeros((q, basis.L))
    rows = np.arange(q)
    for k, bins, da in parts:
        # one update per row within each call, so plain fancy += is safe
        F[rows, bins * basis.d + k] += da
    return F


def _increment_dot(alpha_n: np.ndarray, parts) -> np.ndarray:
    """alpha . DeltaX per path for one interval, without materializing features."""
    out = np.zeros(parts[0][1].shape[0])
    for k, bins, da in parts:
        out += alpha_n[bins, k] * da
    return out


def elementary_increments(paths: PathBatch, basis: IncrementBasis, n: int) -> np.ndarray:
    """Increment matrix DeltaX_n of shape (q, L) for exercise interval n in 1..N.

    Component (p, k) at flat index p*d + k sums, over the interval's
    sub-steps, the indicator of bin p at the sub-step start times the
    discounted tradable increment of asset k over the sub-step.
    """
    if not 1 <= n <= basis.N:
        raise ValueError(f"interval index must be in 1..{basis.N}")
    _check_grid(paths, basis)
    parts = _interval_parts(paths, basis, _binning_states(paths, basis.binning), paths.tradables(), n)
    return _interval_features(basis, parts, paths.q)


_GRAM_CHUNK = 1 << 14


def _gram_and_cross(F: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """X'X and X'y accumulated over fixed-size row chunks (deterministic order)."""
    L = F.shape[1]
    gram = np.zeros((L, L))
    cross = np.zeros(L)
    for start in range(0, F.shape[0], _GRAM_CHUNK):
        chunk = F[start : start + _GRAM_CHUNK]
        gram += chunk.T @ chunk
        cross += chunk.T @ y[start : start + _GRAM_CHUNK]
    return gram, cross


def fit_dual_coefficients(
    paths: PathBatch,
    z: PayoffMatrix,
    basis: IncrementBasis,
    rank_rtol: float = RANK_RTOL,
) -> DualMartingale:
    """Backward fit of the interval coefficients.

    For n = N-1 down to 0, regresses
    max_{n+1<=j<=N} (Z_j - sum_{i=n+2..j} alpha_i . DeltaX_i)  -  Z_n
    onto the components of DeltaX_{n+1}.  Subtracting Z_n changes nothing
    in expectation (the increments have zero conditional mean) but
    cancels most of the target's variance, which sharply reduces the
    noise of the fitted coefficients at a given sample size.
    """
    _check_grid(paths, basis)
    N = basis.N
    if z.z.shape != (paths.q, N + 1):
        raise ValueError("payoff matrix does not match the path batch")
    if paths.q < basis.L:
        raise ValueError(f"need at least L={basis.L} paths to fit, got {paths.q}")

    states = _binning_states(paths, basis.binning)
    tradable = paths.tradables()
    alpha = np.zeros((N, basis.P, basis.d))
    running = z.z[:, N].copy()
    for n in range(N - 1, -1, -1):
        parts = _interval_parts(paths, basis, states, tradable, n + 1)
        F = _interval_features(basis, parts, paths.q)
        gram, cross = _gram_and_cross(F, running - z.z[:, n])
        coefs, _ = solve_gram(gram, cross, rank_rtol)
        alpha[n] = coefs.reshape(basis.P, basis.d)
        running = np.maximum(z.z[:, n], running - _increment_dot(alpha[n], parts))

    return DualMartingale(alpha=alpha, basis=basis, fingerprint=_make_fingerprint(paths, basis))


def _make_fingerprint(paths: PathBatch, basis: IncrementBasis) -> dict:
    fp = {
        "d": basis.d,
        "n_dates": basis.N,
        "nbar": basis.Nbar,
        "p_local": basis.P,
        "binning": basis.binning,
        "t_maturity": float(paths.times[-1]),
        "fit_paths": paths.q,
        "fit_seed": int(paths.seed),
    }
    if paths.model is not None:
        m = paths.model
        fp["model"] = {
            "s0": list(m.s0),
            "r": m.r,
            "delta": list(m.delta),
            "sigma": list(m.sigma),
        }
    else:
        fp["model"] = None
    return fp


def _check_compatible(dm: DualMartingale, paths: PathBatch) -> None:
    fp = dm.fingerprint
    grid = (fp["d"], fp["n_dates"], fp["nbar"], fp["t_maturity"])
    if paths.grid_signature() != grid:
        raise ValueError(
            f"path grid {paths.grid_signature()} does not match the fitted martingale grid {grid}"
        )
    if fp.get("model") is not None and paths.model is not None:
        m = paths.model
        current = {"s0": list(m.s0), "r": m.r, "delta": list(m.delta), "sigma": list(m.sigma)}
        if current != fp["model"]:
            raise ValueError("path model parameters differ from the fitted martingale's model")


def evaluate_martingale(dm: DualMartingale, paths: PathBatch) -> MartingaleMatrix:
    """Evaluate M along paths: M_0 = 0, M_n - M_{n-1} = alpha_n . DeltaX_n."""
    _check_compatible(dm, paths)
    basis = dm.basis
    states = _binning_states(paths, basis.binning)
    tradable = paths.tradables()
    m = np.zeros((paths.q, basis.N + 1))
    for n in range(1, basis.N + 1):
        parts = _interval_parts(paths, basis, states, tradable, n)
        m[:, n] = m[:, n - 1] + _increment_dot(dm.alpha[n - 1], parts)
    return MartingaleMatrix(m=m)


def save_martingale(dm: DualMartingale, destination) -> None:
    """Write a self-describing binary coefficient file (byte-reproducible).

    Layout: magic line, one JSON header line (sorted keys) with the
    fingerprint and per-time breakpoint counts, then raw little-endian
    float64 blocks: breakpoints in (time, variable) order followed by
    alpha in (interval, bin, asset) order.
    """
    basis = dm.basis
    header = {
        "format_version": 1,
        "d": basis.d,
        "n_dates": basis.N,
        "nbar": basis.Nbar,
        "p_local": basis.P,
        "binning": basis.binning,
        "fingerprint": dm.fingerprint,
        "breakpoint_counts": [[int(bp.size) for bp in per_time] for per_time in basis.breakpoints],
    }
    buf = io.BytesIO()
    buf.write(_MAGIC)
    buf.write(json.dumps(header, sort_keys=True, separators=(",", ":")).encode() + b"\n")
    for per_time in basis.breakpoints:
        for bp in per_time:
            buf.write(np.ascontiguousarray(bp, dtype="<f8").tobytes())
    buf.write(np.ascontiguousarray(dm.alpha, dtype="<f8").tobytes())
    Path(destination).write_bytes(buf.getvalue())


def load_martingale(source) -> DualMartingale:
    """Read a coefficient file written by save_martingale."""
    raw = Path(source).read_bytes()
    if not raw.startswith(_MAGIC):
        raise ValueError(f"{source}: not a dual-martingale coefficient file")
    body = raw[len(_MAGIC) :]
    nl = body.find(b"\n")
    if nl < 0:
        raise ValueError(f"{source}: truncated header")
    try:
        header = json.loads(body[:nl].decode())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{source}: corrupt header ({exc})") from exc
    if header.get("format_version") != 1:
        raise ValueError(f"{source}: unsupported format version {header.get('format_version')}")

    d, N, Nbar, P = (header[k] for k in ("d", "n_dates", "nbar", "p_local"))
    counts = header["breakpoint_counts"]
    payload = body[nl + 1 :]
    expected = 8 * (sum(sum(row) for row in counts) + N * P * d)
    if len(payload) != expected:
        raise ValueError(f"{source}: payload has {len(payload)} bytes, expected {expected}")

    offset = 0
    per_time = []
    for row in counts:
        per_dim = []
        for c in row:
            per_dim.append(np.frombuffer(payload, dtype="<f8", count=c, offset=offset).copy())
            offset += 8 * c
        per_time.append(tuple(per_dim))
    basis = IncrementBasis(
        breakpoints=tuple(per_time), P=P, d=d, Nbar=Nbar, N=N, binning=header["binning"]
    )
    alpha = np.frombuffer(payload, dtype="<f8", count=N * P * d, offset=offset).reshape(N, P, d).copy()
    return DualMartingale(alpha=alpha, basis=basis, fingerprint=header["fingerprint"])
