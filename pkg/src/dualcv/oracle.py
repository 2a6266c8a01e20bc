"""Exact ground truth on small recombining binomial trees.

Every conditional expectation on the tree is a two-point sum, so the
Snell envelope, the optimal policy and the Doob decomposition of the
value process are all exactly computable, and the identities that the
Monte-Carlo machinery only satisfies statistically hold here to machine
precision.  Trees are kept tiny (paths are enumerated exhaustively).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .market import PathBatch, PayoffMatrix, PayoffSpec, payoff_values

MAX_ENUM_STEPS = 20


@dataclass(frozen=True)
class TreeModel:
    """Recombining binomial tree: N steps, up/down factors, up probability p,
    initial price s0 and a per-step discount factor."""

    N: int
    u: float
    d: float
    p: float
    s0: float
    discount: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.p < 1.0:
            raise ValueError("p must be in (0, 1)")
        if not self.u > self.d > 0.0:
            raise ValueError("need u > d > 0")
        if self.s0 <= 0 or self.discount <= 0 or self.N < 1:
            raise ValueError("s0 and discount must be positive and N >= 1")

    def level_prices(self, n: int) -> np.ndarray:
        """Prices at time n, ordered by number of up moves k=0..n."""
        k = np.arange(n + 1)
        return self.s0 * self.u**k * self.d ** (n - k)


@dataclass(frozen=True)
class TreeSolution:
    """Backward-induction solution per node (indexed [time][up-count]).

    z, u_env: discounted payoff and Snell envelope; cont: discounted
    conditional expectation of the next envelope; exercise: where the
    envelope touches the payoff.  The Doob martingale and compensator
    live on edges: m_up/m_dn are the martingale increments along up and
    down moves out of each node, and a_inc = u_env - cont >= 0 is the
    compensator increment earned over the step.
    """

    z: tuple[np.ndarray, ...]
    u_env: tuple[np.ndarray, ...]
    cont: tuple[np.ndarray, ...]
    exercise: tuple[np.ndarray, ...]
    m_up: tuple[np.ndarray, ...]
    m_dn: tuple[np.ndarray, ...]
    a_inc: tuple[np.ndarray, ...]

    @property
    def u0(self) -> float:
        return float(self.u_env[0][0])


def _payoff_fn(payoff):
    if isinstance(payoff, PayoffSpec):
        return lambda s: payoff_values(payoff, s[..., None])
    if callable(payoff):
        return payoff
    raise TypeError("payoff must be a PayoffSpec or a callable on prices")


def solve_tree(tree: TreeModel, payoff) -> TreeSolution:
    """Exact dynamic programming: U_N = Z_N, U_n = max(Z_n, E[U_{n+1} | node]).

    payoff may be a PayoffSpec (d=1) or any callable mapping prices to
    undiscounted payoffs.
    """
    fn = _payoff_fn(payoff)
    N, p = tree.N, tree.p
    z = [fn(tree.level_prices(n)) * tree.discount**n for n in range(N + 1)]
    u_env: list[np.ndarray] = [None] * (N + 1)
    cont: list[np.ndarray] = [None] * (N + 1)
    m_up: list[np.ndarray] = [None] * N
    m_dn: list[np.ndarray] = [None] * N
    a_inc: list[np.ndarray] = [None] * N
    u_env[N] = z[N].copy()
    cont[N] = np.zeros(N + 1)
    for n in range(N - 1, -1, -1):
        up, dn = u_env[n + 1][1:], u_env[n + 1][:-1]
        cont[n] = p * up + (1 - p) * dn
        u_env[n] = np.maximum(z[n], cont[n])
        m_up[n] = up - cont[n]
        m_dn[n] = dn - cont[n]
        a_inc[n] = u_env[n] - cont[n]
    exercise = [u_env[n] == z[n] for n in range(N + 1)]
    return TreeSolution(
        z=tuple(z),
        u_env=tuple(u_env),
        cont=tuple(cont),
        exercise=tuple(exercise),
        m_up=tuple(m_up),
        m_dn=tuple(m_dn),
        a_inc=tuple(a_inc),
    )


@dataclass(frozen=True)
class TreePaths:
    """Exhaustive path enumeration: up-move indicators, up-counts and probabilities."""

    ups: np.ndarray        # (Q, N) 0/1 moves
    levels: np.ndarray     # (Q, N+1) cumulative up-counts
    prices: np.ndarray     # (Q, N+1)
    prob: np.ndarray       # (Q,)


def enumerate_paths(tree: TreeModel) -> TreePaths:
    """All 2^N paths with their probabilities (N capped for enumeration)."""
    if tree.N > MAX_ENUM_STEPS:
        raise ValueError(f"N={tree.N} exceeds the enumeration cap {MAX_ENUM_STEPS}")
    N = tree.N
    codes = np.arange(2**N, dtype=np.int64)
    ups = (codes[:, None] >> np.arange(N)[None, :]) & 1
    levels = np.concatenate([np.zeros((2**N, 1), dtype=np.int64), np.cumsum(ups, axis=1)], axis=1)
    steps = np.arange(N + 1)
    prices = tree.s0 * tree.u**levels * tree.d ** (steps[None, :] - levels)
    n_up = levels[:, -1]
    prob = tree.p**n_up * (1 - tree.p) ** (N - n_up)
    return TreePaths(ups=ups, levels=levels, prices=prices, prob=prob)


def path_processes(tree: TreeModel, sol: TreeSolution, paths: TreePaths) -> dict:
    """Evaluate Z, U, M*, A* and tau* along every enumerated path."""
    Q, N = paths.ups.shape
    z = np.empty((Q, N + 1))
    u = np.empty((Q, N + 1))
    m = np.zeros((Q, N + 1))
    a = np.zeros((Q, N + 1))
    ex = np.empty((Q, N + 1), dtype=bool)
    for n in range(N + 1):
        k = paths.levels[:, n]
        z[:, n] = sol.z[n][k]
        u[:, n] = sol.u_env[n][k]
        ex[:, n] = sol.exercise[n][k]
        if n < N:
            up = paths.ups[:, n].astype(bool)
            dm = np.where(up, sol.m_up[n][k], sol.m_dn[n][k])
            m[:, n + 1] = m[:, n] + dm
            a[:, n + 1] = a[:, n] + sol.a_inc[n][k]
    tau_star = np.argmax(ex, axis=1)
    return {"z": z, "u": u, "m": m, "a": a, "tau_star": tau_star}


@dataclass(frozen=True)
class IdentityCheck:
    name: str
    passed: bool
    max_error: float
    detail: str = ""


@dataclass(frozen=True)
class IdentityReport:
    checks: tuple[IdentityCheck, ...]

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __str__(self) -> str:
        lines = []
        for c in self.checks:
            status = "PASS" if c.passed else "FAIL"
            extra = f"  ({c.detail})" if c.detail else ""
            lines.append(f"[{status}] {c.name}: max error {c.max_error:.3e}{extra}")
        return "\n".join(lines)


def exact_identity_checks(tree: TreeModel, sol: TreeSolution, tol: float = 1e-10) -> IdentityReport:
    """Verify, on every enumerated path, the exact optimal-stopping identities.

    Checked: the envelope dominates the payoff and is the smallest
    supermartingale doing so; the compensator vanishes up to the optimal
    time; the stopped value Z - M* is constant equal to U_0; the dual
    pathwise maximum equals U_0 (zero-variance dual); the stopped
    envelope is a martingale; and the Doob reconstruction is exact.
    """
    paths = enumerate_paths(tree)
    proc = path_processes(tree, sol, paths)
    z, u, m, a, tau = proc["z"], proc["u"], proc["m"], proc["a"], proc["tau_star"]
    u0 = sol.u0
    rows = np.arange(z.shape[0])
    checks = []

    def add(name, errors):
        errors = np.atleast_1d(np.asarray(errors, dtype=float))
        worst = int(np.argmax(errors))
        err = float(errors[worst])
        detail = "" if err <= tol else f"worst path index {worst}"
        checks.append(IdentityCheck(name=name, passed=err <= tol, max_error=err, detail=detail))

    add("envelope dominates payoff (U >= Z)", np.max(np.maximum(z - u, 0.0), axis=1))
    add("terminal value (U_N = Z_N)", np.abs(u[:, -1] - z[:, -1]))
    super_gap = np.concatenate([np.maximum(sol.cont[n] - sol.u_env[n], 0.0) for n in range(tree.N)])
    add("supermartingale property (E[U_{n+1}] <= U_n)", super_gap)
    add("compensator vanishes at tau* (A*_{tau*} = 0)", np.abs(a[rows, tau]))
    add("stopped value is flat (Z_{tau*} - M*_{tau*} = U_0)", np.abs(z[rows, tau] - m[rows, tau] - u0))
    add("pathwise dual max equals U_0", np.abs(np.max(z - m, axis=1) - u0))
    add("zero-variance dual (expectation of max = U_0)", abs(float(paths.prob @ np.max(z - m, axis=1)) - u0))
    stopped_idx = np.minimum(np.arange(tree.N + 1)[None, :], tau[:, None])
    u_stopped = u[rows[:, None], stopped_idx]
    add("stopped envelope is a martingale", np.abs(paths.prob @ u_stopped - u0))
    add("Doob reconstruction (U = U_0 + M* - A*)", np.max(np.abs(u - (u0 + m - a)), axis=1))
    return IdentityReport(checks=tuple(checks))


def tree_path_batch(tree: TreeModel) -> PathBatch:
    """Wrap the enumerated tree paths as a PathBatch (d=1, Nbar=1).

    The numeraire grows by 1/discount per step, so discounted payoffs on
    the batch match the tree's Z and the discounted asset is a martingale
    exactly when p is the risk-neutral probability.
    """
    paths = enumerate_paths(tree)
    q = paths.prices.shape[0]
    return PathBatch(
        q=q,
        values=paths.prices[:, :, None].copy(),
        discount=(1.0 / tree.discount) ** np.arange(tree.N + 1, dtype=float),
        times=np.arange(tree.N + 1, dtype=float),
        seed=0,
        n_dates=tree.N,
        nbar=1,
        model=None,
    )


def tree_payoff_matrix(tree: TreeModel, payoff) -> PayoffMatrix:
    """Discounted payoff matrix of the enumerated paths."""
    fn = _payoff_fn(payoff)
    paths = enumerate_paths(tree)
    disc = tree.discount ** np.arange(tree.N + 1)
    return PayoffMatrix(z=fn(paths.prices) * disc[None, :])


def level_separating_breakpoints(tree: TreeModel, n: int) -> np.ndarray:
    """Midpoints between adjacent price levels at time n (exact-bin tests)."""
    prices = np.sort(tree.level_prices(n))
    return 0.5 * (prices[1:] + prices[:-1])
